//! Claims Atlas: causal spine, display regions, claim families, tensions
//! and provenance drill-downs over a built world.

pub mod drift;
pub mod export;
pub mod state;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{normalize, ClaimRow, ContextAssignment, ContextSite, Polarity};
use crate::pipeline::{BundleSummary, WorldModelBundle, SCHEMA_VERSION};
use crate::sheaf::{Classification, OverlapStatus, ToleranceConfig};

pub use drift::{diff_worlds, DriftReport};
pub use export::{read_bundle, read_run, render_html, write_run, write_run_with, RunSnapshot};
pub use state::{persist_state, PersistentState, Recommendation};

/// Keyword or metadata predicate for a display region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRule {
    pub name: String,
    /// Substrings matched against the context id and label.
    #[serde(default)]
    pub keywords: Vec<String>,
    /// Context metadata that must all match.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl RegionRule {
    pub fn matches(&self, id: &str, label: &str, metadata: &BTreeMap<String, String>) -> bool {
        let hay = format!("{} {}", normalize(id), normalize(label));
        let kw =
            !self.keywords.is_empty() && self.keywords.iter().any(|k| hay.contains(&normalize(k)));
        let meta = !self.metadata.is_empty()
            && self.metadata.iter().all(|(k, v)| {
                metadata
                    .get(k)
                    .is_some_and(|x| normalize(x) == normalize(v))
            });
        kw || meta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasConfig {
    pub min_support: f64,
    pub max_paths: usize,
    pub query_terms: Vec<String>,
    pub regions: Vec<RegionRule>,
    /// Defaults to `eps_glue`.
    pub eps_drift: Option<f64>,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            min_support: 1.0,
            max_paths: 5,
            query_terms: Vec::new(),
            regions: Vec::new(),
            eps_drift: None,
        }
    }
}

impl AtlasConfig {
    pub fn eps_drift(&self, tol: &ToleranceConfig) -> f64 {
        self.eps_drift.unwrap_or(tol.eps_glue)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineEdge {
    pub cause: String,
    pub effect: String,
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinePath {
    pub nodes: Vec<String>,
    pub edges: Vec<SpineEdge>,
    /// Weakest edge support along the path.
    pub support: f64,
}

/// Greedy node-disjoint maximal paths over the claim graph, seeded by the
/// strongest unused edge and extended at both ends by the strongest edge
/// into an unused node. Ties break on the lexicographic node key.
pub fn extract_spine(claims: &[ClaimRow], min_support: f64, max_paths: usize) -> Vec<SpinePath> {
    let mut support: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for c in claims {
        if c.cause != c.effect {
            *support
                .entry((c.cause.as_str(), c.effect.as_str()))
                .or_default() += 1.0;
        }
    }
    support.retain(|_, s| *s >= min_support);
    let mut edges: Vec<((&str, &str), f64)> = support.iter().map(|(k, v)| (*k, *v)).collect();
    edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    fn best(cands: Vec<(&str, f64)>) -> Option<(&str, f64)> {
        cands
            .into_iter()
            .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)))
    }
    let mut used: BTreeSet<&str> = BTreeSet::new();
    let mut paths = Vec::new();
    for &((a, b), _) in &edges {
        if paths.len() >= max_paths {
            break;
        }
        if used.contains(a) || used.contains(b) {
            continue;
        }
        let mut nodes: Vec<&str> = vec![a, b];
        used.insert(a);
        used.insert(b);
        loop {
            let tail = *nodes.last().expect("nonempty");
            let next = best(
                support
                    .iter()
                    .filter(|((x, y), _)| *x == tail && !used.contains(y))
                    .map(|((_, y), s)| (*y, *s))
                    .collect(),
            );
            let Some((n, _)) = next else { break };
            used.insert(n);
            nodes.push(n);
        }
        loop {
            let head = nodes[0];
            let prev = best(
                support
                    .iter()
                    .filter(|((x, y), _)| *y == head && !used.contains(x))
                    .map(|((x, _), s)| (*x, *s))
                    .collect(),
            );
            let Some((n, _)) = prev else { break };
            used.insert(n);
            nodes.insert(0, n);
        }
        let edges: Vec<SpineEdge> = nodes
            .windows(2)
            .map(|w| SpineEdge {
                cause: w[0].to_string(),
                effect: w[1].to_string(),
                support: support[&(w[0], w[1])],
            })
            .collect();
        paths.push(SpinePath {
            support: edges
                .iter()
                .map(|e| e.support)
                .fold(f64::INFINITY, f64::min),
            nodes: nodes.into_iter().map(String::from).collect(),
            edges,
        });
    }
    paths
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub contexts: Vec<String>,
    pub context_count: usize,
    /// Events counted once, in the first region that holds them.
    pub event_count: usize,
}

pub const CORE_REGION: &str = "core";
pub const RESIDUAL_REGION: &str = "residual";

/// Single-membership display partition of the non-root contexts: the
/// query core first, then rules in priority order, then the residual.
/// The second value lists every matching region per rule (lenses).
pub fn partition_regions(
    site: &ContextSite,
    assignment: &ContextAssignment,
    query_terms: &[String],
    rules: &[RegionRule],
) -> (Vec<Region>, BTreeMap<String, Vec<String>>) {
    let mut named: Vec<RegionRule> = Vec::new();
    if !query_terms.is_empty() {
        named.push(RegionRule {
            name: CORE_REGION.into(),
            keywords: query_terms.to_vec(),
            metadata: BTreeMap::new(),
        });
    }
    named.extend(rules.iter().cloned());
    let mut members: Vec<Vec<String>> = vec![Vec::new(); named.len() + 1];
    let mut lenses: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ctx in site.non_root() {
        let hits: Vec<usize> = named
            .iter()
            .enumerate()
            .filter(|(_, r)| r.matches(&ctx.id, &ctx.label, &ctx.metadata))
            .map(|(i, _)| i)
            .collect();
        for &i in &hits {
            lenses
                .entry(named[i].name.clone())
                .or_default()
                .push(ctx.id.clone());
        }
        members[hits.first().copied().unwrap_or(named.len())].push(ctx.id.clone());
    }
    let mut counted: BTreeSet<&str> = BTreeSet::new();
    let mut regions = Vec::new();
    for (i, ctxs) in members.into_iter().enumerate() {
        let mut events = 0;
        for c in &ctxs {
            for e in assignment.events_in(c) {
                if counted.insert(e) {
                    events += 1;
                }
            }
        }
        regions.push(Region {
            name: named
                .get(i)
                .map_or(RESIDUAL_REGION.to_string(), |r| r.name.clone()),
            context_count: ctxs.len(),
            contexts: ctxs,
            event_count: events,
        });
    }
    (regions, lenses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimFamily {
    pub cause: String,
    pub effect: String,
    pub claims: usize,
    /// Surface relation label to count.
    pub variants: BTreeMap<String, usize>,
    pub polarities: BTreeSet<Polarity>,
    /// Distinct contexts asserting the claim (the root only when nothing
    /// finer holds it).
    pub aliases: Vec<String>,
    pub alias_count: usize,
    pub provenance: Vec<String>,
    pub tension_candidate: bool,
}

impl ClaimFamily {
    pub fn key(&self) -> String {
        family_key(&self.cause, &self.effect)
    }
}

pub fn family_key(cause: &str, effect: &str) -> String {
    format!("{cause}->{effect}")
}

/// Groups claims by normalized `(cause, effect)`.
pub fn claim_families(claims: &[ClaimRow], root: &str) -> Vec<ClaimFamily> {
    let mut groups: BTreeMap<(&str, &str), Vec<&ClaimRow>> = BTreeMap::new();
    for c in claims {
        groups
            .entry((c.cause.as_str(), c.effect.as_str()))
            .or_default()
            .push(c);
    }
    groups
        .into_iter()
        .map(|((cause, effect), rows)| {
            let mut variants: BTreeMap<String, usize> = BTreeMap::new();
            let mut polarities = BTreeSet::new();
            let mut contexts: BTreeSet<String> = BTreeSet::new();
            let mut provenance: BTreeSet<String> = BTreeSet::new();
            for r in &rows {
                *variants.entry(r.relation_label().to_string()).or_default() += 1;
                polarities.insert(r.polarity);
                contexts.extend(r.context_labels.iter().cloned());
                provenance.extend(r.provenance.iter().cloned());
            }
            let mut aliases: Vec<String> =
                contexts.iter().filter(|c| *c != root).cloned().collect();
            if aliases.is_empty() {
                aliases.push(root.to_string());
            }
            let opposed = polarities.contains(&Polarity::Positive)
                && polarities.contains(&Polarity::Negative);
            ClaimFamily {
                cause: cause.to_string(),
                effect: effect.to_string(),
                claims: rows.len(),
                tension_candidate: variants.len() >= 2 || opposed,
                variants,
                polarities,
                alias_count: aliases.len(),
                aliases,
                provenance: provenance.into_iter().collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasTension {
    pub cover: String,
    pub level: u8,
    pub classification: Classification,
    pub rationale: String,
    pub contexts: Vec<String>,
    pub claim_pairs: Vec<(String, String)>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenseOverlap {
    pub left: String,
    pub right: String,
    pub tension: f64,
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub id: String,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
    pub confidence: f64,
    pub stub: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSummary {
    pub kind: Option<String>,
    pub baseline: Option<f64>,
    pub counterfactual: Option<f64>,
    pub effect_absolute: Option<f64>,
    pub effect_relative: Option<f64>,
    pub modified_events: usize,
    pub modified_claims: usize,
    pub new_contexts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimsAtlas {
    pub schema_version: u32,
    pub summary: BundleSummary,
    pub spine: Vec<SpinePath>,
    pub regions: Vec<Region>,
    /// Overlapping rule view; not a partition.
    pub lenses: BTreeMap<String, Vec<String>>,
    pub tensions: Vec<AtlasTension>,
    pub tense_overlaps: Vec<TenseOverlap>,
    pub families: Vec<ClaimFamily>,
    /// Family key to its evidence units.
    pub provenance_index: BTreeMap<String, Vec<EvidenceRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingSummary>,
}

pub fn build_atlas(bundle: &WorldModelBundle, config: &AtlasConfig) -> ClaimsAtlas {
    let claims = bundle.store.all_claims(Some(&bundle.assignment));
    let spine = extract_spine(&claims, config.min_support, config.max_paths);
    let (regions, lenses) = partition_regions(
        &bundle.site,
        &bundle.assignment,
        &config.query_terms,
        &config.regions,
    );
    let families = claim_families(&claims, &bundle.site.root);
    let provenance_index = families
        .iter()
        .map(|f| {
            let refs = f
                .provenance
                .iter()
                .map(|id| {
                    let unit = bundle.store.evidence.get(id);
                    EvidenceRef {
                        id: id.clone(),
                        source_id: unit.map(|u| u.source_id.clone()).unwrap_or_default(),
                        locator: unit.and_then(|u| u.locator.clone()),
                        confidence: bundle.store.confidence_of(id),
                        stub: unit.is_none_or(|u| u.stub),
                    }
                })
                .collect();
            (f.key(), refs)
        })
        .collect();
    let tensions = bundle
        .diagnostics
        .obstructions
        .iter()
        .map(|o| AtlasTension {
            cover: o.cover.clone(),
            level: o.level,
            classification: o.classification,
            rationale: o.rationale.clone(),
            contexts: o.contexts().into_iter().map(String::from).collect(),
            claim_pairs: o.claim_pairs().into_iter().collect(),
            cells: o.cells.len(),
        })
        .collect();
    let tense_overlaps = bundle
        .diagnostics
        .overlaps
        .iter()
        .filter(|o| o.status == OverlapStatus::Tense)
        .map(|o| TenseOverlap {
            left: o.left.clone(),
            right: o.right.clone(),
            tension: o.tension,
            max_gap: o.max_gap,
        })
        .collect();
    let grounding = bundle.grounding.as_ref().map(|g| GroundingSummary {
        kind: g.substrate.as_ref().and_then(|s| {
            serde_json::to_value(s.kind)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
        }),
        baseline: g.substrate.as_ref().map(|s| s.baseline),
        counterfactual: g.substrate.as_ref().map(|s| s.counterfactual),
        effect_absolute: g.substrate.as_ref().map(|s| s.effect.absolute),
        effect_relative: g.substrate.as_ref().map(|s| s.effect.relative),
        modified_events: g.outcome.modified_events,
        modified_claims: g.outcome.modified_claims,
        new_contexts: g.new_contexts.clone(),
    });
    ClaimsAtlas {
        schema_version: SCHEMA_VERSION,
        summary: bundle.summary.clone(),
        spine,
        regions,
        lenses,
        tensions,
        tense_overlaps,
        families,
        provenance_index,
        grounding,
    }
}
