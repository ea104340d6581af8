//! Localized interventions, grounded counterfactuals and rebuilds.
//!
//! A local probe restricts the world to a cover, edits each member's
//! section, aggregates with the gluing weights and recomputes
//! compatibility. A grounded intervention evaluates a substrate, rewrites
//! observations and rebuilds a new world.

pub mod rewrite;
pub mod substrate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atlas::{diff_worlds, DriftReport};
use crate::error::{Result, StageContext, ToposError};
use crate::model::{
    normalize, normalize_token, split_triple, triple_key, Context, ContextSite, EvidenceUnit,
    Polarity,
};
use crate::pipeline::{build_world, sections_of, EngineConfig, WorldModelBundle};
use crate::sheaf::{
    default_overlap_weight, gluing_tension, try_glue, CellKey, GlueOutcome, GluingOverlap,
    OverlapStatus, Section, SectionCell,
};

pub use rewrite::{
    rewrite_observations, DataEpisodeSpec, RewriteOutcome, RewriteRule, TriplePattern,
};
pub use substrate::{
    co_shift_scores, evaluate_substrate, group_mean_substitution, index_substitution,
    scale_map_counterfactual, CoShift, Effect, GridCell, Grounding, Panel, SubstrateKind,
    SubstrateResult, SubstrateSpec, Transform,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    EditTest,
    FixAction,
    InsertRepair,
    ConditionRegime,
    Grounded,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionParams {
    pub history: Option<String>,
    pub test: Option<String>,
    pub value: Option<f64>,
    /// Replacement token for `edit_test`.
    pub replacement: Option<String>,
    pub support: Option<f64>,
    /// Regime key and value for `condition_regime`.
    pub key: Option<String>,
    pub equals: Option<String>,
    /// Members to intervene on; empty means every member of the cover.
    pub members: Vec<String>,
}

fn default_cover() -> String {
    crate::model::context::ROOT_COVER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    #[serde(default = "default_cover")]
    pub cover: String,
    #[serde(default)]
    pub parameters: InterventionParams,
    #[serde(default)]
    pub rewrites: Vec<RewriteRule>,
    #[serde(default)]
    pub substrate: Option<SubstrateSpec>,
    #[serde(default)]
    pub data_episode: Option<DataEpisodeSpec>,
}

/// Normalizes each slot of an `a|r|o` key.
fn normalize_key(raw: &str) -> String {
    match split_triple(raw) {
        Some((a, r, o)) => triple_key(
            &normalize_token(a),
            &normalize_token(r),
            &normalize_token(o),
        ),
        None => normalize_token(raw),
    }
}

impl InterventionSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| ToposError::Config(format!("intervention spec: {e}")))
    }

    /// A grounded spec with nothing to do.
    pub fn identity() -> Self {
        Self {
            kind: InterventionKind::Grounded,
            cover: default_cover(),
            parameters: InterventionParams::default(),
            rewrites: Vec::new(),
            substrate: None,
            data_episode: None,
        }
    }

    pub fn validate(&self, site: &ContextSite) -> Result<()> {
        site.cover(&self.cover)?;
        let p = &self.parameters;
        let missing = |name: &str| {
            Err(ToposError::InvalidArgument(format!(
                "{:?} intervention needs parameter `{name}`",
                self.kind
            )))
        };
        match self.kind {
            InterventionKind::EditTest => {
                if p.test.is_none() {
                    return missing("test");
                }
                if p.value.is_none() && p.replacement.is_none() {
                    return missing("value or replacement");
                }
                if p.value.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                    return Err(ToposError::InvalidArgument(
                        "edit value must lie in [0, 1]".into(),
                    ));
                }
            }
            InterventionKind::FixAction => {
                if p.test.is_none() {
                    return missing("test");
                }
            }
            InterventionKind::InsertRepair => {
                if p.test.is_none() {
                    return missing("test");
                }
                if !p.support.is_some_and(|s| s > 0.0) {
                    return missing("support (> 0)");
                }
            }
            InterventionKind::ConditionRegime => {
                if p.key.is_none() {
                    return missing("key");
                }
                if p.equals.is_none() {
                    return missing("equals");
                }
            }
            InterventionKind::Grounded => {}
        }
        for r in &self.rewrites {
            r.validate()?;
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.kind == InterventionKind::Grounded
            && self.rewrites.is_empty()
            && self.substrate.is_none()
            && self.data_episode.is_none()
    }
}

/// What a local intervention may consult besides the section itself.
pub struct LocalEnv<'a> {
    pub context: Option<&'a Context>,
    pub evidence: &'a BTreeMap<String, EvidenceUnit>,
}

fn rows_with_test<'a>(
    section: &'a Section,
    test: &str,
    history: Option<&str>,
) -> BTreeSet<&'a str> {
    section
        .cells
        .keys()
        .filter(|(h, t)| t == test && history.is_none_or(|x| x == h))
        .map(|(h, _)| h.as_str())
        .collect()
}

fn regime_key_present(section: &Section, env: &LocalEnv<'_>, key: &str) -> bool {
    env.context.is_some_and(|c| c.metadata.contains_key(key))
        || section.cells.values().any(|c| {
            c.provenance.iter().any(|p| {
                env.evidence
                    .get(p)
                    .is_some_and(|u| u.retrieval_meta.contains_key(key))
            })
        })
}

/// Applies one local edit. Returns the new section and the number of cells
/// whose value, key or presence changed.
pub fn apply_local_intervention(
    section: &Section,
    spec: &InterventionSpec,
    env: &LocalEnv<'_>,
) -> Result<(Section, usize)> {
    apply_local(section, spec, env, true)
}

fn apply_local(
    section: &Section,
    spec: &InterventionSpec,
    env: &LocalEnv<'_>,
    require_target: bool,
) -> Result<(Section, usize)> {
    let p = &spec.parameters;
    let mut out = section.clone();
    let test = p.test.as_deref().map(normalize_key);
    let history = p.history.as_deref().map(normalize_key);
    let missing = |what: String| {
        if require_target {
            Err(ToposError::MissingTarget(what))
        } else {
            Ok((section.clone(), 0))
        }
    };
    let changed = match spec.kind {
        InterventionKind::EditTest => {
            let test = test.expect("validated");
            if rows_with_test(section, &test, history.as_deref()).is_empty() {
                return missing(test);
            }
            let mut changed = 0;
            if let Some(v) = p.value {
                for ((h, t), cell) in out.cells.iter_mut() {
                    if *t == test && history.as_deref().is_none_or(|x| x == h) && cell.value != v {
                        cell.value = v;
                        changed += 1;
                    }
                }
            }
            if let Some(rep) = p.replacement.as_deref().map(normalize_key) {
                if rep != test {
                    let cells = std::mem::take(&mut out.cells);
                    for ((h, t), cell) in cells {
                        let renamed = |k: String| if k == test { rep.clone() } else { k };
                        let touched = h == test || t == test;
                        let key = (renamed(h), renamed(t));
                        changed += usize::from(touched);
                        merge_cell(&mut out.cells, key, cell);
                    }
                    out.test_polarity.remove(&test);
                    let pol = split_triple(&rep)
                        .map(|(_, r, _)| Polarity::from_relation(r))
                        .unwrap_or(Polarity::Neutral);
                    out.test_polarity.insert(rep, pol);
                }
            }
            changed
        }
        InterventionKind::FixAction => {
            let test = test.expect("validated");
            let rows = rows_with_test(section, &test, history.as_deref());
            if rows.is_empty() {
                return missing(test);
            }
            let mut changed = 0;
            for row in rows {
                let total: f64 = section
                    .cells
                    .iter()
                    .filter(|((h, _), _)| h == row)
                    .map(|(_, c)| c.value)
                    .sum();
                for ((h, t), cell) in out.cells.iter_mut() {
                    if h != row {
                        continue;
                    }
                    let v = if *t == test { total } else { 0.0 };
                    if cell.value != v {
                        cell.value = v;
                        changed += 1;
                    }
                }
            }
            changed
        }
        InterventionKind::InsertRepair => {
            let test = test.expect("validated");
            let support = p.support.expect("validated");
            let rows: BTreeSet<String> = match &history {
                Some(h) => {
                    if !section.cells.keys().any(|(x, _)| x == h) {
                        return missing(h.clone());
                    }
                    BTreeSet::from([h.clone()])
                }
                None => section.cells.keys().map(|(h, _)| h.clone()).collect(),
            };
            let mut changed = 0;
            for row in rows {
                let mass: f64 = section
                    .cells
                    .iter()
                    .filter(|((h, _), _)| *h == row)
                    .map(|(_, c)| c.support)
                    .sum();
                let keep = mass / (mass + support);
                for ((h, t), cell) in out.cells.iter_mut() {
                    if *h == row && *t != test {
                        cell.value *= keep;
                        changed += 1;
                    }
                }
                out.cells.insert(
                    (row.clone(), test.clone()),
                    SectionCell {
                        value: support / (mass + support),
                        support,
                        confidence: section.mean_confidence,
                        provenance: vec![format!("repair:{test}")],
                    },
                );
                changed += 1;
            }
            let pol = split_triple(&test)
                .map(|(_, r, _)| Polarity::from_relation(r))
                .unwrap_or(Polarity::Neutral);
            out.test_polarity.insert(test, pol);
            changed
        }
        InterventionKind::ConditionRegime => {
            let key = p.key.as_deref().expect("validated");
            let want = normalize(p.equals.as_deref().expect("validated"));
            if !regime_key_present(section, env, key) {
                return missing(format!("regime key `{key}`"));
            }
            let context_conflict = env
                .context
                .and_then(|c| c.metadata.get(key))
                .is_some_and(|v| normalize(v) != want);
            let before = out.cells.len();
            out.cells.retain(|_, cell| {
                !context_conflict
                    && !cell.provenance.iter().any(|id| {
                        env.evidence
                            .get(id)
                            .and_then(|u| u.retrieval_meta.get(key))
                            .is_some_and(|v| normalize(v) != want)
                    })
            });
            before - out.cells.len()
        }
        InterventionKind::Grounded => {
            if spec.rewrites.is_empty() {
                0
            } else {
                let rename = |k: &str| -> Option<String> {
                    let (a, r, o) = split_triple(k)?;
                    spec.rewrites
                        .iter()
                        .find_map(|rule| rule.apply(a, r, o))
                        .map(|[a, r, o]| triple_key(&a, &r, &o))
                };
                let cells = std::mem::take(&mut out.cells);
                let mut changed = 0;
                for ((h, t), cell) in cells {
                    let (nh, nt) = (rename(&h), rename(&t));
                    changed += usize::from(nh.is_some() || nt.is_some());
                    if let Some(n) = &nt {
                        let pol = split_triple(n)
                            .map(|(_, r, _)| Polarity::from_relation(r))
                            .unwrap_or(Polarity::Neutral);
                        out.test_polarity.insert(n.clone(), pol);
                    }
                    merge_cell(&mut out.cells, (nh.unwrap_or(h), nt.unwrap_or(t)), cell);
                }
                changed
            }
        }
    };
    Ok((out, changed))
}

fn merge_cell(cells: &mut BTreeMap<CellKey, SectionCell>, key: CellKey, cell: SectionCell) {
    match cells.get_mut(&key) {
        None => {
            cells.insert(key, cell);
        }
        Some(existing) => {
            let s = existing.support + cell.support;
            if s > 0.0 {
                existing.confidence =
                    (existing.confidence * existing.support + cell.confidence * cell.support) / s;
            }
            existing.value = (existing.value + cell.value).min(1.0);
            existing.support = s;
            existing.provenance.extend(cell.provenance);
            existing.provenance.sort();
            existing.provenance.dedup();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub cover: String,
    pub target: String,
    pub kind: InterventionKind,
    pub sections: Vec<Section>,
    pub modified_cells: usize,
    pub aggregated: GlueOutcome,
    pub baseline_overlaps: Vec<GluingOverlap>,
    pub overlaps: Vec<GluingOverlap>,
    pub new_tense: Vec<(String, String)>,
    pub resolved: Vec<(String, String)>,
    pub baseline_coherent: bool,
    /// True when the intervened sections glue without obstruction or tension.
    pub coherent: bool,
}

fn tense_pairs(overlaps: &[GluingOverlap]) -> BTreeSet<(String, String)> {
    overlaps
        .iter()
        .filter(|o| o.status == OverlapStatus::Tense)
        .map(|o| (o.left.clone(), o.right.clone()))
        .collect()
}

/// Restrict to the cover's members, intervene locally, aggregate with the
/// gluing weights and recompute compatibility.
pub fn do_j(world: &WorldModelBundle, spec: &InterventionSpec) -> Result<InterventionResult> {
    spec.validate(&world.site)?;
    let cover = world.site.cover(&spec.cover)?;
    let tol = &world.config.tolerance;
    let all = sections_of(&world.store, &world.psrs);
    let baseline: Vec<Section> = cover
        .members
        .iter()
        .filter_map(|m| all.get(m).cloned())
        .collect();
    let only: BTreeSet<&str> = spec.parameters.members.iter().map(String::as_str).collect();
    for m in &only {
        if !cover.members.iter().any(|c| c == m) {
            return Err(ToposError::UnknownContext(m.to_string()));
        }
    }
    let mut sections = Vec::with_capacity(baseline.len());
    let mut modified_cells = 0;
    let mut applied = 0;
    for s in &baseline {
        if !only.is_empty() && !only.contains(s.context_id.as_str()) {
            sections.push(s.clone());
            continue;
        }
        let env = LocalEnv {
            context: world.site.context(&s.context_id),
            evidence: &world.store.evidence,
        };
        let strict = !only.is_empty();
        let (out, n) = apply_local(s, spec, &env, strict)?;
        if n > 0 || out != *s || strict {
            applied += 1;
        }
        modified_cells += n;
        sections.push(out);
    }
    let needs_target = !matches!(spec.kind, InterventionKind::Grounded);
    if needs_target && applied == 0 {
        let what = spec
            .parameters
            .test
            .clone()
            .or_else(|| spec.parameters.key.clone())
            .unwrap_or_default();
        return Err(ToposError::MissingTarget(format!(
            "{what} in cover `{}`",
            spec.cover
        )));
    }
    let (baseline_overlaps, _) = gluing_tension(&baseline, &default_overlap_weight, tol);
    let baseline_glue = try_glue(&world.site, &spec.cover, &baseline, tol)?;
    let (overlaps, _) = gluing_tension(&sections, &default_overlap_weight, tol);
    let aggregated = try_glue(&world.site, &spec.cover, &sections, tol)?;
    let before = tense_pairs(&baseline_overlaps);
    let after = tense_pairs(&overlaps);
    Ok(InterventionResult {
        cover: cover.name.clone(),
        target: cover.target.clone(),
        kind: spec.kind,
        modified_cells,
        baseline_coherent: baseline_glue.obstruction.is_none() && before.is_empty(),
        coherent: aggregated.obstruction.is_none() && after.is_empty(),
        new_tense: after.difference(&before).cloned().collect(),
        resolved: before.difference(&after).cloned().collect(),
        sections,
        aggregated,
        baseline_overlaps,
        overlaps,
    })
}

/// Record of the grounded counterfactual attached to a rebuilt bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substrate: Option<SubstrateResult>,
    pub rewrites: Vec<RewriteRule>,
    pub outcome: RewriteOutcome,
    /// Contexts present after the rebuild but not before.
    pub new_contexts: Vec<String>,
}

/// Rebuilds a world from a (rewritten) store with the baseline's cover
/// spec and configuration.
pub fn rebuild_world(
    store: crate::model::EpisodeStore,
    cover_spec: crate::model::CoverSpec,
    config: &EngineConfig,
) -> Result<WorldModelBundle> {
    build_world(store, cover_spec, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRun {
    pub spec: InterventionSpec,
    pub probe: InterventionResult,
    pub substrate: Option<SubstrateResult>,
    pub outcome: RewriteOutcome,
    pub bundle: WorldModelBundle,
    pub diff: DriftReport,
}

fn substrate_evidence(result: &SubstrateResult) -> EvidenceUnit {
    let (file, hash) = result
        .input_hashes
        .iter()
        .next()
        .map(|(f, h)| (f.clone(), h.clone()))
        .unwrap_or_default();
    let short: String = hash.chars().take(12).collect();
    let kind = serde_json::to_value(result.kind)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    EvidenceUnit {
        id: format!("substrate:{short}"),
        source_id: file,
        locator: None,
        retrieval_meta: BTreeMap::from([
            ("kind".into(), kind),
            ("baseline".into(), result.baseline.to_string()),
            ("counterfactual".into(), result.counterfactual.to_string()),
            ("effect_absolute".into(), result.effect.absolute.to_string()),
            ("effect_relative".into(), result.effect.relative.to_string()),
        ]),
        extraction_confidence: 1.0,
        stub: false,
    }
}

/// The full loop: probe, evaluate the substrate, rewrite observations,
/// rebuild, and diff against the baseline. The baseline is never mutated.
pub fn run_intervention(
    base: &WorldModelBundle,
    spec: &InterventionSpec,
    base_dir: &Path,
) -> Result<InterventionRun> {
    spec.validate(&base.site).stage("intervention spec")?;
    let probe = do_j(base, spec).stage("probe")?;
    let substrate = spec
        .substrate
        .as_ref()
        .map(|s| evaluate_substrate(s, base_dir))
        .transpose()
        .stage("substrate")?;
    let data = match (&spec.data_episode, &substrate) {
        (Some(d), Some(r)) => Some((d, substrate_evidence(r))),
        (Some(d), None) => Some((
            d,
            EvidenceUnit::stub(&format!("{}:evidence", d.id), "intervention"),
        )),
        _ => None,
    };
    let (store, outcome) =
        rewrite_observations(&base.store, &spec.rewrites, data).stage("rewrite")?;
    let mut bundle =
        rebuild_world(store, base.cover_spec.clone(), &base.config).stage("rebuild")?;
    if !spec.rewrites.is_empty() || substrate.is_some() || spec.data_episode.is_some() {
        let before: BTreeSet<&str> = base.site.contexts.iter().map(|c| c.id.as_str()).collect();
        bundle.grounding = Some(GroundingLayer {
            substrate: substrate.clone(),
            rewrites: spec.rewrites.clone(),
            outcome: outcome.clone(),
            new_contexts: bundle
                .site
                .contexts
                .iter()
                .filter(|c| !before.contains(c.id.as_str()))
                .map(|c| c.id.clone())
                .collect(),
        });
    }
    let diff = diff_worlds(
        base,
        &bundle,
        base.config.atlas.eps_drift(&base.config.tolerance),
    );
    Ok(InterventionRun {
        spec: spec.clone(),
        probe,
        substrate,
        outcome,
        bundle,
        diff,
    })
}
