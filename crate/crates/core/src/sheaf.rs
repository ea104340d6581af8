//! Restriction diagnostics, gluing tension, the operational sheaf
//! condition, and typed obstructions.
//!
//! Sections are compared on exact `(history, test)` cells. Tests that
//! assert opposite polarities for the same `(actor, observation)` pair after
//! the same history are additionally aligned as signed pairs: their gap is
//! `v_i + v_j`, which is zero only when neither side carries mass. That is
//! how a "reduces" claim in one context meets an "increases" claim in
//! another.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToposError};
use crate::model::{split_triple, ContextSite, Polarity};
use crate::psr::LocalPsr;

pub type CellKey = (String, String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub eps_restrict: f64,
    pub eps_glue: f64,
    pub min_shared: usize,
    pub support_threshold: f64,
    /// Context metadata keys whose disagreement marks regime dependence.
    pub regime_keys: Vec<String>,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            eps_restrict: 0.05,
            eps_glue: 0.05,
            min_shared: 4,
            support_threshold: 3.0,
            regime_keys: vec![
                "population".into(),
                "measurement".into(),
                "measurement_protocol".into(),
                "regime".into(),
            ],
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.eps_restrict > 0.0
            && self.eps_glue > 0.0
            && self.min_shared > 0
            && self.support_threshold > 0.0;
        if positive {
            Ok(())
        } else {
            Err(ToposError::Config("tolerances must all be positive".into()))
        }
    }
}

/// Serializes cell maps as `[history, test, value]` triples.
mod cellmap {
    use super::CellKey;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<V: Serialize, S: Serializer>(
        map: &BTreeMap<CellKey, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let v: Vec<(&str, &str, &V)> = map
            .iter()
            .map(|((h, t), v)| (h.as_str(), t.as_str(), v))
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<CellKey, V>, D::Error> {
        let v: Vec<(String, String, V)> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|(h, t, v)| ((h, t), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionCell {
    pub value: f64,
    pub support: f64,
    pub confidence: f64,
    #[serde(default)]
    pub provenance: Vec<String>,
}

/// A local section: the cells of one context's table with their support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub context_id: String,
    #[serde(with = "cellmap")]
    pub cells: BTreeMap<CellKey, SectionCell>,
    pub mean_confidence: f64,
    #[serde(default)]
    pub test_polarity: BTreeMap<String, Polarity>,
    #[serde(default)]
    pub time_range: Option<(i64, i64)>,
}

impl Section {
    /// Takes every grid cell of the table. Cell confidence is the mean
    /// confidence of the cell's evidence, or the table mean without any.
    pub fn from_psr(psr: &LocalPsr, confidence_of: &dyn Fn(&str) -> f64) -> Self {
        let mut cells = BTreeMap::new();
        for (h, hk) in psr.histories.iter().enumerate() {
            for (t, tk) in psr.tests.iter().enumerate() {
                let provenance = psr.provenance_of(hk, tk).to_vec();
                let confidence = if provenance.is_empty() {
                    psr.diagnostics.mean_confidence
                } else {
                    provenance.iter().map(|p| confidence_of(p)).sum::<f64>()
                        / provenance.len() as f64
                };
                cells.insert(
                    (hk.clone(), tk.clone()),
                    SectionCell {
                        value: psr.table.get(h, t),
                        support: psr.support.get(h, t),
                        confidence,
                        provenance,
                    },
                );
            }
        }
        Self {
            context_id: psr.context_id.clone(),
            cells,
            mean_confidence: psr.diagnostics.mean_confidence,
            test_polarity: psr
                .tests
                .iter()
                .cloned()
                .zip(psr.test_polarity.iter().copied())
                .collect(),
            time_range: psr.time_range,
        }
    }

    pub fn polarity_of(&self, test: &str) -> Polarity {
        self.test_polarity.get(test).copied().unwrap_or_else(|| {
            split_triple(test)
                .map(|(_, r, _)| Polarity::from_relation(r))
                .unwrap_or(Polarity::Neutral)
        })
    }

    fn supported_groups(&self) -> HashMap<GroupKey, Vec<&CellKey>> {
        let mut groups: HashMap<GroupKey, Vec<&CellKey>> = HashMap::new();
        for (key, cell) in &self.cells {
            if cell.support > 0.0 {
                if let Some(g) = group_key(key) {
                    groups.entry(g).or_default().push(key);
                }
            }
        }
        groups
    }
}

/// Cells align for polarity comparison when they share the history (or
/// are both diagonal) and their tests share the `(actor, observation)` pair.
type GroupKey = (String, String, String);

fn group_key((h, t): &CellKey) -> Option<GroupKey> {
    let (actor, _, obs) = split_triple(t)?;
    let hist = if h == t { String::from("=") } else { h.clone() };
    Some((hist, actor.to_string(), obs.to_string()))
}

/// The exact key intersection of two table grids, in the target's order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedSignature {
    pub source: String,
    pub target: String,
    pub cells: Vec<CellKey>,
}

pub fn shared_signature(source: &LocalPsr, target: &LocalPsr) -> SharedSignature {
    let sh: BTreeSet<&str> = source.histories.iter().map(String::as_str).collect();
    let st: BTreeSet<&str> = source.tests.iter().map(String::as_str).collect();
    let mut cells = Vec::new();
    for h in target.histories.iter().filter(|h| sh.contains(h.as_str())) {
        for t in target.tests.iter().filter(|t| st.contains(t.as_str())) {
            cells.push((h.clone(), t.clone()));
        }
    }
    SharedSignature {
        source: source.context_id.clone(),
        target: target.context_id.clone(),
        cells,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// `min(1, (S_U + S_V) / (2 * support_threshold))` times the mean of the
    /// two tables' extraction confidence.
    SupportConfidence,
    Uniform,
}

impl LambdaPolicy {
    fn describe(self) -> &'static str {
        match self {
            LambdaPolicy::SupportConfidence => "support_confidence",
            LambdaPolicy::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictionStatus {
    Aligned,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCell {
    pub history: String,
    pub test: String,
    pub source_value: f64,
    pub target_value: f64,
    pub gap: f64,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictionDiagnostic {
    pub source: String,
    pub target: String,
    pub shared_cells: usize,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub lambda_policy: String,
    pub status: RestrictionStatus,
    pub empty_overlap: bool,
    /// Highest-gap cells with their evidence, largest first.
    pub worst_cells: Vec<GapCell>,
}

const WORST_CELLS: usize = 3;

/// Compares `source` restricted to the shared signature with `target`.
pub fn restriction_check(
    source: &LocalPsr,
    target: &LocalPsr,
    policy: LambdaPolicy,
    tol: &ToleranceConfig,
) -> RestrictionDiagnostic {
    let sig = shared_signature(source, target);
    let n = sig.cells.len();
    if n == 0 {
        return RestrictionDiagnostic {
            source: source.context_id.clone(),
            target: target.context_id.clone(),
            shared_cells: 0,
            mean_gap: 0.0,
            max_gap: 0.0,
            lambda_policy: policy.describe().into(),
            status: RestrictionStatus::Divergent,
            empty_overlap: true,
            worst_cells: Vec::new(),
        };
    }
    let confidence =
        0.5 * (source.diagnostics.mean_confidence + target.diagnostics.mean_confidence);
    let src_h: HashMap<&str, usize> = index(&source.histories);
    let src_t: HashMap<&str, usize> = index(&source.tests);
    let tgt_h: HashMap<&str, usize> = index(&target.histories);
    let tgt_t: HashMap<&str, usize> = index(&target.tests);
    let mut weighted = 0.0;
    let mut max_gap = 0.0_f64;
    let mut gaps: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, (h, t)) in sig.cells.iter().enumerate() {
        let (sh, st) = (src_h[h.as_str()], src_t[t.as_str()]);
        let (th, tt) = (tgt_h[h.as_str()], tgt_t[t.as_str()]);
        let gap = (source.table.get(sh, st) - target.table.get(th, tt)).abs();
        let lambda = match policy {
            LambdaPolicy::Uniform => 1.0,
            LambdaPolicy::SupportConfidence => {
                let s = source.support.get(sh, st) + target.support.get(th, tt);
                (s / (2.0 * tol.support_threshold)).min(1.0) * confidence
            }
        };
        weighted += lambda * gap;
        max_gap = max_gap.max(gap);
        gaps.push((gap, i));
    }
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let worst_cells = gaps
        .iter()
        .take(WORST_CELLS)
        .filter(|(g, _)| *g > 0.0)
        .map(|&(gap, i)| {
            let (h, t) = &sig.cells[i];
            let mut provenance: BTreeSet<String> =
                source.provenance_of(h, t).iter().cloned().collect();
            provenance.extend(target.provenance_of(h, t).iter().cloned());
            GapCell {
                history: h.clone(),
                test: t.clone(),
                source_value: source.table.get(src_h[h.as_str()], src_t[t.as_str()]),
                target_value: target.table.get(tgt_h[h.as_str()], tgt_t[t.as_str()]),
                gap,
                provenance: provenance.into_iter().collect(),
            }
        })
        .collect();
    let mean_gap = weighted / n as f64;
    let aligned = mean_gap <= tol.eps_restrict && n >= tol.min_shared;
    RestrictionDiagnostic {
        source: source.context_id.clone(),
        target: target.context_id.clone(),
        shared_cells: n,
        mean_gap,
        max_gap,
        lambda_policy: policy.describe().into(),
        status: if aligned {
            RestrictionStatus::Aligned
        } else {
            RestrictionStatus::Divergent
        },
        empty_overlap: false,
        worst_cells,
    }
}

fn index(keys: &[String]) -> HashMap<&str, usize> {
    keys.iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapStatus {
    Compatible,
    Tense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluingOverlap {
    pub left: String,
    pub right: String,
    pub weight: f64,
    pub tension: f64,
    /// Cells compared: exact shared cells plus aligned opposite-polarity pairs.
    pub section_count: usize,
    /// `tension / section_count`.
    pub loss: f64,
    /// Largest unweighted per-cell gap; the overlap is tense when it
    /// exceeds `eps_glue`.
    pub max_gap: f64,
    pub status: OverlapStatus,
}

/// Cells two sections can be compared on: exact shared keys, plus
/// opposite-polarity supported cells in the same group that have no exact
/// counterpart on the other side.
struct Alignment<'a> {
    shared: Vec<&'a CellKey>,
    opposed: Vec<(&'a CellKey, &'a CellKey)>,
}

fn align<'a>(a: &'a Section, b: &'a Section) -> Alignment<'a> {
    let shared = a
        .cells
        .keys()
        .filter(|k| b.cells.contains_key(*k))
        .collect();
    let ga = a.supported_groups();
    let gb = b.supported_groups();
    let mut opposed = Vec::new();
    let mut keys: Vec<&GroupKey> = ga.keys().filter(|k| gb.contains_key(*k)).collect();
    keys.sort();
    // Cells with an exact supported counterpart are compared directly.
    let matched =
        |k: &CellKey, other: &Section| other.cells.get(k).is_some_and(|c| c.support > 0.0);
    for g in keys {
        for ka in ga[g].iter().filter(|k| !matched(k, b)) {
            for kb in gb[g].iter().filter(|k| !matched(k, a)) {
                if a.polarity_of(&ka.1).opposes(b.polarity_of(&kb.1)) {
                    opposed.push((*ka, *kb));
                }
            }
        }
    }
    Alignment { shared, opposed }
}

/// Default overlap weight: the mean of the two sections' mean confidence.
pub fn default_overlap_weight(a: &Section, b: &Section) -> f64 {
    0.5 * (a.mean_confidence + b.mean_confidence)
}

/// Pairwise tension `w_ij * ||gap||^2` over every pair with a nonempty
/// alignment, and the total.
pub fn gluing_tension(
    sections: &[Section],
    weight: &dyn Fn(&Section, &Section) -> f64,
    tol: &ToleranceConfig,
) -> (Vec<GluingOverlap>, f64) {
    let mut overlaps = Vec::new();
    let mut total = 0.0;
    for i in 0..sections.len() {
        for j in i + 1..sections.len() {
            let (a, b) = (&sections[i], &sections[j]);
            let al = align(a, b);
            let count = al.shared.len() + al.opposed.len();
            if count == 0 {
                continue;
            }
            let mut sq = 0.0;
            let mut max_gap = 0.0_f64;
            for k in &al.shared {
                let d = a.cells[*k].value - b.cells[*k].value;
                sq += d * d;
                max_gap = max_gap.max(d.abs());
            }
            for (ka, kb) in &al.opposed {
                let d = a.cells[*ka].value + b.cells[*kb].value;
                sq += d * d;
                max_gap = max_gap.max(d.abs());
            }
            let w = weight(a, b).clamp(0.0, 1.0);
            let tension = w * sq;
            let loss = tension / count as f64;
            total += tension;
            overlaps.push(GluingOverlap {
                left: a.context_id.clone(),
                right: b.context_id.clone(),
                weight: w,
                tension,
                section_count: count,
                loss,
                max_gap,
                status: if max_gap > tol.eps_glue {
                    OverlapStatus::Tense
                } else {
                    OverlapStatus::Compatible
                },
            });
        }
    }
    (overlaps, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluedCell {
    pub value: f64,
    pub support: f64,
    pub confidence: f64,
    /// `(context, omega)` for every section that entered the average.
    pub weights: Vec<(String, f64)>,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluedSection {
    pub target: String,
    pub cover: String,
    #[serde(with = "cellmap")]
    pub cells: BTreeMap<CellKey, GluedCell>,
    pub contributors: Vec<String>,
    #[serde(default)]
    pub test_polarity: BTreeMap<String, Polarity>,
    #[serde(default)]
    pub time_range: Option<(i64, i64)>,
}

impl GluedSection {
    /// Views the glued section as a section over its target, so it can be
    /// glued again at a coarser level.
    pub fn to_section(&self) -> Section {
        let cells: BTreeMap<CellKey, SectionCell> = self
            .cells
            .iter()
            .map(|(k, c)| {
                (
                    k.clone(),
                    SectionCell {
                        value: c.value,
                        support: c.support,
                        confidence: c.confidence,
                        provenance: c.provenance.clone(),
                    },
                )
            })
            .collect();
        let mean_confidence = if cells.is_empty() {
            0.0
        } else {
            cells.values().map(|c| c.confidence).sum::<f64>() / cells.len() as f64
        };
        Section {
            context_id: self.target.clone(),
            cells,
            mean_confidence,
            test_polarity: self.test_polarity.clone(),
            time_range: self.time_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Contradiction,
    Drift,
    RegimeDependence,
    Underdetermination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstructionReason {
    /// Supported values of the same cell differ by more than `eps_glue`.
    ValueGap,
    /// Opposite-polarity tests for the same pair are both supported.
    PolarityConflict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub context: String,
    pub test: String,
    pub value: f64,
    pub support: f64,
    pub polarity: Polarity,
    pub provenance: Vec<String>,
    #[serde(default)]
    pub time_range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructedCell {
    pub history: String,
    pub test: String,
    pub reason: ObstructionReason,
    pub contributions: Vec<Contribution>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstruction {
    pub cover: String,
    pub level: u8,
    pub cells: Vec<ObstructedCell>,
    pub classification: Classification,
    pub rationale: String,
}

impl Obstruction {
    /// Distinct `(cause, effect)` pairs named by the offending tests.
    pub fn claim_pairs(&self) -> BTreeSet<(String, String)> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.contributions
                    .iter()
                    .map(|k| k.test.as_str())
                    .chain([c.test.as_str()])
            })
            .filter_map(split_triple)
            .map(|(a, _, o)| (a.to_string(), o.to_string()))
            .collect()
    }

    pub fn contexts(&self) -> BTreeSet<&str> {
        self.cells
            .iter()
            .flat_map(|c| c.contributions.iter().map(|k| k.context.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellAccounting {
    pub compatible: usize,
    pub obstructed: usize,
    pub unsupported: usize,
    pub union: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlueOutcome {
    pub section: GluedSection,
    pub obstruction: Option<Obstruction>,
    /// Cells left local: supported below threshold or by nobody.
    #[serde(default)]
    pub unsupported: Vec<CellKey>,
    pub accounting: CellAccounting,
}

fn ranges_disjoint(ranges: &[(i64, i64)]) -> bool {
    for (i, a) in ranges.iter().enumerate() {
        for b in &ranges[i + 1..] {
            if a.0 <= b.1 && b.0 <= a.1 {
                return false;
            }
        }
    }
    true
}

fn classify_cell(
    cell: &ObstructedCell,
    site: &ContextSite,
    tol: &ToleranceConfig,
) -> Classification {
    let sides: Vec<&Contribution> = cell
        .contributions
        .iter()
        .filter(|c| c.support > 0.0)
        .collect();
    for (i, a) in sides.iter().enumerate() {
        for b in &sides[i + 1..] {
            if a.context != b.context
                && a.polarity.opposes(b.polarity)
                && a.support >= tol.support_threshold
                && b.support >= tol.support_threshold
            {
                return Classification::Contradiction;
            }
        }
    }
    if sides.is_empty() || sides.iter().any(|c| c.support < tol.support_threshold) {
        return Classification::Underdetermination;
    }
    let same_polarity = sides.windows(2).all(|w| w[0].polarity == w[1].polarity);
    let ranges: Option<Vec<(i64, i64)>> = sides.iter().map(|c| c.time_range).collect();
    if same_polarity {
        if let Some(r) = ranges {
            if r.len() >= 2 && ranges_disjoint(&r) {
                return Classification::Drift;
            }
        }
    }
    let contexts: BTreeSet<&str> = sides.iter().map(|c| c.context.as_str()).collect();
    for key in &tol.regime_keys {
        let values: BTreeSet<Option<&String>> = contexts
            .iter()
            .map(|c| site.context(c).and_then(|ctx| ctx.metadata.get(key)))
            .collect();
        if values.len() > 1 && values.iter().any(Option::is_some) {
            return Classification::RegimeDependence;
        }
    }
    Classification::Underdetermination
}

/// Re-derives every cell classification and the obstruction-level class:
/// contradiction > drift > regime dependence > underdetermination.
pub fn classify_obstruction(
    obstruction: &mut Obstruction,
    site: &ContextSite,
    tol: &ToleranceConfig,
) -> Classification {
    let mut counts: BTreeMap<Classification, usize> = BTreeMap::new();
    for cell in &mut obstruction.cells {
        cell.classification = classify_cell(cell, site, tol);
        *counts.entry(cell.classification).or_default() += 1;
    }
    let class = counts
        .keys()
        .next()
        .copied()
        .unwrap_or(Classification::Underdetermination);
    obstruction.classification = class;
    obstruction.rationale = counts
        .iter()
        .map(|(c, n)| {
            format!(
                "{n} {}",
                serde_json::to_string(c)
                    .unwrap_or_default()
                    .trim_matches('"')
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    class
}

fn contribution(s: &Section, key: &CellKey) -> Contribution {
    let cell = &s.cells[key];
    Contribution {
        context: s.context_id.clone(),
        test: key.1.clone(),
        value: cell.value,
        support: cell.support,
        polarity: s.polarity_of(&key.1),
        provenance: cell.provenance.clone(),
        time_range: s.time_range,
    }
}

/// Attempts to glue the sections of the cover's members.
///
/// A cell whose supported values spread more than `eps_glue`, or that takes
/// part in a supported polarity conflict, is obstructed. Other cells with
/// total support at least `support_threshold` are aggregated with
/// `omega_i = S_i * confidence_i`; the rest stay local.
pub fn try_glue(
    site: &ContextSite,
    cover_name: &str,
    sections: &[Section],
    tol: &ToleranceConfig,
) -> Result<GlueOutcome> {
    let cover = site.cover(cover_name)?;
    glue_members(
        site,
        cover_name,
        &cover.target,
        &cover.members,
        sections,
        tol,
        1,
    )
}

fn glue_members(
    site: &ContextSite,
    cover_name: &str,
    target: &str,
    members: &[String],
    sections: &[Section],
    tol: &ToleranceConfig,
    level: u8,
) -> Result<GlueOutcome> {
    let members: BTreeSet<&str> = members.iter().map(String::as_str).collect();
    let parts: Vec<&Section> = sections
        .iter()
        .filter(|s| members.contains(s.context_id.as_str()))
        .collect();

    let mut union: BTreeSet<&CellKey> = BTreeSet::new();
    for s in &parts {
        union.extend(s.cells.keys());
    }

    // Polarity conflicts across different members.
    let mut conflict: BTreeMap<&CellKey, Vec<Contribution>> = BTreeMap::new();
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            for (ka, kb) in align(parts[i], parts[j]).opposed {
                let a = contribution(parts[i], ka);
                let b = contribution(parts[j], kb);
                for k in [ka, kb] {
                    let entry = conflict.entry(k).or_default();
                    for c in [&a, &b] {
                        if !entry
                            .iter()
                            .any(|e| e.context == c.context && e.test == c.test)
                        {
                            entry.push(c.clone());
                        }
                    }
                }
            }
        }
    }

    let mut glued = BTreeMap::new();
    let mut obstructed = Vec::new();
    let mut unsupported = Vec::new();
    let mut contributors: BTreeSet<String> = BTreeSet::new();
    let mut test_polarity = BTreeMap::new();
    let mut time_range: Option<(i64, i64)> = None;
    for key in union {
        if let Some(contribs) = conflict.remove(key) {
            obstructed.push(ObstructedCell {
                history: key.0.clone(),
                test: key.1.clone(),
                reason: ObstructionReason::PolarityConflict,
                contributions: contribs,
                classification: Classification::Underdetermination,
            });
            continue;
        }
        let holders: Vec<&Section> = parts
            .iter()
            .copied()
            .filter(|s| s.cells.contains_key(key))
            .collect();
        let supported: Vec<&Section> = holders
            .iter()
            .copied()
            .filter(|s| s.cells[key].support > 0.0)
            .collect();
        let (lo, hi) = supported
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                let v = s.cells[key].value;
                (lo.min(v), hi.max(v))
            });
        if supported.len() >= 2 && hi - lo > tol.eps_glue {
            obstructed.push(ObstructedCell {
                history: key.0.clone(),
                test: key.1.clone(),
                reason: ObstructionReason::ValueGap,
                contributions: supported.iter().map(|s| contribution(s, key)).collect(),
                classification: Classification::Underdetermination,
            });
            continue;
        }
        let total_support: f64 = supported.iter().map(|s| s.cells[key].support).sum();
        if supported.is_empty() || total_support < tol.support_threshold {
            unsupported.push(key.clone());
            continue;
        }
        let mut omegas: Vec<(String, f64)> = supported
            .iter()
            .map(|s| {
                let c = &s.cells[key];
                (s.context_id.clone(), c.support * c.confidence)
            })
            .collect();
        if omegas.iter().all(|(_, w)| *w <= 0.0) {
            omegas = supported
                .iter()
                .map(|s| (s.context_id.clone(), s.cells[key].support))
                .collect();
        }
        let wsum: f64 = omegas.iter().map(|(_, w)| w).sum();
        let value = supported
            .iter()
            .zip(&omegas)
            .map(|(s, (_, w))| w * s.cells[key].value)
            .sum::<f64>()
            / wsum;
        let value = value.clamp(lo, hi);
        let confidence = supported
            .iter()
            .zip(&omegas)
            .map(|(s, (_, w))| w * s.cells[key].confidence)
            .sum::<f64>()
            / wsum;
        let provenance: BTreeSet<String> = supported
            .iter()
            .flat_map(|s| s.cells[key].provenance.iter().cloned())
            .collect();
        for s in &supported {
            contributors.insert(s.context_id.clone());
            if let Some((a, b)) = s.time_range {
                time_range = Some(time_range.map_or((a, b), |(x, y)| (x.min(a), y.max(b))));
            }
            test_polarity.insert(key.1.clone(), s.polarity_of(&key.1));
        }
        glued.insert(
            key.clone(),
            GluedCell {
                value,
                support: total_support,
                confidence,
                weights: omegas,
                provenance: provenance.into_iter().collect(),
            },
        );
    }

    let accounting = CellAccounting {
        compatible: glued.len(),
        obstructed: obstructed.len(),
        unsupported: unsupported.len(),
        union: glued.len() + obstructed.len() + unsupported.len(),
    };
    let obstruction = if obstructed.is_empty() {
        None
    } else {
        let mut ob = Obstruction {
            cover: cover_name.to_string(),
            level,
            cells: obstructed,
            classification: Classification::Underdetermination,
            rationale: String::new(),
        };
        classify_obstruction(&mut ob, site, tol);
        Some(ob)
    };
    Ok(GlueOutcome {
        section: GluedSection {
            target: target.to_string(),
            cover: cover_name.to_string(),
            cells: glued,
            contributors: contributors.into_iter().collect(),
            test_polarity,
            time_range,
        },
        obstruction,
        unsupported,
        accounting,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageOutcome {
    pub level1: Vec<GlueOutcome>,
    pub level2: GlueOutcome,
}

impl TwoStageOutcome {
    pub fn obstructions(&self) -> impl Iterator<Item = &Obstruction> {
        self.level1
            .iter()
            .chain(std::iter::once(&self.level2))
            .filter_map(|o| o.obstruction.as_ref())
    }
}

/// Glues each level-1 cover, then glues the resulting sections over the
/// level-2 cover. A level-1 cover that fails enters level 2 with only its
/// compatible partial section.
pub fn two_stage_glue(
    site: &ContextSite,
    level1: &[&str],
    level2: &str,
    sections: &[Section],
    tol: &ToleranceConfig,
) -> Result<TwoStageOutcome> {
    let outer = site.cover(level2)?;
    let mut targets = BTreeSet::new();
    for name in level1 {
        targets.insert(site.cover(name)?.target.clone());
    }
    let members: BTreeSet<String> = outer.members.iter().cloned().collect();
    if targets != members {
        return Err(ToposError::InvalidArgument(format!(
            "level-1 targets {targets:?} do not match level-2 members {members:?}"
        )));
    }
    let mut outcomes = Vec::new();
    for name in level1 {
        outcomes.push(try_glue(site, name, sections, tol)?);
    }
    let lifted: Vec<Section> = outcomes.iter().map(|o| o.section.to_section()).collect();
    let level2_outcome =
        glue_members(site, level2, &outer.target, &outer.members, &lifted, tol, 2)?;
    Ok(TwoStageOutcome {
        level1: outcomes,
        level2: level2_outcome,
    })
}
