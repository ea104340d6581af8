//! Local causal predictive-state tables.
//!
//! Each context gets a history × test table of smoothed predictive support
//! scores, built from within-episode transition counts. Cell values blend
//! local, neighboring-context and corpus estimates with weights
//! proportional to each level's row mass, so every row stays
//! sub-stochastic.

// Negated comparisons below deliberately treat NaN as invalid.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToposError};
use crate::model::{CausalEvent, ContextAssignment, ContextSite, EpisodeStore, Polarity};

/// Dense storage is used for tables up to this many cells; larger tables
/// serialize as coordinate lists.
pub const DENSE_CELL_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backoff {
    CorpusFrequency,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendPolicy {
    /// Weights proportional to the local, neighbor and corpus row masses.
    SupportProportional,
    /// Local estimate only.
    LocalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    pub alpha: f64,
    pub backoff: Backoff,
    pub blend_policy: BlendPolicy,
    /// Maximum distance between paired events; `None` spans the episode.
    pub window: Option<usize>,
    /// Depth knob: keep at most this many tests per context.
    pub max_tests: Option<usize>,
    pub rank_rel_tol: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            backoff: Backoff::CorpusFrequency,
            blend_policy: BlendPolicy::SupportProportional,
            window: None,
            max_tests: None,
            rank_rel_tol: 1e-9,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ToposError::Config("alpha must be positive".into()));
        }
        if self.window == Some(0) {
            return Err(ToposError::Config("window must be at least 1".into()));
        }
        if !(self.rank_rel_tol > 0.0) {
            return Err(ToposError::Config("rank_rel_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Smoothed frequency `(n + alpha * p0) / (mass + alpha)`.
pub fn estimate_cell(n: f64, mass: f64, alpha: f64, p0: f64) -> Result<f64> {
    if !(n >= 0.0) || !(mass >= n) || !(alpha > 0.0) || !(0.0..=1.0).contains(&p0) {
        return Err(ToposError::InvalidArgument(format!(
            "estimate_cell(n={n}, mass={mass}, alpha={alpha}, p0={p0})"
        )));
    }
    Ok((n + alpha * p0) / (mass + alpha))
}

/// Support-proportional blend of local, neighbor and corpus estimates.
pub fn blend_backoff(p: [f64; 3], s: [f64; 3]) -> Result<f64> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || s.iter().any(|v| !(*v >= 0.0)) {
        return Err(ToposError::InvalidArgument(format!(
            "blend_backoff(p={p:?}, s={s:?})"
        )));
    }
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return Err(ToposError::InvalidArgument(
            "blend_backoff: all supports are zero".into(),
        ));
    }
    Ok(p.iter().zip(s.iter()).map(|(p, s)| p * s).sum::<f64>() / total)
}

/// Distinct triples of the events, in first-occurrence order. With
/// single-step tests every observed triple is both a history and a test.
pub fn enumerate_history_tests<'a>(
    events: impl IntoIterator<Item = &'a CausalEvent>,
) -> (Vec<String>, Vec<String>) {
    let mut seen = BTreeSet::new();
    let mut keys = Vec::new();
    for ev in events {
        let k = ev.key();
        if seen.insert(k.clone()) {
            keys.push(k);
        }
    }
    (keys.clone(), keys)
}

/// Row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged matrix");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Dense(Vec<Vec<f64>>),
    Sparse {
        format: String,
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.rows * self.cols <= DENSE_CELL_LIMIT {
            MatrixRepr::Dense(self.to_rows()).serialize(serializer)
        } else {
            let entries = self
                .data
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i / self.cols, i % self.cols, *v))
                .collect();
            MatrixRepr::Sparse {
                format: "coo".into(),
                rows: self.rows,
                cols: self.cols,
                entries,
            }
            .serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match MatrixRepr::deserialize(deserializer)? {
            MatrixRepr::Dense(rows) => {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(de::Error::custom("ragged dense matrix"));
                }
                Ok(Matrix::from_rows(&rows))
            }
            MatrixRepr::Sparse {
                format,
                rows,
                cols,
                entries,
            } => {
                if format != "coo" {
                    return Err(de::Error::custom(format!("unknown matrix format {format}")));
                }
                let mut m = Matrix::zeros(rows, cols);
                for (r, c, v) in entries {
                    if r >= rows || c >= cols {
                        return Err(de::Error::custom("sparse entry out of bounds"));
                    }
                    m.set(r, c, v);
                }
                Ok(m)
            }
        }
    }
}

/// Number of singular values above `rel_tol * sigma_max * max(rows, cols)`.
pub fn numeric_rank(table: &Matrix, rel_tol: f64) -> usize {
    if table.rows == 0 || table.cols == 0 {
        return 0;
    }
    let m = nalgebra::DMatrix::from_row_slice(table.rows, table.cols, &table.data);
    let sv = m.singular_values();
    let sigma_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max <= 0.0 {
        return 0;
    }
    let cutoff = rel_tol * sigma_max * table.rows.max(table.cols) as f64;
    sv.iter().filter(|s| **s > cutoff).count()
}

/// Transition support of one context: sparse counts over its history and
/// test vocabularies, full row masses, and per-cell provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupportCounts {
    pub histories: Vec<String>,
    pub tests: Vec<String>,
    pub cells: BTreeMap<(usize, usize), f64>,
    pub row_mass: Vec<f64>,
    pub provenance: BTreeMap<(usize, usize), BTreeSet<String>>,
    pub test_polarity: Vec<Polarity>,
    pub time_range: Option<(i64, i64)>,
    pub event_count: usize,
    history_index: HashMap<String, usize>,
    test_index: HashMap<String, usize>,
}

impl SupportCounts {
    /// Assembles counts from explicit parts. Row masses default to the row
    /// sums when `row_mass` is `None`.
    pub fn from_parts(
        histories: Vec<String>,
        tests: Vec<String>,
        cells: BTreeMap<(usize, usize), f64>,
        row_mass: Option<Vec<f64>>,
        provenance: BTreeMap<(usize, usize), BTreeSet<String>>,
    ) -> Self {
        let mut sums = vec![0.0; histories.len()];
        for (&(h, _), v) in &cells {
            sums[h] += v;
        }
        let row_mass = row_mass.unwrap_or(sums);
        let test_polarity = tests
            .iter()
            .map(|t| {
                crate::model::split_triple(t)
                    .map(|(_, r, _)| Polarity::from_relation(r))
                    .unwrap_or(Polarity::Neutral)
            })
            .collect();
        let mut out = Self {
            histories,
            tests,
            cells,
            row_mass,
            provenance,
            test_polarity,
            time_range: None,
            event_count: 0,
            history_index: HashMap::new(),
            test_index: HashMap::new(),
        };
        out.reindex();
        out
    }

    fn reindex(&mut self) {
        self.history_index = self
            .histories
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        self.test_index = self
            .tests
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
    }

    pub fn count(&self, history: &str, test: &str) -> f64 {
        match (self.history_index.get(history), self.test_index.get(test)) {
            (Some(&h), Some(&t)) => self.cells.get(&(h, t)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn mass(&self, history: &str) -> f64 {
        self.history_index
            .get(history)
            .map_or(0.0, |&h| self.row_mass[h])
    }

    /// Keeps the `limit` tests with the largest column support (ties by
    /// first occurrence). Row masses are left untouched.
    fn truncate_tests(&mut self, limit: usize) {
        if self.tests.len() <= limit {
            return;
        }
        let mut col = vec![0.0; self.tests.len()];
        for (&(_, t), v) in &self.cells {
            col[t] += v;
        }
        let mut order: Vec<usize> = (0..self.tests.len()).collect();
        order.sort_by(|a, b| col[*b].total_cmp(&col[*a]).then(a.cmp(b)));
        let mut keep: Vec<usize> = order.into_iter().take(limit).collect();
        keep.sort_unstable();
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(n, o)| (*o, n)).collect();
        self.tests = keep.iter().map(|&o| self.tests[o].clone()).collect();
        self.test_polarity = keep.iter().map(|&o| self.test_polarity[o]).collect();
        self.cells = std::mem::take(&mut self.cells)
            .into_iter()
            .filter_map(|((h, t), v)| remap.get(&t).map(|&n| ((h, n), v)))
            .collect();
        self.provenance = std::mem::take(&mut self.provenance)
            .into_iter()
            .filter_map(|((h, t), v)| remap.get(&t).map(|&n| ((h, n), v)))
            .collect();
        self.reindex();
    }
}

/// Counts ordered event pairs `(h before τ)` inside each episode, both
/// events in the context and at most `window` positions apart, plus one
/// unit of self-support on the diagonal for every event.
pub fn transition_support(
    store: &EpisodeStore,
    in_context: &dyn Fn(&CausalEvent) -> bool,
    window: Option<usize>,
) -> SupportCounts {
    let members: Vec<Vec<(usize, &CausalEvent)>> = store
        .episodes
        .iter()
        .map(|ep| {
            ep.events
                .iter()
                .enumerate()
                .filter(|(_, ev)| in_context(ev))
                .collect()
        })
        .collect();
    let (histories, tests) = enumerate_history_tests(members.iter().flatten().map(|(_, e)| *e));
    let index: HashMap<&str, usize> = histories
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let mut polarity = vec![Polarity::Neutral; tests.len()];
    let mut seen_pol = vec![false; tests.len()];
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut provenance: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    let mut time_range: Option<(i64, i64)> = None;
    let mut event_count = 0;
    for episode in &members {
        let keys: Vec<usize> = episode
            .iter()
            .map(|(_, ev)| index[ev.key().as_str()])
            .collect();
        for (a, (pos_a, ev_a)) in episode.iter().enumerate() {
            event_count += 1;
            let h = keys[a];
            if !seen_pol[h] {
                polarity[h] = ev_a.polarity;
                seen_pol[h] = true;
            }
            if let Some(t) = ev_a.time_index {
                time_range = Some(match time_range {
                    None => (t, t),
                    Some((lo, hi)) => (lo.min(t), hi.max(t)),
                });
            }
            *cells.entry((h, h)).or_default() += 1.0;
            provenance
                .entry((h, h))
                .or_default()
                .insert(ev_a.provenance.clone());
            for (b, (pos_b, ev_b)) in episode.iter().enumerate().skip(a + 1) {
                if window.is_some_and(|w| pos_b - pos_a > w) {
                    break;
                }
                let t = keys[b];
                *cells.entry((h, t)).or_default() += 1.0;
                let prov = provenance.entry((h, t)).or_default();
                prov.insert(ev_a.provenance.clone());
                prov.insert(ev_b.provenance.clone());
            }
        }
    }
    let mut counts = SupportCounts::from_parts(histories, tests, cells, None, provenance);
    counts.test_polarity = polarity;
    counts.time_range = time_range;
    counts.event_count = event_count;
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrDiagnostics {
    pub rank: usize,
    /// Fraction of cells with zero support.
    pub sparsity: f64,
    pub mean_confidence: f64,
    pub event_count: usize,
}

/// One context's predictive-state table with support and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPsr {
    pub context_id: String,
    pub histories: Vec<String>,
    pub tests: Vec<String>,
    pub table: Matrix,
    pub support: Matrix,
    /// `"history|test"` → evidence ids, for every supported cell.
    pub provenance: BTreeMap<String, Vec<String>>,
    pub diagnostics: PsrDiagnostics,
    pub test_polarity: Vec<Polarity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<(i64, i64)>,
}

pub fn cell_key(history: &str, test: &str) -> String {
    format!("{history}|{test}")
}

impl LocalPsr {
    pub fn history_index(&self, key: &str) -> Option<usize> {
        self.histories.iter().position(|h| h == key)
    }

    pub fn test_index(&self, key: &str) -> Option<usize> {
        self.tests.iter().position(|t| t == key)
    }

    pub fn value(&self, history: &str, test: &str) -> Option<f64> {
        Some(
            self.table
                .get(self.history_index(history)?, self.test_index(test)?),
        )
    }

    pub fn support_of(&self, history: &str, test: &str) -> Option<f64> {
        Some(
            self.support
                .get(self.history_index(history)?, self.test_index(test)?),
        )
    }

    pub fn provenance_of(&self, history: &str, test: &str) -> &[String] {
        self.provenance
            .get(&cell_key(history, test))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Backoff sources used when estimating one context.
pub struct BackoffSources<'a> {
    pub neighbors: Vec<&'a SupportCounts>,
    pub corpus: Option<&'a SupportCounts>,
    /// Prior `p0(test)`; must sum to at most 1 over the context's tests.
    pub prior: &'a dyn Fn(&str) -> f64,
}

/// Estimates a context table from its counts and backoff sources.
pub fn build_local_psr(
    context_id: &str,
    counts: &SupportCounts,
    sources: &BackoffSources<'_>,
    mean_confidence: f64,
    config: &SmoothingConfig,
) -> Result<LocalPsr> {
    let (nh, nt) = (counts.histories.len(), counts.tests.len());
    let mut table = Matrix::zeros(nh, nt);
    let mut support = Matrix::zeros(nh, nt);
    for (&(h, t), &v) in &counts.cells {
        support.set(h, t, v);
    }
    let alpha = config.alpha;
    for (h, hkey) in counts.histories.iter().enumerate() {
        let local_mass = counts.row_mass[h];
        let nbr_mass: f64 = sources.neighbors.iter().map(|n| n.mass(hkey)).sum();
        let corp_mass = sources.corpus.map_or(0.0, |c| c.mass(hkey));
        for (t, tkey) in counts.tests.iter().enumerate() {
            let p0 = match config.backoff {
                Backoff::Uniform => 1.0 / nt as f64,
                Backoff::CorpusFrequency => (sources.prior)(tkey),
            };
            let p_loc = estimate_cell(support.get(h, t), local_mass, alpha, p0)?;
            let value = match config.blend_policy {
                BlendPolicy::LocalOnly => p_loc,
                BlendPolicy::SupportProportional => {
                    let n_nbr: f64 = sources.neighbors.iter().map(|n| n.count(hkey, tkey)).sum();
                    let p_nbr = estimate_cell(n_nbr, nbr_mass, alpha, p0)?;
                    let p_corp = match sources.corpus {
                        Some(c) => estimate_cell(c.count(hkey, tkey), corp_mass, alpha, p0)?,
                        None => p0,
                    };
                    if local_mass + nbr_mass + corp_mass > 0.0 {
                        blend_backoff([p_loc, p_nbr, p_corp], [local_mass, nbr_mass, corp_mass])?
                    } else {
                        p0
                    }
                }
            };
            table.set(h, t, value);
        }
    }
    let provenance = counts
        .provenance
        .iter()
        .filter(|(_, ids)| !ids.is_empty())
        .map(|(&(h, t), ids)| {
            (
                cell_key(&counts.histories[h], &counts.tests[t]),
                ids.iter().cloned().collect(),
            )
        })
        .collect();
    let zero_cells = nh * nt - counts.cells.values().filter(|v| **v > 0.0).count();
    let sparsity = if nh * nt == 0 {
        1.0
    } else {
        zero_cells as f64 / (nh * nt) as f64
    };
    let rank = numeric_rank(&table, config.rank_rel_tol);
    Ok(LocalPsr {
        context_id: context_id.to_string(),
        histories: counts.histories.clone(),
        tests: counts.tests.clone(),
        table,
        support,
        provenance,
        diagnostics: PsrDiagnostics {
            rank,
            sparsity,
            mean_confidence,
            event_count: counts.event_count,
        },
        test_polarity: counts.test_polarity.clone(),
        time_range: counts.time_range,
    })
}

/// Builds a table for every context with at least one assigned event.
/// Neighbors are contexts joined by an overlap context; the corpus level is
/// the root.
pub fn build_psrs(
    store: &EpisodeStore,
    site: &ContextSite,
    assignment: &ContextAssignment,
    config: &SmoothingConfig,
) -> Result<Vec<LocalPsr>> {
    config.validate()?;
    let mut counts: BTreeMap<&str, SupportCounts> = BTreeMap::new();
    let mut confidence: BTreeMap<&str, f64> = BTreeMap::new();
    for ctx in &site.contexts {
        let id = ctx.id.as_str();
        let member = |ev: &CausalEvent| {
            assignment
                .contexts_of(&ev.id)
                .is_some_and(|c| c.contains(id))
        };
        let mut c = transition_support(store, &member, config.window);
        if c.event_count == 0 {
            continue;
        }
        if let Some(limit) = config.max_tests {
            c.truncate_tests(limit);
        }
        let confs: Vec<f64> = store
            .events()
            .filter(|ev| member(ev))
            .map(|ev| store.confidence_of(&ev.provenance))
            .collect();
        confidence.insert(id, confs.iter().sum::<f64>() / confs.len() as f64);
        counts.insert(id, c);
    }

    let mut freq: HashMap<String, f64> = HashMap::new();
    let total = store.event_count().max(1) as f64;
    for ev in store.events() {
        *freq.entry(ev.key()).or_default() += 1.0 / total;
    }
    let prior = |t: &str| freq.get(t).copied().unwrap_or(0.0).min(1.0);

    let root = site.root.as_str();
    let mut out = Vec::new();
    for ctx in &site.contexts {
        let id = ctx.id.as_str();
        let Some(own) = counts.get(id) else { continue };
        let is_root = id == root;
        let neighbors: Vec<&SupportCounts> = if is_root {
            Vec::new()
        } else {
            site.neighbors(id)
                .into_iter()
                .filter_map(|n| counts.get(n))
                .collect()
        };
        let sources = BackoffSources {
            neighbors,
            corpus: if is_root { None } else { counts.get(root) },
            prior: &prior,
        };
        out.push(build_local_psr(id, own, &sources, confidence[id], config)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assign_contexts, build_site, ingest::parse_episodes_jsonl, CoverSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(actor: &str, obs: &str) -> String {
        format!(
            r#"{{"actor":"{actor}","observation":"{obs}","relation":"causes","provenance":"p_{actor}"}}"#
        )
    }

    fn store_of(episodes: &[Vec<(&str, &str)>]) -> EpisodeStore {
        let lines: Vec<String> = episodes
            .iter()
            .enumerate()
            .map(|(i, evs)| {
                let body: Vec<String> = evs.iter().map(|(a, o)| ev(a, o)).collect();
                format!(
                    r#"{{"id":"ep{i}","source_doc":"d","events":[{}]}}"#,
                    body.join(",")
                )
            })
            .collect();
        let (episodes, _) = parse_episodes_jsonl(&lines.join("\n")).unwrap();
        let mut s = EpisodeStore {
            episodes,
            ..Default::default()
        };
        s.synthesize_stubs();
        s
    }

    #[test]
    fn estimate_cell_examples() {
        assert_abs_diff_eq!(estimate_cell(0.0, 0.0, 1.0, 0.25).unwrap(), 0.25);
        assert_abs_diff_eq!(
            estimate_cell(3.0, 10.0, 2.0, 0.5).unwrap(),
            4.0 / 12.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            estimate_cell(5.0, 5.0, 1e-12, 0.3).unwrap(),
            1.0,
            epsilon = 1e-9
        );
        assert!(estimate_cell(4.0, 3.0, 1.0, 0.5).is_err());
        assert!(estimate_cell(1.0, 3.0, 0.0, 0.5).is_err());
        assert!(estimate_cell(1.0, 3.0, 1.0, 1.5).is_err());
        assert!(estimate_cell(-1.0, 3.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn blend_examples() {
        assert_abs_diff_eq!(
            blend_backoff([0.2, 0.4, 0.6], [1.0, 1.0, 1.0]).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            blend_backoff([0.5, 0.1, 0.9], [9.0, 1.0, 0.0]).unwrap(),
            0.46,
            epsilon = 1e-12
        );
        assert_eq!(
            blend_backoff([0.37, 0.9, 0.1], [4.0, 0.0, 0.0]).unwrap(),
            0.37
        );
        assert!(blend_backoff([0.1, 0.1, 0.1], [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn enumerate_dedups_in_first_occurrence_order() {
        let s = store_of(&[vec![("b", "c"), ("a", "c"), ("b", "c")]]);
        let (h, t) = enumerate_history_tests(s.events());
        assert_eq!(h, vec!["b|causes|c", "a|causes|c"]);
        assert_eq!(h, t);
        let single = store_of(&[vec![("a", "b")]]);
        let (h, t) = enumerate_history_tests(single.events());
        assert_eq!((h.len(), t.len()), (1, 1));
    }

    #[test]
    fn transition_support_examples() {
        let one = store_of(&[vec![("a", "x")]]);
        let c = transition_support(&one, &|_| true, None);
        assert_eq!(c.cells.get(&(0, 0)), Some(&1.0));

        let ab = store_of(&[vec![("a", "x"), ("b", "x")]]);
        let c = transition_support(&ab, &|_| true, None);
        assert_eq!(c.count("a|causes|x", "b|causes|x"), 1.0);
        assert_eq!(c.count("a|causes|x", "a|causes|x"), 1.0);
        assert_eq!(c.count("b|causes|x", "b|causes|x"), 1.0);
        assert_eq!(c.count("b|causes|x", "a|causes|x"), 0.0);

        let abc = store_of(&[vec![("a", "x"), ("b", "x"), ("c", "x")]]);
        let w1 = transition_support(&abc, &|_| true, Some(1));
        assert_eq!(w1.count("a|causes|x", "c|causes|x"), 0.0);
        assert_eq!(w1.count("a|causes|x", "b|causes|x"), 1.0);
        let all = transition_support(&abc, &|_| true, None);
        assert_eq!(all.count("a|causes|x", "c|causes|x"), 1.0);
        assert_eq!(all.mass("a|causes|x"), 3.0);
    }

    #[test]
    fn window_counts_positions_in_the_full_episode() {
        // b is outside the context, so a and c are two positions apart.
        let abc = store_of(&[vec![("a", "x"), ("b", "x"), ("c", "x")]]);
        let c = transition_support(&abc, &|e| e.actor != "b", Some(1));
        assert_eq!(c.count("a|causes|x", "c|causes|x"), 0.0);
    }

    /// Independent rank oracle: Gaussian elimination with partial pivoting.
    fn elimination_rank(rows: &[Vec<f64>]) -> usize {
        let mut m: Vec<Vec<f64>> = rows.to_vec();
        let (nr, nc) = (m.len(), m[0].len());
        let mut rank = 0;
        for col in 0..nc {
            let pivot = (rank..nr).max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs()));
            let Some(p) = pivot else { break };
            if m[p][col].abs() < 1e-9 {
                continue;
            }
            m.swap(rank, p);
            let pivot = m[rank].clone();
            for (r, row) in m.iter_mut().enumerate() {
                if r != rank {
                    let f = row[col] / pivot[col];
                    for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                        *x -= f * p;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn numeric_rank_examples() {
        let id = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert_eq!(numeric_rank(&id, 1e-9), 3);
        let u = [1.0, 2.0, 3.0, 4.0];
        let v = [0.5, -1.0, 2.0, 0.25];
        let outer: Vec<Vec<f64>> = u
            .iter()
            .map(|a| v.iter().map(|b| a * b).collect())
            .collect();
        assert_eq!(numeric_rank(&Matrix::from_rows(&outer), 1e-9), 1);
        assert_eq!(numeric_rank(&Matrix::zeros(0, 0), 1e-9), 0);
        assert_eq!(numeric_rank(&Matrix::zeros(3, 2), 1e-9), 0);

        let rows = vec![
            vec![0.83, 0.12, 0.45, 0.67, 0.29],
            vec![0.18, 0.94, 0.33, 0.05, 0.71],
            vec![0.52, 0.38, 0.88, 0.21, 0.14],
            vec![0.83, 0.12, 0.45, 0.67, 0.29],
            vec![0.09, 0.61, 0.27, 0.95, 0.48],
        ];
        let oracle = elimination_rank(&rows);
        assert_eq!(oracle, 4);
        assert_eq!(numeric_rank(&Matrix::from_rows(&rows), 1e-9), oracle);
    }

    fn build(store: &EpisodeStore, spec: &CoverSpec, cfg: &SmoothingConfig) -> Vec<LocalPsr> {
        let a = assign_contexts(store, spec, None).unwrap();
        let site = build_site(&a, spec).unwrap();
        build_psrs(store, &site, &a, cfg).unwrap()
    }

    #[test]
    fn single_event_context() {
        let s = store_of(&[vec![("a", "x")]]);
        let psrs = build(&s, &CoverSpec::default(), &SmoothingConfig::default());
        assert_eq!(psrs.len(), 1);
        let p = &psrs[0];
        assert_eq!((p.table.rows, p.table.cols), (1, 1));
        // n = N = 1, p0 = 1 (the only triple), alpha = 1.
        assert_abs_diff_eq!(p.table.get(0, 0), 1.0, epsilon = 1e-12);
        assert_eq!(p.diagnostics.rank, 1);
        assert_eq!(
            p.provenance_of("a|causes|x", "a|causes|x"),
            ["p_a".to_string()]
        );
    }

    #[test]
    fn two_independent_chains() {
        let s = store_of(&[vec![("a", "x"), ("b", "x")], vec![("c", "x"), ("d", "x")]]);
        let cfg = SmoothingConfig {
            blend_policy: BlendPolicy::LocalOnly,
            ..Default::default()
        };
        let p = &build(&s, &CoverSpec::default(), &cfg)[0];
        // Transition support without the diagonal self-support has one
        // nonzero cell per chain.
        let mut transitions = p.support.clone();
        for i in 0..transitions.rows {
            transitions.set(i, i, 0.0);
        }
        assert_eq!(numeric_rank(&transitions, 1e-9), 2);
        let a = p.history_index("a|causes|x").unwrap();
        let b = p.test_index("b|causes|x").unwrap();
        let row = p.table.row(a);
        let transition = row[b];
        for (t, v) in row.iter().enumerate() {
            if t != b && t != p.test_index("a|causes|x").unwrap() {
                assert!(transition > *v);
            }
        }
    }

    #[test]
    fn salient_transitions_carry_row_maxima() {
        // Focus history h followed by 10 tests; two of them three times as often.
        let mut episodes = Vec::new();
        let tests: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        for (i, t) in tests.iter().enumerate() {
            let reps = if i < 2 { 3 } else { 1 };
            for _ in 0..reps {
                episodes.push(vec![
                    ("h".to_string(), "x".to_string()),
                    (t.clone(), "x".to_string()),
                ]);
            }
        }
        let eps: Vec<Vec<(&str, &str)>> = episodes
            .iter()
            .map(|e| e.iter().map(|(a, o)| (a.as_str(), o.as_str())).collect())
            .collect();
        let s = store_of(&eps);
        let p = &build(&s, &CoverSpec::default(), &SmoothingConfig::default())[0];
        let h = p.history_index("h|causes|x").unwrap();
        let row = p.table.row(h);
        let t0 = p.test_index("t0|causes|x").unwrap();
        let t1 = p.test_index("t1|causes|x").unwrap();
        let diag = p.test_index("h|causes|x").unwrap();
        for (t, v) in row.iter().enumerate() {
            if t != t0 && t != t1 && t != diag {
                assert!(row[t0] > *v && row[t1] > *v);
            }
        }
        let t5 = p.test_index("t5|causes|x").unwrap();
        let ratio = row[t0] / row[t5];
        assert!((ratio - 3.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn rank_of_identity_supported_table() {
        let s = store_of(&[vec![("a", "x")], vec![("b", "x")], vec![("c", "x")]]);
        let p = &build(&s, &CoverSpec::default(), &SmoothingConfig::default())[0];
        assert_eq!(numeric_rank(&p.support, 1e-9), 3);
        assert!(p.diagnostics.rank <= 3);
    }

    #[test]
    fn sparse_serialization_round_trip() {
        let mut m = Matrix::zeros(1001, 1000);
        m.set(3, 7, 0.5);
        m.set(1000, 999, 0.25);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"coo\""));
        let back: Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let small = Matrix::from_rows(&[vec![0.1, 0.2]]);
        assert_eq!(serde_json::to_string(&small).unwrap(), "[[0.1,0.2]]");
    }

    fn random_counts() -> impl Strategy<Value = (Vec<Vec<u8>>, f64)> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            (
                proptest::collection::vec(proptest::collection::vec(0u8..6, c), r),
                0.01f64..50.0,
            )
        })
    }

    fn psr_from_counts(rows: &[Vec<u8>], alpha: f64, config_blend: BlendPolicy) -> LocalPsr {
        let nh = rows.len();
        let nt = rows[0].len();
        let histories: Vec<String> = (0..nh).map(|i| format!("h{i}|r|o")).collect();
        let tests: Vec<String> = (0..nt).map(|i| format!("t{i}|r|o")).collect();
        let mut cells = BTreeMap::new();
        for (h, r) in rows.iter().enumerate() {
            for (t, v) in r.iter().enumerate() {
                if *v > 0 {
                    cells.insert((h, t), *v as f64);
                }
            }
        }
        let counts = SupportCounts::from_parts(histories, tests, cells, None, BTreeMap::new());
        let prior = move |_: &str| 1.0 / nt as f64;
        let sources = BackoffSources {
            neighbors: vec![],
            corpus: None,
            prior: &prior,
        };
        let cfg = SmoothingConfig {
            alpha,
            blend_policy: config_blend,
            ..Default::default()
        };
        build_local_psr("u", &counts, &sources, 1.0, &cfg).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn rows_are_sub_stochastic((rows, alpha) in random_counts()) {
            let p = psr_from_counts(&rows, alpha, BlendPolicy::SupportProportional);
            for r in 0..p.table.rows {
                let s: f64 = p.table.row(r).iter().sum();
                prop_assert!(s <= 1.0 + 1e-9);
                prop_assert!(p.table.row(r).iter().all(|v| (0.0..=1.0).contains(v)));
            }
            prop_assert!(p.diagnostics.rank <= p.table.rows.min(p.table.cols));
        }

        #[test]
        fn large_alpha_backs_off_to_prior((rows, _) in random_counts()) {
            let p = psr_from_counts(&rows, 1e9, BlendPolicy::SupportProportional);
            let p0 = 1.0 / p.tests.len() as f64;
            for v in &p.table.data {
                prop_assert!((v - p0).abs() < 1e-6);
            }
        }

        #[test]
        fn estimate_is_monotone_in_support(n in 0u32..50, extra in 0u32..50, alpha in 0.01f64..100.0, p0 in 0.0f64..=1.0) {
            let mass = (n + extra) as f64;
            let before = estimate_cell(n as f64, mass, alpha, p0).unwrap();
            let after = estimate_cell(n as f64 + 1.0, mass + 1.0, alpha, p0).unwrap();
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn build_is_deterministic((rows, alpha) in random_counts()) {
            let a = serde_json::to_string(&psr_from_counts(&rows, alpha, BlendPolicy::SupportProportional)).unwrap();
            let b = serde_json::to_string(&psr_from_counts(&rows, alpha, BlendPolicy::SupportProportional)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
