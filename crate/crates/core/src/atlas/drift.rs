//! Drift between two runs on four channels: textual, causal, predictive
//! and topological.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{claim_families, ClaimFamily};
use crate::model::Polarity;
use crate::pipeline::WorldModelBundle;
use crate::psr::LocalPsr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualDrift {
    pub family: String,
    pub old: BTreeMap<String, usize>,
    pub new: BTreeMap<String, usize>,
    pub provenance_old: Vec<String>,
    pub provenance_new: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalDrift {
    pub cause: String,
    pub effect: String,
    pub old: BTreeSet<Polarity>,
    pub new: BTreeSet<Polarity>,
    pub provenance_old: Vec<String>,
    pub provenance_new: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDrift {
    pub context: String,
    pub history: String,
    pub test: String,
    pub old: f64,
    pub new: f64,
    pub delta: f64,
    pub provenance_old: Vec<String>,
    pub provenance_new: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    Added,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyItem {
    Context,
    Overlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologicalDrift {
    pub change: Change,
    pub item: TopologyItem,
    pub id: String,
    pub provenance_old: Vec<String>,
    pub provenance_new: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub eps_drift: f64,
    pub old_store: String,
    pub new_store: String,
    pub textual: Vec<TextualDrift>,
    pub causal: Vec<CausalDrift>,
    pub predictive: Vec<PredictiveDrift>,
    pub topological: Vec<TopologicalDrift>,
}

impl DriftReport {
    pub fn is_empty(&self) -> bool {
        self.textual.is_empty()
            && self.causal.is_empty()
            && self.predictive.is_empty()
            && self.topological.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.textual.len() + self.causal.len() + self.predictive.len() + self.topological.len()
    }

    /// `(cause, effect)` pairs named by the causal channel.
    pub fn causal_pairs(&self) -> BTreeSet<(String, String)> {
        self.causal
            .iter()
            .map(|c| (c.cause.clone(), c.effect.clone()))
            .collect()
    }
}

fn families(b: &WorldModelBundle) -> BTreeMap<String, ClaimFamily> {
    claim_families(&b.store.all_claims(Some(&b.assignment)), &b.site.root)
        .into_iter()
        .map(|f| (f.key(), f))
        .collect()
}

fn context_provenance(psr: Option<&LocalPsr>) -> Vec<String> {
    let ids: BTreeSet<&String> = psr
        .iter()
        .flat_map(|p| p.provenance.values().flatten())
        .collect();
    ids.into_iter().cloned().collect()
}

fn overlap_provenance(b: &WorldModelBundle, id: &str) -> Vec<String> {
    let Some(o) = b.site.overlaps.iter().find(|o| o.id == id) else {
        return Vec::new();
    };
    let left: BTreeSet<String> = context_provenance(b.psr(&o.left)).into_iter().collect();
    let right: BTreeSet<String> = context_provenance(b.psr(&o.right)).into_iter().collect();
    left.intersection(&right).cloned().collect()
}

pub fn diff_worlds(old: &WorldModelBundle, new: &WorldModelBundle, eps_drift: f64) -> DriftReport {
    let mut report = DriftReport {
        eps_drift,
        old_store: old
            .metadata
            .input_hashes
            .get("store")
            .cloned()
            .unwrap_or_default(),
        new_store: new
            .metadata
            .input_hashes
            .get("store")
            .cloned()
            .unwrap_or_default(),
        ..Default::default()
    };

    let (fo, fn_) = (families(old), families(new));
    let keys: BTreeSet<&String> = fo.keys().chain(fn_.keys()).collect();
    for k in keys {
        let (a, b) = (fo.get(k), fn_.get(k));
        let variants = |f: Option<&ClaimFamily>| f.map(|f| f.variants.clone()).unwrap_or_default();
        let prov = |f: Option<&ClaimFamily>| f.map(|f| f.provenance.clone()).unwrap_or_default();
        if variants(a) != variants(b) {
            report.textual.push(TextualDrift {
                family: k.clone(),
                old: variants(a),
                new: variants(b),
                provenance_old: prov(a),
                provenance_new: prov(b),
            });
        }
        if let (Some(a), Some(b)) = (a, b) {
            if a.polarities != b.polarities {
                report.causal.push(CausalDrift {
                    cause: a.cause.clone(),
                    effect: a.effect.clone(),
                    old: a.polarities.clone(),
                    new: b.polarities.clone(),
                    provenance_old: a.provenance.clone(),
                    provenance_new: b.provenance.clone(),
                });
            }
        }
    }

    for po in &old.psrs {
        let Some(pn) = new.psr(&po.context_id) else {
            continue;
        };
        let cols: BTreeMap<&str, usize> = pn
            .tests
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        for (hn, h) in pn.histories.iter().enumerate() {
            let Some(ho) = po.history_index(h) else {
                continue;
            };
            for (to, t) in po.tests.iter().enumerate() {
                let Some(&tn) = cols.get(t.as_str()) else {
                    continue;
                };
                let (a, b) = (po.table.get(ho, to), pn.table.get(hn, tn));
                if (a - b).abs() > eps_drift {
                    report.predictive.push(PredictiveDrift {
                        context: po.context_id.clone(),
                        history: h.clone(),
                        test: t.clone(),
                        old: a,
                        new: b,
                        delta: b - a,
                        provenance_old: po.provenance_of(h, t).to_vec(),
                        provenance_new: pn.provenance_of(h, t).to_vec(),
                    });
                }
            }
        }
    }

    let ctx_old: BTreeSet<&str> = old.site.contexts.iter().map(|c| c.id.as_str()).collect();
    let ctx_new: BTreeSet<&str> = new.site.contexts.iter().map(|c| c.id.as_str()).collect();
    for id in ctx_new.difference(&ctx_old) {
        report.topological.push(TopologicalDrift {
            change: Change::Added,
            item: TopologyItem::Context,
            id: id.to_string(),
            provenance_old: Vec::new(),
            provenance_new: context_provenance(new.psr(id)),
        });
    }
    for id in ctx_old.difference(&ctx_new) {
        report.topological.push(TopologicalDrift {
            change: Change::Removed,
            item: TopologyItem::Context,
            id: id.to_string(),
            provenance_old: context_provenance(old.psr(id)),
            provenance_new: Vec::new(),
        });
    }
    let ov_old: BTreeSet<&str> = old.site.overlaps.iter().map(|o| o.id.as_str()).collect();
    let ov_new: BTreeSet<&str> = new.site.overlaps.iter().map(|o| o.id.as_str()).collect();
    for id in ov_new.difference(&ov_old) {
        report.topological.push(TopologicalDrift {
            change: Change::Added,
            item: TopologyItem::Overlap,
            id: id.to_string(),
            provenance_old: Vec::new(),
            provenance_new: overlap_provenance(new, id),
        });
    }
    for id in ov_old.difference(&ov_new) {
        report.topological.push(TopologicalDrift {
            change: Change::Removed,
            item: TopologyItem::Overlap,
            id: id.to_string(),
            provenance_old: overlap_provenance(old, id),
            provenance_new: Vec::new(),
        });
    }
    report
}
