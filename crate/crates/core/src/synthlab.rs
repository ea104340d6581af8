//! Synthetic corpora with planted ground truth, and recovery scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::atlas::{extract_spine, DriftReport};
use crate::error::{Result, ToposError};
use crate::model::ingest::{attach_evidence, parse_episodes_jsonl, parse_evidence_jsonl};
use crate::model::{
    normalize_token, AssignmentRule, Context, ContextLevel, CoverSpec, EpisodeStore, FieldTest,
    Polarity,
};
use crate::pipeline::WorldModelBundle;
use crate::sheaf::Classification;

pub const REGIME_FIELD: &str = "regime_context";
const SYNTH_CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimTemplate {
    pub cause: String,
    pub effect: String,
    pub polarity: Polarity,
    /// Repetition count.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimePlan {
    pub context: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default)]
    pub claims: Vec<ClaimTemplate>,
}

/// A `(cause, effect)` pair planted in several regimes. With `conflict`
/// the first regime gets the positive claim and the rest the negative one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapPlan {
    pub cause: String,
    pub effect: String,
    pub regimes: Vec<String>,
    #[serde(default)]
    pub conflict: bool,
    pub support: usize,
}

/// A high-support positive chain planted in one regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainPlan {
    pub regime: String,
    pub nodes: Vec<String>,
    pub support: usize,
}

/// Pairs whose polarity flips in the second epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftPlan {
    pub flips: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub seed: u64,
    pub regimes: Vec<RegimePlan>,
    #[serde(default)]
    pub overlaps: Vec<OverlapPlan>,
    #[serde(default)]
    pub chain: Option<ChainPlan>,
    #[serde(default)]
    pub drift: Option<DriftPlan>,
    /// Probability that an event's polarity label is flipped.
    #[serde(default)]
    pub noise_rate: f64,
}

impl RegimeSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| ToposError::Config(format!("regime spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ToposError::Config(m));
        if self.regimes.is_empty() {
            return bad("regime spec needs at least one regime".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1]".into());
        }
        let ids: BTreeSet<&str> = self.regimes.iter().map(|r| r.context.as_str()).collect();
        if ids.len() != self.regimes.len() {
            return bad("regime contexts must be unique".into());
        }
        let known = |r: &str| {
            if ids.contains(r) {
                Ok(())
            } else {
                Err(ToposError::Config(format!("unknown regime `{r}`")))
            }
        };
        for t in self.regimes.iter().flat_map(|r| &r.claims) {
            if t.support == 0 {
                return bad(format!(
                    "template {}->{} has zero support",
                    t.cause, t.effect
                ));
            }
        }
        for o in &self.overlaps {
            if o.support == 0 {
                return bad(format!(
                    "overlap {}->{} has zero support",
                    o.cause, o.effect
                ));
            }
            if o.regimes.len() < 2 {
                return bad(format!(
                    "overlap {}->{} needs two regimes",
                    o.cause, o.effect
                ));
            }
            o.regimes.iter().try_for_each(|r| known(r))?;
        }
        if let Some(c) = &self.chain {
            known(&c.regime)?;
            if c.nodes.len() < 2 || c.support == 0 {
                return bad("chain needs two nodes and positive support".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub conflicts: Vec<(String, String)>,
    pub drift: Vec<(String, String)>,
    pub spine: Vec<String>,
}

/// Generated files as text, ready to write or parse.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub episodes: String,
    pub evidence: String,
    /// Second-epoch episodes when a drift plan is present.
    pub epoch2: Option<(String, String)>,
    pub cover_spec: CoverSpec,
    pub truth: GroundTruth,
}

struct Planted {
    regime: String,
    cause: String,
    effect: String,
    polarity: Polarity,
    support: usize,
}

fn relation_for(p: Polarity) -> &'static str {
    match p {
        Polarity::Negative => "reduces",
        _ => "increases",
    }
}

fn flip(p: Polarity) -> Polarity {
    match p {
        Polarity::Positive => Polarity::Negative,
        Polarity::Negative => Polarity::Positive,
        other => other,
    }
}

fn planted(spec: &RegimeSpec) -> Vec<Planted> {
    let mut out = Vec::new();
    for r in &spec.regimes {
        for t in &r.claims {
            out.push(Planted {
                regime: r.context.clone(),
                cause: t.cause.clone(),
                effect: t.effect.clone(),
                polarity: t.polarity,
                support: t.support,
            });
        }
    }
    for o in &spec.overlaps {
        for (i, r) in o.regimes.iter().enumerate() {
            let polarity = if o.conflict && i > 0 {
                Polarity::Negative
            } else {
                Polarity::Positive
            };
            out.push(Planted {
                regime: r.clone(),
                cause: o.cause.clone(),
                effect: o.effect.clone(),
                polarity,
                support: o.support,
            });
        }
    }
    if let Some(c) = &spec.chain {
        for w in c.nodes.windows(2) {
            out.push(Planted {
                regime: c.regime.clone(),
                cause: w[0].clone(),
                effect: w[1].clone(),
                polarity: Polarity::Positive,
                support: c.support,
            });
        }
    }
    out
}

/// One single-event episode per repetition, tagged with its regime.
fn render_epoch(
    spec: &RegimeSpec,
    epoch: i64,
    flips: &BTreeSet<(String, String)>,
) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(epoch as u64));
    let mut episodes = String::new();
    let mut evidence = String::new();
    for (n, p) in planted(spec).into_iter().enumerate() {
        let key = (normalize_token(&p.cause), normalize_token(&p.effect));
        let base = if flips.contains(&key) {
            flip(p.polarity)
        } else {
            p.polarity
        };
        for k in 0..p.support {
            let noisy = spec.noise_rate > 0.0 && rng.random_bool(spec.noise_rate);
            let polarity = if noisy { flip(base) } else { base };
            let id = format!("e{epoch}_{n:03}_{k:03}");
            let prov = format!("syn:{id}");
            let line = json!({
                "id": id,
                "source_doc": format!("synth_{}", p.regime),
                "metadata": { REGIME_FIELD: p.regime },
                "events": [{
                    "actor": p.cause,
                    "action": "asserts",
                    "observation": p.effect,
                    "relation": relation_for(polarity),
                    "time_index": epoch,
                    "provenance": prov,
                }],
            });
            episodes.push_str(&line.to_string());
            episodes.push('\n');
            let unit = json!({
                "id": prov,
                "source_id": format!("synth_{}", p.regime),
                "locator": format!("epoch {epoch}, template {n}, copy {k}"),
                "extraction_confidence": SYNTH_CONFIDENCE,
            });
            evidence.push_str(&unit.to_string());
            evidence.push('\n');
        }
    }
    (episodes, evidence)
}

pub fn generate_corpus(spec: &RegimeSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let none = BTreeSet::new();
    let (episodes, evidence) = render_epoch(spec, 1, &none);
    let drift: Vec<(String, String)> = spec
        .drift
        .iter()
        .flat_map(|d| &d.flips)
        .map(|(c, e)| (normalize_token(c), normalize_token(e)))
        .collect();
    let epoch2 = spec
        .drift
        .as_ref()
        .map(|_| render_epoch(spec, 2, &drift.iter().cloned().collect()));
    let mut rules = vec![AssignmentRule::CatchAll];
    let mut contexts = Vec::new();
    for r in &spec.regimes {
        contexts.push(Context {
            id: normalize_token(&r.context),
            label: r.context.clone(),
            level: ContextLevel::Regime,
            metadata: r.metadata.clone(),
        });
        rules.push(AssignmentRule::Match {
            context: normalize_token(&r.context),
            test: FieldTest {
                field: format!("metadata.{REGIME_FIELD}"),
                equals: Some(r.context.clone()),
                ..Default::default()
            },
        });
    }
    let conflicts = spec
        .overlaps
        .iter()
        .filter(|o| o.conflict)
        .map(|o| (normalize_token(&o.cause), normalize_token(&o.effect)))
        .collect();
    Ok(SynthCorpus {
        episodes,
        evidence,
        epoch2,
        cover_spec: CoverSpec {
            contexts,
            rules,
            ..Default::default()
        },
        truth: GroundTruth {
            conflicts,
            drift,
            spine: spec
                .chain
                .iter()
                .flat_map(|c| c.nodes.iter().map(|n| normalize_token(n)))
                .collect(),
        },
    })
}

/// Parses generated text into a store with evidence attached.
pub fn corpus_store(episodes: &str, evidence: &str) -> Result<EpisodeStore> {
    let (episodes, _) = parse_episodes_jsonl(episodes)?;
    let (units, _) = parse_evidence_jsonl(evidence)?;
    let mut store = EpisodeStore {
        episodes,
        ..Default::default()
    };
    store.synthesize_stubs();
    attach_evidence(&mut store, units);
    Ok(store)
}

pub const TRUTH_FILE: &str = "truth.json";

/// Writes episodes, evidence, cover spec, truth and a build config per
/// epoch (`config.json`, and `config_epoch2.json` with drift).
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    let w = |name: &str, body: &str| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| ToposError::io(path, e))
    };
    fs::create_dir_all(dir).map_err(|e| ToposError::io(dir, e))?;
    w("episodes.jsonl", &corpus.episodes)?;
    w("evidence.jsonl", &corpus.evidence)?;
    w(
        "cover.json",
        &serde_json::to_string_pretty(&corpus.cover_spec)?,
    )?;
    w(TRUTH_FILE, &serde_json::to_string_pretty(&corpus.truth)?)?;
    let config = |eps: &str, ev: &str| {
        serde_json::to_string_pretty(&json!({
            "episodes": eps, "evidence": ev, "cover_spec": "cover.json",
        }))
    };
    w("config.json", &config("episodes.jsonl", "evidence.jsonl")?)?;
    if let Some((eps, ev)) = &corpus.epoch2 {
        w("episodes_epoch2.jsonl", eps)?;
        w("evidence_epoch2.jsonl", ev)?;
        w(
            "config_epoch2.json",
            &config("episodes_epoch2.jsonl", "evidence_epoch2.jsonl")?,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub obstruction_precision: f64,
    pub obstruction_recall: f64,
    /// Planted conflicts found in an obstruction classified as contradiction.
    pub contradiction_recall: f64,
    pub drift_precision: f64,
    pub drift_recall: f64,
    pub spine_recovery: f64,
}

/// Precision and recall by exact pair matching; empty sides score 1.
pub fn precision_recall<T: Ord>(reported: &BTreeSet<T>, planted: &BTreeSet<T>) -> (f64, f64) {
    let hit = reported.intersection(planted).count() as f64;
    let p = if reported.is_empty() {
        1.0
    } else {
        hit / reported.len() as f64
    };
    let r = if planted.is_empty() {
        1.0
    } else {
        hit / planted.len() as f64
    };
    (p, r)
}

/// Fraction of planted chain edges that appear consecutively in a spine path.
pub fn spine_recovery(bundle: &WorldModelBundle, chain: &[String]) -> f64 {
    if chain.len() < 2 {
        return 1.0;
    }
    let cfg = &bundle.config.atlas;
    let claims = bundle.store.all_claims(Some(&bundle.assignment));
    let spine = extract_spine(&claims, cfg.min_support, cfg.max_paths);
    let found: BTreeSet<(&str, &str)> = spine
        .iter()
        .flat_map(|p| {
            p.edges
                .iter()
                .map(|e| (e.cause.as_str(), e.effect.as_str()))
        })
        .collect();
    let hits = chain
        .windows(2)
        .filter(|w| found.contains(&(w[0].as_str(), w[1].as_str())))
        .count();
    hits as f64 / (chain.len() - 1) as f64
}

pub fn score_recovery(
    bundle: &WorldModelBundle,
    drift: Option<&DriftReport>,
    truth: &GroundTruth,
) -> RecoveryScore {
    let obstructions = &bundle.diagnostics.obstructions;
    let reported: BTreeSet<(String, String)> =
        obstructions.iter().flat_map(|o| o.claim_pairs()).collect();
    let planted: BTreeSet<(String, String)> = truth.conflicts.iter().cloned().collect();
    let (obstruction_precision, obstruction_recall) = precision_recall(&reported, &planted);
    let contradictions: BTreeSet<(String, String)> = obstructions
        .iter()
        .filter(|o| o.classification == Classification::Contradiction)
        .flat_map(|o| o.claim_pairs())
        .collect();
    let (_, contradiction_recall) = precision_recall(&contradictions, &planted);
    let drift_planted: BTreeSet<(String, String)> = truth.drift.iter().cloned().collect();
    let drift_reported = drift.map(DriftReport::causal_pairs).unwrap_or_default();
    let (drift_precision, drift_recall) = precision_recall(&drift_reported, &drift_planted);
    RecoveryScore {
        obstruction_precision,
        obstruction_recall,
        contradiction_recall,
        drift_precision,
        drift_recall,
        spine_recovery: spine_recovery(bundle, &truth.spine),
    }
}
