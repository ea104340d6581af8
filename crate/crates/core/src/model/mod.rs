//! Domain types for evidence, causal events, episodes and claims, plus the
//! context site machinery that decides where each event lives.

pub mod context;
pub mod ingest;
pub mod normalize;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use context::{
    assign_contexts, build_site, AssignmentRule, Context, ContextAssignment, ContextLevel,
    ContextSite, Cover, CoverDecl, CoverSpec, FieldTest, Morphism, MorphismKind, OverlapContext,
};
pub use ingest::{ingest_claims, ingest_episodes, ingest_evidence, InputFormat, ParseReport};
pub use normalize::{normalize, normalize_token, split_triple, triple_key};

/// Confidence given to evidence units synthesized for dangling provenance ids.
pub const STUB_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
    Sets,
}

impl Polarity {
    /// Infers a polarity from a normalized relation label.
    pub fn from_relation(relation: &str) -> Self {
        const POSITIVE: &[&str] = &[
            "increase",
            "increases",
            "leads_to",
            "causes",
            "produces",
            "expands_to",
            "promotes",
            "enhances",
            "activates",
            "drives",
            "raises",
            "amplifies",
            "supports",
        ];
        const NEGATIVE: &[&str] = &[
            "decrease",
            "decreases",
            "reduces",
            "reduce",
            "reduced_by",
            "weakens",
            "inhibits",
            "suppresses",
            "lowers",
            "limits",
            "attenuates",
            "attenuates_to",
            "prevents",
        ];
        if POSITIVE.contains(&relation) {
            Polarity::Positive
        } else if NEGATIVE.contains(&relation) {
            Polarity::Negative
        } else if relation == "sets_to" || relation == "sets" {
            Polarity::Sets
        } else {
            Polarity::Neutral
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match normalize(raw).as_str() {
            "positive" | "+" | "pos" => Some(Polarity::Positive),
            "negative" | "-" | "neg" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            "sets" => Some(Polarity::Sets),
            _ => None,
        }
    }

    /// True for the positive/negative pair in either order.
    pub fn opposes(self, other: Polarity) -> bool {
        matches!(
            (self, other),
            (Polarity::Positive, Polarity::Negative) | (Polarity::Negative, Polarity::Positive)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Sets => "sets",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceUnit {
    pub id: String,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locator: Option<String>,
    #[serde(default)]
    pub retrieval_meta: BTreeMap<String, String>,
    pub extraction_confidence: f64,
    /// Set when the unit was synthesized for a dangling provenance id.
    #[serde(default)]
    pub stub: bool,
}

impl EvidenceUnit {
    pub fn stub(id: &str, source_id: &str) -> Self {
        Self {
            id: id.to_string(),
            source_id: source_id.to_string(),
            locator: None,
            retrieval_meta: BTreeMap::new(),
            extraction_confidence: STUB_CONFIDENCE,
            stub: true,
        }
    }
}

/// One extracted `(actor, action, observation, t, provenance)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEvent {
    pub id: String,
    pub actor: String,
    #[serde(default)]
    pub action: String,
    pub observation: String,
    pub relation: String,
    pub polarity: Polarity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_index: Option<i64>,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl CausalEvent {
    /// The `actor|relation|observation` key used to align cells across contexts.
    pub fn key(&self) -> String {
        triple_key(&self.actor, &self.relation, &self.observation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub source_doc: String,
    pub events: Vec<CausalEvent>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// A normalized causal claim row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRow {
    pub cause: String,
    pub effect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mediator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modifier: Option<String>,
    pub polarity: Polarity,
    /// Surface relation label when known; used for claim-family variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<f64>,
    #[serde(default)]
    pub context_labels: BTreeSet<String>,
    pub provenance: Vec<String>,
}

impl ClaimRow {
    pub fn relation_label(&self) -> &str {
        self.relation.as_deref().unwrap_or(self.polarity.as_str())
    }
}

/// Immutable snapshot of ingested episodes, evidence and claim rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStore {
    pub episodes: Vec<Episode>,
    pub evidence: BTreeMap<String, EvidenceUnit>,
    #[serde(default)]
    pub claims: Vec<ClaimRow>,
}

impl EpisodeStore {
    pub fn events(&self) -> impl Iterator<Item = &CausalEvent> {
        self.episodes.iter().flat_map(|e| e.events.iter())
    }

    pub fn event_count(&self) -> usize {
        self.episodes.iter().map(|e| e.events.len()).sum()
    }

    pub fn confidence_of(&self, evidence_id: &str) -> f64 {
        self.evidence
            .get(evidence_id)
            .map(|e| e.extraction_confidence)
            .unwrap_or(STUB_CONFIDENCE)
    }

    /// Adds stub evidence units for every provenance id that does not
    /// resolve. Returns the ids that were synthesized.
    pub fn synthesize_stubs(&mut self) -> Vec<String> {
        let mut added = Vec::new();
        let mut needed: Vec<(String, String)> = Vec::new();
        for ep in &self.episodes {
            for ev in &ep.events {
                if !self.evidence.contains_key(&ev.provenance) {
                    needed.push((ev.provenance.clone(), ep.source_doc.clone()));
                }
            }
        }
        for claim in &self.claims {
            for p in &claim.provenance {
                if !self.evidence.contains_key(p) {
                    needed.push((p.clone(), String::from("claims")));
                }
            }
        }
        for (id, source) in needed {
            if !self.evidence.contains_key(&id) {
                self.evidence
                    .insert(id.clone(), EvidenceUnit::stub(&id, &source));
                added.push(id);
            }
        }
        added
    }

    /// Claim rows derived from the episode events, followed by any rows
    /// ingested from a claims file.
    pub fn all_claims(&self, assignment: Option<&ContextAssignment>) -> Vec<ClaimRow> {
        let mut rows: Vec<ClaimRow> = self
            .events()
            .filter(|ev| ev.actor != ev.observation)
            .map(|ev| ClaimRow {
                cause: ev.actor.clone(),
                effect: ev.observation.clone(),
                mediator: None,
                modifier: if ev.action.is_empty() {
                    None
                } else {
                    Some(ev.action.clone())
                },
                polarity: ev.polarity,
                relation: Some(ev.relation.clone()),
                strength: None,
                context_labels: assignment
                    .and_then(|a| a.contexts_of(&ev.id))
                    .cloned()
                    .unwrap_or_default(),
                provenance: vec![ev.provenance.clone()],
            })
            .collect();
        rows.extend(self.claims.iter().cloned());
        rows
    }
}
