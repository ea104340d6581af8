//! Observation rewrites driven by a measured counterfactual.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, ToposError};
use crate::model::{
    normalize_token, triple_key, CausalEvent, Episode, EpisodeStore, EvidenceUnit, Polarity,
};

/// `actor|relation|observation` where each slot is a token or a glob with
/// `*`. In a replacement, a lone `*` keeps the original slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriplePattern {
    pub slots: [String; 3],
}

impl TriplePattern {
    pub fn parse(raw: &str) -> Result<Self> {
        let parts: Vec<&str> = raw.split('|').collect();
        let [a, r, o] = parts.as_slice() else {
            return Err(ToposError::Parse(format!(
                "`{raw}` is not an actor|relation|observation triple"
            )));
        };
        let norm = |s: &str| {
            s.split('*')
                .map(normalize_token)
                .collect::<Vec<_>>()
                .join("*")
        };
        Ok(Self {
            slots: [norm(a), norm(r), norm(o)],
        })
    }

    pub fn matches(&self, actor: &str, relation: &str, observation: &str) -> bool {
        glob(&self.slots[0], actor)
            && glob(&self.slots[1], relation)
            && glob(&self.slots[2], observation)
    }

    fn fill(&self, original: [&str; 3]) -> [String; 3] {
        std::array::from_fn(|i| {
            if self.slots[i] == "*" {
                original[i].to_string()
            } else {
                self.slots[i].clone()
            }
        })
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.slots.join("|"))
    }
}

impl Serialize for TriplePattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TriplePattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        TriplePattern::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Wildcard match where `*` spans any run of characters.
fn glob(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRule {
    #[serde(rename = "match")]
    pub pattern: TriplePattern,
    pub replacement: TriplePattern,
    #[serde(default)]
    pub note: String,
}

impl RewriteRule {
    pub fn validate(&self) -> Result<()> {
        if self.replacement.slots.iter().any(|s| s.is_empty()) {
            return Err(ToposError::InvalidArgument(format!(
                "rewrite replacement `{}` has an empty slot",
                self.replacement
            )));
        }
        if self
            .replacement
            .slots
            .iter()
            .any(|s| s.contains('*') && s != "*")
        {
            return Err(ToposError::InvalidArgument(format!(
                "rewrite replacement `{}` may only use a lone `*`",
                self.replacement
            )));
        }
        Ok(())
    }

    /// Applies the rule to one triple, returning the new slots on a match.
    pub fn apply(&self, actor: &str, relation: &str, observation: &str) -> Option<[String; 3]> {
        self.pattern
            .matches(actor, relation, observation)
            .then(|| self.replacement.fill([actor, relation, observation]))
    }
}

/// Template for the data-grounded episode appended after a rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEpisodeSpec {
    pub id: String,
    pub events: Vec<TriplePattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteOutcome {
    pub modified_events: usize,
    /// Imported claim rows rewritten.
    pub modified_claim_rows: usize,
    /// Every rewritten claim record: events plus imported rows.
    pub modified_claims: usize,
    /// Matches per rule, in rule order.
    pub per_rule: Vec<usize>,
    /// Events in the appended data-grounded episode, counted separately.
    pub appended_events: usize,
    /// Set when rules were given but nothing matched.
    pub no_match: bool,
}

fn first_match(rules: &[RewriteRule], a: &str, r: &str, o: &str) -> Option<(usize, [String; 3])> {
    rules
        .iter()
        .enumerate()
        .find_map(|(i, rule)| rule.apply(a, r, o).map(|s| (i, s)))
}

/// Replaces matching events and claim rows. The first matching rule wins.
/// Provenance ids are kept; events record the original triple and the
/// rule note in their metadata.
pub fn rewrite_observations(
    store: &EpisodeStore,
    rules: &[RewriteRule],
    data_episode: Option<(&DataEpisodeSpec, EvidenceUnit)>,
) -> Result<(EpisodeStore, RewriteOutcome)> {
    for r in rules {
        r.validate()?;
    }
    let mut out = store.clone();
    let mut per_rule = vec![0; rules.len()];
    let mut modified_events = 0;
    for ep in &mut out.episodes {
        for ev in &mut ep.events {
            if let Some((i, [a, r, o])) =
                first_match(rules, &ev.actor, &ev.relation, &ev.observation)
            {
                per_rule[i] += 1;
                let original = ev.key();
                if r != ev.relation {
                    ev.polarity = Polarity::from_relation(&r);
                }
                ev.actor = a;
                ev.relation = r;
                ev.observation = o;
                ev.metadata.insert("rewritten_from".into(), original);
                if !rules[i].note.is_empty() {
                    ev.metadata
                        .insert("rewrite_note".into(), rules[i].note.clone());
                }
                modified_events += 1;
            }
        }
    }
    let mut modified_claim_rows = 0;
    for claim in &mut out.claims {
        let relation = claim.relation_label().to_string();
        if let Some((i, [a, r, o])) = first_match(rules, &claim.cause, &relation, &claim.effect) {
            per_rule[i] += 1;
            if r != relation {
                claim.polarity = Polarity::from_relation(&r);
            }
            claim.cause = a;
            claim.relation = Some(r);
            claim.effect = o;
            modified_claim_rows += 1;
        }
    }
    let mut appended_events = 0;
    if let Some((spec, unit)) = data_episode {
        let events: Vec<CausalEvent> = spec
            .events
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let [a, r, o] = t.slots.clone();
                CausalEvent {
                    id: format!("{}:{i}", spec.id),
                    actor: a.clone(),
                    action: String::from("measured"),
                    observation: o.clone(),
                    polarity: Polarity::from_relation(&r),
                    relation: r.clone(),
                    time_index: None,
                    provenance: unit.id.clone(),
                    metadata: [("grounded".to_string(), triple_key(&a, &r, &o))].into(),
                }
            })
            .collect();
        appended_events = events.len();
        out.episodes.push(Episode {
            id: spec.id.clone(),
            source_doc: unit.source_id.clone(),
            events,
            metadata: Default::default(),
        });
        out.evidence.insert(unit.id.clone(), unit);
    }
    let outcome = RewriteOutcome {
        modified_events,
        modified_claim_rows,
        modified_claims: modified_events + modified_claim_rows,
        no_match: !rules.is_empty() && modified_events + modified_claim_rows == 0,
        per_rule,
        appended_events,
    };
    Ok((out, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ingest::parse_episodes_jsonl;

    fn store() -> EpisodeStore {
        let text = r#"{"id":"e","source_doc":"d","events":[{"actor":"d3_rainfall_deficit","action":"x","observation":"river_flow","relation":"reduces","provenance":"p1"},{"actor":"pka","action":"x","observation":"akt","relation":"activates","provenance":"p2"}]}"#;
        let (episodes, _) = parse_episodes_jsonl(text).unwrap();
        let mut s = EpisodeStore {
            episodes,
            ..Default::default()
        };
        s.synthesize_stubs();
        s
    }

    fn rule(m: &str, r: &str) -> RewriteRule {
        RewriteRule {
            pattern: TriplePattern::parse(m).unwrap(),
            replacement: TriplePattern::parse(r).unwrap(),
            note: "measured".into(),
        }
    }

    #[test]
    fn glob_matching() {
        assert!(glob("*", "anything"));
        assert!(glob("pka*", "pka_signal"));
        assert!(glob("*_flow", "river_flow"));
        assert!(glob("a*c*e", "abcde"));
        assert!(!glob("a*c*e", "abde"));
        assert!(!glob("ab*ba", "aba"));
        assert!(!glob("pka", "pka2"));
    }

    #[test]
    fn no_rules_is_identity() {
        let s = store();
        let (out, o) = rewrite_observations(&s, &[], None).unwrap();
        assert_eq!(out, s);
        assert_eq!(o.modified_events, 0);
        assert!(!o.no_match);
    }

    #[test]
    fn exact_rule_rewrites_and_keeps_provenance() {
        let s = store();
        let r = rule(
            "d3_rainfall_deficit|reduces|river_flow",
            "counterfactual_restored_monsoon_forcing|increases|vic_water_availability_proxy",
        );
        let (out, o) = rewrite_observations(&s, &[r], None).unwrap();
        assert_eq!(o.modified_events, 1);
        let ev = &out.episodes[0].events[0];
        assert_eq!(ev.actor, "counterfactual_restored_monsoon_forcing");
        assert_eq!(ev.polarity, Polarity::Positive);
        assert_eq!(ev.provenance, "p1");
        assert_eq!(
            ev.metadata["rewritten_from"],
            "d3_rainfall_deficit|reduces|river_flow"
        );
        assert_eq!(out.event_count(), s.event_count());
        assert_eq!(out.episodes[0].events[1], s.episodes[0].events[1]);
    }

    #[test]
    fn wildcard_keeps_slots_and_flags_no_match() {
        let s = store();
        let (out, o) = rewrite_observations(&s, &[rule("pka|*|*", "*|inhibits|*")], None).unwrap();
        assert_eq!(o.per_rule, vec![1]);
        assert_eq!(out.episodes[0].events[1].key(), "pka|inhibits|akt");
        assert_eq!(out.episodes[0].events[1].polarity, Polarity::Negative);
        let (_, o) = rewrite_observations(&s, &[rule("zzz|*|*", "a|b|c")], None).unwrap();
        assert!(o.no_match);
    }

    #[test]
    fn invalid_replacement_rejected() {
        assert!(rule("a|b|c", "x*|b|c").validate().is_err());
        assert!(TriplePattern::parse("a|b").is_err());
    }

    #[test]
    fn appends_data_episode() {
        let s = store();
        let spec = DataEpisodeSpec {
            id: "grounded".into(),
            events: vec![TriplePattern::parse("e0_condition|increases|pka_akt_erk_index").unwrap()],
        };
        let unit = EvidenceUnit::stub("substrate:abc", "panel.csv");
        let (out, o) = rewrite_observations(&s, &[], Some((&spec, unit))).unwrap();
        assert_eq!(o.appended_events, 1);
        assert_eq!(out.episodes.len(), 2);
        assert!(out.evidence.contains_key("substrate:abc"));
    }
}
