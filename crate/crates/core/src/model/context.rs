//! Contexts, covers and the rule-based assignment of events to contexts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{normalize, normalize_token, CausalEvent, Episode, EpisodeStore};
use crate::error::{Result, ToposError};

/// Name of the cover every site carries: all non-root contexts into the root.
pub const ROOT_COVER: &str = "root";
const DEFAULT_ROOT_ID: &str = "corpus";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLevel {
    Corpus,
    Document,
    Topic,
    Regime,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    #[serde(default)]
    pub label: String,
    pub level: ContextLevel,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Context {
    fn dynamic(id: String, label: String, level: ContextLevel) -> Self {
        Self {
            id,
            label,
            level,
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphismKind {
    Inclusion,
    Overlap,
    Refinement,
    Projection,
    Translation,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Morphism {
    pub source: String,
    pub target: String,
    pub kind: MorphismKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cover {
    pub name: String,
    pub target: String,
    pub members: Vec<String>,
}

/// A derived `A∩B` context for two contexts that share events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapContext {
    pub id: String,
    pub left: String,
    pub right: String,
    pub shared_events: usize,
}

/// Predicate over one resolved event field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldTest {
    pub field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub any_of: Vec<String>,
}

impl FieldTest {
    fn matches(&self, value: Option<&str>) -> bool {
        let Some(value) = value else { return false };
        if let Some(eq) = &self.equals {
            if value != normalize(eq) {
                return false;
            }
        }
        if let Some(sub) = &self.contains {
            if !value.contains(&normalize(sub)) {
                return false;
            }
        }
        if !self.any_of.is_empty() && !self.any_of.iter().any(|v| normalize(v) == value) {
            return false;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentRule {
    /// Every event belongs to the root context.
    CatchAll,
    /// Events passing the test are assigned to a declared context.
    Match {
        context: String,
        #[serde(flatten)]
        test: FieldTest,
    },
    /// One context per distinct value of a field, created on demand.
    PerValue {
        field: String,
        #[serde(default)]
        prefix: String,
        #[serde(default = "default_dynamic_level")]
        level: ContextLevel,
    },
}

fn default_dynamic_level() -> ContextLevel {
    ContextLevel::Topic
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverDecl {
    pub name: String,
    pub target: String,
    /// Context ids; `"*"` expands to every non-root context.
    pub members: Vec<String>,
}

/// The cover-spec file: declared contexts, assignment rules, covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverSpec {
    #[serde(default)]
    pub contexts: Vec<Context>,
    #[serde(default = "default_rules")]
    pub rules: Vec<AssignmentRule>,
    #[serde(default)]
    pub covers: Vec<CoverDecl>,
    #[serde(default)]
    pub morphisms: Vec<Morphism>,
}

fn default_rules() -> Vec<AssignmentRule> {
    vec![AssignmentRule::CatchAll]
}

impl Default for CoverSpec {
    fn default() -> Self {
        Self {
            contexts: Vec::new(),
            rules: default_rules(),
            covers: Vec::new(),
            morphisms: Vec::new(),
        }
    }
}

impl CoverSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Event → contexts map plus the resolved context catalog (root first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextAssignment {
    pub root: String,
    pub contexts: Vec<Context>,
    pub map: BTreeMap<String, BTreeSet<String>>,
}

impl ContextAssignment {
    pub fn contexts_of(&self, event_id: &str) -> Option<&BTreeSet<String>> {
        self.map.get(event_id)
    }

    /// Event ids assigned to `context`, in event-id order.
    pub fn events_in(&self, context: &str) -> BTreeSet<&str> {
        self.map
            .iter()
            .filter(|(_, ctxs)| ctxs.contains(context))
            .map(|(ev, _)| ev.as_str())
            .collect()
    }

    pub fn event_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for ctxs in self.map.values() {
            for c in ctxs {
                *counts.entry(c.as_str()).or_default() += 1;
            }
        }
        counts
    }
}

fn resolve_field<'a>(
    field: &str,
    ev: &'a CausalEvent,
    ep: &'a Episode,
    store: &'a EpisodeStore,
) -> Option<&'a str> {
    match field {
        "actor" => Some(&ev.actor),
        "action" => Some(&ev.action),
        "observation" => Some(&ev.observation),
        "relation" => Some(&ev.relation),
        "polarity" => Some(ev.polarity.as_str()),
        "source_doc" => Some(&ep.source_doc),
        "episode" => Some(&ep.id),
        "provenance" => Some(&ev.provenance),
        other => {
            let key = other.strip_prefix("metadata.")?;
            ev.metadata
                .get(key)
                .or_else(|| ep.metadata.get(key))
                .or_else(|| {
                    store
                        .evidence
                        .get(&ev.provenance)
                        .and_then(|u| u.retrieval_meta.get(key))
                })
                .map(String::as_str)
        }
    }
}

/// Applies the assignment rules. Every event lands in the root plus every
/// matching rule context. `max_contexts` caps the number of rule-created
/// contexts, keeping the most populated ones.
pub fn assign_contexts(
    store: &EpisodeStore,
    spec: &CoverSpec,
    max_contexts: Option<usize>,
) -> Result<ContextAssignment> {
    let roots: Vec<&Context> = spec
        .contexts
        .iter()
        .filter(|c| c.level == ContextLevel::Corpus)
        .collect();
    let root = match roots.as_slice() {
        [] => Context::dynamic(
            DEFAULT_ROOT_ID.into(),
            "Corpus".into(),
            ContextLevel::Corpus,
        ),
        [one] => (*one).clone(),
        _ => {
            return Err(ToposError::Config(
                "more than one corpus-level context".into(),
            ))
        }
    };
    let mut declared: Vec<Context> = Vec::new();
    let mut ids: BTreeSet<String> = BTreeSet::from([root.id.clone()]);
    for c in &spec.contexts {
        if c.level == ContextLevel::Corpus {
            continue;
        }
        if !ids.insert(c.id.clone()) {
            return Err(ToposError::Config(format!("duplicate context `{}`", c.id)));
        }
        declared.push(c.clone());
    }
    if !spec
        .rules
        .iter()
        .any(|r| matches!(r, AssignmentRule::CatchAll))
    {
        return Err(ToposError::Config(
            "rules must include a catch_all rule".into(),
        ));
    }
    for rule in &spec.rules {
        if let AssignmentRule::Match { context, .. } = rule {
            if !ids.contains(context) {
                return Err(ToposError::Config(format!(
                    "rule references unknown context `{context}`"
                )));
            }
        }
    }

    let mut dynamic: Vec<Context> = Vec::new();
    let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for ep in &store.episodes {
        for ev in &ep.events {
            let mut ctxs = BTreeSet::from([root.id.clone()]);
            for rule in &spec.rules {
                match rule {
                    AssignmentRule::CatchAll => {}
                    AssignmentRule::Match { context, test } => {
                        if test.matches(resolve_field(&test.field, ev, ep, store)) {
                            ctxs.insert(context.clone());
                        }
                    }
                    AssignmentRule::PerValue {
                        field,
                        prefix,
                        level,
                    } => {
                        let Some(value) = resolve_field(field, ev, ep, store) else {
                            continue;
                        };
                        let id = format!("{}{}", prefix, normalize_token(value));
                        if id.is_empty() || id == root.id {
                            continue;
                        }
                        if !ids.contains(&id) {
                            ids.insert(id.clone());
                            dynamic.push(Context::dynamic(id.clone(), value.to_string(), *level));
                        }
                        ctxs.insert(id);
                    }
                }
            }
            map.insert(ev.id.clone(), ctxs);
        }
    }

    if let Some(limit) = max_contexts {
        if dynamic.len() > limit {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for ctxs in map.values() {
                for c in ctxs {
                    *counts.entry(c.as_str()).or_default() += 1;
                }
            }
            let mut ranked: Vec<(usize, usize)> = dynamic
                .iter()
                .enumerate()
                .map(|(i, c)| (i, counts.get(c.id.as_str()).copied().unwrap_or(0)))
                .collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let keep: BTreeSet<usize> = ranked.iter().take(limit).map(|(i, _)| *i).collect();
            let dropped: BTreeSet<String> = dynamic
                .iter()
                .enumerate()
                .filter(|(i, _)| !keep.contains(i))
                .map(|(_, c)| c.id.clone())
                .collect();
            dynamic = dynamic
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, c)| c)
                .collect();
            for ctxs in map.values_mut() {
                ctxs.retain(|c| !dropped.contains(c));
            }
        }
    }

    let mut contexts = vec![root.clone()];
    contexts.extend(declared);
    contexts.extend(dynamic);
    Ok(ContextAssignment {
        root: root.id,
        contexts,
        map,
    })
}

/// The finite context site: contexts, morphisms, covers and derived
/// overlap contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSite {
    pub root: String,
    pub contexts: Vec<Context>,
    pub morphisms: Vec<Morphism>,
    pub covers: Vec<Cover>,
    pub overlaps: Vec<OverlapContext>,
}

impl ContextSite {
    pub fn context(&self, id: &str) -> Option<&Context> {
        self.contexts.iter().find(|c| c.id == id)
    }

    pub fn cover(&self, name: &str) -> Result<&Cover> {
        self.covers
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| ToposError::UnknownCover(name.to_string()))
    }

    pub fn non_root(&self) -> impl Iterator<Item = &Context> {
        self.contexts.iter().filter(move |c| c.id != self.root)
    }

    /// Contexts linked to `id` through a derived overlap context.
    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        self.overlaps
            .iter()
            .filter_map(|o| {
                if o.left == id {
                    Some(o.right.as_str())
                } else if o.right == id {
                    Some(o.left.as_str())
                } else {
                    None
                }
            })
            .collect()
    }

    fn has_morphism(&self, source: &str, target: &str) -> bool {
        self.morphisms
            .iter()
            .any(|m| m.source == source && m.target == target)
    }

    /// Checks every structural invariant of the site.
    pub fn validate(&self) -> Result<()> {
        let ids: BTreeSet<&str> = self.contexts.iter().map(|c| c.id.as_str()).collect();
        let overlap_ids: BTreeSet<&str> = self.overlaps.iter().map(|o| o.id.as_str()).collect();
        let roots = self
            .contexts
            .iter()
            .filter(|c| c.level == ContextLevel::Corpus)
            .count();
        if roots != 1 || !ids.contains(self.root.as_str()) {
            return Err(ToposError::Config("site must have exactly one root".into()));
        }
        for m in &self.morphisms {
            let known = |id: &str| ids.contains(id) || overlap_ids.contains(id);
            if !known(&m.source) || !known(&m.target) {
                return Err(ToposError::Config(format!(
                    "morphism {} -> {} has a missing endpoint",
                    m.source, m.target
                )));
            }
        }
        for cover in &self.covers {
            for member in &cover.members {
                if !self.has_morphism(member, &cover.target) {
                    return Err(ToposError::Config(format!(
                        "cover `{}` member `{member}` has no morphism into `{}`",
                        cover.name, cover.target
                    )));
                }
            }
        }
        let all_non_root: BTreeSet<&str> = self.non_root().map(|c| c.id.as_str()).collect();
        let root_covered = self.covers.iter().any(|c| {
            c.target == self.root
                && all_non_root.is_subset(&c.members.iter().map(String::as_str).collect())
        });
        if !root_covered {
            return Err(ToposError::Config(
                "root is not covered by all non-root contexts".into(),
            ));
        }
        Ok(())
    }
}

/// Builds and validates the site. The root cover is always present;
/// declared covers are added after it, and an `A∩B` overlap context is
/// materialized for every pair of non-root contexts sharing an event.
pub fn build_site(assignment: &ContextAssignment, spec: &CoverSpec) -> Result<ContextSite> {
    let root = assignment.root.clone();
    let contexts = assignment.contexts.clone();
    let non_root: Vec<String> = contexts
        .iter()
        .filter(|c| c.id != root)
        .map(|c| c.id.clone())
        .collect();
    let known: BTreeSet<&str> = contexts.iter().map(|c| c.id.as_str()).collect();

    let mut covers = vec![Cover {
        name: ROOT_COVER.to_string(),
        target: root.clone(),
        members: non_root.clone(),
    }];
    for decl in &spec.covers {
        if decl.name == ROOT_COVER {
            return Err(ToposError::Config(format!(
                "cover name `{ROOT_COVER}` is reserved"
            )));
        }
        if !known.contains(decl.target.as_str()) {
            return Err(ToposError::Config(format!(
                "cover `{}` target `{}` does not exist",
                decl.name, decl.target
            )));
        }
        let mut members = Vec::new();
        for m in &decl.members {
            if m == "*" {
                members.extend(non_root.iter().filter(|c| **c != decl.target).cloned());
            } else if known.contains(m.as_str()) {
                members.push(m.clone());
            } else {
                return Err(ToposError::UnknownContext(m.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        members.retain(|m| seen.insert(m.clone()));
        covers.push(Cover {
            name: decl.name.clone(),
            target: decl.target.clone(),
            members,
        });
    }

    let mut morphisms: BTreeSet<Morphism> = BTreeSet::new();
    for cover in &covers {
        for m in &cover.members {
            morphisms.insert(Morphism {
                source: m.clone(),
                target: cover.target.clone(),
                kind: if cover.target == root {
                    MorphismKind::Inclusion
                } else {
                    MorphismKind::Refinement
                },
            });
        }
    }
    for m in &spec.morphisms {
        morphisms.insert(m.clone());
    }

    let position: BTreeMap<&str, usize> = non_root
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut shared: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for ctxs in assignment.map.values() {
        let mut idx: Vec<usize> = ctxs
            .iter()
            .filter_map(|c| position.get(c.as_str()).copied())
            .collect();
        idx.sort_unstable();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                *shared.entry((i, j)).or_default() += 1;
            }
        }
    }
    let mut overlaps = Vec::with_capacity(shared.len());
    for ((i, j), count) in shared {
        let (left, right) = (non_root[i].clone(), non_root[j].clone());
        let id = format!("{left}∩{right}");
        morphisms.insert(Morphism {
            source: id.clone(),
            target: left.clone(),
            kind: MorphismKind::Overlap,
        });
        morphisms.insert(Morphism {
            source: id.clone(),
            target: right.clone(),
            kind: MorphismKind::Overlap,
        });
        overlaps.push(OverlapContext {
            id,
            left,
            right,
            shared_events: count,
        });
    }

    let site = ContextSite {
        root,
        contexts,
        morphisms: morphisms.into_iter().collect(),
        covers,
        overlaps,
    };
    site.validate()?;
    Ok(site)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ingest::parse_episodes_jsonl;

    fn store(lines: &[&str]) -> EpisodeStore {
        let (episodes, _) = parse_episodes_jsonl(&lines.join("\n")).unwrap();
        let mut s = EpisodeStore {
            episodes,
            ..Default::default()
        };
        s.synthesize_stubs();
        s
    }

    fn ev(actor: &str, obs: &str, meta: &str) -> String {
        format!(
            r#"{{"actor":"{actor}","observation":"{obs}","relation":"reduces","provenance":"p","metadata":{{{meta}}}}}"#
        )
    }

    #[test]
    fn catch_all_only_assigns_root() {
        let s = store(&[&format!(
            r#"{{"id":"e","source_doc":"d","events":[{}]}}"#,
            ev("a", "b", "")
        )]);
        let a = assign_contexts(&s, &CoverSpec::default(), None).unwrap();
        assert_eq!(a.map["e:0"], BTreeSet::from(["corpus".to_string()]));
        let site = build_site(&a, &CoverSpec::default()).unwrap();
        assert_eq!(site.covers.len(), 1);
        assert!(site.covers[0].members.is_empty());
    }

    fn species_spec() -> CoverSpec {
        CoverSpec::from_json(
            r#"{
              "contexts":[
                {"id":"ocean","label":"Ocean","level":"corpus"},
                {"id":"larval_survival","label":"Larval","level":"topic"},
                {"id":"warming","label":"Warming","level":"topic"}],
              "rules":[
                {"kind":"catch_all"},
                {"kind":"match","context":"larval_survival","field":"metadata.species","equals":"sea_urchin"},
                {"kind":"match","context":"warming","field":"actor","contains":"warm"}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn rule_application() {
        let s = store(&[&format!(
            r#"{{"id":"e","source_doc":"d","events":[{},{},{}]}}"#,
            ev("heat", "survival", r#""species":"sea_urchin""#),
            ev("warming", "survival", r#""species":"sea_urchin""#),
            ev("heat", "growth", r#""species":"cod""#)
        )]);
        let a = assign_contexts(&s, &species_spec(), None).unwrap();
        assert_eq!(a.root, "ocean");
        assert_eq!(
            a.map["e:0"],
            BTreeSet::from(["ocean".to_string(), "larval_survival".to_string()])
        );
        assert_eq!(a.map["e:1"].len(), 3);
        assert_eq!(a.map["e:2"], BTreeSet::from(["ocean".to_string()]));
    }

    #[test]
    fn unknown_rule_context_is_config_error() {
        let spec = CoverSpec::from_json(
            r#"{"rules":[{"kind":"catch_all"},{"kind":"match","context":"nope","field":"actor","equals":"a"}]}"#,
        )
        .unwrap();
        let s = store(&[&format!(
            r#"{{"id":"e","source_doc":"d","events":[{}]}}"#,
            ev("a", "b", "")
        )]);
        assert!(matches!(
            assign_contexts(&s, &spec, None),
            Err(ToposError::Config(_))
        ));
        let no_catch_all =
            CoverSpec::from_json(r#"{"rules":[{"kind":"per_value","field":"actor"}]}"#).unwrap();
        assert!(assign_contexts(&s, &no_catch_all, None).is_err());
    }

    #[test]
    fn overlap_contexts_materialized() {
        // A and B share 5 events; C shares none with either.
        let mut events = Vec::new();
        for i in 0..5 {
            events.push(ev(&format!("x{i}"), "y", r#""a":"1","b":"1""#));
        }
        events.push(ev("z", "y", r#""a":"1""#));
        events.push(ev("w", "y", r#""c":"1""#));
        let line = format!(
            r#"{{"id":"e","source_doc":"d","events":[{}]}}"#,
            events.join(",")
        );
        let s = store(&[&line]);
        let spec = CoverSpec::from_json(
            r#"{"contexts":[{"id":"A","level":"topic"},{"id":"B","level":"topic"},{"id":"C","level":"topic"}],
                "rules":[{"kind":"catch_all"},
                  {"kind":"match","context":"A","field":"metadata.a","equals":"1"},
                  {"kind":"match","context":"B","field":"metadata.b","equals":"1"},
                  {"kind":"match","context":"C","field":"metadata.c","equals":"1"}]}"#,
        )
        .unwrap();
        let a = assign_contexts(&s, &spec, None).unwrap();
        let site = build_site(&a, &spec).unwrap();
        assert_eq!(site.overlaps.len(), 1);
        assert_eq!(site.overlaps[0].id, "A∩B");
        assert_eq!(site.overlaps[0].shared_events, 5);
        assert!(site
            .morphisms
            .iter()
            .any(|m| m.source == "A∩B" && m.target == "B" && m.kind == MorphismKind::Overlap));
        assert_eq!(site.neighbors("A"), vec!["B"]);
        assert!(site.neighbors("C").is_empty());
    }

    #[test]
    fn per_value_contexts_and_root_cover() {
        let events: Vec<String> = (0..199)
            .map(|i| ev(&format!("topic {i}"), "y", ""))
            .collect();
        let line = format!(
            r#"{{"id":"e","source_doc":"d","events":[{}]}}"#,
            events.join(",")
        );
        let s = store(&[&line]);
        let spec = CoverSpec::from_json(
            r#"{"rules":[{"kind":"catch_all"},{"kind":"per_value","field":"actor"}]}"#,
        )
        .unwrap();
        let a = assign_contexts(&s, &spec, None).unwrap();
        let site = build_site(&a, &spec).unwrap();
        assert_eq!(site.contexts.len(), 200);
        assert_eq!(site.covers.len(), 1);
        assert_eq!(site.covers[0].members.len(), 199);
        let into_root = site
            .morphisms
            .iter()
            .filter(|m| m.target == site.root)
            .count();
        assert_eq!(into_root, 199);

        let capped = assign_contexts(&s, &spec, Some(10)).unwrap();
        assert_eq!(capped.contexts.len(), 11);
    }

    #[test]
    fn cover_target_must_exist() {
        let s = store(&[&format!(
            r#"{{"id":"e","source_doc":"d","events":[{}]}}"#,
            ev("a", "b", "")
        )]);
        let spec =
            CoverSpec::from_json(r#"{"covers":[{"name":"c","target":"missing","members":["*"]}]}"#)
                .unwrap();
        let a = assign_contexts(&s, &spec, None).unwrap();
        assert!(matches!(build_site(&a, &spec), Err(ToposError::Config(_))));
    }
}
