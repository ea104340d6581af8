//! File ingestion for episodes, evidence units and claim rows.
//!
//! Every reader is record-tolerant: a malformed record is rejected and
//! counted, and ingestion continues. An input with no records at all is an
//! error.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    normalize, normalize_token, CausalEvent, ClaimRow, Episode, EpisodeStore, EvidenceUnit,
    Polarity,
};
use crate::error::{Result, ToposError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based record number (line for JSONL, data row for CSV).
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
    /// Provenance ids that had no evidence unit and were stubbed.
    #[serde(default)]
    pub stubbed_evidence: Vec<String>,
}

impl ParseReport {
    fn accept(&mut self) {
        self.total += 1;
        self.accepted += 1;
    }

    fn reject(&mut self, record: usize, reason: impl Into<String>) {
        self.total += 1;
        self.rejected += 1;
        self.rejections.push(Rejection {
            record,
            reason: reason.into(),
        });
    }

    pub fn merge(&mut self, other: &ParseReport) {
        self.total += other.total;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.rejections.extend(other.rejections.iter().cloned());
        self.stubbed_evidence
            .extend(other.stubbed_evidence.iter().cloned());
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| ToposError::io(path, e))
}

/// Reads an episodes file. The returned store carries stub evidence units
/// for every provenance id; load an evidence file on top with
/// [`attach_evidence`].
pub fn ingest_episodes(path: &Path, format: InputFormat) -> Result<(EpisodeStore, ParseReport)> {
    let text = read(path)?;
    let (episodes, mut report) = match format {
        InputFormat::Jsonl => parse_episodes_jsonl(&text)?,
        InputFormat::Csv => parse_episodes_csv(&text)?,
    };
    let mut store = EpisodeStore {
        episodes,
        ..Default::default()
    };
    report.stubbed_evidence = store.synthesize_stubs();
    Ok((store, report))
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

pub fn parse_episodes_jsonl(text: &str) -> Result<(Vec<Episode>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut episodes = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in non_empty_lines(text) {
        let parsed = serde_json::from_str::<Value>(line)
            .map_err(|e| e.to_string())
            .and_then(|v| episode_from_value(&v, line_no));
        match parsed {
            Ok(ep) if !seen.insert(ep.id.clone()) => {
                report.reject(line_no, format!("duplicate episode id `{}`", ep.id));
            }
            Ok(ep) => {
                report.accept();
                episodes.push(ep);
            }
            Err(reason) => report.reject(line_no, reason),
        }
    }
    if report.total == 0 {
        return Err(ToposError::EmptyInput("episodes".into()));
    }
    Ok((episodes, report))
}

fn str_field(v: &Value, name: &str) -> Option<String> {
    match v.get(name)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn meta_field(v: &Value) -> std::result::Result<BTreeMap<String, String>, String> {
    match v.get("metadata") {
        None | Some(Value::Null) => Ok(BTreeMap::new()),
        Some(Value::Object(map)) => Ok(map
            .iter()
            .map(|(k, v)| {
                let val = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (normalize(k), normalize(&val))
            })
            .collect()),
        Some(_) => Err("metadata must be an object".into()),
    }
}

fn episode_from_value(v: &Value, line_no: usize) -> std::result::Result<Episode, String> {
    let id = str_field(v, "id").unwrap_or_else(|| format!("ep{line_no}"));
    let source_doc = str_field(v, "source_doc").ok_or("missing source_doc")?;
    let metadata = meta_field(v)?;
    let raw_events = v
        .get("events")
        .and_then(Value::as_array)
        .ok_or("missing events array")?;
    if raw_events.is_empty() {
        return Err("episode has no events".into());
    }
    let mut events = Vec::with_capacity(raw_events.len());
    for (i, rv) in raw_events.iter().enumerate() {
        let time_index = match rv.get("time_index") {
            None | Some(Value::Null) => None,
            Some(t) => Some(t.as_i64().ok_or("time_index must be an integer")?),
        };
        let event = make_event(
            format!("{id}:{i}"),
            str_field(rv, "actor").as_deref(),
            str_field(rv, "action").as_deref(),
            str_field(rv, "observation").as_deref(),
            str_field(rv, "relation").as_deref(),
            str_field(rv, "polarity").as_deref(),
            time_index,
            str_field(rv, "provenance").as_deref(),
            meta_field(rv)?,
        )
        .map_err(|e| format!("event {i}: {e}"))?;
        events.push(event);
    }
    check_time_order(&events)?;
    Ok(Episode {
        id,
        source_doc,
        events,
        metadata,
    })
}

#[allow(clippy::too_many_arguments)]
fn make_event(
    id: String,
    actor: Option<&str>,
    action: Option<&str>,
    observation: Option<&str>,
    relation: Option<&str>,
    polarity: Option<&str>,
    time_index: Option<i64>,
    provenance: Option<&str>,
    metadata: BTreeMap<String, String>,
) -> std::result::Result<CausalEvent, String> {
    let actor = normalize_token(actor.unwrap_or_default());
    let observation = normalize_token(observation.unwrap_or_default());
    let relation = normalize_token(relation.unwrap_or_default());
    let action = normalize_token(action.unwrap_or_default());
    if actor.is_empty() {
        return Err("empty actor".into());
    }
    if observation.is_empty() {
        return Err("empty observation".into());
    }
    if relation.is_empty() {
        return Err("empty relation".into());
    }
    let provenance = provenance.map(str::trim).unwrap_or_default();
    if provenance.is_empty() {
        return Err("missing provenance".into());
    }
    let polarity = match polarity.map(str::trim).filter(|p| !p.is_empty()) {
        Some(p) => Polarity::parse(p).ok_or_else(|| format!("unknown polarity `{p}`"))?,
        None => Polarity::from_relation(&relation),
    };
    Ok(CausalEvent {
        id,
        actor,
        action,
        observation,
        relation,
        polarity,
        time_index,
        provenance: provenance.to_string(),
        metadata,
    })
}

fn check_time_order(events: &[CausalEvent]) -> std::result::Result<(), String> {
    let mut last: Option<i64> = None;
    for ev in events {
        if let Some(t) = ev.time_index {
            if let Some(prev) = last {
                if t < prev {
                    return Err(format!("time_index decreases at event {}", ev.id));
                }
            }
            last = Some(t);
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct EpisodeCsvRow {
    episode_id: String,
    source_doc: String,
    actor: Option<String>,
    action: Option<String>,
    observation: Option<String>,
    relation: Option<String>,
    polarity: Option<String>,
    time_index: Option<i64>,
    provenance: Option<String>,
}

/// CSV episodes: one event per row, grouped by `episode_id` in order of
/// first appearance. Each row is one record for the parse report.
pub fn parse_episodes_csv(text: &str) -> Result<(Vec<Episode>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Episode> = BTreeMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    for (i, row) in reader.deserialize::<EpisodeCsvRow>().enumerate() {
        let record = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.reject(record, e.to_string());
                continue;
            }
        };
        let index = grouped.get(&row.episode_id).map_or(0, |e| e.events.len());
        let event = make_event(
            format!("{}:{index}", row.episode_id),
            row.actor.as_deref(),
            row.action.as_deref(),
            row.observation.as_deref(),
            row.relation.as_deref(),
            row.polarity.as_deref(),
            row.time_index,
            row.provenance.as_deref(),
            BTreeMap::new(),
        );
        let event = match event {
            Ok(e) => e,
            Err(reason) => {
                report.reject(record, reason);
                continue;
            }
        };
        let episode = grouped.entry(row.episode_id.clone()).or_insert_with(|| {
            order.push(row.episode_id.clone());
            Episode {
                id: row.episode_id.clone(),
                source_doc: row.source_doc.clone(),
                events: Vec::new(),
                metadata: BTreeMap::new(),
            }
        });
        let mut probe = episode.events.clone();
        probe.push(event.clone());
        if let Err(reason) = check_time_order(&probe) {
            report.reject(record, reason);
            continue;
        }
        episode.events.push(event);
        report.accept();
    }
    if report.total == 0 {
        return Err(ToposError::EmptyInput("episodes".into()));
    }
    let episodes = order
        .into_iter()
        .filter_map(|id| grouped.remove(&id))
        .filter(|e| !e.events.is_empty())
        .collect();
    Ok((episodes, report))
}

/// Reads an evidence JSONL file.
pub fn ingest_evidence(path: &Path) -> Result<(Vec<EvidenceUnit>, ParseReport)> {
    parse_evidence_jsonl(&read(path)?)
}

pub fn parse_evidence_jsonl(text: &str) -> Result<(Vec<EvidenceUnit>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut units: Vec<EvidenceUnit> = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in non_empty_lines(text) {
        match serde_json::from_str::<EvidenceUnit>(line) {
            Ok(u) if !(0.0..=1.0).contains(&u.extraction_confidence) => {
                report.reject(line_no, "extraction_confidence outside [0,1]");
            }
            Ok(u) if u.id.trim().is_empty() => report.reject(line_no, "empty id"),
            Ok(u) if !seen.insert(u.id.clone()) => {
                report.reject(line_no, format!("duplicate evidence id `{}`", u.id));
            }
            Ok(mut u) => {
                u.stub = false;
                u.retrieval_meta = u
                    .retrieval_meta
                    .into_iter()
                    .map(|(k, v)| (normalize(&k), normalize(&v)))
                    .collect();
                report.accept();
                units.push(u);
            }
            Err(e) => report.reject(line_no, e.to_string()),
        }
    }
    if report.total == 0 {
        return Err(ToposError::EmptyInput("evidence".into()));
    }
    Ok((units, report))
}

/// Replaces stubs with real evidence units and re-synthesizes stubs for
/// anything still dangling. Returns the ids that remain stubbed.
pub fn attach_evidence(store: &mut EpisodeStore, units: Vec<EvidenceUnit>) -> Vec<String> {
    store.evidence.retain(|_, u| !u.stub);
    for u in units {
        store.evidence.insert(u.id.clone(), u);
    }
    store.synthesize_stubs()
}

#[derive(Debug, Deserialize)]
struct ClaimCsvRow {
    cause: String,
    effect: String,
    #[serde(default)]
    mediator: Option<String>,
    #[serde(default)]
    modifier: Option<String>,
    #[serde(default)]
    polarity: Option<String>,
    #[serde(default)]
    relation: Option<String>,
    #[serde(default)]
    strength: Option<f64>,
    #[serde(default)]
    context_labels: Option<String>,
    #[serde(default)]
    provenance: Option<String>,
}

fn split_semicolon(raw: Option<&str>) -> Vec<String> {
    raw.unwrap_or_default()
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn claim_from_row(row: ClaimCsvRow) -> std::result::Result<ClaimRow, String> {
    let cause = normalize_token(&row.cause);
    let effect = normalize_token(&row.effect);
    if cause.is_empty() || effect.is_empty() {
        return Err("empty cause or effect".into());
    }
    if cause == effect {
        return Err("cause equals effect".into());
    }
    let relation = row
        .relation
        .as_deref()
        .map(normalize_token)
        .filter(|r| !r.is_empty());
    let polarity = match row
        .polarity
        .as_deref()
        .map(str::trim)
        .filter(|p| !p.is_empty())
    {
        Some(p) => Polarity::parse(p).ok_or_else(|| format!("unknown polarity `{p}`"))?,
        None => relation
            .as_deref()
            .map(Polarity::from_relation)
            .unwrap_or(Polarity::Neutral),
    };
    let provenance = split_semicolon(row.provenance.as_deref());
    if provenance.is_empty() {
        return Err("claim has no provenance".into());
    }
    let opt = |s: Option<String>| s.map(|v| normalize_token(&v)).filter(|v| !v.is_empty());
    Ok(ClaimRow {
        cause,
        effect,
        mediator: opt(row.mediator),
        modifier: opt(row.modifier),
        polarity,
        relation,
        strength: row.strength,
        context_labels: split_semicolon(row.context_labels.as_deref())
            .into_iter()
            .map(|c| normalize(&c))
            .collect(),
        provenance,
    })
}

/// Reads a claims file (CSV or JSONL with the same column names;
/// `context_labels` and `provenance` are semicolon-joined strings).
pub fn ingest_claims(path: &Path, format: InputFormat) -> Result<(Vec<ClaimRow>, ParseReport)> {
    let text = read(path)?;
    parse_claims(&text, format)
}

pub fn parse_claims(text: &str, format: InputFormat) -> Result<(Vec<ClaimRow>, ParseReport)> {
    let mut report = ParseReport::default();
    let mut claims = Vec::new();
    let mut push = |record: usize, row: std::result::Result<ClaimCsvRow, String>| match row
        .and_then(claim_from_row)
    {
        Ok(c) => {
            report.accept();
            claims.push(c);
        }
        Err(reason) => report.reject(record, reason),
    };
    match format {
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            for (i, row) in reader.deserialize::<ClaimCsvRow>().enumerate() {
                push(i + 1, row.map_err(|e| e.to_string()));
            }
        }
        InputFormat::Jsonl => {
            for (line_no, line) in non_empty_lines(text) {
                push(
                    line_no,
                    serde_json::from_str::<ClaimCsvRow>(line).map_err(|e| e.to_string()),
                );
            }
        }
    }
    if report.total == 0 {
        return Err(ToposError::EmptyInput("claims".into()));
    }
    Ok((claims, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_yields_one_event() {
        let text = r#"{"id":"e1","source_doc":"d1","events":[{"actor":"colored_mnp","action":"light_absorption","observation":"increase","relation":"increase","provenance":"u1"}]}"#;
        let (eps, report) = parse_episodes_jsonl(text).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].events.len(), 1);
        let ev = &eps[0].events[0];
        assert_eq!(ev.actor, "colored_mnp");
        assert_eq!(ev.action, "light_absorption");
        assert_eq!(ev.polarity, Polarity::Positive);
        assert_eq!(report.accepted, 1);
    }

    #[test]
    fn empty_events_list_is_rejected() {
        let text = "{\"id\":\"e1\",\"source_doc\":\"d\",\"events\":[]}\n\
                    {\"id\":\"e2\",\"source_doc\":\"d\",\"events\":[{\"actor\":\"a\",\"observation\":\"b\",\"relation\":\"causes\",\"provenance\":\"p\"}]}";
        let (eps, report) = parse_episodes_jsonl(text).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.accepted + report.rejected, report.total);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse_episodes_jsonl("\n  \n"),
            Err(ToposError::EmptyInput(_))
        ));
    }

    #[test]
    fn malformed_lines_are_counted() {
        let text = "not json\n{\"source_doc\":\"d\",\"events\":[{\"actor\":\"A  B\",\"observation\":\"C!\",\"relation\":\"Leads To\",\"provenance\":\"p\"}]}\n{\"id\":1}";
        let (eps, report) = parse_episodes_jsonl(text).unwrap();
        assert_eq!(report.total, 3);
        assert_eq!(report.rejected, 2);
        assert_eq!(eps[0].events[0].key(), "a_b|leads_to|c");
    }

    #[test]
    fn decreasing_time_index_rejects_record() {
        let text = r#"{"id":"e","source_doc":"d","events":[{"actor":"a","observation":"b","relation":"r","provenance":"p","time_index":5},{"actor":"b","observation":"c","relation":"r","provenance":"p","time_index":2}]}"#;
        let (_, report) = parse_episodes_jsonl(text).unwrap();
        assert_eq!(report.rejected, 1);
    }

    #[test]
    fn csv_episodes_group_by_id() {
        let text = "episode_id,source_doc,actor,action,observation,relation,polarity,time_index,provenance\n\
                    e1,d,a,,b,causes,,1,p1\n\
                    e2,d,x,,y,reduces,negative,,p2\n\
                    e1,d,b,,c,causes,,2,p1\n\
                    e1,d,,,c,causes,,3,p1\n";
        let (eps, report) = parse_episodes_csv(text).unwrap();
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0].events.len(), 2);
        assert_eq!(eps[0].events[1].id, "e1:1");
        assert_eq!(report.rejected, 1);
        assert_eq!(report.accepted, 3);
    }

    #[test]
    fn claims_csv_invariants() {
        let text = "cause,effect,mediator,modifier,polarity,strength,context_labels,provenance\n\
                    Warming,Larval Survival,,,negative,0.8,larval;ocean,u1;u2\n\
                    a,a,,,positive,,,u1\n\
                    a,b,,,positive,,,\n";
        let (claims, report) = parse_claims(text, InputFormat::Csv).unwrap();
        assert_eq!(claims.len(), 1);
        assert_eq!(report.rejected, 2);
        assert_eq!(claims[0].cause, "warming");
        assert_eq!(claims[0].effect, "larval_survival");
        assert_eq!(claims[0].provenance, vec!["u1", "u2"]);
        assert_eq!(claims[0].context_labels.len(), 2);
    }

    #[test]
    fn evidence_confidence_bounds() {
        let text = "{\"id\":\"u1\",\"source_id\":\"d\",\"extraction_confidence\":0.9}\n{\"id\":\"u2\",\"source_id\":\"d\",\"extraction_confidence\":1.5}";
        let (units, report) = parse_evidence_jsonl(text).unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(report.rejected, 1);
    }

    #[test]
    fn dangling_provenance_is_stubbed() {
        let text = r#"{"id":"e","source_doc":"doc","events":[{"actor":"a","observation":"b","relation":"r","provenance":"u1"},{"actor":"b","observation":"c","relation":"r","provenance":"u9"}]}"#;
        let (episodes, _) = parse_episodes_jsonl(text).unwrap();
        let mut store = EpisodeStore {
            episodes,
            ..Default::default()
        };
        store.synthesize_stubs();
        let real = EvidenceUnit {
            id: "u1".into(),
            source_id: "doc".into(),
            locator: None,
            retrieval_meta: BTreeMap::new(),
            extraction_confidence: 0.9,
            stub: false,
        };
        let stubs = attach_evidence(&mut store, vec![real]);
        assert_eq!(stubs, vec!["u9".to_string()]);
        assert!(store.evidence["u9"].stub);
        assert_eq!(store.evidence["u9"].extraction_confidence, 0.5);
        assert!(!store.evidence["u1"].stub);
    }
}
