//! Persistent world state: a focus-context recommendation chained to its
//! parent run.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToposError};
use crate::pipeline::{WorldModelBundle, SCHEMA_VERSION};
use crate::sheaf::{GluingOverlap, OverlapStatus, RestrictionDiagnostic, RestrictionStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Accept,
    Provisional,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusDiagnostics {
    pub restrictions: Vec<RestrictionDiagnostic>,
    pub overlaps: Vec<GluingOverlap>,
    pub divergent_restrictions: usize,
    pub tense_overlaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistentState {
    pub schema_version: u32,
    pub focus: String,
    pub recommendation: Recommendation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub config_hash: String,
    pub focus_diagnostics: FocusDiagnostics,
    /// Issues anywhere in the run, focus included.
    pub run_divergent_restrictions: usize,
    pub run_tense_overlaps: usize,
    pub run_obstructions: usize,
    pub rationale: String,
}

/// Largest non-root context by event count, ties by id; the root when
/// there is nothing else.
pub fn default_focus(bundle: &WorldModelBundle) -> String {
    bundle
        .psrs
        .iter()
        .filter(|p| p.context_id != bundle.site.root)
        .max_by(|a, b| {
            a.diagnostics
                .event_count
                .cmp(&b.diagnostics.event_count)
                .then_with(|| b.context_id.cmp(&a.context_id))
        })
        .map(|p| p.context_id.clone())
        .unwrap_or_else(|| bundle.site.root.clone())
}

pub fn persist_state(
    bundle: &WorldModelBundle,
    focus: Option<&str>,
    parent: Option<String>,
) -> Result<PersistentState> {
    let focus = match focus
        .map(String::from)
        .or_else(|| bundle.config.focus.clone())
    {
        Some(f) => f,
        None => default_focus(bundle),
    };
    if bundle.site.context(&focus).is_none() {
        return Err(ToposError::UnknownContext(focus));
    }
    let d = &bundle.diagnostics;
    let restrictions: Vec<RestrictionDiagnostic> = d
        .restrictions
        .iter()
        .filter(|r| r.source == focus || r.target == focus)
        .cloned()
        .collect();
    let overlaps: Vec<GluingOverlap> = d
        .overlaps
        .iter()
        .filter(|o| o.left == focus || o.right == focus)
        .cloned()
        .collect();
    let focus_divergent = restrictions
        .iter()
        .filter(|r| r.status == RestrictionStatus::Divergent)
        .count();
    let focus_tense = overlaps
        .iter()
        .filter(|o| o.status == OverlapStatus::Tense)
        .count();
    let run_divergent = d.summary.divergent_restrictions;
    let run_tense = d.summary.tense_overlaps;
    let run_obstructions = d.obstructions.len();
    let (recommendation, rationale) = if focus_divergent + focus_tense > 0 {
        (
            Recommendation::Blocked,
            format!("focus has {focus_divergent} divergent restriction(s) and {focus_tense} tense overlap(s)"),
        )
    } else if run_divergent + run_tense + run_obstructions > 0 {
        (
            Recommendation::Provisional,
            format!(
                "focus is clean; run has {run_divergent} divergent restriction(s), {run_tense} tense overlap(s), {run_obstructions} obstruction(s)"
            ),
        )
    } else {
        (
            Recommendation::Accept,
            "no blocking local issue was detected".to_string(),
        )
    };
    Ok(PersistentState {
        schema_version: SCHEMA_VERSION,
        focus,
        recommendation,
        parent,
        config_hash: bundle.metadata.config_hash.clone(),
        focus_diagnostics: FocusDiagnostics {
            restrictions,
            overlaps,
            divergent_restrictions: focus_divergent,
            tense_overlaps: focus_tense,
        },
        run_divergent_restrictions: run_divergent,
        run_tense_overlaps: run_tense,
        run_obstructions,
        rationale,
    })
}
