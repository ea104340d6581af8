//! Run directory export: versioned JSON artifacts plus a static HTML view.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::PersistentState;
use super::ClaimsAtlas;
use crate::error::{Result, ToposError};
use crate::pipeline::{Diagnostics, WorldModelBundle, SCHEMA_VERSION};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const ATLAS_FILE: &str = "atlas.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const STATE_FILE: &str = "state.json";
pub const HTML_FILE: &str = "atlas.html";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsFile {
    pub schema_version: u32,
    #[serde(flatten)]
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSnapshot {
    pub bundle: WorldModelBundle,
    pub atlas: ClaimsAtlas,
    pub diagnostics: Diagnostics,
    pub state: PersistentState,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| ToposError::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

/// Writes every artifact into a sibling temp directory, then renames it
/// into place so readers never see a partial run.
pub fn write_run(
    dir: &Path,
    bundle: &WorldModelBundle,
    atlas: &ClaimsAtlas,
    state: &PersistentState,
) -> Result<()> {
    write_run_with(dir, bundle, atlas, state, Vec::new())
}

/// [`write_run`] plus extra `(file name, contents)` pairs in the same
/// atomic rename.
pub fn write_run_with(
    dir: &Path,
    bundle: &WorldModelBundle,
    atlas: &ClaimsAtlas,
    state: &PersistentState,
    extras: Vec<(String, String)>,
) -> Result<()> {
    let name = dir.file_name().ok_or_else(|| {
        ToposError::InvalidArgument(format!("`{}` is not a run directory", dir.display()))
    })?;
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    io(parent, fs::create_dir_all(parent))?;
    let tmp: PathBuf = parent.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    if tmp.exists() {
        io(&tmp, fs::remove_dir_all(&tmp))?;
    }
    io(&tmp, fs::create_dir_all(&tmp))?;
    let diagnostics = DiagnosticsFile {
        schema_version: SCHEMA_VERSION,
        diagnostics: bundle.diagnostics.clone(),
    };
    let mut files = vec![
        (BUNDLE_FILE.to_string(), bundle.to_json()?),
        (ATLAS_FILE.to_string(), to_json(atlas)?),
        (DIAGNOSTICS_FILE.to_string(), to_json(&diagnostics)?),
        (STATE_FILE.to_string(), to_json(state)?),
        (HTML_FILE.to_string(), render_html(bundle, atlas, state)),
    ];
    files.extend(extras);
    for (file, body) in files {
        let path = tmp.join(file);
        io(&path, fs::write(&path, body))?;
    }
    if dir.exists() {
        io(dir, fs::remove_dir_all(dir))?;
    }
    io(dir, fs::rename(&tmp, dir))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<T> {
    let path = dir.join(file);
    let text = fs::read_to_string(&path)
        .map_err(|e| ToposError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ToposError::Parse(format!("{}: {e}", path.display())))
}

pub fn read_bundle(dir: &Path) -> Result<WorldModelBundle> {
    let bundle: WorldModelBundle = read_json(dir, BUNDLE_FILE)?;
    check_version(bundle.schema_version, BUNDLE_FILE)?;
    Ok(bundle)
}

fn check_version(v: u32, file: &str) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(ToposError::Parse(format!(
            "{file} has schema version {v}, expected {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

pub fn read_run(dir: &Path) -> Result<RunSnapshot> {
    let bundle = read_bundle(dir)?;
    let atlas: ClaimsAtlas = read_json(dir, ATLAS_FILE)?;
    check_version(atlas.schema_version, ATLAS_FILE)?;
    let diagnostics: DiagnosticsFile = read_json(dir, DIAGNOSTICS_FILE)?;
    check_version(diagnostics.schema_version, DIAGNOSTICS_FILE)?;
    let state: PersistentState = read_json(dir, STATE_FILE)?;
    check_version(state.schema_version, STATE_FILE)?;
    Ok(RunSnapshot {
        bundle,
        atlas,
        diagnostics: diagnostics.diagnostics,
        state,
    })
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const MAX_TABLE: usize = 12;
const MAX_FAMILIES: usize = 60;

/// Self-contained page: summary, state, spine, regions, tensions,
/// families, per-context tables and the grounded counterfactual panel.
pub fn render_html(
    bundle: &WorldModelBundle,
    atlas: &ClaimsAtlas,
    state: &PersistentState,
) -> String {
    let mut h = String::new();
    let s = &atlas.summary;
    let _ = write!(
        h,
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Claims Atlas</title>\
         <style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse;margin:.5em 0}}\
         td,th{{border:1px solid #ccc;padding:2px 6px;font-size:12px}}.tense{{color:#b00}}\
         .panel{{border:2px solid #468;padding:1em;margin:1em 0}}</style></head><body>\n<h1>Claims Atlas</h1>\n"
    );
    let _ = writeln!(
        h,
        "<p>{} episodes, {} events, {} claims, {} contexts, {} overlaps, {} tables, {} restriction checks \
         ({} compatible, {} divergent), {} compatible / {} tense overlaps, mean glue loss {:.4}, {} obstructions.</p>",
        s.episodes,
        s.events,
        s.claims,
        s.contexts,
        s.overlap_contexts,
        s.psrs,
        s.restriction_checks,
        s.compatible_restrictions,
        s.divergent_restrictions,
        s.compatible_overlaps,
        s.tense_overlaps,
        s.mean_glue_loss,
        s.obstructions
    );
    let _ = writeln!(
        h,
        "<h2>Persistent state</h2><p>Focus <b>{}</b>: <b>{:?}</b>. {}</p>",
        esc(&state.focus),
        state.recommendation,
        esc(&state.rationale)
    );

    if let Some(g) = &bundle.grounding {
        h.push_str("<div class=\"panel\" id=\"grounded\"><h2>Grounded counterfactual</h2>\n");
        h.push_str("<ol><li>Original section: rewritten observations</li><li>Source tables</li><li>Measured effect</li><li>Modified section</li></ol>\n");
        h.push_str("<h3>Original section</h3><table><tr><th>match</th><th>replacement</th><th>note</th><th>matches</th></tr>\n");
        for (i, r) in g.rewrites.iter().enumerate() {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                esc(&r.pattern.to_string()),
                esc(&r.replacement.to_string()),
                esc(&r.note),
                g.outcome.per_rule.get(i).copied().unwrap_or(0)
            );
        }
        h.push_str("</table>\n");
        if let Some(sub) = &g.substrate {
            h.push_str("<h3>Source tables</h3>\n");
            for (file, hash) in &sub.input_hashes {
                let _ = writeln!(
                    h,
                    "<p><code>{}</code> sha256 <code>{}</code></p>",
                    esc(file),
                    esc(hash)
                );
            }
            if !sub.table.is_empty() {
                let cols: Vec<&String> = sub.table[0].values.keys().collect();
                h.push_str("<table><tr><th></th>");
                for c in &cols {
                    let _ = write!(h, "<th>{}</th>", esc(c));
                }
                h.push_str("</tr>\n");
                for row in &sub.table {
                    let _ = write!(h, "<tr><th>{}</th>", esc(&row.label));
                    for c in &cols {
                        let _ = write!(
                            h,
                            "<td>{:.4}</td>",
                            row.values.get(*c).copied().unwrap_or(f64::NAN)
                        );
                    }
                    h.push_str("</tr>\n");
                }
                h.push_str("</table>\n");
            }
            let _ = writeln!(
                h,
                "<h3>Measured effect</h3><table><tr><th>baseline</th><th>counterfactual</th><th>effect</th><th>relative</th></tr>\
                 <tr><td>{:.6}</td><td>{:.6}</td><td>{:.6}</td><td>{:.4}</td></tr></table>",
                sub.baseline, sub.counterfactual, sub.effect.absolute, sub.effect.relative
            );
            if !sub.details.is_empty() {
                h.push_str("<table>");
                for (k, v) in &sub.details {
                    let _ = write!(h, "<tr><th>{}</th><td>{:.6}</td></tr>", esc(k), v);
                }
                h.push_str("</table>\n");
            }
        }
        let _ = writeln!(
            h,
            "<h3>Modified section</h3><p>{} claims rewritten ({} events, {} claim rows), {} grounded events appended. New contexts: {}.</p></div>",
            g.outcome.modified_claims,
            g.outcome.modified_events,
            g.outcome.modified_claim_rows,
            g.outcome.appended_events,
            if g.new_contexts.is_empty() {
                "none".to_string()
            } else {
                esc(&g.new_contexts.join(", "))
            }
        );
    }

    h.push_str("<h2>Causal spine</h2><ol>\n");
    for p in &atlas.spine {
        let _ = writeln!(
            h,
            "<li>{} (min support {})</li>",
            esc(&p.nodes.join(" → ")),
            p.support
        );
    }
    h.push_str(
        "</ol>\n<h2>Regions</h2><table><tr><th>region</th><th>contexts</th><th>events</th></tr>\n",
    );
    for r in &atlas.regions {
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td>{}</td><td>{}</td></tr>",
            esc(&r.name),
            r.context_count,
            r.event_count
        );
    }
    h.push_str("</table>\n<h2>Tensions</h2><ul>\n");
    for t in &atlas.tensions {
        let _ = writeln!(
            h,
            "<li class=\"tense\">{:?} on cover {} (level {}): {}</li>",
            t.classification,
            esc(&t.cover),
            t.level,
            esc(&t.rationale)
        );
    }
    for o in &atlas.tense_overlaps {
        let _ = writeln!(
            h,
            "<li class=\"tense\">tense overlap {} / {} (max gap {:.4})</li>",
            esc(&o.left),
            esc(&o.right),
            o.max_gap
        );
    }
    h.push_str("</ul>\n<h2>Claim families</h2><table><tr><th>family</th><th>claims</th><th>variants</th><th>aliases</th><th>evidence</th></tr>\n");
    for f in atlas.families.iter().take(MAX_FAMILIES) {
        let variants: Vec<String> = f.variants.iter().map(|(k, v)| format!("{k}×{v}")).collect();
        let evidence: Vec<String> = atlas
            .provenance_index
            .get(&f.key())
            .map(|refs| {
                refs.iter()
                    .map(|r| {
                        format!(
                            "{}{} ({:.2}{})",
                            r.id,
                            if r.stub { " [stub]" } else { "" },
                            r.confidence,
                            r.locator
                                .as_deref()
                                .map(|l| format!(", {l}"))
                                .unwrap_or_default()
                        )
                    })
                    .collect()
            })
            .unwrap_or_default();
        let _ = writeln!(
            h,
            "<tr{}><td>{}</td><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
            if f.tension_candidate {
                " class=\"tense\""
            } else {
                ""
            },
            esc(&f.key()),
            f.claims,
            esc(&variants.join(", ")),
            f.alias_count,
            esc(&evidence.join("; "))
        );
    }
    h.push_str("</table>\n<h2>Context tables</h2>\n");
    for p in &bundle.psrs {
        let _ = writeln!(
            h,
            "<h3>{}</h3><p>rank {}, sparsity {:.3}, mean confidence {:.3}, {} events</p><table><tr><th></th>",
            esc(&p.context_id),
            p.diagnostics.rank,
            p.diagnostics.sparsity,
            p.diagnostics.mean_confidence,
            p.diagnostics.event_count
        );
        for t in p.tests.iter().take(MAX_TABLE) {
            let _ = write!(h, "<th>{}</th>", esc(t));
        }
        h.push_str("</tr>\n");
        for (r, hist) in p.histories.iter().enumerate().take(MAX_TABLE) {
            let _ = write!(h, "<tr><th>{}</th>", esc(hist));
            for c in 0..p.tests.len().min(MAX_TABLE) {
                let _ = write!(
                    h,
                    "<td>{:.3} ({})</td>",
                    p.table.get(r, c),
                    p.support.get(r, c)
                );
            }
            h.push_str("</tr>\n");
        }
        h.push_str("</table>\n");
    }
    h.push_str("</body></html>\n");
    h
}
