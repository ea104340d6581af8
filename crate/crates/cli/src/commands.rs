//! Build, intervene, diff, synth and score, each returning a stable exit code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;
use topos_core::atlas::{
    build_atlas, diff_worlds, persist_state, read_bundle, write_run_with, DriftReport,
    PersistentState,
};
use topos_core::intervene::{run_intervention, InterventionRun, InterventionSpec};
use topos_core::pipeline::{
    build_from_config, sha256_hex, BundleSummary, RunConfig, WorldModelBundle,
};
use topos_core::synthlab::{
    generate_corpus, score_recovery, write_corpus, RecoveryScore, RegimeSpec,
};
use topos_core::ToposError;

pub const DIFF_FILE: &str = "diff.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Drift = 1,
    Usage = 2,
    Pipeline = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] ToposError),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Usage,
            CliError::Pipeline(_) => ExitCode::Pipeline,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

/// Run id derived from the config and input hashes, so reruns agree.
pub fn run_id(bundle: &WorldModelBundle) -> String {
    let mut key = bundle.metadata.config_hash.clone();
    for h in bundle.metadata.input_hashes.values() {
        key.push_str(h);
    }
    format!("run-{}", &sha256_hex(key.as_bytes())[..12])
}

pub fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Atlas, state and exports for a bundle, with an optional diff written in
/// the same atomic step.
pub fn write_artifacts(
    dir: &Path,
    bundle: &WorldModelBundle,
    parent: Option<String>,
    diff: Option<&DriftReport>,
) -> topos_core::Result<PersistentState> {
    let atlas = build_atlas(bundle, &bundle.config.atlas);
    let state = persist_state(bundle, None, parent)?;
    let extras = match diff {
        Some(d) => vec![(DIFF_FILE.to_string(), serde_json::to_string_pretty(d)?)],
        None => Vec::new(),
    };
    write_run_with(dir, bundle, &atlas, &state, extras)?;
    Ok(state)
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub run_dir: PathBuf,
    pub summary: BundleSummary,
    pub recommendation: String,
}

pub fn summary_lines(s: &BundleSummary) -> String {
    format!(
        "{} episodes, {} events, {} claims\n{} contexts, {} overlap contexts, {} PSRs\n\
         {} restriction checks ({} compatible, {} divergent)\n\
         {} compatible overlaps, {} tense overlaps, mean glue loss {:.4}\n{} obstructions",
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
    )
}

pub fn cmd_build(config: &Path, out: Option<&Path>) -> CliResult<BuildReport> {
    if !config.exists() {
        return Err(usage(format!("config {} does not exist", config.display())));
    }
    let cfg = RunConfig::load(config).map_err(|e| match e {
        ToposError::Config(_) | ToposError::Io { .. } => usage(e),
        other => CliError::Pipeline(other),
    })?;
    let (bundle, _) = build_from_config(&cfg)?;
    let dir = match out.map(Path::to_path_buf).or_else(|| cfg.output.clone()) {
        Some(d) => d,
        None => PathBuf::from("runs").join(run_id(&bundle)),
    };
    let state = write_artifacts(&dir, &bundle, None, None)?;
    Ok(BuildReport {
        run_dir: dir,
        summary: bundle.summary,
        recommendation: format!("{:?}", state.recommendation).to_lowercase(),
    })
}

pub fn load_run(dir: &Path) -> CliResult<WorldModelBundle> {
    if !dir.join(topos_core::atlas::export::BUNDLE_FILE).exists() {
        return Err(usage(format!("{} is not a run directory", dir.display())));
    }
    read_bundle(dir).map_err(usage)
}

pub struct IntervenedRun {
    pub run_dir: PathBuf,
    pub run: InterventionRun,
}

pub fn cmd_intervene(
    base_dir: &Path,
    spec_path: &Path,
    out: Option<&Path>,
) -> CliResult<IntervenedRun> {
    let base = load_run(base_dir)?;
    let text = read_text(spec_path)?;
    let spec = InterventionSpec::from_json(&text).map_err(usage)?;
    let spec_dir = spec_path.parent().unwrap_or(Path::new("."));
    let run = run_intervention(&base, &spec, spec_dir)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => {
            let tag = &sha256_hex(text.as_bytes())[..8];
            base_dir.with_file_name(format!("{}-{tag}", run_name(base_dir)))
        }
    };
    write_artifacts(&dir, &run.bundle, Some(run_name(base_dir)), Some(&run.diff))?;
    Ok(IntervenedRun { run_dir: dir, run })
}

pub fn cmd_diff(a: &Path, b: &Path) -> CliResult<DriftReport> {
    let (old, new) = (load_run(a)?, load_run(b)?);
    Ok(diff_worlds(
        &old,
        &new,
        old.config.atlas.eps_drift(&old.config.tolerance),
    ))
}

pub fn load_regime_spec(path: &Path) -> CliResult<RegimeSpec> {
    RegimeSpec::from_json(&read_text(path)?).map_err(usage)
}

pub fn cmd_synth(spec: &Path, out: &Path) -> CliResult<()> {
    let spec = load_regime_spec(spec)?;
    let corpus = generate_corpus(&spec)?;
    write_corpus(&corpus, out)?;
    Ok(())
}

/// Scores a run against the truth regenerated from its regime spec. With
/// `against`, drift is measured from that earlier run to this one.
pub fn cmd_score(run: &Path, spec: &Path, against: Option<&Path>) -> CliResult<RecoveryScore> {
    let bundle = load_run(run)?;
    let truth = generate_corpus(&load_regime_spec(spec)?)?.truth;
    let drift = match against {
        Some(a) => {
            let old = load_run(a)?;
            Some(diff_worlds(
                &old,
                &bundle,
                old.config.atlas.eps_drift(&old.config.tolerance),
            ))
        }
        None => None,
    };
    Ok(score_recovery(&bundle, drift.as_ref(), &truth))
}
