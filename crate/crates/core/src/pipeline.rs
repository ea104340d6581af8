//! End-to-end world building: ingest, assign, site, tables, diagnostics,
//! and the durable bundle that carries them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atlas::AtlasConfig;
use crate::error::{Result, StageContext, ToposError};
use crate::intervene::GroundingLayer;
use crate::model::ingest::attach_evidence;
use crate::model::{
    assign_contexts, build_site, ingest_claims, ingest_episodes, ingest_evidence,
    ContextAssignment, ContextSite, CoverSpec, EpisodeStore, InputFormat, ParseReport,
};
use crate::psr::{build_psrs, LocalPsr, SmoothingConfig};
use crate::sheaf::{
    default_overlap_weight, gluing_tension, restriction_check, try_glue, CellAccounting,
    GluingOverlap, LambdaPolicy, Obstruction, OverlapStatus, RestrictionDiagnostic,
    RestrictionStatus, Section, ToleranceConfig,
};

pub const SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Every parameter that influences a build. Hashed into the bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub smoothing: SmoothingConfig,
    pub tolerance: ToleranceConfig,
    pub lambda_policy: LambdaPolicy,
    /// Cap on rule-created contexts (depth knob).
    pub max_contexts: Option<usize>,
    pub atlas: AtlasConfig,
    /// Focus context for the persistent state; defaults to the largest
    /// non-root context.
    pub focus: Option<String>,
    /// Recorded verbatim; builds never read the clock.
    pub timestamp: Option<String>,
    /// Opaque extractor metadata (request, token, cost counts, ...).
    pub extractor_meta: BTreeMap<String, String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            tolerance: ToleranceConfig::default(),
            lambda_policy: LambdaPolicy::SupportConfidence,
            max_contexts: None,
            atlas: AtlasConfig::default(),
            focus: None,
            timestamp: None,
            extractor_meta: BTreeMap::new(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        self.tolerance.validate()
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Paths plus engine parameters, as read from a config file. Relative paths
/// resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub episodes: PathBuf,
    #[serde(default)]
    pub evidence: Option<PathBuf>,
    #[serde(default)]
    pub claims: Option<PathBuf>,
    #[serde(default)]
    pub cover_spec: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default, flatten)]
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ToposError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| ToposError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.episodes);
        for p in [
            &mut self.evidence,
            &mut self.claims,
            &mut self.cover_spec,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inputs = std::iter::once(&self.episodes)
            .chain(self.evidence.iter())
            .chain(self.claims.iter())
            .chain(self.cover_spec.iter());
        for p in inputs {
            if !p.exists() {
                return Err(ToposError::Config(format!(
                    "input {} does not exist",
                    p.display()
                )));
            }
        }
        self.engine.validate()
    }
}

/// Reads every input named by the config into a store and cover spec.
pub fn load_inputs(cfg: &RunConfig) -> Result<(EpisodeStore, CoverSpec, ParseReport)> {
    let (mut store, mut report) =
        ingest_episodes(&cfg.episodes, InputFormat::from_path(&cfg.episodes)).stage("ingest")?;
    if let Some(path) = &cfg.evidence {
        let (units, r) = ingest_evidence(path).stage("ingest")?;
        report.merge(&r);
        report.stubbed_evidence = attach_evidence(&mut store, units);
    }
    if let Some(path) = &cfg.claims {
        let (claims, r) = ingest_claims(path, InputFormat::from_path(path)).stage("ingest")?;
        report.merge(&r);
        store.claims = claims;
        report.stubbed_evidence.extend(store.synthesize_stubs());
    }
    let spec = match &cfg.cover_spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ToposError::io(path, e))?;
            CoverSpec::from_json(&text).stage("cover spec")?
        }
        None => CoverSpec::default(),
    };
    Ok((store, spec, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverGlue {
    pub cover: String,
    pub target: String,
    pub members_with_tables: usize,
    pub accounting: CellAccounting,
    pub total_tension: f64,
    pub obstructed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub compatible_restrictions: usize,
    pub divergent_restrictions: usize,
    pub compatible_overlaps: usize,
    pub tense_overlaps: usize,
    pub mean_glue_loss: f64,
    pub total_tension: f64,
    pub obstructions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub restrictions: Vec<RestrictionDiagnostic>,
    pub overlaps: Vec<GluingOverlap>,
    pub obstructions: Vec<Obstruction>,
    pub covers: Vec<CoverGlue>,
    pub summary: DiagnosticsSummary,
}

impl Diagnostics {
    pub fn summarize(
        restrictions: &[RestrictionDiagnostic],
        overlaps: &[GluingOverlap],
        obstructions: &[Obstruction],
    ) -> DiagnosticsSummary {
        let aligned = restrictions
            .iter()
            .filter(|r| r.status == RestrictionStatus::Aligned)
            .count();
        let tense = overlaps
            .iter()
            .filter(|o| o.status == OverlapStatus::Tense)
            .count();
        let mean_glue_loss = if overlaps.is_empty() {
            0.0
        } else {
            overlaps.iter().map(|o| o.loss).sum::<f64>() / overlaps.len() as f64
        };
        DiagnosticsSummary {
            compatible_restrictions: aligned,
            divergent_restrictions: restrictions.len() - aligned,
            compatible_overlaps: overlaps.len() - tense,
            tense_overlaps: tense,
            mean_glue_loss,
            total_tension: overlaps.iter().map(|o| o.tension).sum(),
            obstructions: obstructions.len(),
        }
    }
}

/// Sections for every table, keyed by context id.
pub fn sections_of(store: &EpisodeStore, psrs: &[LocalPsr]) -> BTreeMap<String, Section> {
    let conf = |id: &str| store.confidence_of(id);
    psrs.iter()
        .map(|p| (p.context_id.clone(), Section::from_psr(p, &conf)))
        .collect()
}

/// Restriction checks from each cover target onto its members, then
/// pairwise tensions and a gluing attempt per cover.
pub fn run_diagnostics(
    store: &EpisodeStore,
    site: &ContextSite,
    psrs: &[LocalPsr],
    config: &EngineConfig,
) -> Result<Diagnostics> {
    let tol = &config.tolerance;
    let by_id: BTreeMap<&str, &LocalPsr> =
        psrs.iter().map(|p| (p.context_id.as_str(), p)).collect();
    let sections = sections_of(store, psrs);

    let mut restrictions = Vec::new();
    let mut checked: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut overlaps = Vec::new();
    let mut seen_pairs: BTreeSet<(String, String)> = BTreeSet::new();
    let mut obstructions = Vec::new();
    let mut covers = Vec::new();
    for cover in &site.covers {
        if let Some(target) = by_id.get(cover.target.as_str()) {
            for m in &cover.members {
                if let Some(member) = by_id.get(m.as_str()) {
                    if m != &cover.target && checked.insert((cover.target.as_str(), m.as_str())) {
                        restrictions.push(restriction_check(
                            target,
                            member,
                            config.lambda_policy,
                            tol,
                        ));
                    }
                }
            }
        }
        let members: Vec<Section> = cover
            .members
            .iter()
            .filter_map(|m| sections.get(m).cloned())
            .collect();
        let (pairs, total_tension) = gluing_tension(&members, &default_overlap_weight, tol);
        for o in pairs {
            if seen_pairs.insert((o.left.clone(), o.right.clone())) {
                overlaps.push(o);
            }
        }
        let outcome = try_glue(site, &cover.name, &members, tol).stage("gluing")?;
        covers.push(CoverGlue {
            cover: cover.name.clone(),
            target: cover.target.clone(),
            members_with_tables: members.len(),
            accounting: outcome.accounting,
            total_tension,
            obstructed: outcome.obstruction.is_some(),
        });
        obstructions.extend(outcome.obstruction);
    }
    let summary = Diagnostics::summarize(&restrictions, &overlaps, &obstructions);
    Ok(Diagnostics {
        restrictions,
        overlaps,
        obstructions,
        covers,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub engine_version: String,
    pub config_hash: String,
    /// Content hashes of the ingested store and the cover spec.
    pub input_hashes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub extractor: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub episodes: usize,
    pub events: usize,
    pub claims: usize,
    pub contexts: usize,
    pub overlap_contexts: usize,
    pub psrs: usize,
    pub restriction_checks: usize,
    pub compatible_restrictions: usize,
    pub divergent_restrictions: usize,
    pub compatible_overlaps: usize,
    pub tense_overlaps: usize,
    pub mean_glue_loss: f64,
    pub obstructions: usize,
}

/// The durable output of one build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelBundle {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub config: EngineConfig,
    pub cover_spec: CoverSpec,
    pub store: EpisodeStore,
    pub assignment: ContextAssignment,
    pub site: ContextSite,
    pub psrs: Vec<LocalPsr>,
    pub diagnostics: Diagnostics,
    pub summary: BundleSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingLayer>,
}

impl WorldModelBundle {
    pub fn psr(&self, context: &str) -> Option<&LocalPsr> {
        self.psrs.iter().find(|p| p.context_id == context)
    }

    /// Summary counts derived from the bundle contents.
    pub fn recompute_summary(&self) -> BundleSummary {
        let d = Diagnostics::summarize(
            &self.diagnostics.restrictions,
            &self.diagnostics.overlaps,
            &self.diagnostics.obstructions,
        );
        BundleSummary {
            episodes: self.store.episodes.len(),
            events: self.store.event_count(),
            claims: self.store.claims.len(),
            contexts: self.site.contexts.len(),
            overlap_contexts: self.site.overlaps.len(),
            psrs: self.psrs.len(),
            restriction_checks: self.diagnostics.restrictions.len(),
            compatible_restrictions: d.compatible_restrictions,
            divergent_restrictions: d.divergent_restrictions,
            compatible_overlaps: d.compatible_overlaps,
            tense_overlaps: d.tense_overlaps,
            mean_glue_loss: d.mean_glue_loss,
            obstructions: d.obstructions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Runs assignment, site construction, table estimation and diagnostics.
pub fn build_world(
    store: EpisodeStore,
    cover_spec: CoverSpec,
    config: &EngineConfig,
) -> Result<WorldModelBundle> {
    config.validate().stage("config")?;
    if store.event_count() == 0 {
        return Err(ToposError::EmptyInput("episode store".into())).stage("ingest");
    }
    let assignment = assign_contexts(&store, &cover_spec, config.max_contexts).stage("assign")?;
    let site = build_site(&assignment, &cover_spec).stage("site")?;
    let psrs = build_psrs(&store, &site, &assignment, &config.smoothing).stage("psr")?;
    let diagnostics = run_diagnostics(&store, &site, &psrs, config).stage("diagnostics")?;
    let input_hashes = BTreeMap::from([
        (
            "store".to_string(),
            sha256_hex(&serde_json::to_vec(&store)?),
        ),
        (
            "cover_spec".to_string(),
            sha256_hex(&serde_json::to_vec(&cover_spec)?),
        ),
    ]);
    let mut bundle = WorldModelBundle {
        schema_version: SCHEMA_VERSION,
        metadata: RunMetadata {
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            input_hashes,
            timestamp: config.timestamp.clone(),
            extractor: config.extractor_meta.clone(),
        },
        config: config.clone(),
        cover_spec,
        store,
        assignment,
        site,
        psrs,
        diagnostics,
        summary: BundleSummary::default(),
        grounding: None,
    };
    bundle.summary = bundle.recompute_summary();
    Ok(bundle)
}

/// Loads the inputs named by a run config and builds the world.
pub fn build_from_config(cfg: &RunConfig) -> Result<(WorldModelBundle, ParseReport)> {
    let (store, spec, report) = load_inputs(cfg)?;
    Ok((build_world(store, spec, &cfg.engine)?, report))
}
