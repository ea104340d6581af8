#![allow(dead_code)]

use std::path::PathBuf;

use topos_core::intervene::{run_intervention, InterventionRun, InterventionSpec};
use topos_core::pipeline::{build_from_config, RunConfig, WorldModelBundle};

pub fn fixture(case: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(case)
}

pub fn build(case: &str) -> WorldModelBundle {
    let cfg = RunConfig::load(&fixture(case).join("config.json")).unwrap();
    build_from_config(&cfg).unwrap().0
}

pub fn intervene(case: &str) -> (WorldModelBundle, InterventionRun) {
    let base = build(case);
    let dir = fixture(case);
    let spec = InterventionSpec::from_json(
        &std::fs::read_to_string(dir.join("intervention.json")).unwrap(),
    )
    .unwrap();
    let run = run_intervention(&base, &spec, &dir).unwrap();
    (base, run)
}
