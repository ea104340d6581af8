//! Pipeline-level checks on fixtures: shape, determinism, identity
//! no-ops, shared-cell counts, atlas and persistent state.

mod common;

use std::collections::BTreeSet;

use common::{build, fixture};
use topos_core::atlas::{
    build_atlas, diff_worlds, persist_state, read_run, write_run, Recommendation,
};
use topos_core::intervene::{run_intervention, InterventionSpec};
use topos_core::model::ingest::parse_episodes_jsonl;
use topos_core::model::{CoverSpec, EpisodeStore};
use topos_core::pipeline::{build_world, EngineConfig, WorldModelBundle};

#[test]
fn ocean_shape() {
    let b = build("ocean");
    let s = &b.summary;
    assert_eq!(s.episodes, 11);
    assert_eq!(s.contexts, 12);
    assert_eq!(s.psrs, s.contexts);
    assert_eq!(s.restriction_checks, s.psrs - 1);
    assert!(b
        .diagnostics
        .restrictions
        .iter()
        .all(|r| r.source == b.site.root));
    assert_eq!(b.recompute_summary(), b.summary);
}

#[test]
fn rerun_is_bitwise_identical() {
    for case in ["ocean", "microplastics", "larval"] {
        let (a, b) = (build(case), build(case));
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(diff_worlds(&a, &b, 0.05).is_empty());
        let (aa, ab) = (
            build_atlas(&a, &a.config.atlas),
            build_atlas(&b, &b.config.atlas),
        );
        assert_eq!(
            serde_json::to_string(&aa).unwrap(),
            serde_json::to_string(&ab).unwrap()
        );
    }
}

#[test]
fn identity_intervention_is_a_no_op() {
    for case in ["ocean", "indus", "larval"] {
        let base = build(case);
        let run = run_intervention(&base, &InterventionSpec::identity(), &fixture(case)).unwrap();
        assert!(run.diff.is_empty(), "{case}");
        assert_eq!(
            run.bundle.to_json().unwrap(),
            base.to_json().unwrap(),
            "{case}"
        );
        assert_eq!(run.probe.modified_cells, 0);
    }
}

fn chain_world(contexts: &[(&str, usize)]) -> WorldModelBundle {
    let mut lines = Vec::new();
    for (ctx, n) in contexts {
        let events: Vec<String> = (0..*n)
            .map(|i| {
                format!(
                    r#"{{"actor":"{ctx}_a{i}","action":"x","observation":"{ctx}_o{i}","relation":"increases","provenance":"{ctx}{i}"}}"#
                )
            })
            .collect();
        lines.push(format!(
            r#"{{"id":"{ctx}","source_doc":"d","metadata":{{"ctx":"{ctx}"}},"events":[{}]}}"#,
            events.join(",")
        ));
    }
    let (episodes, _) = parse_episodes_jsonl(&lines.join("\n")).unwrap();
    let mut store = EpisodeStore {
        episodes,
        ..Default::default()
    };
    store.synthesize_stubs();
    let spec = CoverSpec::from_json(
        r#"{"rules":[{"kind":"catch_all"},{"kind":"per_value","field":"metadata.ctx"}]}"#,
    )
    .unwrap();
    build_world(store, spec, &EngineConfig::default()).unwrap()
}

#[test]
fn root_restriction_shared_cells_match_local_grid() {
    let b = chain_world(&[("big", 45), ("mid", 30), ("small", 3)]);
    for r in &b.diagnostics.restrictions {
        let psr = b.psr(&r.target).unwrap();
        assert_eq!(r.shared_cells, psr.histories.len() * psr.tests.len());
    }
    let shared = |ctx: &str| {
        b.diagnostics
            .restrictions
            .iter()
            .find(|r| r.target == ctx)
            .unwrap()
            .shared_cells
    };
    assert_eq!(shared("big"), 2025);
    assert_eq!(shared("mid"), 900);
}

#[test]
fn atlas_and_state_round_trip_through_run_dir() {
    let b = build("larval");
    let atlas = build_atlas(&b, &b.config.atlas);
    let state = persist_state(&b, None, Some("parent".into())).unwrap();
    assert_eq!(state.focus, "larva");
    assert_ne!(state.recommendation, Recommendation::Blocked);
    let regions: usize = atlas.regions.iter().map(|r| r.context_count).sum();
    assert_eq!(regions, b.site.non_root().count());
    let stubbed: Vec<_> = atlas
        .provenance_index
        .values()
        .flatten()
        .filter(|r| r.stub)
        .map(|r| r.id.clone())
        .collect();
    assert_eq!(stubbed, vec!["larval:juvenile_0:0".to_string()]);
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    write_run(&run, &b, &atlas, &state).unwrap();
    let snap = read_run(&run).unwrap();
    assert_eq!(snap.bundle, b);
    assert_eq!(snap.atlas, atlas);
    assert_eq!(snap.state.parent.as_deref(), Some("parent"));
}

#[test]
fn ocean_query_core_region() {
    let b = build("ocean");
    let atlas = build_atlas(&b, &b.config.atlas);
    assert_eq!(atlas.regions[0].name, "core");
    let core: BTreeSet<&str> = atlas.regions[0]
        .contexts
        .iter()
        .map(String::as_str)
        .collect();
    assert_eq!(core, BTreeSet::from(["coral", "plankton"]));
    assert_eq!(atlas.regions.last().unwrap().context_count, 9);
    assert_eq!(atlas.spine.len(), 5);
}
