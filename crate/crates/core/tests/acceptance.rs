//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit when
//! any criterion fails. Runs without the test harness so every line is
//! printed even when earlier criteria fail.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{build, fixture, intervene};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use topos_core::atlas::{build_atlas, diff_worlds, persist_state, write_run};
use topos_core::intervene::{run_intervention, InterventionSpec};
use topos_core::model::ingest::parse_episodes_jsonl;
use topos_core::model::{
    Context, ContextLevel, ContextSite, Cover, CoverSpec, EpisodeStore, Polarity,
};
use topos_core::pipeline::{build_world, EngineConfig, WorldModelBundle};
use topos_core::psr::{
    build_local_psr, estimate_cell, BackoffSources, BlendPolicy, LocalPsr, SmoothingConfig,
    SupportCounts,
};
use topos_core::sheaf::{
    default_overlap_weight, gluing_tension, restriction_check, shared_signature, try_glue,
    Classification, LambdaPolicy, OverlapStatus, Section, SectionCell, ToleranceConfig,
};
use topos_core::synthlab::{
    corpus_store, generate_corpus, score_recovery, ChainPlan, ClaimTemplate, DriftPlan,
    OverlapPlan, RegimePlan, RegimeSpec, SynthCorpus,
};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{name} = {got}, expected {want} ± {tol}"))
    }
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config.clone(),
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn under_a_second(t: Duration) -> std::result::Result<(), String> {
    if t < Duration::from_secs(1) {
        Ok(())
    } else {
        Err(format!("took {t:?}, limit 1 s"))
    }
}

fn timed_intervention(
    case: &str,
) -> (
    WorldModelBundle,
    topos_core::intervene::InterventionRun,
    Duration,
) {
    let base = build(case);
    let dir = fixture(case);
    let spec = InterventionSpec::from_json(
        &std::fs::read_to_string(dir.join("intervention.json")).unwrap(),
    )
    .unwrap();
    let t = Instant::now();
    let run = run_intervention(&base, &spec, &dir).unwrap();
    (base, run, t.elapsed())
}

fn microplastics() -> Check {
    let (_, run, t) = timed_intervention("microplastics");
    let s = run.substrate.as_ref().ok_or("no substrate result")?;
    close("factor", s.details["factor"], 0.0940, 1e-4)?;
    close(
        "suppressed fraction",
        s.details["suppressed_fraction"],
        0.9060,
        5e-4,
    )?;
    close("baseline", s.baseline, 0.03914, 1e-9)?;
    close("counterfactual", s.counterfactual, 0.00368, 1e-5)?;
    close("drop", s.details["drop"], 0.03546, 1e-5)?;
    under_a_second(t)?;
    Ok(format!(
        "factor {:.4}, counterfactual {:.5}, drop {:.5}, {t:.0?}",
        s.details["factor"], s.counterfactual, s.details["drop"]
    ))
}

fn indus() -> Check {
    let (_, run, t) = timed_intervention("indus");
    let s = run.substrate.as_ref().ok_or("no substrate result")?;
    close("mean anomaly", s.details["mean_anomaly_pct"], -8.49, 1e-9)?;
    close("index", s.baseline, 91.51, 1e-9)?;
    close("effect", s.effect.absolute, 8.49, 1e-9)?;
    close("relative", s.effect.relative, 0.0928, 2e-4)?;
    ensure!(
        s.details["stations"] == 18.0,
        "expected 18 stations, got {}",
        s.details["stations"]
    );
    under_a_second(t)?;
    Ok(format!(
        "index {}, relative {:.4}, {t:.0?}",
        s.baseline, s.effect.relative
    ))
}

fn sachs() -> Check {
    let (_, run, t) = timed_intervention("sachs");
    let s = run.substrate.as_ref().ok_or("no substrate result")?;
    close("shift", s.effect.absolute, 1.025, 1e-3)?;
    close("relative", s.effect.relative, 0.258, 1e-3)?;
    ensure!(
        s.co_shift.len() == 2,
        "expected 2 co-shift scores, got {}",
        s.co_shift.len()
    );
    let (akt, erk) = (&s.co_shift[0], &s.co_shift[1]);
    ensure!(
        akt.from == "PKA" && akt.to == "Akt" && erk.to == "Erk" && akt.score > erk.score,
        "co-shift ordering {:?}",
        s.co_shift
    );
    close("PKA->Akt", akt.score, 1.25, 1e-9)?;
    close("PKA->Erk", erk.score, 1.06, 1e-9)?;
    under_a_second(t)?;
    Ok(format!(
        "shift {:.4}, relative {:.4}, co-shift {:.2} > {:.2}, {t:.0?}",
        s.effect.absolute, s.effect.relative, akt.score, erk.score
    ))
}

fn singing_mice() -> Check {
    let (_, run, t) = timed_intervention("singing_mice");
    let s = run.substrate.as_ref().ok_or("no substrate result")?;
    close("steg fraction", s.baseline, 0.210, 1e-12)?;
    close("mmus fraction", s.counterfactual, 0.059, 1e-12)?;
    close("attenuation", -s.effect.absolute, 0.151, 1e-12)?;
    let rel = -s.effect.relative;
    ensure!(
        (0.712..=0.722).contains(&rel),
        "relative attenuation {rel} outside [0.712, 0.722]"
    );
    under_a_second(t)?;
    Ok(format!(
        "attenuation {:.3}, relative {:.2}%, {t:.0?}",
        -s.effect.absolute,
        rel * 100.0
    ))
}

fn rebuild_bookkeeping() -> Check {
    let (_, run) = intervene("indus");
    let b = &run.bundle.summary;
    ensure!(
        run.outcome.modified_events == 3,
        "indus modified events {}",
        run.outcome.modified_events
    );
    ensure!(
        (b.events, b.psrs, b.restriction_checks) == (5, 6, 5),
        "indus rebuild {} events / {} PSRs / {} checks",
        b.events,
        b.psrs,
        b.restriction_checks
    );
    let (_, run) = intervene("microplastics");
    ensure!(
        run.outcome.modified_claims == 6,
        "microplastics modified claims {}",
        run.outcome.modified_claims
    );
    let g = run.bundle.grounding.as_ref().ok_or("no grounding layer")?;
    let want = [
        "counterfactual_mnp_direct_radiative_forcing",
        "counterfactual_regional_mnp_forcing_hotspots",
        "counterfactual_white_mnp_optics",
    ];
    let got: BTreeSet<&str> = g.new_contexts.iter().map(String::as_str).collect();
    ensure!(got == BTreeSet::from(want), "new contexts {got:?}");
    Ok("indus 3 events, 5/6/5; microplastics 6 claims, 3 counterfactual contexts".into())
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

fn psr_from_counts(
    id: &str,
    histories: Vec<String>,
    tests: Vec<String>,
    cells: BTreeMap<(usize, usize), f64>,
    alpha: f64,
) -> LocalPsr {
    let nt = tests.len();
    let counts = SupportCounts::from_parts(histories, tests, cells, None, BTreeMap::new());
    let prior = move |_: &str| 1.0 / nt as f64;
    let sources = BackoffSources {
        neighbors: vec![],
        corpus: None,
        prior: &prior,
    };
    let cfg = SmoothingConfig {
        alpha,
        blend_policy: BlendPolicy::SupportProportional,
        ..Default::default()
    };
    build_local_psr(id, &counts, &sources, 1.0, &cfg).unwrap()
}

fn keys(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|i| format!("{prefix}{i}|increases|o")).collect()
}

/// Root table over 60×60 tokens; a sub-context sees a slice of them.
fn grid_psr(id: &str, h: std::ops::Range<usize>, t: std::ops::Range<usize>) -> LocalPsr {
    let (hs, ts) = (keys("h", h), keys("t", t));
    let cells = (0..hs.len())
        .flat_map(|i| (0..ts.len()).map(move |j| ((i, j), 1.0)))
        .collect();
    psr_from_counts(id, hs, ts, cells, 1.0)
}

fn structural_shapes() -> Check {
    let b = chain_world(&[("big", 45), ("mid", 30)]);
    let mut seen = Vec::new();
    for r in &b.diagnostics.restrictions {
        let psr = b.psr(&r.target).ok_or("missing table")?;
        let grid = psr.histories.len() * psr.tests.len();
        ensure!(
            r.shared_cells == grid,
            "{}: {} shared cells vs {grid} grid cells",
            r.target,
            r.shared_cells
        );
        seen.push(r.shared_cells);
    }
    seen.sort();
    ensure!(seen == [900, 2025], "pipeline root restrictions {seen:?}");
    // The pipeline always yields square tables, so the 41×40 shape is
    // checked on estimator-built tables.
    let root = grid_psr("root", 0..60, 0..60);
    for (h, t, want) in [(45, 45, 2025), (41, 40, 1640), (30, 30, 900)] {
        let sub = grid_psr("v", 5..5 + h, 3..3 + t);
        let sig = shared_signature(&root, &sub).cells.len();
        let d = restriction_check(
            &root,
            &sub,
            LambdaPolicy::SupportConfidence,
            &ToleranceConfig::default(),
        );
        ensure!(
            sig == want && d.shared_cells == want,
            "{h}×{t}: signature {sig}, restriction {}",
            d.shared_cells
        );
    }
    Ok("2025, 1640, 900 shared cells".into())
}

fn counts_strategy() -> impl Strategy<Value = (Vec<Vec<u8>>, f64)> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(prop::collection::vec(0u8..8, c), r),
            0.01f64..50.0,
        )
    })
}

fn table_of(rows: &[Vec<u8>], alpha: f64) -> LocalPsr {
    let mut cells = BTreeMap::new();
    for (h, r) in rows.iter().enumerate() {
        for (t, v) in r.iter().enumerate() {
            if *v > 0 {
                cells.insert((h, t), *v as f64);
            }
        }
    }
    psr_from_counts(
        "u",
        keys("h", 0..rows.len()),
        keys("t", 0..rows[0].len()),
        cells,
        alpha,
    )
}

fn estimator_properties() -> Check {
    let mut r = runner(1000);
    let strategy = (counts_strategy(), 0u32..40, 0u32..40, 0.0f64..=1.0);
    r.run(&strategy, |((rows, alpha), n, extra, p0)| {
        let p = table_of(&rows, alpha);
        for i in 0..p.table.rows {
            let row = p.table.row(i);
            prop_assert!(
                row.iter().sum::<f64>() <= 1.0 + 1e-9,
                "row {i} sums above 1"
            );
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let limit = table_of(&rows, 1e9);
        let p_uniform = 1.0 / limit.tests.len() as f64;
        prop_assert!(
            limit
                .table
                .data
                .iter()
                .all(|v| (v - p_uniform).abs() < 1e-6),
            "no backoff to prior"
        );
        let mass = (n + extra) as f64;
        let before = estimate_cell(n as f64, mass, alpha, p0).unwrap();
        let after = estimate_cell(n as f64 + 1.0, mass + 1.0, alpha, p0).unwrap();
        prop_assert!(after >= before - 1e-15, "estimate fell with more support");
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    Ok("1000 cases: sub-normalized rows, prior limit, support monotonicity".into())
}

const ACTORS: [&str; 3] = ["a", "b", "c"];
const RELS: [&str; 3] = ["increases", "reduces", "causes"];

fn section_strategy(id: &'static str, min_support: u8) -> impl Strategy<Value = Section> {
    prop::collection::vec(
        (0usize..3, 0usize..3, 0usize..3, 0.0f64..1.0, min_support..6),
        1..8,
    )
    .prop_map(move |raw| {
        let mut cells = BTreeMap::new();
        for (a, r, o, v, s) in raw {
            let t = format!("{}|{}|{}", ACTORS[a], RELS[r], ACTORS[o]);
            cells.insert(
                (t.clone(), t),
                SectionCell {
                    value: v,
                    support: s as f64,
                    confidence: 0.9,
                    provenance: vec![],
                },
            );
        }
        Section {
            context_id: id.into(),
            cells,
            mean_confidence: 0.9,
            test_polarity: BTreeMap::new(),
            time_range: None,
        }
    })
}

fn site_with(members: &[&str]) -> ContextSite {
    let ctx = |id: &str, level| Context {
        id: id.into(),
        label: String::new(),
        level,
        metadata: BTreeMap::new(),
    };
    let mut contexts = vec![ctx("root", ContextLevel::Corpus)];
    contexts.extend(members.iter().map(|m| ctx(m, ContextLevel::Topic)));
    ContextSite {
        root: "root".into(),
        contexts,
        morphisms: Vec::new(),
        covers: vec![Cover {
            name: "root".into(),
            target: "root".into(),
            members: members.iter().map(|s| s.to_string()).collect(),
        }],
        overlaps: Vec::new(),
    }
}

fn sheaf_properties() -> Check {
    let tol = ToleranceConfig::default();

    runner(256)
        .run(&counts_strategy(), |(rows, alpha)| {
            let p = table_of(&rows, alpha);
            let d = restriction_check(&p, &p, LambdaPolicy::SupportConfidence, &tol);
            prop_assert_eq!((d.mean_gap, d.max_gap), (0.0, 0.0));
            Ok(())
        })
        .map_err(|e| format!("self restriction: {e}"))?;

    let perturbed = (
        section_strategy("a", 1),
        prop::collection::vec(any::<bool>(), 8),
        1e-3f64..0.5,
    );
    runner(256)
        .run(&perturbed, |(a, flips, shift)| {
            let mut b = Section {
                context_id: "b".into(),
                ..a.clone()
            };
            let mut changed = false;
            for (cell, flip) in b.cells.values_mut().zip(&flips) {
                if *flip {
                    cell.value = if cell.value + shift <= 1.0 {
                        cell.value + shift
                    } else {
                        cell.value - shift
                    };
                    changed = true;
                }
            }
            let (ov, total) =
                gluing_tension(&[a.clone(), b.clone()], &default_overlap_weight, &tol);
            prop_assert_eq!(
                total == 0.0,
                !changed,
                "tension {} with changed = {}",
                total,
                changed
            );
            if changed && shift > tol.eps_glue {
                prop_assert!(ov.iter().all(|o| o.status == OverlapStatus::Tense));
            }
            Ok(())
        })
        .map_err(|e| format!("tension/equality: {e}"))?;

    let triple = (
        section_strategy("a", 0),
        section_strategy("b", 0),
        section_strategy("c", 0),
    );
    runner(256)
        .run(&triple, |(a, b, c)| {
            let site = site_with(&["a", "b", "c"]);
            let parts = [a, b, c];
            let out = try_glue(&site, "root", &parts, &tol).unwrap();
            let union: BTreeSet<_> = parts.iter().flat_map(|s| s.cells.keys()).collect();
            let acc = &out.accounting;
            prop_assert_eq!(
                acc.compatible + acc.obstructed + acc.unsupported,
                union.len()
            );
            for (key, cell) in &out.section.cells {
                for s in &parts {
                    if let Some(local) = s.cells.get(key).filter(|l| l.support > 0.0) {
                        prop_assert!((cell.value - local.value).abs() <= tol.eps_glue + 1e-12);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| format!("glue accounting: {e}"))?;
    Ok("self-restriction zero, tension zero iff equal, glue-then-restrict, cell accounting".into())
}

fn tpl(cause: &str, effect: &str, support: usize) -> ClaimTemplate {
    ClaimTemplate {
        cause: cause.into(),
        effect: effect.into(),
        polarity: Polarity::Positive,
        support,
    }
}

fn regime_spec(seed: u64, conflict: bool, drift: bool) -> RegimeSpec {
    let regime = |name: &str, claims| RegimePlan {
        context: name.into(),
        metadata: BTreeMap::new(),
        claims,
    };
    RegimeSpec {
        seed,
        regimes: vec![
            regime("wet", vec![tpl("rain", "flow", 3 + seed as usize % 3)]),
            regime("dry", vec![tpl("heat", "evaporation", 4)]),
            regime(
                "cold",
                vec![tpl("frost", "cracking", 2 + seed as usize % 4)],
            ),
        ],
        overlaps: vec![OverlapPlan {
            cause: "dams".into(),
            effect: "sediment".into(),
            regimes: vec!["wet".into(), "dry".into(), "cold".into()],
            conflict,
            support: 3 + seed as usize % 2,
        }],
        chain: Some(ChainPlan {
            regime: "wet".into(),
            nodes: vec![
                "snow".into(),
                "melt".into(),
                "runoff".into(),
                "flood".into(),
            ],
            support: 5,
        }),
        drift: drift.then(|| DriftPlan {
            flips: vec![("heat".into(), "evaporation".into())],
        }),
        noise_rate: 0.0,
    }
}

fn synth_world(c: &SynthCorpus, epoch2: bool) -> WorldModelBundle {
    let store = match (&c.epoch2, epoch2) {
        (Some((e, v)), true) => corpus_store(e, v),
        _ => corpus_store(&c.episodes, &c.evidence),
    }
    .unwrap();
    build_world(store, c.cover_spec.clone(), &EngineConfig::default()).unwrap()
}

fn end_to_end_soundness() -> Check {
    const SEEDS: u64 = 20;
    for seed in 0..SEEDS {
        let agree = generate_corpus(&regime_spec(seed, false, false)).map_err(|e| e.to_string())?;
        let b = synth_world(&agree, false);
        ensure!(
            b.diagnostics.obstructions.is_empty(),
            "seed {seed}: agreement plan has {} obstructions",
            b.diagnostics.obstructions.len()
        );

        let conflict =
            generate_corpus(&regime_spec(seed, true, false)).map_err(|e| e.to_string())?;
        let b = synth_world(&conflict, false);
        let s = score_recovery(&b, None, &conflict.truth);
        ensure!(
            s.obstruction_recall == 1.0,
            "seed {seed}: obstruction recall {}",
            s.obstruction_recall
        );
        ensure!(
            s.contradiction_recall == 1.0,
            "seed {seed}: contradiction recall {}",
            s.contradiction_recall
        );
        let planted = ("dams".to_string(), "sediment".to_string());
        ensure!(
            b.diagnostics
                .obstructions
                .iter()
                .filter(|o| o.claim_pairs().contains(&planted))
                .all(|o| o.classification == Classification::Contradiction),
            "seed {seed}: planted conflict not classified as contradiction"
        );

        let drifting =
            generate_corpus(&regime_spec(seed, false, true)).map_err(|e| e.to_string())?;
        let (e1, e2) = (synth_world(&drifting, false), synth_world(&drifting, true));
        let d = diff_worlds(&e1, &e2, e1.config.atlas.eps_drift(&e1.config.tolerance));
        let s = score_recovery(&e2, Some(&d), &drifting.truth);
        ensure!(
            s.drift_recall == 1.0,
            "seed {seed}: drift recall {}",
            s.drift_recall
        );
    }
    Ok(format!("{SEEDS} seeds: agreement 0 obstructions, conflict recall 1.0 as contradiction, drift recall 1.0"))
}

const CASES: [&str; 7] = [
    "minimal",
    "ocean",
    "larval",
    "indus",
    "microplastics",
    "sachs",
    "singing_mice",
];

fn rerun_consistency() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for case in CASES {
        let (a, b) = (build(case), build(case));
        ensure!(
            a.to_json().unwrap() == b.to_json().unwrap(),
            "{case}: bundles differ"
        );
        ensure!(
            diff_worlds(&a, &b, a.config.atlas.eps_drift(&a.config.tolerance)).is_empty(),
            "{case}: diff not empty"
        );
        let mut files = Vec::new();
        for (n, bundle) in [("a", &a), ("b", &b)] {
            let dir = tmp.path().join(format!("{case}-{n}"));
            let atlas = build_atlas(bundle, &bundle.config.atlas);
            let state = persist_state(bundle, None, None).unwrap();
            write_run(&dir, bundle, &atlas, &state).unwrap();
            let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
                .unwrap()
                .flatten()
                .map(|e| {
                    (
                        e.file_name().into_string().unwrap(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            entries.sort();
            files.push(entries);
        }
        ensure!(files[0] == files[1], "{case}: run directories differ");
    }
    Ok(format!(
        "{} fixtures bitwise identical, empty diffs",
        CASES.len()
    ))
}

fn identity_no_ops() -> Check {
    for case in CASES {
        let base = build(case);
        let run = run_intervention(&base, &InterventionSpec::identity(), &fixture(case))
            .map_err(|e| e.to_string())?;
        ensure!(
            run.diff.is_empty(),
            "{case}: identity diff has {} entries",
            run.diff.entry_count()
        );
        ensure!(
            run.bundle.to_json().unwrap() == base.to_json().unwrap(),
            "{case}: identity rebuild differs"
        );
        ensure!(
            run.probe.modified_cells == 0,
            "{case}: probe modified {} cells",
            run.probe.modified_cells
        );
    }
    Ok(format!("{} fixtures", CASES.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("grounded arithmetic: microplastics", microplastics),
        ("grounded arithmetic: indus", indus),
        ("grounded arithmetic: sachs", sachs),
        ("grounded arithmetic: singing mice", singing_mice),
        ("rebuild bookkeeping", rebuild_bookkeeping),
        ("structural shape checks", structural_shapes),
        ("property suite: estimator", estimator_properties),
        ("property suite: sheaf", sheaf_properties),
        ("property suite: end-to-end soundness", end_to_end_soundness),
        ("rerun consistency", rerun_consistency),
        ("identity interventions", identity_no_ops),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let start = Instant::now();
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    let total = start.elapsed();
    if total < Duration::from_secs(60) {
        println!("PASS  primary suite runtime: {total:.1?} (limit 60 s)");
    } else {
        failed += 1;
        println!("FAIL  primary suite runtime: {total:.1?} (limit 60 s)");
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
