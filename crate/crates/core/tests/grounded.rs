//! Grounded counterfactuals on the four fixture substrates, checked
//! against oracle values computed independently from the CSV files.

mod common;

use approx::assert_abs_diff_eq;
use common::intervene;
use topos_core::atlas::drift::{Change, TopologyItem};

#[test]
fn microplastics_scale_map() {
    let (base, run) = intervene("microplastics");
    let s = run.substrate.as_ref().unwrap();
    assert_abs_diff_eq!(s.details["factor"], 0.0940, epsilon = 1e-4);
    assert_abs_diff_eq!(s.details["suppressed_fraction"], 0.9060, epsilon = 5e-4);
    assert_abs_diff_eq!(s.baseline, 0.03914, epsilon = 1e-9);
    assert_abs_diff_eq!(s.counterfactual, 0.00368, epsilon = 1e-5);
    assert_abs_diff_eq!(s.details["drop"], 0.03546, epsilon = 1e-5);
    assert_abs_diff_eq!(s.counterfactual, 0.003679862512816725, epsilon = 1e-12);

    assert_eq!(base.summary.events, 11);
    assert_eq!(base.summary.psrs, 8);
    assert_eq!(base.summary.restriction_checks, 7);
    assert_eq!(run.outcome.modified_claims, 6);
    let b = &run.bundle;
    assert_eq!(
        (
            b.summary.events,
            b.summary.psrs,
            b.summary.restriction_checks
        ),
        (11, 8, 7)
    );
    let g = b.grounding.as_ref().unwrap();
    for ctx in [
        "counterfactual_white_mnp_optics",
        "counterfactual_mnp_direct_radiative_forcing",
        "counterfactual_regional_mnp_forcing_hotspots",
    ] {
        assert!(
            g.new_contexts.iter().any(|c| c == ctx),
            "{ctx} missing from {:?}",
            g.new_contexts
        );
    }
    let added = run
        .diff
        .topological
        .iter()
        .filter(|t| t.change == Change::Added && t.item == TopologyItem::Context)
        .count();
    assert_eq!(added, 3);
    assert!(!run
        .bundle
        .store
        .events()
        .any(|e| e.actor == "regional_forcing_hotspots"));
}

#[test]
fn indus_index_substitution() {
    let (base, run) = intervene("indus");
    let s = run.substrate.as_ref().unwrap();
    assert_abs_diff_eq!(s.details["mean_anomaly_pct"], -8.49, epsilon = 1e-9);
    assert_abs_diff_eq!(s.baseline, 91.51, epsilon = 1e-9);
    assert_abs_diff_eq!(s.counterfactual, 100.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s.effect.absolute, 8.49, epsilon = 1e-9);
    assert_abs_diff_eq!(s.effect.relative, 0.0928, epsilon = 2e-4);
    assert_eq!(s.details["stations"], 18.0);

    assert_eq!(base.summary.events, 5);
    assert_eq!(run.outcome.modified_events, 3);
    let b = &run.bundle;
    assert_eq!(b.summary.events, 5);
    assert_eq!(b.summary.psrs, 6);
    assert_eq!(b.summary.restriction_checks, 5);
    assert!(b.store.events().any(|e| e.key()
        == "counterfactual_restored_monsoon_forcing|increases|vic_water_availability_proxy"));
}

#[test]
fn sachs_group_mean_and_co_shift() {
    let (_, run) = intervene("sachs");
    let s = run.substrate.as_ref().unwrap();
    assert_abs_diff_eq!(s.effect.absolute, 1.025, epsilon = 1e-3);
    assert_abs_diff_eq!(s.effect.relative, 0.258, epsilon = 1e-3);
    assert_abs_diff_eq!(s.baseline, 3.968, epsilon = 1e-9);
    assert_eq!(s.co_shift.len(), 2);
    assert_eq!(
        (s.co_shift[0].from.as_str(), s.co_shift[0].to.as_str()),
        ("PKA", "Akt")
    );
    assert_abs_diff_eq!(s.co_shift[0].score, 1.25, epsilon = 1e-9);
    assert_abs_diff_eq!(s.co_shift[1].score, 1.06, epsilon = 1e-9);
    assert!(s.co_shift[0].score > s.co_shift[1].score);
    assert_eq!(run.outcome.per_rule, vec![30]);
    assert_eq!(run.outcome.appended_events, 1);
    let unit_id = run.bundle.store.episodes.last().unwrap().events[0]
        .provenance
        .clone();
    assert!(unit_id.starts_with("substrate:"));
    assert!(!run.bundle.store.evidence[&unit_id].stub);
}

#[test]
fn singing_mice_fraction_attenuation() {
    let (_, run) = intervene("singing_mice");
    let s = run.substrate.as_ref().unwrap();
    assert_abs_diff_eq!(s.baseline, 0.210, epsilon = 1e-12);
    assert_abs_diff_eq!(s.counterfactual, 0.059, epsilon = 1e-12);
    assert_abs_diff_eq!(-s.effect.absolute, 0.151, epsilon = 1e-12);
    let rel = -s.effect.relative;
    assert!((0.712..=0.722).contains(&rel), "{rel}");
    let b = &run.bundle;
    assert_eq!(
        (
            b.summary.events,
            b.summary.psrs,
            b.summary.restriction_checks
        ),
        (5, 6, 5)
    );
    let g = b.grounding.as_ref().unwrap();
    assert_eq!(g.new_contexts.len(), 3);
    assert!(g
        .new_contexts
        .iter()
        .any(|c| c == "counterfactual_pag_vocal_motor_projection"));
}

#[test]
fn baseline_is_never_mutated() {
    let (base, run) = intervene("indus");
    assert_eq!(base, common::build("indus"));
    assert_ne!(base.metadata.input_hashes, run.bundle.metadata.input_hashes);
}
