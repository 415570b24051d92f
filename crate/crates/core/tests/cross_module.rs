//! Checks that tie several modules together on the two-region closed form and the shipped
//! fixtures.

use std::path::PathBuf;

use afpo::analytic::{solve_zeta, Cara2Params};
use afpo::catsim::build_correlation;
use afpo::insurance::ScenarioClass;
use afpo::io::load_regions;
use afpo::mechanism::MechanismKind;
use afpo::pareto::{kkt_verify_allocations, support_grid, Participant, PiecewiseTaxRule, Weights};
use afpo::pipeline::{execute, RunConfig};
use afpo::solver::expected_participation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn baseline_rule() -> (afpo::analytic::Cara2Solution, PiecewiseTaxRule) {
    let sol = solve_zeta(&Cara2Params::baseline()).unwrap();
    let p = sol.params;
    let rule = PiecewiseTaxRule::new(
        Weights::new(vec![sol.alpha1, sol.alpha2]).unwrap(),
        vec![Participant::cara(p.gamma1, p.w1).unwrap(), Participant::cara(p.gamma2, p.w2).unwrap()],
    )
    .unwrap();
    (sol, rule)
}

#[test]
fn closed_form_rule_satisfies_kkt() {
    let (sol, rule) = baseline_rule();
    let grid = support_grid(&rule, 1000);
    let report = kkt_verify_allocations(&rule, &grid, |s| Ok(sol.evaluate(s)?.to_vec())).unwrap();
    assert!(report.passed(), "worst {}", report.worst);
    for s in grid {
        let a = sol.evaluate(s).unwrap();
        let b = rule.evaluate(s).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9, "s={s}: {a:?} vs {b:?}");
    }
}

#[test]
fn histogram_estimate_of_the_closed_form_is_fair() {
    let (sol, rule) = baseline_rule();
    let p = sol.params;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = p.total_wealth();
    let samples: Vec<f64> = (0..1_000_000)
        .map(|_| if rng.random::<f64>() < p.p0 { 0.0 } else { w * rng.random::<f64>() })
        .collect();
    let e = expected_participation(&samples, &rule, 200).unwrap();
    assert!((e[0] - 1.8).abs() <= 0.02, "E[T1] = {}", e[0]);
    assert!((e[1] - 4.0).abs() <= 0.02, "E[T2] = {}", e[1]);
}

#[test]
fn grid_fixture_repair_is_small() {
    let regions = load_regions(&fixture("regions_212.csv")).unwrap();
    let corr = build_correlation(&regions, None).unwrap();
    assert!(corr.min_eigenvalue() >= afpo::catsim::MIN_EIGENVALUE);
    assert!(corr.repair_delta_relative < 0.05, "relative repair {}", corr.repair_delta_relative);
}

#[test]
fn shipped_configs_raise_no_enrichment_flags() {
    for n in [2, 3, 50, 212] {
        let mut cfg = RunConfig::load(&fixture(&format!("run_{n}.json"))).unwrap();
        cfg.mechanisms = vec![MechanismKind::Baseline];
        let state = execute(&cfg, None).unwrap();
        assert_eq!(state.enrichment_flags, 0, "fixture {n}");
    }
}

/// In favorable years every premium exceeds the region's mean loss, yet the exponential
/// disutility still prefers insurance: single-region losses stay heavy-tailed when the aggregate
/// is small, and `e^x` at wealth scale is dominated by them. Both sign patterns are pinned.
#[test]
fn favorable_year_sign_pattern() {
    let cfg = RunConfig::load(&fixture("run_50.json")).unwrap();
    let state = execute(&cfg, None).unwrap();
    let row = |kind: MechanismKind, region: usize| {
        state
            .summary
            .iter()
            .find(|r| r.mechanism == kind && r.class == ScenarioClass::Favorable && r.region == region)
            .unwrap()
    };
    for (i, premium) in state.schedule.premiums.iter().enumerate() {
        assert!(*premium > 0.0);
        let ins = row(MechanismKind::TraditionalInsurance, i);
        let base = row(MechanismKind::Baseline, i);
        let outlay = ins.mean_outlay.unwrap() - base.mean_outlay.unwrap();
        let disutility = ins.mean_disutility.unwrap() - base.mean_disutility.unwrap();
        assert!(outlay > 0.0, "region {i}: outlay difference {outlay}");
        assert!(disutility < 0.0, "region {i}: disutility difference {disutility}");
    }
}
