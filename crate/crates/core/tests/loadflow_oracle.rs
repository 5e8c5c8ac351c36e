mod common;

use common::{random_feeder, random_loads, rng, two_node_voltage};
use feeder_envelope::loadflow::substation_injection;
use feeder_envelope::{
    check_admissible, residuals, solve_loadflow, Branch, BranchLimits, FeederModel, InjectionProfile,
    LoadFlowError, LoadFlowSettings, LoadFlowState, NodeLimits, Quantity,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn two_node(r: f64, x: f64) -> FeederModel {
    FeederModel::new(
        1.0,
        vec![(1, NodeLimits { vmin: 0.9, vmax: 1.1 })],
        vec![Branch { from: 0, to: 1, r, x, limits: BranchLimits::unbounded() }],
    )
    .unwrap()
    .order_radial()
}

fn losses(model: &FeederModel, state: &LoadFlowState) -> (f64, f64) {
    model
        .branches()
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(p, q), (j, b)| (p + b.r * state.l[j], q + b.x * state.l[j]))
}

#[test]
fn two_node_matches_high_precision_root() {
    // root of the scalar branch equation, 40 digits
    let model = two_node(0.01, 0.02);
    let inj = InjectionProfile { p: vec![-0.5], q: vec![-0.2] };
    let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
    assert!((s.v[0] - 0.981_852_319_949_697_3).abs() < 1e-12);
    assert!((s.l[0] - 0.295_360_100_605_412_2).abs() < 1e-12);
    assert!((s.v[0] - two_node_voltage(1.0, 0.01, 0.02, -0.5, -0.2)).abs() < 1e-12);
}

#[test]
fn no_load_gives_flat_profile() {
    let model = random_feeder(&mut rng(3), 15);
    let s = solve_loadflow(&model, &InjectionProfile::zeros(15), &LoadFlowSettings::default()).unwrap();
    assert_eq!(s, LoadFlowState { iterations: s.iterations, ..LoadFlowState::flat(&model) });
}

#[test]
fn light_load_converges_fast_with_small_residual() {
    let mut r = rng(21);
    for _ in 0..50 {
        let model = random_feeder(&mut r, 20);
        let inj = random_loads(&mut r, &model, 0.01);
        let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
        assert!(s.converged);
        assert!(s.iterations <= 50, "{} iterations", s.iterations);
        assert!(residuals(&model, &s, &inj).max < 1e-8);
    }
}

#[test]
fn losses_and_substation_balance() {
    let mut r = rng(22);
    for _ in 0..50 {
        let model = random_feeder(&mut r, 25);
        let inj = random_loads(&mut r, &model, 0.05);
        let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
        let (ps, qs) = substation_injection(&model, &s);
        let (lp, lq) = losses(&model, &s);
        let load_p: f64 = -inj.p.iter().sum::<f64>();
        let load_q: f64 = -inj.q.iter().sum::<f64>();
        assert!((ps - load_p - lp).abs() < 1e-8);
        assert!((qs - load_q - lq).abs() < 1e-8);
        assert!(s.l.iter().all(|&l| l >= 0.0));
    }
}

#[test]
fn exact_voltage_never_exceeds_lossless_model() {
    let mut r = rng(23);
    for _ in 0..30 {
        let model = random_feeder(&mut r, 20);
        let m = model.build_sensitivities().unwrap();
        let inj = random_loads(&mut r, &model, 0.05);
        let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
        let lin = m.voltages(
            &DVector::from_column_slice(&inj.p),
            &DVector::from_column_slice(&inj.q),
            &DVector::zeros(20),
        );
        for j in 0..20 {
            assert!(s.v[j] <= lin[j] + 1e-12);
        }
        // with the exact currents the linear operators reproduce the state
        let l = DVector::from_column_slice(&s.l);
        let v = m.voltages(&DVector::from_column_slice(&inj.p), &DVector::from_column_slice(&inj.q), &l);
        for j in 0..20 {
            assert!((v[j] - s.v[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn heavy_load_collapses() {
    let model = two_node(0.1, 0.2);
    let inj = InjectionProfile { p: vec![-5.0], q: vec![-3.0] };
    let err = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap_err();
    assert!(matches!(err, LoadFlowError::VoltageCollapse { .. } | LoadFlowError::NotConverged { .. }));
}

#[test]
fn admissibility_reports_user_labels() {
    let model = feeder_envelope::datasets::feeder13();
    let mut inj = InjectionProfile::zeros(12);
    let node9 = model.internal_index(9).unwrap();
    inj.p[node9 - 1] = 0.8;
    let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
    let v = check_admissible(&model, &s, 1e-6);
    assert!(v.iter().any(|v| v.quantity == Quantity::RealFlow && v.element == 9), "{v:?}");
    assert!(check_admissible(&model, &LoadFlowState::flat(&model), 0.0).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn residual_below_tolerance(seed in any::<u64>(), n in 1usize..30, budget in 0.001f64..0.08) {
        let mut r = rng(seed);
        let model = random_feeder(&mut r, n);
        let inj = random_loads(&mut r, &model, budget);
        let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
        prop_assert!(residuals(&model, &s, &inj).max < 1e-8);
    }

    #[test]
    fn two_node_matches_bisection(r in 0.001f64..0.05, x in 0.001f64..0.05, p in -1.0f64..1.0, q in -1.0f64..1.0) {
        let model = two_node(r, x);
        let inj = InjectionProfile { p: vec![p], q: vec![q] };
        let s = solve_loadflow(&model, &inj, &LoadFlowSettings::default()).unwrap();
        prop_assert!((s.v[0] - two_node_voltage(1.0, r, x, p, q)).abs() < 1e-10);
    }
}
