use qbsde::drivers::{constant, pure_quadratic, step_family, zero, TerminalCondition};
use qbsde::kernel::{RandomSource, ScenarioBundle, ScenarioSpec, TimeGrid};
use qbsde::solver::{
    contraction_ok, exponential_transform_reference, gate_indices, nested_mc_oracle, solve_backward, solve_ladder,
    solve_problem, BasisSpec, LadderMode, OracleConfig, SolverConfig,
};
use qbsde::LabError;
use statrs::distribution::{ContinuousCDF, Normal};

fn bundle(steps: usize, paths: usize, seed: u64) -> ScenarioBundle {
    let g = TimeGrid::build(1.0, steps, &[]).unwrap();
    ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, paths), RandomSource::new(seed, 0)).unwrap()
}

fn abs_w() -> TerminalCondition {
    TerminalCondition::AbsAffine {
        intercept: 0.0,
        m: vec![1.0],
        orth: vec![],
    }
}

/// `log E[exp|W_1|] = log(2 Φ(1) e^{1/2})`.
fn abs_w_value() -> f64 {
    (2.0 * Normal::standard().cdf(1.0)).ln() + 0.5
}

#[test]
fn affine_reference_is_the_closed_form() {
    let b = bundle(10, 200, 1);
    let gamma = 2.0;
    let r = exponential_transform_reference(&b, gamma, &TerminalCondition::first_coordinate(), &BasisSpec::default())
        .unwrap();
    for i in 0..=10 {
        let t = b.grid().t(i);
        for p in 0..b.n_paths() {
            let want = b.m_at(i, p)[0] + 0.5 * gamma * (1.0 - t);
            assert!((r.y[i][p] - want).abs() < 1e-12);
        }
    }
    assert!(r.z.iter().flatten().all(|z| (z - 1.0).abs() < 1e-12));
}

#[test]
fn regression_and_reference_agree_on_abs_terminal() {
    let b = bundle(20, 40_000, 2);
    let basis = BasisSpec::Local { bins: 10, degree: 2 };
    let exact = abs_w_value();
    let r = exponential_transform_reference(&b, 1.0, &abs_w(), &basis).unwrap();
    let s = solve_backward(&b, &pure_quadratic(1.0).unwrap(), &abs_w(), &SolverConfig::with_basis(basis)).unwrap();
    assert!(r.y0.within(exact, 4.0, 0.01), "reference {:?} vs {exact}", r.y0);
    assert!(s.y0.within(exact, 4.0, 0.01), "regression {:?} vs {exact}", s.y0);
}

#[test]
fn linear_drivers_shift_by_the_integral() {
    let b = bundle(8, 500, 3);
    let xi = TerminalCondition::first_coordinate();
    let cfg = SolverConfig::default();
    let s0 = solve_backward(&b, &zero(), &xi, &cfg).unwrap();
    let s1 = solve_backward(&b, &constant(0.7), &xi, &cfg).unwrap();
    for i in 0..=8 {
        let gap = 0.7 * (1.0 - b.grid().t(i));
        for p in 0..b.n_paths() {
            assert!((s1.y[i][p] - s0.y[i][p] - gap).abs() < 1e-10);
        }
    }
    for (a, c) in s0.z.iter().flatten().zip(s1.z.iter().flatten()) {
        assert!((a - c).abs() < 1e-10);
    }
}

#[test]
fn explicit_and_implicit_schemes_agree_without_y_dependence() {
    let b = bundle(10, 5000, 4);
    let d = pure_quadratic(1.0).unwrap();
    let xi = TerminalCondition::first_coordinate();
    let imp = solve_backward(&b, &d, &xi, &SolverConfig::default()).unwrap();
    let exp = solve_backward(
        &b,
        &d,
        &xi,
        &SolverConfig {
            implicit: false,
            ..SolverConfig::default()
        },
    )
    .unwrap();
    assert!((imp.y0.mean - exp.y0.mean).abs() < 1e-10);
}

#[test]
fn fully_gated_problem_is_the_conditional_mean() {
    let b = bundle(6, 2000, 5);
    let xi = TerminalCondition::first_coordinate();
    let terminal = xi.values(&b).unwrap();
    let gate = vec![0; b.n_paths()];
    let s = solve_problem(&b, &pure_quadratic(1.0).unwrap(), &terminal, Some(&gate), &SolverConfig::default(), "gated")
        .unwrap();
    let plain = solve_backward(&b, &zero(), &xi, &SolverConfig::default()).unwrap();
    assert!((s.y0.mean - plain.y0.mean).abs() < 1e-10);
}

#[test]
fn gates_respect_the_level() {
    let b = bundle(10, 4, 6);
    let d = step_family(2.0).unwrap();
    for level in [0.0, 0.25, 1.0, 10.0] {
        let (gate, l1) = gate_indices(&b, &d, level);
        for (g, a) in gate.iter().zip(&l1) {
            assert!(*a <= level + 1e-12);
            assert!(*g <= 10);
        }
    }
}

#[test]
fn ladder_is_monotone_and_converges() {
    let b = bundle(20, 20_000, 7);
    let basis = BasisSpec::Local { bins: 10, degree: 2 };
    let cfg = SolverConfig::with_basis(basis);
    let d = pure_quadratic(1.0).unwrap();
    let lad = solve_ladder(&b, &d, &abs_w(), &[0.5, 1.0, 2.0, 8.0], LadderMode::Upper, &cfg).unwrap();
    let full = solve_backward(&b, &d, &abs_w(), &cfg).unwrap();
    assert!(lad.monotonicity.fraction < 1e-3, "{:?}", lad.monotonicity);
    let y0: Vec<f64> = lad.fields.iter().map(|f| f.y0.mean).collect();
    assert!(y0.windows(2).all(|w| w[0] <= w[1] + 1e-9), "{y0:?}");
    let top = lad.fields.last().unwrap();
    assert!((top.y0.mean - full.y0.mean).abs() < 3.0 * (top.y0.se.powi(2) + full.y0.se.powi(2)).sqrt() + 1e-9);
}

#[test]
fn ladder_rejects_bad_inputs() {
    let b = bundle(4, 10, 8);
    let d = pure_quadratic(1.0).unwrap();
    let cfg = SolverConfig::default();
    assert!(solve_ladder(&b, &d, &abs_w(), &[], LadderMode::Upper, &cfg).is_err());
    assert!(solve_ladder(&b, &d, &abs_w(), &[2.0, 1.0], LadderMode::Upper, &cfg).is_err());
    let signed = TerminalCondition::first_coordinate();
    assert!(solve_ladder(&b, &d, &signed, &[1.0], LadderMode::Upper, &cfg).is_err());
    assert!(solve_ladder(&b, &d, &signed, &[1.0, 2.0], LadderMode::Double { lower: 1.0 }, &cfg).is_ok());
}

#[test]
fn oracle_matches_closed_forms() {
    let b = bundle(2, 3, 9);
    let xi = TerminalCondition::first_coordinate();
    let cfg = OracleConfig::new(200, RandomSource::new(10, 0));
    let o = nested_mc_oracle(&b, &constant(0.5), &xi, &cfg).unwrap();
    assert!(o.y0.within(0.5, 4.0, 1e-9), "{:?}", o.y0);
    let o = nested_mc_oracle(&b, &pure_quadratic(1.0).unwrap(), &xi, &cfg).unwrap();
    assert!(o.y0.within(0.5, 4.0, 0.01), "{:?}", o.y0);
    let z0 = o.z[0][0];
    // the root Z of a 200-branch oracle has a spread of about 0.12
    assert!((z0 - 1.0).abs() < 0.5, "z0 = {z0}");
}

#[test]
fn oracle_refuses_deep_grids() {
    let b = bundle(4, 1, 1);
    let cfg = OracleConfig::new(10, RandomSource::new(1, 0));
    let e = nested_mc_oracle(&b, &zero(), &TerminalCondition::Constant(0.0), &cfg).unwrap_err();
    assert!(matches!(e, LabError::InvalidArgument(_)));
}

#[test]
fn contraction_constraint() {
    assert!(contraction_ok(1.0, 0.25).is_ok());
    assert!(contraction_ok(1.2, 0.5).is_err());
}

#[test]
fn solutions_are_deterministic() {
    let b = bundle(5, 1000, 11);
    let d = pure_quadratic(1.0).unwrap();
    let a = solve_backward(&b, &d, &abs_w(), &SolverConfig::default()).unwrap();
    let c = solve_backward(&b, &d, &abs_w(), &SolverConfig::default()).unwrap();
    assert_eq!(a, c);
}
