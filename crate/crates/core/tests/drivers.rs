use qbsde::drivers::{
    constant, entropic, exponential_moment_estimate, make_builtin, ordering_evidence, power_utility, pure_quadratic,
    scaled, step_family, validate_assumptions, zero, ConstraintSet, DriverOptions, OptionValue, SamplerPlan,
    TerminalCondition, BUILTIN_NAMES,
};
use qbsde::kernel::{RandomSource, ScenarioBundle, ScenarioSpec, TimeGrid};
use qbsde::LabError;
use statrs::distribution::{ContinuousCDF, Normal};

fn bundle(dim: usize) -> ScenarioBundle {
    let g = TimeGrid::build(1.0, 4, &[0.5]).unwrap();
    ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(dim, 0, 16), RandomSource::new(2, 0)).unwrap()
}

fn opts(pairs: &[(&str, OptionValue)]) -> DriverOptions {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[test]
fn registry_builds_every_name() {
    let cases = [
        ("zero", opts(&[])),
        ("constant", opts(&[("a", OptionValue::Number(0.5))])),
        ("step_family", opts(&[("n", OptionValue::Number(2.0))])),
        ("pure_quadratic", opts(&[("gamma", OptionValue::Number(1.0))])),
        (
            "power_utility",
            opts(&[
                ("p", OptionValue::Number(0.5)),
                ("lambda", OptionValue::Numbers(vec![0.4])),
                ("constraint", OptionValue::Text("box".into())),
                ("lo", OptionValue::Numbers(vec![-1.0])),
                ("hi", OptionValue::Numbers(vec![1.0])),
            ]),
        ),
        (
            "entropic",
            opts(&[("lambda_s", OptionValue::Number(0.3)), ("lambda_amp", OptionValue::Number(0.2))]),
        ),
    ];
    for (name, o) in &cases {
        assert!(BUILTIN_NAMES.contains(name));
        make_builtin(name, o).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn registry_reports_missing_and_unknown_options() {
    let e = make_builtin("step_family", &opts(&[])).unwrap_err();
    assert!(e.to_string().contains("requires option `n`"), "{e}");
    let e = make_builtin("zero", &opts(&[("n", OptionValue::Number(1.0))])).unwrap_err();
    assert!(e.to_string().contains('n'), "{e}");
    assert!(make_builtin("no_such_driver", &opts(&[])).is_err());
}

#[test]
fn closed_form_drivers_evaluate_as_written() {
    let b = bundle(2);
    let at = b.point(2, 3);
    let z = [0.7, -1.2];
    assert_eq!(zero().eval(&at, 1.0, &z), 0.0);
    assert_eq!(constant(0.3).eval(&at, 1.0, &z), 0.3);
    let g = 1.5;
    let want = 0.5 * g * (0.49 + 1.44);
    assert!((pure_quadratic(g).unwrap().eval(&at, 0.0, &z) - want).abs() < 1e-12);
    let ls = 0.3 + 0.2 * at.m[0].tanh();
    let want = 0.5 * (ls * ls - 2.0 * ls * z[0] - z[1] * z[1]);
    assert!((entropic(0.3, 0.2).unwrap().eval(&at, 0.0, &z) - want).abs() < 1e-12);
    let s = scaled(&pure_quadratic(1.0).unwrap(), 2.0).unwrap();
    assert!((s.eval(&at, 0.0, &z) - 2.0 * 0.5 * (0.49 + 1.44)).abs() < 1e-12);
}

#[test]
fn step_family_switches_off_at_one_over_n() {
    let g = TimeGrid::build(2.0, 8, &[0.25]).unwrap();
    let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 2), RandomSource::new(1, 0)).unwrap();
    let d = step_family(4.0).unwrap();
    for i in 0..g.steps() {
        let f = d.eval(&b.point(i, 0), 0.0, &[0.0]);
        assert_eq!(f, if g.t(i) < 0.25 { 4.0 } else { 0.0 }, "t = {}", g.t(i));
    }
}

/// Brute-force `min_{ν ∈ C} |ν − u|²` over a fine grid on `[-3, 3]²`.
fn brute_dist_sq(set: &ConstraintSet, u: &[f64]) -> f64 {
    let steps = 600;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            let v = [-3.0 + 6.0 * i as f64 / steps as f64, -3.0 + 6.0 * j as f64 / steps as f64];
            if set.contains(&v) {
                best = best.min((v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2));
            }
        }
    }
    best
}

#[test]
fn constraint_distance_matches_brute_force() {
    let sets = [
        ConstraintSet::Box {
            lo: vec![-1.0, -0.5],
            hi: vec![1.0, 2.0],
        },
        ConstraintSet::HalfSpace {
            normal: vec![1.0, 1.0],
            offset: 0.5,
        },
        ConstraintSet::Polytope {
            normals: vec![vec![1.0, -1.0], vec![0.0, 1.0]],
            offsets: vec![1.0, 1.0],
            lo: vec![-2.0, -2.0],
            hi: vec![2.0, 2.0],
        },
    ];
    let points = [[2.0, 2.5], [-1.7, 0.3], [0.2, 0.1], [1.5, -1.5]];
    for set in &sets {
        for u in &points {
            let exact = set.dist_sq(u, None);
            let brute = brute_dist_sq(set, u);
            // grid spacing 0.01 bounds the brute-force excess
            assert!(exact <= brute + 1e-9 && brute - exact < 0.05, "{set:?} at {u:?}: {exact} vs {brute}");
        }
    }
}

#[test]
fn power_utility_requires_zero_strategy() {
    let set = ConstraintSet::Box {
        lo: vec![0.5],
        hi: vec![1.0],
    };
    assert!(power_utility(0.5, vec![0.4], set).is_err());
    assert!(power_utility(1.0, vec![0.4], ConstraintSet::Box { lo: vec![-1.0], hi: vec![1.0] }).is_err());
}

#[test]
fn unconstrained_power_utility_is_quadratic() {
    let b = bundle(1);
    let inf = ConstraintSet::Box {
        lo: vec![f64::NEG_INFINITY],
        hi: vec![f64::INFINITY],
    };
    let (p, l) = (0.5, 0.4);
    let d = power_utility(p, vec![l], inf).unwrap();
    for z in [-1.0, 0.0, 0.3, 2.0] {
        let u: f64 = (z - l) / (1.0 - p);
        let want = 0.5 * p * (1.0 - p) * u * u + 0.5 * z * z;
        assert!((d.eval(&b.point(0, 0), 0.0, &[z]) - want).abs() < 1e-12);
    }
}

#[test]
fn declared_parameters_hold_for_bundled_drivers() {
    let plan = SamplerPlan {
        probes: 2000,
        ..SamplerPlan::default()
    };
    let one = bundle(1);
    let two = bundle(2);
    let box1 = ConstraintSet::Box {
        lo: vec![-1.0],
        hi: vec![1.0],
    };
    for d in [
        zero(),
        constant(2.0),
        step_family(2.0).unwrap(),
        pure_quadratic(3.0).unwrap(),
        power_utility(0.5, vec![0.4], box1.clone()).unwrap(),
        power_utility(-1.0, vec![0.4], box1).unwrap(),
    ] {
        let r = validate_assumptions(&d, &one, &plan);
        assert!(r.is_clean(), "{}: {:?}", d.name, r.clauses);
    }
    let r = validate_assumptions(&entropic(0.3, 0.2).unwrap(), &two, &plan);
    assert!(r.is_clean(), "{:?}", r.clauses);
    let r = validate_assumptions(&step_family(3.0).unwrap(), &one, &plan);
    assert_eq!(r.clause("kinks_on_grid").unwrap().violations, 1);
}

#[test]
fn understated_gamma_is_flagged() {
    let d = pure_quadratic(2.0).unwrap();
    let mut params = d.params.clone();
    params.gamma = 1.0;
    let r = validate_assumptions(&d.clone().with_params(params), &bundle(1), &SamplerPlan::default());
    assert!(!r.is_clean());
    assert!(r.clause("growth").is_some_and(|c| c.violations > 0));
}

#[test]
fn ordering_evidence_detects_both_directions() {
    let b = bundle(1);
    let xi = TerminalCondition::Constant(0.0);
    let plan = SamplerPlan {
        probes: 500,
        ..SamplerPlan::default()
    };
    assert!(ordering_evidence((&zero(), &xi), (&constant(1.0), &xi), &b, &plan).unwrap().holds);
    assert!(!ordering_evidence((&constant(1.0), &xi), (&zero(), &xi), &b, &plan).unwrap().holds);
    let hi = TerminalCondition::Constant(1.0);
    assert!(!ordering_evidence((&zero(), &hi), (&zero(), &xi), &b, &plan).unwrap().holds);
}

#[test]
fn terminal_conditions_evaluate() {
    let abs = TerminalCondition::AbsAffine {
        intercept: -1.0,
        m: vec![2.0],
        orth: vec![],
    };
    assert_eq!(abs.eval(&[0.25], &[]), 0.5);
    let t = TerminalCondition::first_coordinate().truncate(1.0, 0.5);
    assert_eq!(t.eval(&[3.0], &[]), 1.0);
    assert_eq!(t.eval(&[-3.0], &[]), -0.5);
    assert_eq!(t.eval(&[0.2], &[]), 0.2);
    let c = TerminalCondition::Affine {
        intercept: 0.0,
        m: vec![1.0, 1.0],
        orth: vec![],
    };
    assert!(c.check_dims(1, 0).is_err());
    assert!(c.check_dims(2, 0).is_ok());
}

#[test]
fn exponential_moment_of_gaussian_terminal() {
    let g = TimeGrid::build(1.0, 2, &[]).unwrap();
    let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 50_000), RandomSource::new(6, 0)).unwrap();
    let xi = TerminalCondition::first_coordinate();
    let r = exponential_moment_estimate(&xi, &pure_quadratic(1.0).unwrap().params, &b, 1.0).unwrap();
    // E[exp|W_1|] = 2 e^{1/2} Phi(1)
    let phi1 = Normal::standard().cdf(1.0);
    let exact = 2.0 * 0.5f64.exp() * phi1;
    assert!(r.finite);
    assert!(r.estimate.within(exact, 4.0, 0.0), "{:?} vs {exact}", r.estimate);
    let e = exponential_moment_estimate(&xi, &pure_quadratic(1.0).unwrap().params, &b, 0.0);
    assert!(matches!(e, Err(LabError::InvalidArgument(_))));
}
