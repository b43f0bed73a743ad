use serde::Serialize;

use crate::drivers::{DriverSpec, TerminalCondition};
use crate::error::{LabError, Result};
use crate::kernel::{quad_form, ScenarioBundle};
use crate::solver::SolutionField;
use crate::stats::{mean_se, Estimate};

/// Hypothesis and conclusion statistics comparing a perturbed problem with
/// the base problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityMetrics {
    pub p: f64,
    /// `|ξⁿ − ξ⁰| + Σ |Fⁿ − F⁰|(t_i, y⁰_i, z⁰_i) ΔA_i`, averaged over paths.
    pub hypothesis: Estimate,
    pub hypothesis_max: f64,
    /// `sup_i |yⁿ_i − y⁰_i|`, averaged over paths.
    pub sup_diff: Estimate,
    /// `E[exp(p · sup_i |yⁿ_i − y⁰_i|)]`.
    pub conclusion_y: Estimate,
    /// `E[(Σ (zⁿ−z⁰)ᵀ C (zⁿ−z⁰) ΔA + Σ |z⊥ⁿ − z⊥⁰|² Δt)^{p/2}]`.
    pub conclusion_m: Estimate,
}

pub fn stability_metrics(
    sol_n: &SolutionField,
    sol_0: &SolutionField,
    bundle: &ScenarioBundle,
    data_n: (&DriverSpec, &TerminalCondition),
    data_0: (&DriverSpec, &TerminalCondition),
    p: f64,
) -> Result<StabilityMetrics> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(LabError::invalid(format!("stability order must be positive, got {p}")));
    }
    sol_n.check_compatible(sol_0)?;
    sol_0.check_bundle(bundle)?;
    let n = sol_0.n_paths;
    let k = sol_0.steps();
    let (d, o) = (sol_0.dim_m, sol_0.dim_orth);
    let xi_n = data_n.1.values(bundle)?;
    let xi_0 = data_0.1.values(bundle)?;

    let mut hyp = vec![0.0; n];
    let mut sup = vec![0.0f64; n];
    let mut qv = vec![0.0; n];
    for q in 0..n {
        hyp[q] = (xi_n[q] - xi_0[q]).abs();
        for i in 0..=k {
            sup[q] = sup[q].max((sol_n.y[i][q] - sol_0.y[i][q]).abs());
        }
    }
    for i in 0..k {
        let da = bundle.d_clock(i);
        let dt = bundle.grid().dt(i);
        let c = bundle.cov(i);
        let mut dz = vec![0.0; d];
        for q in 0..n {
            let at = bundle.point(i, q);
            let (y0, z0) = (sol_0.y[i][q], sol_0.z_at(i, q));
            hyp[q] += (data_n.0.eval(&at, y0, z0) - data_0.0.eval(&at, y0, z0)).abs() * da;
            for (kk, v) in dz.iter_mut().enumerate() {
                *v = sol_n.z_at(i, q)[kk] - z0[kk];
            }
            if da > 0.0 {
                qv[q] += quad_form(&c, &dz) * da;
            }
            let (zn, zo) = (sol_n.z_orth_at(i, q), sol_0.z_orth_at(i, q));
            qv[q] += (0..o).map(|kk| (zn[kk] - zo[kk]).powi(2)).sum::<f64>() * dt;
        }
    }
    Ok(StabilityMetrics {
        p,
        hypothesis_max: hyp.iter().copied().fold(0.0, f64::max),
        hypothesis: mean_se(hyp),
        conclusion_y: mean_se(sup.iter().map(|s| (p * s).exp())),
        sup_diff: mean_se(sup),
        conclusion_m: mean_se(qv.into_iter().map(|v| v.powf(p / 2.0))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{constant, step_family, zero};
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};
    use crate::solver::{solve_backward, SolverConfig};

    fn bundle(t: f64, steps: usize, extra: &[f64]) -> ScenarioBundle {
        let g = TimeGrid::build(t, steps, extra).unwrap();
        ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 8), RandomSource::new(4, 0)).unwrap()
    }

    #[test]
    fn identical_problems() {
        let b = bundle(1.0, 4, &[]);
        let xi = TerminalCondition::Constant(0.3);
        let s = solve_backward(&b, &zero(), &xi, &SolverConfig::default()).unwrap();
        let m = stability_metrics(&s, &s, &b, (&zero(), &xi), (&zero(), &xi), 2.0).unwrap();
        assert_eq!(m.hypothesis.mean, 0.0);
        assert_eq!(m.conclusion_y.mean, 1.0);
        assert_eq!(m.conclusion_m.mean, 0.0);
    }

    #[test]
    fn linear_family() {
        let b = bundle(1.0, 10, &[]);
        let xi = TerminalCondition::Constant(0.0);
        let cfg = SolverConfig::default();
        let (f0, f4) = (constant(1.0), constant(1.25));
        let s0 = solve_backward(&b, &f0, &xi, &cfg).unwrap();
        let s4 = solve_backward(&b, &f4, &xi, &cfg).unwrap();
        let m = stability_metrics(&s4, &s0, &b, (&f4, &xi), (&f0, &xi), 1.0).unwrap();
        assert!((m.hypothesis.mean - 0.25).abs() < 1e-12);
        assert!((m.sup_diff.mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn step_family_does_not_converge() {
        let b = bundle(2.0, 8, &[0.5]);
        let xi = TerminalCondition::Constant(0.0);
        let cfg = SolverConfig::default();
        let f2 = step_family(2.0).unwrap();
        let s0 = solve_backward(&b, &zero(), &xi, &cfg).unwrap();
        let s2 = solve_backward(&b, &f2, &xi, &cfg).unwrap();
        let m = stability_metrics(&s2, &s0, &b, (&f2, &xi), (&zero(), &xi), 2.0).unwrap();
        assert!((m.hypothesis.mean - 1.0).abs() < 1e-12);
        assert!((m.conclusion_y.mean - 2f64.exp()).abs() < 1e-9);
    }
}
