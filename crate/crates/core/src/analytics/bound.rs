use crate::drivers::{ParamSet, TerminalCondition};
use crate::error::{LabError, Result};
use crate::kernel::{quad_form, ScenarioBundle};
use crate::solver::{BasisSpec, Regressor, SolutionField};
use crate::stats::{log_folded_normal_mgf, mean_se, Estimate};

use super::report::{uniform_band, CheckReport};

/// Estimate of the a priori bound
/// `X_t = (1/γ) log E[exp(γ e^{β*(T−t)} |ξ| + γ ∫ₜᵀ e^{β*(r−t)} α_r dA_r) | F_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundProcess {
    /// `x[i][p]` for nodes `0..=K`.
    pub x: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub x0: Estimate,
    pub gamma: f64,
    pub closed_form: bool,
}

/// `Σ_{j≥i} e^{β*(t_j − t_i)} α_j ΔA_j` per node and path.
fn weighted_tail(bundle: &ScenarioBundle, params: &ParamSet) -> Vec<Vec<f64>> {
    let k = bundle.grid().steps();
    let n = bundle.n_paths();
    let bs = params.beta_star();
    let field = params.alpha_field(bundle);
    let mut out = vec![vec![0.0; n]; k + 1];
    for i in (0..k).rev() {
        let da = bundle.d_clock(i);
        let growth = (bs * bundle.grid().dt(i)).exp();
        for p in 0..n {
            out[i][p] = field.alpha[i][p] * da + growth * out[i + 1][p];
        }
    }
    out
}

pub fn apriori_bound(
    bundle: &ScenarioBundle,
    xi: &TerminalCondition,
    params: &ParamSet,
    basis: &BasisSpec,
) -> Result<BoundProcess> {
    let gamma = params.gamma;
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(LabError::invalid(format!("a priori bound needs gamma >= 1, got {gamma}")));
    }
    xi.check_dims(bundle.dim_m(), bundle.dim_orth())?;
    let tail = weighted_tail(bundle, params);
    let gaussian = xi.affine_parts().or_else(|| xi.abs_affine_parts());
    match gaussian {
        Some((a, bm, bo)) if params.lambda.is_deterministic() => Ok(closed_form(bundle, params, a, bm, bo, &tail)),
        _ => regression(bundle, xi, params, &tail, basis),
    }
}

fn closed_form(
    bundle: &ScenarioBundle,
    params: &ParamSet,
    a: f64,
    bm: &[f64],
    bo: &[f64],
    tail: &[Vec<f64>],
) -> BoundProcess {
    let (n, d, o) = (bundle.n_paths(), bundle.dim_m(), bundle.dim_orth());
    let k = bundle.grid().steps();
    let horizon = bundle.grid().horizon();
    let gamma = params.gamma;
    let mut bm = bm.to_vec();
    bm.resize(d, 0.0);
    let mut bo = bo.to_vec();
    bo.resize(o, 0.0);
    let bo2: f64 = bo.iter().map(|v| v * v).sum();
    let mut x = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let t = bundle.grid().t(i);
        let s = (quad_form(&bundle.remaining_cov(i), &bm) + bo2 * (horizon - t)).max(0.0).sqrt();
        let w = gamma * (params.beta_star() * (horizon - t)).exp();
        let col: Vec<f64> = (0..n)
            .map(|p| {
                let mu = a
                    + bm.iter().zip(bundle.m_at(i, p)).map(|(b, v)| b * v).sum::<f64>()
                    + bo.iter().zip(bundle.orth_at(i, p)).map(|(b, v)| b * v).sum::<f64>();
                log_folded_normal_mgf(w, mu, s) / gamma + tail[i][p]
            })
            .collect();
        x.push(col);
    }
    let x0 = Estimate::exact(x[0][0]);
    BoundProcess {
        x,
        se: vec![vec![0.0; n]; k + 1],
        x0,
        gamma,
        closed_form: true,
    }
}

fn regression(
    bundle: &ScenarioBundle,
    xi: &TerminalCondition,
    params: &ParamSet,
    tail: &[Vec<f64>],
    basis: &BasisSpec,
) -> Result<BoundProcess> {
    let n = bundle.n_paths();
    let k = bundle.grid().steps();
    let horizon = bundle.grid().horizon();
    let gamma = params.gamma;
    let terminal = xi.values(bundle)?;
    let mut x = vec![Vec::new(); k + 1];
    let mut se = vec![Vec::new(); k + 1];
    x[k] = terminal.iter().map(|v| v.abs()).collect();
    se[k] = vec![0.0; n];
    let mut x0 = Estimate::exact(x[k][0]);
    for i in 0..k {
        let w = gamma * (params.beta_star() * (horizon - bundle.grid().t(i))).exp();
        let v: Vec<f64> = (0..n).map(|p| (w * terminal[p].abs() + gamma * tail[i][p]).exp()).collect();
        if let Some(p) = v.iter().position(|e| !e.is_finite()) {
            return Err(LabError::MomentFailure(format!(
                "a priori exponent overflows at node {i} on path {p} (|xi| = {})",
                terminal[p].abs()
            )));
        }
        let reg = Regressor::new(bundle, i, basis, i)?;
        let fit: Vec<f64> = reg.fit(&v).into_iter().map(|f| f.max(1.0)).collect();
        let s2 = reg.residual_variance(&v);
        se[i] = reg
            .leverage()
            .into_iter()
            .zip(&fit)
            .map(|(h, f)| (s2 * h).sqrt() / (gamma * f))
            .collect();
        x[i] = fit.iter().map(|f| f.ln() / gamma).collect();
        if i == 0 {
            let e = mean_se(v.iter().copied());
            x0 = Estimate {
                mean: x[0][0],
                se: e.se / (gamma * e.mean),
                n,
            };
        }
    }
    Ok(BoundProcess {
        x,
        se,
        x0,
        gamma,
        closed_form: false,
    })
}

/// `max |y| − x` over all nodes and paths against `tol + 3·SE`.
pub fn check_apriori(solution: &SolutionField, bound: &BoundProcess, tol: f64) -> Result<CheckReport> {
    if bound.x.len() != solution.y.len() || bound.x.first().map(Vec::len) != Some(solution.n_paths) {
        return Err(LabError::GridMismatch("a priori bound and solution have different shapes".into()));
    }
    let (worst, se) = uniform_band(&solution.y, &solution.y_se, &bound.x, &bound.se, f64::abs);
    Ok(CheckReport::new("apriori", worst, tol + 3.0 * se, solution.n_paths, se)
        .with_detail("x0", bound.x0.mean)
        .with_detail("x0_se", bound.x0.se)
        .with_detail("y0", solution.y0.mean)
        .with_detail("slack0", bound.x0.mean - solution.y0.mean.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{pure_quadratic, step_family, zero};
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    fn bundle(t: f64, steps: usize, extra: &[f64], n: usize) -> ScenarioBundle {
        let g = TimeGrid::build(t, steps, extra).unwrap();
        ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, n), RandomSource::new(9, 0)).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_bound() {
        let b = bundle(1.0, 4, &[], 20);
        let x = apriori_bound(&b, &TerminalCondition::Constant(0.0), &zero().params, &BasisSpec::default()).unwrap();
        assert!(x.x.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn step_family_bound_is_the_remaining_mass() {
        let b = bundle(2.0, 16, &[0.25], 5);
        let d = step_family(4.0).unwrap();
        let x = apriori_bound(&b, &TerminalCondition::Constant(0.0), &d.params, &BasisSpec::default()).unwrap();
        for i in 0..b.grid().len() {
            let t = b.grid().t(i);
            assert!((x.x[i][0] - (1.0 - 4.0 * t).max(0.0)).abs() < 1e-12, "{t}");
        }
    }

    #[test]
    fn regression_and_closed_form_agree_at_zero() {
        let b = bundle(1.0, 10, &[], 40_000);
        let d = pure_quadratic(1.0).unwrap();
        let cf = apriori_bound(&b, &TerminalCondition::first_coordinate(), &d.params, &BasisSpec::default()).unwrap();
        let xi = TerminalCondition::Custom {
            label: "w".into(),
            f: std::sync::Arc::new(|m: &[f64], _: &[f64]| m[0]),
        };
        let rg = apriori_bound(&b, &xi, &d.params, &BasisSpec::default()).unwrap();
        assert!(cf.closed_form && !rg.closed_form);
        assert!((cf.x0.mean - rg.x0.mean).abs() < 4.0 * rg.x0.se, "{} {}", cf.x0.mean, rg.x0.mean);
    }
}
