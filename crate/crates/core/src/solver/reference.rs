use nalgebra::{DMatrix, DVector};

use super::basis::{BasisSpec, Regressor};
use super::field::{short_hash, SolutionField, SolveMeta};
use crate::drivers::TerminalCondition;
use crate::error::{LabError, Result};
use crate::kernel::{quad_form, ScenarioBundle};
use crate::stats::{mean_se, Estimate};

/// Solution of the pure-quadratic equation `F = (γ/2)‖Bz‖²` through the
/// exponential transform `Y_t = (1/γ) log E[e^{γξ} | F_t]`.
///
/// Affine `ξ` uses the Gaussian closed form; anything else regresses
/// `e^{γξ}` on the basis (no Picard iteration).
pub fn exponential_transform_reference(
    bundle: &ScenarioBundle,
    gamma: f64,
    xi: &TerminalCondition,
    basis: &BasisSpec,
) -> Result<SolutionField> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(LabError::invalid(format!("gamma must be positive, got {gamma}")));
    }
    xi.check_dims(bundle.dim_m(), bundle.dim_orth())?;
    match xi.affine_parts() {
        Some((a, bm, bo)) => Ok(closed_form(bundle, gamma, a, bm, bo, xi)),
        None => regression(bundle, gamma, xi, basis),
    }
}

fn padded(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out
}

fn closed_form(
    bundle: &ScenarioBundle,
    gamma: f64,
    a: f64,
    bm: &[f64],
    bo: &[f64],
    xi: &TerminalCondition,
) -> SolutionField {
    let (n, d, o) = (bundle.n_paths(), bundle.dim_m(), bundle.dim_orth());
    let k = bundle.grid().steps();
    let horizon = bundle.grid().horizon();
    let bm = padded(bm, d);
    let bo = padded(bo, o);
    let bo2: f64 = bo.iter().map(|v| v * v).sum();
    let mut y = Vec::with_capacity(k + 1);
    for i in 0..=k {
        let rem = bundle.remaining_cov(i);
        let drift = 0.5 * gamma * quad_form(&rem, &bm) + 0.5 * bo2 * (horizon - bundle.grid().t(i));
        let col: Vec<f64> = (0..n)
            .map(|p| {
                if i == k {
                    return xi.eval(bundle.m_at(k, p), bundle.orth_at(k, p));
                }
                let m = bundle.m_at(i, p);
                let w = bundle.orth_at(i, p);
                a + bm.iter().zip(m).map(|(b, x)| b * x).sum::<f64>()
                    + bo.iter().zip(w).map(|(b, x)| b * x).sum::<f64>()
                    + drift
            })
            .collect();
        y.push(col);
    }
    let z: Vec<Vec<f64>> = (0..k).map(|_| bm.repeat(n)).collect();
    let z_orth: Vec<Vec<f64>> = (0..k).map(|_| bo.repeat(n)).collect();
    let y0 = Estimate::exact(y[0][0]);
    let mut field = SolutionField {
        grid: bundle.grid().clone(),
        n_paths: n,
        dim_m: d,
        dim_orth: o,
        y_se: vec![vec![0.0; n]; k + 1],
        y,
        z,
        z_orth,
        qv_zm: Vec::new(),
        qv_n: Vec::new(),
        y0,
        meta: SolveMeta {
            method: "exp_transform_closed_form".into(),
            config_hash: short_hash(&format!("closed:{gamma}:{}", xi.describe())),
            grid_hash: bundle.grid().fingerprint(),
            max_picard: 0,
        },
    };
    field.compute_qv(bundle);
    field
}

fn regression(
    bundle: &ScenarioBundle,
    gamma: f64,
    xi: &TerminalCondition,
    basis: &BasisSpec,
) -> Result<SolutionField> {
    let (n, d, o) = (bundle.n_paths(), bundle.dim_m(), bundle.dim_orth());
    if o > 0 && gamma != 1.0 {
        return Err(LabError::invalid(
            "the exponential transform needs gamma = 1 when orthogonal noise is present",
        ));
    }
    let k = bundle.grid().steps();
    let terminal = xi.values(bundle)?;
    let u: Vec<f64> = terminal.iter().map(|x| (gamma * x).exp()).collect();
    if let Some(p) = u.iter().position(|v| !v.is_finite()) {
        return Err(LabError::MomentFailure(format!(
            "exp(gamma * xi) overflows on path {p} (xi = {})",
            terminal[p]
        )));
    }
    let floor = u.iter().copied().fold(f64::INFINITY, f64::min);

    let mut y = vec![Vec::new(); k + 1];
    let mut y_se = vec![Vec::new(); k + 1];
    let mut z = vec![Vec::new(); k];
    let mut z_orth = vec![Vec::new(); k];
    y[k] = terminal.clone();
    y_se[k] = vec![0.0; n];
    let mut y0 = Estimate::exact(0.0);
    for i in 0..k {
        let reg = Regressor::new(bundle, i, basis, i)?;
        let ui: Vec<f64> = reg.fit(&u).into_iter().map(|v| v.max(floor)).collect();
        let s2 = reg.residual_variance(&u);
        y_se[i] = reg
            .leverage()
            .into_iter()
            .zip(&ui)
            .map(|(h, v)| (s2 * h).sqrt() / (gamma * v))
            .collect();
        y[i] = ui.iter().map(|v| v.ln() / gamma).collect();
        if i == 0 {
            let e = mean_se(u.iter().copied());
            y0 = Estimate {
                mean: y[0][0],
                se: e.se / (gamma * e.mean),
                n,
            };
        }
        let da = bundle.d_clock(i);
        let dt = bundle.grid().dt(i);
        let mut zi = vec![0.0; n * d];
        if da > 0.0 {
            let g: Vec<Vec<f64>> = (0..d)
                .map(|kk| {
                    let t: Vec<f64> = (0..n).map(|p| u[p] * bundle.dm(i, p, kk)).collect();
                    reg.fit(&t)
                })
                .collect();
            let cda = bundle.cov(i) * da;
            let eps = 1e-12 * cda.norm();
            let cinv = cda.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(d, d));
            for p in 0..n {
                let gp = DVector::from_iterator(d, (0..d).map(|kk| g[kk][p] / (gamma * ui[p])));
                zi[p * d..(p + 1) * d].copy_from_slice((&cinv * gp).as_slice());
            }
        }
        let mut zoi = vec![0.0; n * o];
        for kk in 0..o {
            let t: Vec<f64> = (0..n).map(|p| u[p] * bundle.dw_orth(i, p, kk)).collect();
            let f = reg.fit(&t);
            for p in 0..n {
                zoi[p * o + kk] = f[p] / (dt * gamma * ui[p]);
            }
        }
        z[i] = zi;
        z_orth[i] = zoi;
    }
    let mut field = SolutionField {
        grid: bundle.grid().clone(),
        n_paths: n,
        dim_m: d,
        dim_orth: o,
        y,
        y_se,
        z,
        z_orth,
        qv_zm: Vec::new(),
        qv_n: Vec::new(),
        y0,
        meta: SolveMeta {
            method: "exp_transform_regression".into(),
            config_hash: short_hash(&format!("exp:{gamma}:{}:{basis:?}", xi.describe())),
            grid_hash: bundle.grid().fingerprint(),
            max_picard: 0,
        },
    };
    field.compute_qv(bundle);
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    fn bundle() -> ScenarioBundle {
        let g = TimeGrid::build(1.0, 10, &[]).unwrap();
        ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 500), RandomSource::new(1, 0)).unwrap()
    }

    #[test]
    fn closed_forms() {
        let b = bundle();
        let xi = TerminalCondition::first_coordinate();
        let f1 = exponential_transform_reference(&b, 1.0, &xi, &BasisSpec::default()).unwrap();
        assert!((f1.y0.mean - 0.5).abs() < 1e-14);
        let f2 = exponential_transform_reference(&b, 2.0, &xi, &BasisSpec::default()).unwrap();
        assert!((f2.y0.mean - 1.0).abs() < 1e-14);
        let c = exponential_transform_reference(&b, 3.0, &TerminalCondition::Constant(0.25), &BasisSpec::default())
            .unwrap();
        assert!(c.y.iter().flatten().all(|v| (*v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn overflow_is_a_moment_failure() {
        let b = bundle();
        let xi = TerminalCondition::AbsAffine {
            intercept: 900.0,
            m: vec![1.0],
            orth: vec![],
        };
        let e = exponential_transform_reference(&b, 1.0, &xi, &BasisSpec::default()).unwrap_err();
        assert!(matches!(e, LabError::MomentFailure(_)));
    }
}
