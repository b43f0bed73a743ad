use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{BasisSpec, Regressor};
use super::field::{short_hash, SolutionField, SolveMeta};
use crate::drivers::{DriverSpec, TerminalCondition};
use crate::error::{LabError, Result};
use crate::kernel::{Point, ScenarioBundle};
use crate::stats::mean_se;

/// Clamp applied to regression targets `y_{i+1}` before projecting.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Cap {
    #[default]
    None,
    /// `|y| ≤ c` everywhere.
    Constant(f64),
    /// `|y_i| ≤ x[i][p]`, typically the a priori bound.
    PerNode(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub basis: BasisSpec,
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Implicit in `y` (fixed point) or explicit (`F` at the conditional mean).
    pub implicit: bool,
    #[serde(skip)]
    pub cap: Cap,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            basis: BasisSpec::default(),
            picard_tol: 1e-10,
            picard_max: 50,
            implicit: true,
            cap: Cap::None,
        }
    }
}

impl SolverConfig {
    pub fn with_basis(basis: BasisSpec) -> Self {
        SolverConfig {
            basis,
            ..Self::default()
        }
    }

    /// Checks the configuration against a driver and bundle.
    pub fn check(&self, driver: &DriverSpec, bundle: &ScenarioBundle) -> Result<()> {
        if !(self.picard_tol > 0.0) {
            return Err(LabError::invalid("picard_tol must be positive"));
        }
        if self.picard_max == 0 {
            return Err(LabError::invalid("picard_max must be at least 1"));
        }
        self.basis.check()?;
        contraction_ok(driver.params.beta_bar, bundle.max_d_clock())?;
        if let Some(d) = driver.dim {
            if d != bundle.dim_m() {
                return Err(LabError::invalid(format!(
                    "driver {} needs dim_m = {d}, scenario has {}",
                    driver.name,
                    bundle.dim_m()
                )));
            }
        }
        for &k in &driver.kinks {
            if k < bundle.grid().horizon() && bundle.grid().index_of(k).is_none() {
                return Err(LabError::GridMismatch(format!(
                    "driver {} jumps at t = {k}, which is not a grid node",
                    driver.name
                )));
            }
        }
        if let Cap::PerNode(x) = &self.cap {
            if x.len() != bundle.grid().len() || x.iter().any(|c| c.len() != bundle.n_paths()) {
                return Err(LabError::GridMismatch("cap does not match the bundle".into()));
            }
        }
        Ok(())
    }
}

/// `β̄ · max ΔA < ½`.
pub fn contraction_ok(beta_bar: f64, max_da: f64) -> Result<()> {
    let v = beta_bar * max_da;
    if v < 0.5 {
        Ok(())
    } else {
        Err(LabError::invalid(format!(
            "contraction constraint beta_bar * max dA < 1/2 violated: {beta_bar} * {max_da} = {v}"
        )))
    }
}

/// `y = ey + F(t_i, y, z) ΔA + orth_term`, by Picard iteration when the
/// scheme is implicit and `F` depends on `y`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fixed_point(
    driver: &DriverSpec,
    at: &Point<'_>,
    ey: f64,
    z: &[f64],
    orth_term: f64,
    da: f64,
    config: &SolverConfig,
    step: usize,
) -> Result<(f64, usize)> {
    let base = ey + orth_term;
    let mut cur = ey;
    let mut val = base + driver.eval(at, cur, z) * da;
    let mut iters = 1;
    if config.implicit && driver.depends_on_y {
        loop {
            let upd = (val - cur).abs();
            if !val.is_finite() {
                break;
            }
            if upd <= config.picard_tol * val.abs().max(1.0) {
                break;
            }
            if iters >= config.picard_max {
                return Err(LabError::SolverDivergence {
                    step,
                    iterations: iters,
                    last_update: upd,
                });
            }
            cur = val;
            val = base + driver.eval(at, cur, z) * da;
            iters += 1;
        }
    }
    if !val.is_finite() {
        return Err(LabError::SolverDivergence {
            step,
            iterations: iters,
            last_update: f64::NAN,
        });
    }
    Ok((val, iters))
}

/// Solves the BSDE backward on `bundle` by least-squares regression.
pub fn solve_backward(
    bundle: &ScenarioBundle,
    driver: &DriverSpec,
    xi: &TerminalCondition,
    config: &SolverConfig,
) -> Result<SolutionField> {
    let terminal = xi.values(bundle)?;
    let label = format!("regression:{}:{}", driver.name, xi.describe());
    solve_problem(bundle, driver, &terminal, None, config, &label)
}

/// Backward solve with explicit terminal values and an optional per-path
/// gate: `F` is switched on at step `i` only while `i < gate[p]`.
pub fn solve_problem(
    bundle: &ScenarioBundle,
    driver: &DriverSpec,
    terminal: &[f64],
    gate: Option<&[usize]>,
    config: &SolverConfig,
    label: &str,
) -> Result<SolutionField> {
    config.check(driver, bundle)?;
    let n = bundle.n_paths();
    if terminal.len() != n {
        return Err(LabError::invalid("terminal values do not match the path count"));
    }
    let k = bundle.grid().steps();
    let (d, o) = (bundle.dim_m(), bundle.dim_orth());

    let mut y = vec![Vec::new(); k + 1];
    let mut y_se = vec![Vec::new(); k + 1];
    let mut z = vec![Vec::new(); k];
    let mut z_orth = vec![Vec::new(); k];
    y[k] = terminal.to_vec();
    y_se[k] = vec![0.0; n];
    // Pathwise reconstruction of Y_i from ξ and the increments of the
    // finite-variation part; its spread gives honest standard errors.
    let mut recon = terminal.to_vec();
    let mut max_picard = 0usize;

    for i in (0..k).rev() {
        let mut next = y[i + 1].clone();
        match &config.cap {
            Cap::None => {}
            Cap::Constant(c) => next.iter_mut().for_each(|v| *v = v.clamp(-c, *c)),
            Cap::PerNode(x) => next
                .iter_mut()
                .zip(&x[i + 1])
                .for_each(|(v, c)| *v = v.clamp(-c, *c)),
        }
        let da = bundle.d_clock(i);
        let dt = bundle.grid().dt(i);
        let first = next[0];
        let constant = next.iter().all(|v| v.to_bits() == first.to_bits());

        let (ey, zi, zoi, reg) = if constant {
            (next.clone(), vec![0.0; n * d], vec![0.0; n * o], None)
        } else {
            let reg = Regressor::new(bundle, i, &config.basis, i)?;
            let ey = reg.fit(&next);
            let resid: Vec<f64> = next.iter().zip(&ey).map(|(a, b)| a - b).collect();
            let mut zi = vec![0.0; n * d];
            if da > 0.0 {
                let mut g = vec![vec![0.0; n]; d];
                for (kk, gk) in g.iter_mut().enumerate() {
                    let t: Vec<f64> = (0..n).map(|p| resid[p] * bundle.dm(i, p, kk)).collect();
                    *gk = reg.fit(&t);
                }
                let cda = bundle.cov(i) * da;
                let eps = 1e-12 * cda.norm();
                let cinv = cda
                    .pseudo_inverse(eps)
                    .unwrap_or_else(|_| DMatrix::zeros(d, d));
                for p in 0..n {
                    let gp = DVector::from_iterator(d, (0..d).map(|kk| g[kk][p]));
                    let zp = &cinv * gp;
                    zi[p * d..(p + 1) * d].copy_from_slice(zp.as_slice());
                }
            }
            let mut zoi = vec![0.0; n * o];
            for kk in 0..o {
                let t: Vec<f64> = (0..n).map(|p| resid[p] * bundle.dw_orth(i, p, kk)).collect();
                let f = reg.fit(&t);
                for p in 0..n {
                    zoi[p * o + kk] = f[p] / dt;
                }
            }
            (ey, zi, zoi, Some(reg))
        };

        let mut yi = vec![0.0; n];
        let mut drift = vec![0.0; n];
        for p in 0..n {
            let at = bundle.point(i, p);
            let zp = &zi[p * d..(p + 1) * d];
            let zo = &zoi[p * o..(p + 1) * o];
            let orth_term = 0.5 * zo.iter().map(|v| v * v).sum::<f64>() * dt;
            let active = da > 0.0 && gate.is_none_or(|g| i < g[p]);
            if !active {
                yi[p] = ey[p] + orth_term;
                drift[p] = orth_term;
                continue;
            }
            let (val, iters) = fixed_point(driver, &at, ey[p], zp, orth_term, da, config, i)?;
            max_picard = max_picard.max(iters);
            yi[p] = val;
            drift[p] = val - ey[p];
        }

        for (r, dr) in recon.iter_mut().zip(&drift) {
            *r += dr;
        }
        y_se[i] = match &reg {
            None => vec![0.0; n],
            Some(reg) => {
                // recon now approximates Y_i pathwise; regress the version
                // before this step's drift to measure the conditional spread.
                let before: Vec<f64> = recon.iter().zip(&drift).map(|(r, dr)| r - dr).collect();
                let s2 = reg.residual_variance(&before);
                reg.leverage().into_iter().map(|h| (s2 * h).sqrt()).collect()
            }
        };
        y[i] = yi;
        z[i] = zi;
        z_orth[i] = zoi;
    }

    let y0 = if y[0].iter().all(|v| v.to_bits() == y[0][0].to_bits()) {
        let spread = mean_se(recon.iter().copied());
        crate::stats::Estimate {
            mean: y[0][0],
            se: spread.se,
            n,
        }
    } else {
        mean_se(y[0].iter().copied())
    };
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
            method: "regression".into(),
            config_hash: short_hash(&format!("{label}|{config:?}")),
            grid_hash: bundle.grid().fingerprint(),
            max_picard,
        },
    };
    field.compute_qv(bundle);
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{constant, step_family, zero};
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    fn bundle(t: f64, steps: usize, mandatory: &[f64], n: usize) -> ScenarioBundle {
        let g = TimeGrid::build(t, steps, mandatory).unwrap();
        ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 1, n), RandomSource::new(5, 0)).unwrap()
    }

    #[test]
    fn zero_driver_constant_terminal_is_exact() {
        let b = bundle(1.0, 10, &[], 200);
        let f = solve_backward(&b, &zero(), &TerminalCondition::Constant(0.7), &SolverConfig::default()).unwrap();
        for i in 0..=10 {
            assert!(f.y[i].iter().all(|v| *v == 0.7));
        }
        for i in 0..10 {
            assert!(f.z[i].iter().all(|v| *v == 0.0));
            assert!(f.z_orth[i].iter().all(|v| *v == 0.0));
        }
        assert_eq!(f.y0.se, 0.0);
    }

    #[test]
    fn step_family_profile() {
        let b = bundle(2.0, 20, &[1.0], 50);
        let f = solve_backward(&b, &step_family(1.0).unwrap(), &TerminalCondition::Constant(0.0), &SolverConfig::default())
            .unwrap();
        assert!((f.y0.mean - 1.0).abs() < 1e-12);
        for (i, &t) in b.grid().nodes().iter().enumerate() {
            let want = (1.0 - t).max(0.0);
            assert!((f.y[i][3] - want).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn contraction_constraint_is_enforced() {
        let b = bundle(1.0, 2, &[], 20);
        let mut d = constant(1.0);
        d.params.beta_bar = 1.2;
        let e = solve_backward(&b, &d, &TerminalCondition::Constant(0.0), &SolverConfig::default()).unwrap_err();
        assert!(e.to_string().contains("contraction"));
    }

    #[test]
    fn missing_kink_node_is_rejected() {
        let b = bundle(2.0, 4, &[], 20);
        let e = solve_backward(&b, &step_family(3.0).unwrap(), &TerminalCondition::Constant(0.0), &SolverConfig::default())
            .unwrap_err();
        assert!(matches!(e, LabError::GridMismatch(_)));
    }
}
