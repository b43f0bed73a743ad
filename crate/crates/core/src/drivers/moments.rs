use serde::Serialize;

use super::params::ParamSet;
use super::terminal::TerminalCondition;
use crate::error::{LabError, Result};
use crate::kernel::ScenarioBundle;
use crate::stats::{mean_se, Estimate};

/// Monte Carlo estimate of `E[exp(p(|ξ| + |α|₁))]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub p: f64,
    pub estimate: Estimate,
    /// False when the exponent overflowed on some path.
    pub finite: bool,
    pub non_finite_paths: usize,
}

pub fn exponential_moment_estimate(
    xi: &TerminalCondition,
    params: &ParamSet,
    bundle: &ScenarioBundle,
    p: f64,
) -> Result<MomentReport> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(LabError::invalid(format!("moment order must be positive, got {p}")));
    }
    let xi = xi.values(bundle)?;
    let l1 = params.alpha_field(bundle).l1;
    let vals: Vec<f64> = xi
        .iter()
        .zip(&l1)
        .map(|(x, a)| (p * (x.abs() + a)).exp())
        .collect();
    let bad = vals.iter().filter(|v| !v.is_finite()).count();
    let estimate = if bad > 0 {
        Estimate {
            mean: f64::INFINITY,
            se: f64::INFINITY,
            n: vals.len(),
        }
    } else {
        mean_se(vals)
    };
    Ok(MomentReport {
        p,
        estimate,
        finite: bad == 0,
        non_finite_paths: bad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::builtin::step_family;
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    #[test]
    fn deterministic_moment_is_exact() {
        let g = TimeGrid::build(2.0, 8, &[0.5]).unwrap();
        let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 20), RandomSource::new(1, 0)).unwrap();
        let d = step_family(2.0).unwrap();
        let r = exponential_moment_estimate(&TerminalCondition::Constant(0.0), &d.params, &b, 2.0).unwrap();
        assert!((r.estimate.mean - 2f64.exp()).abs() < 1e-12);
        assert_eq!(r.estimate.se, 0.0);
        assert!(exponential_moment_estimate(&TerminalCondition::Constant(0.0), &d.params, &b, 0.0).is_err());
    }

    #[test]
    fn overflow_is_flagged() {
        let g = TimeGrid::build(1.0, 2, &[]).unwrap();
        let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 5), RandomSource::new(1, 0)).unwrap();
        let r = exponential_moment_estimate(&TerminalCondition::Constant(800.0), &ParamSet::zero(), &b, 1.0)
            .unwrap();
        assert!(!r.finite);
        assert_eq!(r.non_finite_paths, 5);
    }
}
