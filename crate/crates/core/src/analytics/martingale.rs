use serde::Serialize;

use crate::error::{LabError, Result};
use crate::kernel::{quad_form, ScenarioBundle};
use crate::solver::SolutionField;
use crate::stats::{mean_se, Estimate};

use super::report::CheckReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentialMean {
    pub q: f64,
    pub estimate: Estimate,
    pub non_finite_paths: usize,
}

impl ExponentialMean {
    /// `|mean − 1| ≤ 3 SE`.
    pub fn check(&self) -> CheckReport {
        let margin = if self.non_finite_paths > 0 {
            f64::INFINITY
        } else {
            (self.estimate.mean - 1.0).abs()
        };
        CheckReport::new(
            format!("exp_martingale_q{}", self.q),
            margin,
            3.0 * self.estimate.se + 1e-12,
            self.estimate.n,
            self.estimate.se,
        )
        .with_detail("mean", self.estimate.mean)
    }
}

/// Per node `i`, the running martingale part and its quadratic variation
/// up to `t_i`, per path.
fn running_parts(solution: &SolutionField, bundle: &ScenarioBundle) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (n, d, o) = (solution.n_paths, solution.dim_m, solution.dim_orth);
    let k = solution.steps();
    let mut mart = vec![vec![0.0; n]; k + 1];
    let mut qv = vec![vec![0.0; n]; k + 1];
    for i in 0..k {
        let c = bundle.cov(i);
        let da = bundle.d_clock(i);
        let dt = bundle.grid().dt(i);
        for p in 0..n {
            let z = solution.z_at(i, p);
            let zo = solution.z_orth_at(i, p);
            let mut dm = 0.0;
            for kk in 0..d {
                dm += z[kk] * bundle.dm(i, p, kk);
            }
            for kk in 0..o {
                dm += zo[kk] * bundle.dw_orth(i, p, kk);
            }
            let mut dq = zo.iter().map(|v| v * v).sum::<f64>() * dt;
            if da > 0.0 {
                dq += quad_form(&c, z) * da;
            }
            mart[i + 1][p] = mart[i][p] + dm;
            qv[i + 1][p] = qv[i][p] + dq;
        }
    }
    (mart, qv)
}

/// Mean of `𝓔(q(Z·M + N))_T = exp(q L_T − (q²/2) ⟨L⟩_T)`.
pub fn stochastic_exponential_mean(solution: &SolutionField, bundle: &ScenarioBundle, q: f64) -> Result<ExponentialMean> {
    if !q.is_finite() {
        return Err(LabError::invalid("q must be finite"));
    }
    solution.check_bundle(bundle)?;
    let k = solution.steps();
    let (mart, qv) = running_parts(solution, bundle);
    let vals: Vec<f64> = (0..solution.n_paths)
        .map(|p| (q * mart[k][p] - 0.5 * q * q * qv[k][p]).exp())
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
    Ok(ExponentialMean {
        q,
        estimate,
        non_finite_paths: bad,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KazamakiStatistic {
    pub eta: f64,
    pub q_tilde: f64,
    pub nodes: Vec<usize>,
    /// `E[exp(η M̃_t + (½ − η) ⟨M̃⟩_t)]` at each node of `nodes`.
    pub per_node: Vec<Estimate>,
    /// Entry of `per_node` with the largest mean.
    pub sup: Estimate,
    pub sup_node: usize,
    pub finite: bool,
}

/// Grid-node approximation of the supremum over stopping times in the
/// Kazamaki criterion, with `M̃ = q̃ (Z·M + N)`.
pub fn kazamaki_statistic(
    solution: &SolutionField,
    bundle: &ScenarioBundle,
    eta: f64,
    q_tilde: f64,
    nodes: &[usize],
) -> Result<KazamakiStatistic> {
    if eta == 1.0 || !eta.is_finite() || !q_tilde.is_finite() {
        return Err(LabError::invalid(format!("kazamaki statistic needs finite eta != 1, got {eta}")));
    }
    solution.check_bundle(bundle)?;
    let k = solution.steps();
    if nodes.is_empty() || nodes.iter().any(|i| *i > k) {
        return Err(LabError::invalid("stopping grid must be a nonempty subset of the grid nodes"));
    }
    let (mart, qv) = running_parts(solution, bundle);
    let mut per_node = Vec::with_capacity(nodes.len());
    let mut finite = true;
    for &i in nodes {
        let vals: Vec<f64> = (0..solution.n_paths)
            .map(|p| (eta * q_tilde * mart[i][p] + (0.5 - eta) * q_tilde * q_tilde * qv[i][p]).exp())
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            finite = false;
            per_node.push(Estimate {
                mean: f64::INFINITY,
                se: f64::INFINITY,
                n: vals.len(),
            });
        } else {
            per_node.push(mean_se(vals));
        }
    }
    let (arg, sup) = per_node
        .iter()
        .enumerate()
        .fold((0, per_node[0]), |acc, (j, e)| if e.mean > acc.1.mean { (j, *e) } else { acc });
    Ok(KazamakiStatistic {
        eta,
        q_tilde,
        nodes: nodes.to_vec(),
        per_node,
        sup,
        sup_node: nodes[arg],
        finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{zero, TerminalCondition};
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};
    use crate::solver::{solve_backward, SolverConfig};

    #[test]
    fn zero_martingale_part_is_exact() {
        let g = TimeGrid::build(1.0, 4, &[]).unwrap();
        let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 1, 50), RandomSource::new(2, 0)).unwrap();
        let s = solve_backward(&b, &zero(), &TerminalCondition::Constant(1.0), &SolverConfig::default()).unwrap();
        for q in [-3.0, 0.5, 3.0] {
            let e = stochastic_exponential_mean(&s, &b, q).unwrap();
            assert_eq!(e.estimate.mean, 1.0);
            assert!(e.check().pass);
        }
        let kz = kazamaki_statistic(&s, &b, 2.0, 1.0, &[0, 2, 4]).unwrap();
        assert_eq!(kz.sup.mean, 1.0);
        assert!(kazamaki_statistic(&s, &b, 1.0, 1.0, &[0]).is_err());
        assert!(kazamaki_statistic(&s, &b, 2.0, 1.0, &[5]).is_err());
    }
}
