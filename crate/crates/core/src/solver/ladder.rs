use serde::Serialize;

use super::backward::{solve_problem, SolverConfig};
use super::field::SolutionField;
use crate::drivers::{DriverSpec, TerminalCondition};
use crate::error::{LabError, Result};
use crate::kernel::ScenarioBundle;

/// How `ξ` is truncated at level `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LadderMode {
    /// `ξ ∧ n`; needs `ξ ≥ 0` and `F ≥ 0`.
    Upper,
    /// `ξ⁺ ∧ n − ξ⁻ ∧ lower`, for signed data.
    Double { lower: f64 },
}

/// Violations of `Yⁿ ≤ Yᵐ` between consecutive levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub pairs_checked: usize,
    pub violations: usize,
    pub fraction: f64,
    /// Largest `yⁿ − yᵐ` observed (before the SE allowance).
    pub max_excess: f64,
}

#[derive(Debug, Clone)]
pub struct TruncationLadder {
    pub levels: Vec<f64>,
    pub mode: LadderMode,
    /// Per level, the step index at which the driver switches off on each path.
    pub gates: Vec<Vec<usize>>,
    /// Per level, `|αⁿ|₁` on each path under the gate.
    pub gated_alpha_l1: Vec<Vec<f64>>,
    pub fields: Vec<SolutionField>,
    pub monotonicity: MonotonicityReport,
}

/// First step at which the running integral `∫₀^{t_{i+1}} α dA` exceeds
/// `level`; `K` when it never does.
pub fn gate_indices(bundle: &ScenarioBundle, driver: &DriverSpec, level: f64) -> (Vec<usize>, Vec<f64>) {
    let k = bundle.grid().steps();
    let n = bundle.n_paths();
    let field = driver.params.alpha_field(bundle);
    let mut gate = vec![k; n];
    let mut l1 = vec![0.0; n];
    for p in 0..n {
        let mut run = 0.0;
        for i in 0..k {
            let inc = field.alpha[i][p] * bundle.d_clock(i);
            if run + inc > level + 1e-12 * level.max(1.0) {
                gate[p] = i;
                break;
            }
            run += inc;
        }
        l1[p] = run;
    }
    (gate, l1)
}

/// Solves the truncated problems for each level and reports monotonicity.
pub fn solve_ladder(
    bundle: &ScenarioBundle,
    driver: &DriverSpec,
    xi: &TerminalCondition,
    levels: &[f64],
    mode: LadderMode,
    config: &SolverConfig,
) -> Result<TruncationLadder> {
    if levels.is_empty() {
        return Err(LabError::invalid("ladder needs at least one level"));
    }
    if levels.iter().any(|l| !(*l >= 0.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::invalid("ladder levels must be nonnegative and increasing"));
    }
    let terminal = xi.values(bundle)?;
    match mode {
        LadderMode::Upper => {
            if terminal.iter().any(|x| *x < 0.0) {
                return Err(LabError::invalid(
                    "upper truncation needs xi >= 0; use the double truncation for signed data",
                ));
            }
            if !driver.nonnegative {
                return Err(LabError::invalid(
                    "upper truncation needs a nonnegative driver; use the double truncation",
                ));
            }
        }
        LadderMode::Double { lower } => {
            if !(lower >= 0.0) {
                return Err(LabError::invalid("lower truncation level must be nonnegative"));
            }
        }
    }

    let mut gates = Vec::new();
    let mut l1s = Vec::new();
    let mut fields = Vec::new();
    for &level in levels {
        let lower = match mode {
            LadderMode::Upper => 0.0,
            LadderMode::Double { lower } => lower,
        };
        let t: Vec<f64> = terminal
            .iter()
            .map(|x| x.max(0.0).min(level) - (-x).max(0.0).min(lower))
            .collect();
        let (gate, l1) = gate_indices(bundle, driver, level);
        let label = format!("ladder:{}:{}:{level}:{mode:?}", driver.name, xi.describe());
        let field = solve_problem(bundle, driver, &t, Some(&gate), config, &label)?;
        gates.push(gate);
        l1s.push(l1);
        fields.push(field);
    }
    let monotonicity = monotonicity(&fields);
    Ok(TruncationLadder {
        levels: levels.to_vec(),
        mode,
        gates,
        gated_alpha_l1: l1s,
        fields,
        monotonicity,
    })
}

/// Counts `(node, path)` pairs where a lower level exceeds the next one by
/// more than three combined standard errors.
pub fn monotonicity(fields: &[SolutionField]) -> MonotonicityReport {
    let mut pairs = 0usize;
    let mut bad = 0usize;
    let mut max_excess = f64::NEG_INFINITY;
    for w in fields.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        for i in 0..lo.y.len() {
            for p in 0..lo.n_paths {
                let ex = lo.y[i][p] - hi.y[i][p];
                let tol = 3.0 * (lo.y_se[i][p].powi(2) + hi.y_se[i][p].powi(2)).sqrt() + 1e-12;
                pairs += 1;
                max_excess = max_excess.max(ex);
                if ex > tol {
                    bad += 1;
                }
            }
        }
    }
    MonotonicityReport {
        pairs_checked: pairs,
        violations: bad,
        fraction: if pairs == 0 { 0.0 } else { bad as f64 / pairs as f64 },
        max_excess: if pairs == 0 { 0.0 } else { max_excess },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{step_family, zero};
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    #[test]
    fn gate_switches_off_at_half() {
        let g = TimeGrid::build(2.0, 20, &[1.0]).unwrap();
        let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 10), RandomSource::new(1, 0)).unwrap();
        let d = step_family(1.0).unwrap();
        let lad = solve_ladder(&b, &d, &TerminalCondition::Constant(0.0), &[0.5], LadderMode::Upper, &SolverConfig::default())
            .unwrap();
        assert!((lad.fields[0].y0.mean - 0.5).abs() < 1e-12);
        assert_eq!(lad.gates[0][0], 5);
        assert!(lad.gated_alpha_l1[0].iter().all(|l| *l <= 0.5 + 1e-12));
    }

    #[test]
    fn inactive_truncation_gives_identical_fields() {
        let g = TimeGrid::build(1.0, 5, &[]).unwrap();
        let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 400), RandomSource::new(1, 0)).unwrap();
        let xi = TerminalCondition::Custom {
            label: "bounded".into(),
            f: std::sync::Arc::new(|m: &[f64], _: &[f64]| m[0].tanh().abs()),
        };
        let lad = solve_ladder(&b, &zero(), &xi, &[1.0, 2.0], LadderMode::Upper, &SolverConfig::default()).unwrap();
        assert_eq!(lad.fields[0].y, lad.fields[1].y);
        assert_eq!(lad.monotonicity.violations, 0);
    }
}
