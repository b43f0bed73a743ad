use crate::drivers::OrderingEvidence;
use crate::error::Result;
use crate::solver::SolutionField;

use super::report::{uniform_band, CheckReport};

/// `max (y − y′)` over all nodes and paths against `tol + 3·SE`. The report
/// is marked vacuous when the sampled ordering of the data fails.
pub fn comparison_check(
    sol: &SolutionField,
    sol_prime: &SolutionField,
    evidence: &OrderingEvidence,
    tol: f64,
) -> Result<CheckReport> {
    sol.check_compatible(sol_prime)?;
    let (worst, se) = uniform_band(&sol.y, &sol.y_se, &sol_prime.y, &sol_prime.y_se, |v| v);
    let mut r = CheckReport::new("comparison", worst, tol + 3.0 * se, sol.n_paths, se)
        .with_detail("y0_gap", sol_prime.y0.mean - sol.y0.mean)
        .with_detail("driver_max_excess", evidence.driver_max_excess)
        .with_detail("terminal_max_excess", evidence.terminal_max_excess);
    r.vacuous = !evidence.holds;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{constant, ordering_evidence, zero, SamplerPlan, TerminalCondition};
    use crate::kernel::{RandomSource, ScenarioBundle, ScenarioSpec, TimeGrid};
    use crate::solver::{solve_backward, SolverConfig};

    #[test]
    fn swapping_flips_the_sign() {
        let g = TimeGrid::build(1.0, 5, &[]).unwrap();
        let b = ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 10), RandomSource::new(1, 0)).unwrap();
        let xi = TerminalCondition::Constant(0.0);
        let (f0, f1) = (zero(), constant(0.5));
        let cfg = SolverConfig::default();
        let s0 = solve_backward(&b, &f0, &xi, &cfg).unwrap();
        let s1 = solve_backward(&b, &f1, &xi, &cfg).unwrap();
        let plan = SamplerPlan::default();
        let ev = ordering_evidence((&f0, &xi), (&f1, &xi), &b, &plan).unwrap();
        let up = comparison_check(&s0, &s1, &ev, 1e-9).unwrap();
        assert!(up.pass && !up.vacuous);
        assert!((up.margin - 0.0).abs() < 1e-12);
        let ev = ordering_evidence((&f1, &xi), (&f0, &xi), &b, &plan).unwrap();
        let down = comparison_check(&s1, &s0, &ev, 1e-9).unwrap();
        assert!(down.vacuous && !down.pass);
        assert!((down.margin - 0.5).abs() < 1e-12);
    }
}
