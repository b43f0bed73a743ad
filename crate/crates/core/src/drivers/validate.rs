use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::builtin::DriverSpec;
use super::terminal::TerminalCondition;
use crate::error::Result;
use crate::kernel::{Point, ScenarioBundle};

/// Where and how often drivers are probed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerPlan {
    pub probes: usize,
    /// Probes draw `y` uniformly from `[-y_max, y_max]`.
    pub y_max: f64,
    /// Probes draw `z` uniformly from the ball `‖z‖ ≤ z_max`.
    pub z_max: f64,
    pub seed: u64,
}

impl Default for SamplerPlan {
    fn default() -> Self {
        SamplerPlan {
            probes: 10_000,
            y_max: 5.0,
            z_max: 5.0,
            seed: 0x5eed,
        }
    }
}

/// Result of probing one assumption clause.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClauseReport {
    pub clause: String,
    /// False when the clause does not apply (e.g. convexity not declared).
    pub checked: bool,
    pub probes: usize,
    pub violations: usize,
    /// Largest observed `lhs − rhs`; ≤ 0 means no violation.
    pub max_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub driver: String,
    pub probes: usize,
    pub clauses: Vec<ClauseReport>,
}

impl ValidationReport {
    pub fn violations(&self) -> usize {
        self.clauses.iter().map(|c| c.violations).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseReport> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

struct Tally {
    report: ClauseReport,
}

impl Tally {
    fn new(clause: &str, checked: bool) -> Self {
        Tally {
            report: ClauseReport {
                clause: clause.into(),
                checked,
                probes: 0,
                violations: 0,
                max_margin: if checked { f64::NEG_INFINITY } else { 0.0 },
            },
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64) {
        let margin = lhs - rhs;
        let r = &mut self.report;
        r.probes += 1;
        if margin.is_nan() || margin > 1e-9 * (1.0 + rhs.abs()) {
            r.violations += 1;
        }
        r.max_margin = if margin.is_nan() { f64::INFINITY } else { r.max_margin.max(margin) };
    }

    fn finish(mut self) -> ClauseReport {
        if self.report.probes == 0 && self.report.checked {
            self.report.max_margin = 0.0;
        }
        self.report
    }
}

fn ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    g.into_iter().map(|x| x * r / norm).collect()
}

fn random_point<'a>(bundle: &'a ScenarioBundle, rng: &mut ChaCha8Rng) -> Point<'a> {
    let node = rng.random_range(0..bundle.grid().steps());
    let path = rng.random_range(0..bundle.n_paths());
    bundle.point(node, path)
}

/// Probes the growth, Lipschitz, convexity and clock conditions of a driver
/// against its declared parameters. Violations are counted, never raised.
pub fn validate_assumptions(
    driver: &DriverSpec,
    bundle: &ScenarioBundle,
    plan: &SamplerPlan,
) -> ValidationReport {
    let p = &driver.params;
    let d = bundle.dim_m();
    let mut clauses = Vec::new();

    let mut params = Tally::new("params", true);
    let gamma_need = p.beta.max(1.0);
    params.record(gamma_need, p.gamma);
    params.record(-p.beta, 0.0);
    params.record(-p.beta_bar, 0.0);
    params.record(-p.c_a, 0.0);
    params.record(if p.beta_f > 0.0 { 0.0 } else { 1.0 }, 0.0);
    clauses.push(params.finish());

    let mut dim = Tally::new("dimension", driver.dim.is_some());
    if let Some(req) = driver.dim {
        dim.record(if req == d { 0.0 } else { 1.0 }, 0.0);
    }
    let dim_ok = driver.dim.is_none_or(|r| r == d);
    clauses.push(dim.finish());

    let mut kinks = Tally::new("kinks_on_grid", !driver.kinks.is_empty());
    for &k in &driver.kinks {
        if k < bundle.grid().horizon() {
            kinks.record(if bundle.grid().index_of(k).is_some() { 0.0 } else { 1.0 }, 0.0);
        }
    }
    clauses.push(kinks.finish());

    let mut clock = Tally::new("clock", p.beta_bar > 0.0 || p.c_a > 0.0);
    if clock.report.checked {
        for (&t, &a) in bundle.grid().nodes().iter().zip(bundle.clock()) {
            clock.record(a, p.c_a * t);
        }
    }
    clauses.push(clock.finish());

    let mut lip_y = Tally::new("lipschitz_y", dim_ok);
    let mut convex = Tally::new("convexity", dim_ok && driver.convex_in_z);
    let mut growth = Tally::new("growth", dim_ok);
    let mut lip_z = Tally::new("local_lipschitz_z", dim_ok);
    let mut derived = Tally::new("derived_bound", dim_ok);
    let mut sign = Tally::new("nonnegative", dim_ok && driver.nonnegative);

    if dim_ok {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        for _ in 0..plan.probes {
            let at = random_point(bundle, &mut rng);
            let y1 = rng.random_range(-plan.y_max..=plan.y_max);
            let y2 = rng.random_range(-plan.y_max..=plan.y_max);
            let z = ball(&mut rng, d, plan.z_max);
            let z1 = ball(&mut rng, d, plan.z_max);
            let z2 = ball(&mut rng, d, plan.z_max);
            let theta: f64 = rng.random();

            let alpha = p.alpha_at(&at);
            let f = driver.eval(&at, y1, &z);
            let quad = 0.5 * p.gamma * at.b_norm_sq(&z);

            lip_y.record((f - driver.eval(&at, y2, &z)).abs(), p.beta_bar * (y1 - y2).abs());
            growth.record(f.abs(), alpha + alpha * p.beta * y1.abs() + quad);
            derived.record(f.abs(), alpha + p.beta_bar * y1.abs() + quad);
            if driver.nonnegative {
                sign.record(-f, 0.0);
            }

            let f1 = driver.eval(&at, y1, &z1);
            let f2 = driver.eval(&at, y1, &z2);
            if driver.convex_in_z {
                let zm: Vec<f64> = z1
                    .iter()
                    .zip(&z2)
                    .map(|(a, b)| theta * a + (1.0 - theta) * b)
                    .collect();
                convex.record(driver.eval(&at, y1, &zm), theta * f1 + (1.0 - theta) * f2);
            }
            let lam = p.lambda.lambda(&at, d);
            let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
            let rhs = p.beta_f
                * (at.b_norm_sq(&lam).sqrt() + at.b_norm_sq(&z1).sqrt() + at.b_norm_sq(&z2).sqrt())
                * at.b_norm_sq(&dz).sqrt();
            lip_z.record((f1 - f2).abs(), rhs);
        }
    }
    clauses.extend([
        lip_y.finish(),
        convex.finish(),
        growth.finish(),
        lip_z.finish(),
        derived.finish(),
        sign.finish(),
    ]);
    ValidationReport {
        driver: driver.name.clone(),
        probes: plan.probes,
        clauses,
    }
}

/// Sampled evidence that `F ≤ F′` and `ξ ≤ ξ′`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingEvidence {
    pub probes: usize,
    /// Largest sampled `F − F′`.
    pub driver_max_excess: f64,
    /// Largest `ξ − ξ′` over the simulated paths.
    pub terminal_max_excess: f64,
    pub holds: bool,
}

/// Probes `F ≤ F′` at random points and checks `ξ ≤ ξ′` on every path.
pub fn ordering_evidence(
    lower: (&DriverSpec, &TerminalCondition),
    upper: (&DriverSpec, &TerminalCondition),
    bundle: &ScenarioBundle,
    plan: &SamplerPlan,
) -> Result<OrderingEvidence> {
    let d = bundle.dim_m();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x0bde);
    let mut driver_max = f64::NEG_INFINITY;
    for _ in 0..plan.probes {
        let at = random_point(bundle, &mut rng);
        let y = rng.random_range(-plan.y_max..=plan.y_max);
        let z = ball(&mut rng, d, plan.z_max);
        driver_max = driver_max.max(lower.0.eval(&at, y, &z) - upper.0.eval(&at, y, &z));
    }
    let xl = lower.1.values(bundle)?;
    let xu = upper.1.values(bundle)?;
    let term_max = xl
        .iter()
        .zip(&xu)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(OrderingEvidence {
        probes: plan.probes,
        driver_max_excess: driver_max,
        terminal_max_excess: term_max,
        holds: driver_max <= 1e-12 && term_max <= 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::builtin::{pure_quadratic, zero};
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    fn bundle() -> ScenarioBundle {
        let g = TimeGrid::build(1.0, 10, &[]).unwrap();
        ScenarioBundle::simulate(&g, &ScenarioSpec::brownian(1, 0, 50), RandomSource::new(3, 0)).unwrap()
    }

    #[test]
    fn zero_driver_has_zero_margins() {
        let r = validate_assumptions(&zero(), &bundle(), &SamplerPlan::default());
        assert!(r.is_clean());
        for c in ["lipschitz_y", "growth", "convexity", "local_lipschitz_z"] {
            assert!(r.clause(c).unwrap().max_margin <= 0.0, "{c}");
        }
    }

    #[test]
    fn misdeclared_gamma_is_flagged() {
        let mut d = pure_quadratic(1.0).unwrap();
        d.params.gamma = 0.5;
        let r = validate_assumptions(&d, &bundle(), &SamplerPlan::default());
        assert!(r.clause("growth").unwrap().violations > 0);
        assert!(r.clause("growth").unwrap().max_margin > 0.0);
        assert!(r.clause("params").unwrap().violations > 0);
    }
}
