use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::{check_config, CheckSpec, DriverBlock, ExperimentConfig, Expectation, ProblemBlock, Role};
use crate::analytics::{
    apriori_bound, check_apriori, comparison_check, kazamaki_statistic, norm_bound_checks, stability_metrics,
    stochastic_exponential_mean, CheckReport, StabilityMetrics,
};
use crate::drivers::{
    ordering_evidence, validate_assumptions, DriverSpec, OptionValue, SamplerPlan, TerminalCondition, ValidationReport,
};
use crate::error::{LabError, Result};
use crate::kernel::{ScenarioBundle, ScenarioSpec};
use crate::solver::{
    exponential_transform_reference, nested_mc_oracle, solve_backward, solve_ladder, LadderMode, OracleConfig,
    SolutionField, SolverConfig,
};
use crate::stats::{round_sig, Estimate};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Significant digits kept for floats in written reports.
pub const REPORT_DIGITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub driver: String,
    #[serde(flatten)]
    pub metrics: StabilityMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub level: f64,
    pub y0: Estimate,
    /// Share of paths on which the driver is switched off before `T`.
    pub gated_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Tables {
    pub stability: Vec<StabilityRow>,
    pub ladder: Vec<LadderRow>,
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_paths: usize,
    pub steps: usize,
    pub method: String,
    pub y0: Estimate,
    pub checks: Vec<CheckReport>,
    pub tables: Tables,
    pub pass: bool,
    pub wall_clock_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

impl ExperimentReport {
    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// JSON with floats rounded to [`REPORT_DIGITS`] significant digits.
    pub fn to_json(&self) -> String {
        rounded_json(self)
    }
}

fn round_value(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x, REPORT_DIGITS)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(round_value).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_value(v))).collect()),
        other => other,
    }
}

pub fn rounded_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).map(round_value).unwrap_or(Value::Null);
    serde_json::to_string_pretty(&v).unwrap_or_default()
}

/// Hash of everything that determines the numbers in a report.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output = Default::default();
    let text = serde_json::to_string(&c).unwrap_or_default();
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

fn describe_driver(b: &DriverBlock) -> String {
    let opts: Vec<String> = b
        .options
        .iter()
        .map(|(k, v)| match v {
            OptionValue::Number(x) => format!("{k}={x}"),
            OptionValue::Numbers(x) => format!("{k}={x:?}"),
            OptionValue::Matrix(x) => format!("{k}={x:?}"),
            OptionValue::Text(x) => format!("{k}={x}"),
        })
        .collect();
    let scale = b.scale.map(|c| format!("*{c}")).unwrap_or_default();
    if opts.is_empty() {
        format!("{}{scale}", b.name)
    } else {
        format!("{}({}){scale}", b.name, opts.join(","))
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    bundle: ScenarioBundle,
    driver: DriverSpec,
    xi: TerminalCondition,
    solver: SolverConfig,
    solution: SolutionField,
}

impl Context<'_> {
    fn problem(&self, block: Option<&ProblemBlock>) -> Result<(DriverSpec, TerminalCondition)> {
        let driver = match block.and_then(|b| b.driver.as_ref()) {
            Some(d) => d.build(self.bundle.c_a())?,
            None => self.driver.clone(),
        };
        let xi = match block.and_then(|b| b.terminal.as_ref()) {
            Some(t) => t.build(),
            None => self.xi.clone(),
        };
        Ok((driver, xi))
    }

    fn solve(&self, driver: &DriverSpec, xi: &TerminalCondition) -> Result<SolutionField> {
        solve_backward(&self.bundle, driver, xi, &self.solver)
    }

    fn run_check(&self, spec: &CheckSpec, out: &mut Vec<CheckReport>, tables: &mut Tables) -> Result<()> {
        let sol = &self.solution;
        let n = sol.n_paths;
        match spec {
            CheckSpec::Y0 { target, abs_tol } => {
                let err = (sol.y0.mean - target).abs();
                let mut tol = 3.0 * sol.y0.se + 1e-10;
                if let Some(a) = abs_tol {
                    tol = tol.min(*a);
                }
                out.push(
                    CheckReport::new("y0", err, tol, n, sol.y0.se)
                        .with_detail("y0", sol.y0.mean)
                        .with_detail("target", *target),
                );
            }
            CheckSpec::Apriori { tol, x0_target } => {
                let bound = apriori_bound(&self.bundle, &self.xi, &self.driver.params, &self.solver.basis)?;
                out.push(check_apriori(sol, &bound, *tol)?);
                if let Some(t) = x0_target {
                    out.push(
                        CheckReport::new(
                            "apriori_x0",
                            (bound.x0.mean - t).abs(),
                            3.0 * bound.x0.se + 1e-6,
                            n,
                            bound.x0.se,
                        )
                        .with_detail("x0", bound.x0.mean)
                        .with_detail("target", *t),
                    );
                }
            }
            CheckSpec::NormBounds { p } => {
                for &p in p {
                    let (a, b) = norm_bound_checks(sol, &self.bundle, &self.xi, &self.driver.params, p)?;
                    out.push(a);
                    out.push(b);
                }
            }
            CheckSpec::Comparison {
                label,
                other,
                role,
                tol,
                expect_gap,
            } => {
                let (d2, xi2) = self.problem(Some(other))?;
                let sol2 = self.solve(&d2, &xi2)?;
                let main = (&self.driver, &self.xi, sol);
                let second = (&d2, &xi2, &sol2);
                let (lo, hi) = match role {
                    Role::Lower => (second, main),
                    Role::Upper => (main, second),
                };
                let ev = ordering_evidence((lo.0, lo.1), (hi.0, hi.1), &self.bundle, &SamplerPlan::default())?;
                let mut r = comparison_check(lo.2, hi.2, &ev, *tol)?;
                r.name = format!("comparison:{label}");
                out.push(r);
                if let Some(g) = expect_gap {
                    let gap = hi.2.y0.mean - lo.2.y0.mean;
                    out.push(
                        CheckReport::new(format!("comparison_gap:{label}"), (gap - g).abs(), 1e-10, n, 0.0)
                            .with_detail("gap", gap)
                            .with_detail("expected", *g),
                    );
                }
            }
            CheckSpec::Stability { base, family, expect, p } => {
                let (d0, xi0) = self.problem(base.as_ref())?;
                let sol0 = self.solve(&d0, &xi0)?;
                let mut rows: Vec<StabilityRow> = Vec::new();
                for block in family {
                    let dn = block.build(self.bundle.c_a())?;
                    let soln = self.solve(&dn, &xi0)?;
                    for &p in p {
                        let metrics = stability_metrics(&soln, &sol0, &self.bundle, (&dn, &xi0), (&d0, &xi0), p)?;
                        rows.push(StabilityRow {
                            driver: describe_driver(block),
                            metrics,
                        });
                    }
                }
                out.push(stability_verdict(&rows, *expect, n));
                tables.stability.extend(rows);
            }
            CheckSpec::Ladder {
                levels,
                lower,
                max_fraction,
            } => {
                let mode = match lower {
                    None => LadderMode::Upper,
                    Some(l) => LadderMode::Double { lower: *l },
                };
                let lad = solve_ladder(&self.bundle, &self.driver, &self.xi, levels, mode, &self.solver)?;
                let k = self.bundle.grid().steps();
                for (j, f) in lad.fields.iter().enumerate() {
                    tables.ladder.push(LadderRow {
                        level: lad.levels[j],
                        y0: f.y0,
                        gated_fraction: lad.gates[j].iter().filter(|g| **g < k).count() as f64 / n as f64,
                    });
                }
                let m = &lad.monotonicity;
                out.push(
                    CheckReport::new("ladder_monotonicity", m.fraction, *max_fraction, n, 0.0)
                        .with_detail("pairs_checked", m.pairs_checked as f64)
                        .with_detail("violations", m.violations as f64)
                        .with_detail("max_excess", m.max_excess),
                );
                if let Some(top) = lad.fields.last() {
                    let se = (top.y0.se.powi(2) + sol.y0.se.powi(2)).sqrt();
                    out.push(
                        CheckReport::new("ladder_top_vs_full", (top.y0.mean - sol.y0.mean).abs(), 3.0 * se + 1e-12, n, se)
                            .with_detail("top_y0", top.y0.mean)
                            .with_detail("full_y0", sol.y0.mean),
                    );
                }
            }
            CheckSpec::Reference {} => {
                let gamma = match self.cfg.driver.options.get("gamma") {
                    Some(OptionValue::Number(g)) => g * self.cfg.driver.scale.unwrap_or(1.0),
                    _ => return Err(LabError::invalid("reference check needs the `gamma` option")),
                };
                let r = exponential_transform_reference(&self.bundle, gamma, &self.xi, &self.solver.basis)?;
                let se = (r.y0.se.powi(2) + sol.y0.se.powi(2)).sqrt();
                out.push(
                    CheckReport::new("reference", (r.y0.mean - sol.y0.mean).abs(), 3.0 * se + 1e-12, n, se)
                        .with_detail("reference_y0", r.y0.mean)
                        .with_detail("reference_se", r.y0.se),
                );
            }
            CheckSpec::Oracle {
                branching,
                outer_paths,
            } => {
                let src = self.cfg.source();
                let mut spec: ScenarioSpec = self.cfg.scenario_spec();
                spec.n_paths = *outer_paths;
                let small = ScenarioBundle::simulate(
                    self.bundle.grid(),
                    &spec,
                    src.with_stream(self.cfg.scenario.stream.wrapping_add(1)),
                )?;
                let mut oc = OracleConfig::new(*branching, src.with_stream(self.cfg.scenario.stream.wrapping_add(2)));
                oc.solver = self.solver.clone();
                let o = nested_mc_oracle(&small, &self.driver, &self.xi, &oc)?;
                let se = (o.y0.se.powi(2) + sol.y0.se.powi(2)).sqrt();
                out.push(
                    CheckReport::new("oracle", (o.y0.mean - sol.y0.mean).abs(), 3.0 * se + 1e-12, n, se)
                        .with_detail("oracle_y0", o.y0.mean)
                        .with_detail("oracle_se", o.y0.se)
                        .with_detail("branching", *branching as f64),
                );
            }
            CheckSpec::ExpMartingale { q } => {
                for &q in q {
                    out.push(stochastic_exponential_mean(sol, &self.bundle, q)?.check());
                }
            }
            CheckSpec::Kazamaki {
                eta,
                q_tilde,
                every,
                target,
            } => {
                let k = self.bundle.grid().steps();
                let mut nodes: Vec<usize> = (0..=k).step_by(*every).collect();
                if nodes.last() != Some(&k) {
                    nodes.push(k);
                }
                let s = kazamaki_statistic(sol, &self.bundle, *eta, *q_tilde, &nodes)?;
                let (margin, tol) = match target {
                    _ if !s.finite => (f64::INFINITY, 0.0),
                    Some(t) => ((s.sup.mean - t).abs(), 3.0 * s.sup.se + 1e-12),
                    None => (0.0, 0.0),
                };
                out.push(
                    CheckReport::new("kazamaki", margin, tol, n, s.sup.se)
                        .with_detail("sup", s.sup.mean)
                        .with_detail("sup_node", s.sup_node as f64)
                        .with_detail("eta", *eta),
                );
            }
            CheckSpec::Validate { probes } => {
                let plan = SamplerPlan {
                    probes: *probes,
                    ..SamplerPlan::default()
                };
                let r = validate_assumptions(&self.driver, &self.bundle, &plan);
                let mut c = CheckReport::new("validate", r.violations() as f64, 0.0, n, 0.0);
                for cl in &r.clauses {
                    c = c.with_detail(&format!("{}_max_margin", cl.clause), cl.max_margin);
                }
                out.push(c);
                tables.validation = Some(r);
            }
        }
        Ok(())
    }
}

/// Converging families must show nonincreasing hypothesis and conclusion
/// statistics that end below where they started; diverging ones must not decay.
fn stability_verdict(rows: &[StabilityRow], expect: Expectation, n: usize) -> CheckReport {
    let mut orders: Vec<f64> = rows.iter().map(|r| r.metrics.p).collect();
    orders.sort_by(f64::total_cmp);
    orders.dedup();
    let mut margin = f64::NEG_INFINITY;
    let mut se = 0.0f64;
    let mut last_h = 0.0;
    let mut last_c = 0.0;
    for p in orders {
        let seq: Vec<&StabilityMetrics> = rows.iter().map(|r| &r.metrics).filter(|m| m.p == p).collect();
        let (first, last) = (seq[0], seq[seq.len() - 1]);
        last_h = last.hypothesis.mean;
        last_c = last.conclusion_y.mean;
        let band = |a: &Estimate, b: &Estimate| 3.0 * (a.se.powi(2) + b.se.powi(2)).sqrt() + 1e-12;
        match expect {
            Expectation::Converges => {
                for w in seq.windows(2) {
                    margin = margin.max(w[1].hypothesis.mean - w[0].hypothesis.mean - band(&w[1].hypothesis, &w[0].hypothesis));
                    margin =
                        margin.max(w[1].conclusion_y.mean - w[0].conclusion_y.mean - band(&w[1].conclusion_y, &w[0].conclusion_y));
                }
                margin = margin.max(last.hypothesis.mean - first.hypothesis.mean + if seq.len() > 1 { 1e-12 } else { 0.0 });
            }
            Expectation::Diverges => {
                margin = margin.max(first.hypothesis.mean - last.hypothesis.mean - band(&first.hypothesis, &last.hypothesis));
                margin =
                    margin.max(first.conclusion_y.mean - last.conclusion_y.mean - band(&first.conclusion_y, &last.conclusion_y));
            }
        }
        se = se.max(last.conclusion_y.se);
    }
    CheckReport::new("stability", margin, 0.0, n, se)
        .with_detail("last_hypothesis", last_h)
        .with_detail("last_conclusion_y", last_c)
}

/// Runs an experiment; when `out` is given, writes `report.json`,
/// `checks.json` and `solution.csv` there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    run_inner(cfg, out).map_err(|e| e.in_experiment(&cfg.name))
}

fn run_inner(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let started = Instant::now();
    check_config(cfg, "")?;
    let grid = cfg.grid()?;
    let bundle = ScenarioBundle::simulate(&grid, &cfg.scenario_spec(), cfg.source())?;
    let driver = cfg.driver.build(bundle.c_a())?;
    let xi = cfg.terminal.build();
    let solver = cfg.solver.to_config();
    let solution = solve_backward(&bundle, &driver, &xi, &solver)?;
    let ctx = Context {
        cfg,
        bundle,
        driver,
        xi,
        solver,
        solution,
    };
    let mut checks = Vec::new();
    let mut tables = Tables::default();
    for spec in &cfg.checks {
        ctx.run_check(spec, &mut checks, &mut tables)?;
    }
    let pass = checks.iter().all(|c| c.pass);
    let mut versions = BTreeMap::new();
    versions.insert("qbsde".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("report_schema".to_string(), REPORT_SCHEMA_VERSION.to_string());
    let report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        name: cfg.name.clone(),
        config_hash: config_hash(cfg),
        seed: cfg.scenario.seed,
        n_paths: cfg.scenario.n_paths,
        steps: ctx.bundle.grid().steps(),
        method: ctx.solution.meta.method.clone(),
        y0: ctx.solution.y0,
        checks,
        tables,
        pass,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        versions,
    };
    if let Some(dir) = out {
        write_outputs(dir, &report, &ctx.solution, cfg.output.csv_paths)?;
    }
    Ok(report)
}

pub fn write_outputs(dir: &Path, report: &ExperimentReport, solution: &SolutionField, csv_paths: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(dir.join("checks.json"), rounded_json(&report.checks))?;
    write_solution_csv(&dir.join("solution.csv"), solution, csv_paths)
}

/// One row per node and path (first `max_paths` paths).
pub fn write_solution_csv(path: &Path, solution: &SolutionField, max_paths: usize) -> Result<()> {
    let io = |e: csv::Error| LabError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let (d, o) = (solution.dim_m, solution.dim_orth);
    let mut header = vec!["node".to_string(), "t".into(), "path".into(), "y".into(), "y_se".into()];
    header.extend((0..d).map(|k| format!("z{k}")));
    header.extend((0..o).map(|k| format!("z_orth{k}")));
    w.write_record(&header).map_err(io)?;
    let k = solution.steps();
    let fmt = |x: f64| format!("{}", round_sig(x, REPORT_DIGITS));
    for i in 0..=k {
        for p in 0..solution.n_paths.min(max_paths) {
            let mut row = vec![i.to_string(), fmt(solution.grid.t(i)), p.to_string()];
            row.push(fmt(solution.y[i][p]));
            row.push(fmt(solution.y_se[i][p]));
            if i < k {
                row.extend(solution.z_at(i, p).iter().map(|v| fmt(*v)));
                row.extend(solution.z_orth_at(i, p).iter().map(|v| fmt(*v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), d + o));
            }
            w.write_record(&row).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
