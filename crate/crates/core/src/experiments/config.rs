use serde::{Deserialize, Serialize};

use crate::drivers::{make_builtin, scaled, DriverOptions, DriverSpec, TerminalCondition};
use crate::error::{ConfigIssue, LabError, Result};
use crate::kernel::{ClockKind, ClockSpec, FactorSpec, RandomSource, ScenarioSpec, TimeGrid};
use crate::solver::{contraction_ok, BasisSpec, SolverConfig, MAX_ORACLE_STEPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub scenario: ScenarioBlock,
    pub driver: DriverBlock,
    pub terminal: TerminalBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub output: OutputBlock,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub horizon: f64,
    pub steps: usize,
    /// Times forced onto the grid.
    #[serde(default)]
    pub mandatory_times: Vec<f64>,
    #[serde(default = "one")]
    pub dim_m: usize,
    #[serde(default)]
    pub dim_orth: usize,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default)]
    pub clock: Option<ClockBlock>,
    #[serde(default)]
    pub factor: Option<FactorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockBlock {
    Identity {
        c_a: Option<f64>,
        k_a: Option<f64>,
    },
    Scaled {
        rate: f64,
        c_a: Option<f64>,
        k_a: Option<f64>,
    },
    Piecewise {
        knots: Vec<(f64, f64)>,
        c_a: Option<f64>,
        k_a: Option<f64>,
    },
}

impl ClockBlock {
    pub fn to_spec(&self) -> ClockSpec {
        let (kind, c_a, k_a) = match self {
            ClockBlock::Identity { c_a, k_a } => (ClockKind::Identity, c_a, k_a),
            ClockBlock::Scaled { rate, c_a, k_a } => (ClockKind::Scaled { rate: *rate }, c_a, k_a),
            ClockBlock::Piecewise { knots, c_a, k_a } => (ClockKind::Piecewise { knots: knots.clone() }, c_a, k_a),
        };
        ClockSpec {
            kind,
            c_a: *c_a,
            k_a: *k_a,
        }
    }
}

/// Declared constants replacing the driver's own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub beta: Option<f64>,
    pub beta_bar: Option<f64>,
    pub beta_f: Option<f64>,
    pub gamma: Option<f64>,
    pub c_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverBlock {
    pub name: String,
    #[serde(default)]
    pub options: DriverOptions,
    /// Multiplies the driver by a positive constant.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub params: Option<ParamOverrides>,
}

impl DriverBlock {
    /// Builds the driver; `c_A` comes from the scenario clock unless overridden.
    pub fn build(&self, c_a: f64) -> Result<DriverSpec> {
        let mut d = make_builtin(&self.name, &self.options)?;
        if let Some(c) = self.scale {
            d = scaled(&d, c)?;
        }
        d.params.c_a = c_a;
        if let Some(o) = &self.params {
            let p = &mut d.params;
            p.beta = o.beta.unwrap_or(p.beta);
            p.beta_bar = o.beta_bar.unwrap_or(p.beta_bar);
            p.beta_f = o.beta_f.unwrap_or(p.beta_f);
            p.gamma = o.gamma.unwrap_or(p.gamma);
            p.c_a = o.c_a.unwrap_or(p.c_a);
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalBlock {
    Constant {
        value: f64,
    },
    Affine {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        m: Vec<f64>,
        #[serde(default)]
        orth: Vec<f64>,
    },
    AbsAffine {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        m: Vec<f64>,
        #[serde(default)]
        orth: Vec<f64>,
    },
}

impl TerminalBlock {
    pub fn build(&self) -> TerminalCondition {
        match self.clone() {
            TerminalBlock::Constant { value } => TerminalCondition::Constant(value),
            TerminalBlock::Affine { intercept, m, orth } => TerminalCondition::Affine { intercept, m, orth },
            TerminalBlock::AbsAffine { intercept, m, orth } => TerminalCondition::AbsAffine { intercept, m, orth },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
    #[serde(default = "default_true")]
    pub implicit: bool,
}

fn default_picard_tol() -> f64 {
    1e-10
}

fn default_picard_max() -> usize {
    50
}

fn default_true() -> bool {
    true
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            basis: BasisSpec::default(),
            picard_tol: default_picard_tol(),
            picard_max: default_picard_max(),
            implicit: true,
        }
    }
}

impl SolverBlock {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            basis: self.basis.clone(),
            picard_tol: self.picard_tol,
            picard_max: self.picard_max,
            implicit: self.implicit,
            ..SolverConfig::default()
        }
    }
}

/// A second problem; missing parts are taken from the main experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default)]
    pub driver: Option<DriverBlock>,
    #[serde(default)]
    pub terminal: Option<TerminalBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The other problem has the smaller data.
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Converges,
    Diverges,
}

fn default_apriori_tol() -> f64 {
    1e-6
}

fn default_p() -> Vec<f64> {
    vec![2.0, 4.0]
}

fn default_stability_p() -> Vec<f64> {
    vec![1.0, 2.0]
}

fn default_comparison_tol() -> f64 {
    1e-9
}

fn default_branching() -> usize {
    1000
}

fn default_max_fraction() -> f64 {
    1e-3
}

fn default_probes() -> usize {
    10_000
}

fn default_q_tilde() -> f64 {
    1.0
}

/// One requested analytic with its tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// `|y0 − target| ≤ 3 SE`, and `≤ abs_tol` when given.
    Y0 {
        target: f64,
        #[serde(default)]
        abs_tol: Option<f64>,
    },
    Apriori {
        #[serde(default = "default_apriori_tol")]
        tol: f64,
        /// Expected `X_0`, checked within 3 SE when given.
        #[serde(default)]
        x0_target: Option<f64>,
    },
    NormBounds {
        #[serde(default = "default_p")]
        p: Vec<f64>,
    },
    Comparison {
        label: String,
        other: ProblemBlock,
        role: Role,
        #[serde(default = "default_comparison_tol")]
        tol: f64,
        /// Expected `Y′_0 − Y_0` (upper minus lower), checked to 1e-10.
        #[serde(default)]
        expect_gap: Option<f64>,
    },
    Stability {
        #[serde(default)]
        base: Option<ProblemBlock>,
        family: Vec<DriverBlock>,
        expect: Expectation,
        #[serde(default = "default_stability_p")]
        p: Vec<f64>,
    },
    Ladder {
        levels: Vec<f64>,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default = "default_max_fraction")]
        max_fraction: f64,
    },
    Reference {},
    Oracle {
        #[serde(default = "default_branching")]
        branching: usize,
        #[serde(default = "one")]
        outer_paths: usize,
    },
    ExpMartingale {
        q: Vec<f64>,
    },
    Kazamaki {
        eta: f64,
        #[serde(default = "default_q_tilde")]
        q_tilde: f64,
        #[serde(default = "one")]
        every: usize,
        #[serde(default)]
        target: Option<f64>,
    },
    Validate {
        #[serde(default = "default_probes")]
        probes: usize,
    },
}

impl CheckSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CheckSpec::Y0 { .. } => "y0",
            CheckSpec::Apriori { .. } => "apriori",
            CheckSpec::NormBounds { .. } => "norm_bounds",
            CheckSpec::Comparison { .. } => "comparison",
            CheckSpec::Stability { .. } => "stability",
            CheckSpec::Ladder { .. } => "ladder",
            CheckSpec::Reference {} => "reference",
            CheckSpec::Oracle { .. } => "oracle",
            CheckSpec::ExpMartingale { .. } => "exp_martingale",
            CheckSpec::Kazamaki { .. } => "kazamaki",
            CheckSpec::Validate { .. } => "validate",
        }
    }
}

fn default_csv_paths() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<String>,
    /// Paths written to the solution CSV.
    #[serde(default = "default_csv_paths")]
    pub csv_paths: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: None,
            csv_paths: default_csv_paths(),
        }
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::build(self.scenario.horizon, self.scenario.steps, &self.scenario.mandatory_times)
    }

    pub fn clock(&self) -> ClockSpec {
        self.scenario.clock.as_ref().map_or_else(ClockSpec::identity, ClockBlock::to_spec)
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let mut s = ScenarioSpec::brownian(self.scenario.dim_m, self.scenario.dim_orth, self.scenario.n_paths);
        s.clock = self.clock();
        if let Some(f) = &self.scenario.factor {
            s.factor = f.clone();
        }
        s
    }

    pub fn source(&self) -> RandomSource {
        RandomSource::new(self.scenario.seed, self.scenario.stream)
    }

    /// Replaces the path count and/or seed.
    pub fn with_overrides(mut self, paths: Option<usize>, seed: Option<u64>) -> Self {
        if let Some(n) = paths {
            self.scenario.n_paths = n;
        }
        if let Some(s) = seed {
            self.scenario.seed = s;
        }
        self
    }
}

/// 1-based line of the first `key = …` inside `[section]` (or the section
/// header itself), searching the raw text.
fn line_of(text: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let mut in_section = section.is_empty();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_matches(|c| c == '[' || c == ']').trim();
            in_section = name == section;
            if in_section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some(k) = key {
                let head = line.split('=').next().unwrap_or("").trim();
                if head == k {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

struct Issues<'a> {
    text: &'a str,
    list: Vec<ConfigIssue>,
}

impl Issues<'_> {
    fn push(&mut self, section: &str, key: Option<&str>, message: impl Into<String>) {
        let path = match key {
            Some(k) if section.is_empty() => k.to_string(),
            Some(k) => format!("{section}.{k}"),
            None => section.to_string(),
        };
        self.list.push(ConfigIssue {
            path,
            message: message.into(),
            line: line_of(self.text, section, key),
        });
    }
}

fn byte_to_line(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and schema-checks a configuration; every problem found is
/// reported with the path to the offending key.
pub fn validate_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        LabError::Config(vec![ConfigIssue {
            path: String::new(),
            message: e.message().trim().to_string(),
            line: e.span().map(|s| byte_to_line(text, s.start)),
        }])
    })?;
    check_config(&cfg, text)?;
    Ok(cfg)
}

/// Semantic checks on an already parsed configuration. `text` is only used
/// to attach line numbers.
pub fn check_config(cfg: &ExperimentConfig, text: &str) -> Result<()> {
    let mut is = Issues { text, list: Vec::new() };
    if cfg.name.trim().is_empty() {
        is.push("", Some("name"), "experiment name must not be empty");
    }
    let s = &cfg.scenario;
    if s.n_paths == 0 {
        is.push("scenario", Some("n_paths"), "n_paths must be at least 1");
    }
    if s.dim_m == 0 {
        is.push("scenario", Some("dim_m"), "dim_m must be at least 1");
    }
    let grid = match cfg.grid() {
        Ok(g) => Some(g),
        Err(e) => {
            is.push("scenario", Some("steps"), e.to_string());
            None
        }
    };
    let mut c_a = 1.0;
    let mut max_da = None;
    if let Some(g) = &grid {
        let clock = cfg.clock();
        match clock.evaluate_on(g) {
            Ok(a) => {
                c_a = clock.c_a(g);
                max_da = Some(a.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max));
            }
            Err(e) => is.push("scenario.clock", None, e.to_string()),
        }
        if let Some(f) = &s.factor {
            if let Err(e) = f.resolve(s.dim_m, g.len()) {
                is.push("scenario.factor", None, e.to_string());
            }
        }
    }

    let main = match cfg.driver.build(c_a) {
        Ok(d) => Some(d),
        Err(e) => {
            let key = if matches!(e, LabError::NotFound(_)) { "name" } else { "options" };
            is.push("driver", Some(key), e.to_string());
            None
        }
    };
    if let (Some(d), Some(da)) = (&main, max_da) {
        if let Err(e) = contraction_ok(d.params.beta_bar, da) {
            is.push("driver", Some("params"), e.to_string());
        }
        if let Some(dim) = d.dim {
            if dim != s.dim_m {
                is.push("scenario", Some("dim_m"), format!("driver `{}` needs dim_m = {dim}", d.name));
            }
        }
    }
    if let Err(e) = cfg.terminal.build().check_dims(s.dim_m, s.dim_orth) {
        is.push("terminal", None, e.to_string());
    }
    if let Err(e) = cfg.solver.basis.check() {
        is.push("solver", Some("basis"), e.to_string());
    }
    if !(cfg.solver.picard_tol > 0.0) || cfg.solver.picard_max == 0 {
        is.push("solver", None, "picard_tol must be positive and picard_max at least 1");
    }

    let mut seen = std::collections::BTreeSet::new();
    for (j, check) in cfg.checks.iter().enumerate() {
        let section = format!("checks[{j}]");
        let label = match check {
            CheckSpec::Comparison { label, .. } => format!("comparison:{label}"),
            other => other.kind().to_string(),
        };
        if !seen.insert(label.clone()) {
            is.push(&section, None, format!("check `{label}` is requested twice"));
        }
        let driver_ok = |is: &mut Issues<'_>, b: &DriverBlock, what: &str| {
            if let Err(e) = b.build(c_a) {
                is.push(&section, Some(what), e.to_string());
            }
        };
        match check {
            CheckSpec::NormBounds { p } if p.iter().any(|v| !(*v > 1.0)) => {
                is.push(&section, Some("p"), "norm bound orders must exceed 1");
            }
            CheckSpec::Comparison { other, .. } => {
                if let Some(b) = &other.driver {
                    driver_ok(&mut is, b, "other");
                }
            }
            CheckSpec::Stability { base, family, p, .. } => {
                if family.is_empty() {
                    is.push(&section, Some("family"), "stability family must not be empty");
                }
                for b in family {
                    driver_ok(&mut is, b, "family");
                }
                if let Some(b) = base.as_ref().and_then(|b| b.driver.as_ref()) {
                    driver_ok(&mut is, b, "base");
                }
                if p.iter().any(|v| !(*v > 0.0)) {
                    is.push(&section, Some("p"), "stability orders must be positive");
                }
            }
            CheckSpec::Ladder { levels, lower, max_fraction } => {
                if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] < 0.0 {
                    is.push(&section, Some("levels"), "levels must be nonnegative and increasing");
                }
                if lower.is_some_and(|l| !(l >= 0.0)) || !(*max_fraction >= 0.0) {
                    is.push(&section, None, "lower and max_fraction must be nonnegative");
                }
            }
            CheckSpec::Oracle { branching, outer_paths } => {
                if s.steps > MAX_ORACLE_STEPS {
                    is.push(
                        &section,
                        None,
                        format!("the nested oracle needs at most {MAX_ORACLE_STEPS} steps, scenario has {}", s.steps),
                    );
                }
                if *branching < 2 || *outer_paths == 0 {
                    is.push(&section, Some("branching"), "branching must be >= 2 and outer_paths >= 1");
                }
            }
            CheckSpec::Kazamaki { eta, every, .. } => {
                if *eta == 1.0 || *every == 0 {
                    is.push(&section, Some("eta"), "eta must differ from 1 and every must be positive");
                }
            }
            CheckSpec::Reference {} => {
                if cfg.driver.name != "pure_quadratic" {
                    is.push(&section, None, "the exponential-transform reference needs the pure_quadratic driver");
                }
            }
            CheckSpec::Validate { probes } if *probes == 0 => {
                is.push(&section, Some("probes"), "probes must be positive");
            }
            _ => {}
        }
    }
    if cfg.output.csv_paths == 0 {
        is.push("output", Some("csv_paths"), "csv_paths must be at least 1");
    }
    if is.list.is_empty() {
        Ok(())
    } else {
        Err(LabError::Config(is.list))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"

[scenario]
horizon = 1.0
steps = 4
n_paths = 10
seed = 1

[driver]
name = "zero"

[terminal]
kind = "constant"
value = 0.0
"#;

    fn issues(text: &str) -> Vec<ConfigIssue> {
        match validate_config(text) {
            Err(LabError::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = validate_config(MINIMAL).unwrap();
        assert_eq!(c.scenario.dim_m, 1);
        assert_eq!(c.solver, SolverBlock::default());
        assert!(c.checks.is_empty());
        assert_eq!(c.output.csv_paths, 100);
    }

    #[test]
    fn contraction_violation_is_named() {
        let text = MINIMAL.replace("name = \"zero\"", "name = \"zero\"\nparams = { beta_bar = 2.4 }");
        let v = issues(&text);
        assert!(v.iter().any(|i| i.message.contains("contraction")), "{v:?}");
    }

    #[test]
    fn missing_option_is_reported() {
        let text = MINIMAL.replace("name = \"zero\"", "name = \"step_family\"");
        let v = issues(&text);
        assert_eq!(v[0].path, "driver.options");
        assert!(v[0].message.contains("requires option `n`"));
        assert_eq!(v[0].line, Some(text.lines().position(|l| l.starts_with("[driver]")).unwrap() + 1));
    }

    #[test]
    fn unknown_keys_carry_a_line() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\ncolour = 3");
        let v = issues(&text);
        assert!(v[0].message.contains("colour"), "{v:?}");
        assert_eq!(v[0].line, Some(9));
    }

    #[test]
    fn overrides_apply() {
        let c = validate_config(MINIMAL).unwrap().with_overrides(Some(7), Some(99));
        assert_eq!((c.scenario.n_paths, c.scenario.seed), (7, 99));
    }
}
