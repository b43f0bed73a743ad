use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::constraint::ConstraintSet;
use super::params::{LambdaProcess, ParamSet};
use crate::error::{LabError, Result};
use crate::kernel::Point;

/// The nonlinearity `F(t, y, z)`; must be a pure function of its arguments.
pub trait Driver: Send + Sync + fmt::Debug {
    fn eval(&self, at: &Point<'_>, y: f64, z: &[f64]) -> f64;
}

/// A driver together with its declared parameters and structural flags.
#[derive(Debug, Clone)]
pub struct DriverSpec {
    pub name: String,
    pub driver: Arc<dyn Driver>,
    pub params: ParamSet,
    pub depends_on_y: bool,
    pub convex_in_z: bool,
    /// `F ≥ 0` everywhere.
    pub nonnegative: bool,
    /// Required dimension of `M`, if any.
    pub dim: Option<usize>,
    /// Times at which `F` jumps; these must be grid nodes.
    pub kinks: Vec<f64>,
}

impl DriverSpec {
    pub fn eval(&self, at: &Point<'_>, y: f64, z: &[f64]) -> f64 {
        self.driver.eval(at, y, z)
    }

    pub fn with_params(mut self, params: ParamSet) -> Self {
        self.params = params;
        self
    }
}

/// Value of a driver option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptionValue {
    Number(f64),
    Numbers(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
    Text(String),
}

pub type DriverOptions = BTreeMap<String, OptionValue>;

/// Names accepted by [`make_builtin`].
pub const BUILTIN_NAMES: &[&str] = &[
    "zero",
    "constant",
    "step_family",
    "pure_quadratic",
    "power_utility",
    "entropic",
];

struct Opts<'a> {
    driver: &'a str,
    map: &'a DriverOptions,
    used: BTreeSet<&'a str>,
}

impl<'a> Opts<'a> {
    fn new(driver: &'a str, map: &'a DriverOptions) -> Self {
        Opts {
            driver,
            map,
            used: BTreeSet::new(),
        }
    }

    fn missing(&self, key: &str) -> LabError {
        LabError::invalid(format!("driver `{}` requires option `{key}`", self.driver))
    }

    fn get(&mut self, key: &'a str) -> Option<&'a OptionValue> {
        self.used.insert(key);
        self.map.get(key)
    }

    fn num_opt(&mut self, key: &'a str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(OptionValue::Number(x)) if x.is_finite() => Ok(Some(*x)),
            Some(other) => Err(LabError::invalid(format!(
                "option `{key}` of driver `{}` must be a finite number, got {other:?}",
                self.driver
            ))),
        }
    }

    fn num(&mut self, key: &'a str) -> Result<f64> {
        self.num_opt(key)?.ok_or_else(|| self.missing(key))
    }

    fn vec(&mut self, key: &'a str) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Err(self.missing(key)),
            Some(OptionValue::Number(x)) => Ok(vec![*x]),
            Some(OptionValue::Numbers(v)) => Ok(v.clone()),
            Some(other) => Err(LabError::invalid(format!(
                "option `{key}` of driver `{}` must be a number list, got {other:?}",
                self.driver
            ))),
        }
    }

    fn matrix(&mut self, key: &'a str) -> Result<Vec<Vec<f64>>> {
        match self.get(key) {
            None => Err(self.missing(key)),
            Some(OptionValue::Matrix(m)) => Ok(m.clone()),
            Some(OptionValue::Numbers(v)) => Ok(vec![v.clone()]),
            Some(other) => Err(LabError::invalid(format!(
                "option `{key}` of driver `{}` must be a list of rows, got {other:?}",
                self.driver
            ))),
        }
    }

    fn text(&mut self, key: &'a str) -> Result<&'a str> {
        match self.get(key) {
            None => Err(self.missing(key)),
            Some(OptionValue::Text(s)) => Ok(s),
            Some(other) => Err(LabError::invalid(format!(
                "option `{key}` of driver `{}` must be a string, got {other:?}",
                self.driver
            ))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.used.contains(k.as_str())) {
            None => Ok(()),
            Some(k) => Err(LabError::invalid(format!(
                "unknown option `{k}` for driver `{}`",
                self.driver
            ))),
        }
    }
}

#[derive(Debug)]
struct Zero;

impl Driver for Zero {
    fn eval(&self, _: &Point<'_>, _: f64, _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug)]
struct Constant(f64);

impl Driver for Constant {
    fn eval(&self, _: &Point<'_>, _: f64, _: &[f64]) -> f64 {
        self.0
    }
}

/// `n · 1{t < 1/n}`.
#[derive(Debug)]
struct StepFamily {
    n: f64,
}

impl Driver for StepFamily {
    fn eval(&self, at: &Point<'_>, _: f64, _: &[f64]) -> f64 {
        if at.t < 1.0 / self.n {
            self.n
        } else {
            0.0
        }
    }
}

/// `(γ/2) ‖B z‖²`.
#[derive(Debug)]
struct PureQuadratic {
    gamma: f64,
}

impl Driver for PureQuadratic {
    fn eval(&self, at: &Point<'_>, _: f64, z: &[f64]) -> f64 {
        0.5 * self.gamma * at.b_norm_sq(z)
    }
}

/// Power-utility driver: with `u = (z − λ)/(1 − p)` and `k = p(1 − p)/2`,
/// `F = −k dist²_B(u, C) + k ‖Bu‖² + ½ ‖Bz‖²`.
#[derive(Debug)]
struct PowerUtility {
    p: f64,
    lambda: Vec<f64>,
    set: ConstraintSet,
}

impl Driver for PowerUtility {
    fn eval(&self, at: &Point<'_>, _: f64, z: &[f64]) -> f64 {
        let q = 1.0 - self.p;
        let u: Vec<f64> = z.iter().zip(&self.lambda).map(|(z, l)| (z - l) / q).collect();
        let k = 0.5 * self.p * q;
        -k * self.set.dist_sq(&u, at.b) + k * at.b_norm_sq(&u) + 0.5 * at.b_norm_sq(z)
    }
}

/// `½((λ^S)² − 2λ^S z¹ − (z²)²)` with `λ^S = base + amp · tanh(M¹_t)`.
#[derive(Debug)]
struct Entropic {
    base: f64,
    amp: f64,
}

impl Driver for Entropic {
    fn eval(&self, at: &Point<'_>, _: f64, z: &[f64]) -> f64 {
        let ls = self.base + self.amp * at.m[0].tanh();
        0.5 * (ls * ls - 2.0 * ls * z[0] - z[1] * z[1])
    }
}

/// `c · F`.
#[derive(Debug)]
struct Scaled {
    inner: Arc<dyn Driver>,
    factor: f64,
}

impl Driver for Scaled {
    fn eval(&self, at: &Point<'_>, y: f64, z: &[f64]) -> f64 {
        self.factor * self.inner.eval(at, y, z)
    }
}

fn spec(name: String, driver: impl Driver + 'static, params: ParamSet) -> DriverSpec {
    DriverSpec {
        name,
        driver: Arc::new(driver),
        params,
        depends_on_y: false,
        convex_in_z: true,
        nonnegative: true,
        dim: None,
        kinks: Vec::new(),
    }
}

pub fn zero() -> DriverSpec {
    spec("zero".into(), Zero, ParamSet::zero())
}

pub fn constant(a: f64) -> DriverSpec {
    let params = ParamSet {
        lambda: LambdaProcess::Level {
            alpha: a.abs(),
            until: None,
        },
        ..ParamSet::zero()
    };
    DriverSpec {
        nonnegative: a >= 0.0,
        ..spec(format!("constant(a={a})"), Constant(a), params)
    }
}

pub fn step_family(n: f64) -> Result<DriverSpec> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(LabError::invalid(format!("step_family needs n > 0, got {n}")));
    }
    let params = ParamSet {
        lambda: LambdaProcess::Level {
            alpha: n,
            until: Some(1.0 / n),
        },
        ..ParamSet::zero()
    };
    Ok(DriverSpec {
        kinks: vec![1.0 / n],
        ..spec(format!("step_family(n={n})"), StepFamily { n }, params)
    })
}

pub fn pure_quadratic(gamma: f64) -> Result<DriverSpec> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(LabError::invalid(format!("pure_quadratic needs gamma > 0, got {gamma}")));
    }
    let params = ParamSet {
        gamma: gamma.max(1.0),
        beta_f: 0.5 * gamma,
        ..ParamSet::zero()
    };
    Ok(spec(
        format!("pure_quadratic(gamma={gamma})"),
        PureQuadratic { gamma },
        params,
    ))
}

pub fn power_utility(p: f64, lambda: Vec<f64>, set: ConstraintSet) -> Result<DriverSpec> {
    if !(p < 1.0) || !p.is_finite() {
        return Err(LabError::invalid(format!("power_utility needs p < 1, got {p}")));
    }
    if lambda.is_empty() || lambda.iter().any(|x| !x.is_finite()) {
        return Err(LabError::invalid("power_utility needs a finite, nonempty lambda"));
    }
    let d = lambda.len();
    set.validate(d)?;
    let r = p.abs() / (1.0 - p);
    let params = ParamSet {
        gamma: if p >= 0.0 { 1.0 + 2.0 * r } else { (2.0 * r - 1.0).max(1.0) },
        beta_f: 1.0 + r,
        lambda: LambdaProcess::Vector(lambda.iter().map(|l| r.sqrt() * l).collect()),
        ..ParamSet::zero()
    };
    Ok(DriverSpec {
        nonnegative: p >= 0.0,
        dim: Some(d),
        ..spec(
            format!("power_utility(p={p})"),
            PowerUtility { p, lambda, set },
            params,
        )
    })
}

pub fn entropic(base: f64, amp: f64) -> Result<DriverSpec> {
    if !base.is_finite() || !amp.is_finite() {
        return Err(LabError::invalid("entropic needs finite lambda_s and lambda_amp"));
    }
    let params = ParamSet {
        lambda: LambdaProcess::TanhFirst { base, amp, dim: 2 },
        ..ParamSet::zero()
    };
    Ok(DriverSpec {
        convex_in_z: false,
        nonnegative: false,
        dim: Some(2),
        ..spec(
            format!("entropic(lambda_s={base}, lambda_amp={amp})"),
            Entropic { base, amp },
            params,
        )
    })
}

/// `c · F` with parameters rescaled to remain valid.
pub fn scaled(base: &DriverSpec, c: f64) -> Result<DriverSpec> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(LabError::invalid(format!("scale factor must be positive, got {c}")));
    }
    let p = &base.params;
    let params = ParamSet {
        beta: p.beta,
        beta_bar: c * p.beta_bar,
        beta_f: c.max(c.sqrt()) * p.beta_f,
        gamma: (c * p.gamma).max(1.0).max(p.beta),
        c_a: p.c_a,
        lambda: LambdaProcess::Scaled {
            inner: Box::new(p.lambda.clone()),
            factor: c,
        },
    };
    Ok(DriverSpec {
        name: format!("{c}*{}", base.name),
        driver: Arc::new(Scaled {
            inner: base.driver.clone(),
            factor: c,
        }),
        params,
        ..base.clone()
    })
}

fn constraint_from(o: &mut Opts<'_>, d: usize) -> Result<ConstraintSet> {
    let kind = o.text("constraint")?;
    let set = match kind {
        "box" => ConstraintSet::Box {
            lo: o.vec("lo")?,
            hi: o.vec("hi")?,
        },
        "halfspace" => ConstraintSet::HalfSpace {
            normal: o.vec("normal")?,
            offset: o.num("offset")?,
        },
        "polytope" => ConstraintSet::Polytope {
            normals: o.matrix("normals")?,
            offsets: o.vec("offsets")?,
            lo: o.vec("lo")?,
            hi: o.vec("hi")?,
        },
        "none" => ConstraintSet::Box {
            lo: vec![f64::NEG_INFINITY; d],
            hi: vec![f64::INFINITY; d],
        },
        other => {
            return Err(LabError::invalid(format!(
                "unknown constraint kind `{other}` (expected box, halfspace, polytope or none)"
            )))
        }
    };
    Ok(set)
}

/// Builds a named driver from options.
pub fn make_builtin(name: &str, options: &DriverOptions) -> Result<DriverSpec> {
    let mut o = Opts::new(name, options);
    let out = match name {
        "zero" => zero(),
        "constant" => constant(o.num("a")?),
        "step_family" => step_family(o.num("n")?)?,
        "pure_quadratic" => pure_quadratic(o.num("gamma")?)?,
        "power_utility" => {
            let p = o.num("p")?;
            let lambda = o.vec("lambda")?;
            let set = constraint_from(&mut o, lambda.len())?;
            power_utility(p, lambda, set)?
        }
        "entropic" => {
            let base = o.num("lambda_s")?;
            let amp = o.num_opt("lambda_amp")?.unwrap_or(0.0);
            entropic(base, amp)?
        }
        other => {
            return Err(LabError::NotFound(format!(
                "driver `{other}` (known: {})",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    o.finish()?;
    Ok(out)
}
