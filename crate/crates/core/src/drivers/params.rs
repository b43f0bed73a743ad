use serde::Serialize;

use crate::error::{LabError, Result};
use crate::kernel::{Point, ScenarioBundle};

/// The process `λ` of the growth condition, with `α = ‖B λ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaProcess {
    Zero,
    /// Constant vector.
    Vector(Vec<f64>),
    /// Chosen so that `α_t = alpha` for `t < until` (forever when `None`)
    /// and 0 afterwards; `λ` points along the first axis.
    Level { alpha: f64, until: Option<f64> },
    /// `λ = (base + amp · tanh(M¹_t), 0, …)`; bounded by `|base| + |amp|`.
    TanhFirst { base: f64, amp: f64, dim: usize },
    /// `λ = sqrt(factor) · inner`, hence `α = factor · α_inner`.
    Scaled { inner: Box<LambdaProcess>, factor: f64 },
}

impl LambdaProcess {
    pub fn lambda(&self, at: &Point<'_>, dim: usize) -> Vec<f64> {
        match self {
            LambdaProcess::Zero => vec![0.0; dim],
            LambdaProcess::Vector(v) => v.clone(),
            LambdaProcess::Level { alpha, until } => {
                let mut v = vec![0.0; dim];
                if until.is_none_or(|u| at.t < u) {
                    let mut e1 = vec![0.0; dim];
                    e1[0] = 1.0;
                    v[0] = (alpha / at.b_norm_sq(&e1)).sqrt();
                }
                v
            }
            LambdaProcess::TanhFirst { base, amp, dim: d } => {
                let mut v = vec![0.0; (*d).max(dim)];
                v[0] = base + amp * at.m[0].tanh();
                v
            }
            LambdaProcess::Scaled { inner, factor } => {
                let s = factor.sqrt();
                inner.lambda(at, dim).into_iter().map(|x| s * x).collect()
            }
        }
    }

    /// `α_t = ‖B_t λ_t‖²`.
    pub fn alpha(&self, at: &Point<'_>) -> f64 {
        match self {
            LambdaProcess::Zero => 0.0,
            LambdaProcess::Level { alpha, until } => {
                if until.is_none_or(|u| at.t < u) {
                    *alpha
                } else {
                    0.0
                }
            }
            LambdaProcess::Scaled { inner, factor } => factor * inner.alpha(at),
            other => {
                let lam = other.lambda(at, at.m.len());
                at.b_norm_sq(&lam)
            }
        }
    }

    /// Whether `λ` depends only on time (not on the path).
    pub fn is_deterministic(&self) -> bool {
        match self {
            LambdaProcess::TanhFirst { amp, .. } => *amp == 0.0,
            LambdaProcess::Scaled { inner, .. } => inner.is_deterministic(),
            _ => true,
        }
    }
}

/// Parameters `(β, β̄, β_f, γ, c_A, λ)` of the growth, Lipschitz and clock
/// conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub beta: f64,
    pub beta_bar: f64,
    pub beta_f: f64,
    pub gamma: f64,
    pub c_a: f64,
    pub lambda: LambdaProcess,
}

/// `α` on every node and path of a bundle, with `|α|₁ = Σ α_i ΔA_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaField {
    /// `alpha[i][p]` for nodes `0..K`.
    pub alpha: Vec<Vec<f64>>,
    pub l1: Vec<f64>,
}

impl AlphaField {
    /// Running integral `Σ_{j<i} α_j ΔA_j` at node `i` for every path.
    pub fn running(&self, bundle: &ScenarioBundle, node: usize) -> Vec<f64> {
        let mut acc = vec![0.0; bundle.n_paths()];
        for j in 0..node {
            let da = bundle.d_clock(j);
            for (a, x) in acc.iter_mut().zip(&self.alpha[j]) {
                *a += x * da;
            }
        }
        acc
    }
}

/// Declared-value summary for reports.
#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub beta: f64,
    pub beta_bar: f64,
    pub beta_f: f64,
    pub gamma: f64,
    pub c_a: f64,
    pub beta_star: f64,
    pub lambda_deterministic: bool,
}

impl ParamSet {
    /// Parameters of a driver that is identically zero.
    pub fn zero() -> Self {
        ParamSet {
            beta: 0.0,
            beta_bar: 0.0,
            beta_f: 1.0,
            gamma: 1.0,
            c_a: 0.0,
            lambda: LambdaProcess::Zero,
        }
    }

    /// `β* = c_A · β̄`.
    pub fn beta_star(&self) -> f64 {
        self.c_a * self.beta_bar
    }

    /// Sign and ordering constraints on the constants.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.beta >= 0.0) {
            out.push(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.beta_bar >= 0.0) {
            out.push(format!("beta_bar must be nonnegative, got {}", self.beta_bar));
        }
        if !(self.beta_f > 0.0) {
            out.push(format!("beta_f must be positive, got {}", self.beta_f));
        }
        if !(self.gamma >= 1.0 && self.gamma >= self.beta) {
            out.push(format!(
                "gamma must be >= max(1, beta) = {}, got {}",
                self.beta.max(1.0),
                self.gamma
            ));
        }
        if !(self.c_a >= 0.0) {
            out.push(format!("c_A must be nonnegative, got {}", self.c_a));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some(v) => Err(LabError::invalid(v.clone())),
        }
    }

    pub fn alpha_at(&self, at: &Point<'_>) -> f64 {
        self.lambda.alpha(at)
    }

    pub fn alpha_field(&self, bundle: &ScenarioBundle) -> AlphaField {
        let k = bundle.grid().steps();
        let n = bundle.n_paths();
        let alpha: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..n).map(|p| self.alpha_at(&bundle.point(i, p))).collect())
            .collect();
        let mut l1 = vec![0.0; n];
        for (i, col) in alpha.iter().enumerate() {
            let da = bundle.d_clock(i);
            for (acc, a) in l1.iter_mut().zip(col) {
                *acc += a * da;
            }
        }
        AlphaField { alpha, l1 }
    }

    pub fn summary(&self) -> ParamSummary {
        ParamSummary {
            beta: self.beta,
            beta_bar: self.beta_bar,
            beta_f: self.beta_f,
            gamma: self.gamma,
            c_a: self.c_a,
            beta_star: self.beta_star(),
            lambda_deterministic: self.lambda.is_deterministic(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{RandomSource, ScenarioSpec, TimeGrid};

    #[test]
    fn beta_star_is_product() {
        let p = ParamSet {
            c_a: 1.5,
            beta_bar: 0.4,
            ..ParamSet::zero()
        };
        assert_eq!(p.beta_star(), 1.5 * 0.4);
    }

    #[test]
    fn gamma_constraint() {
        let p = ParamSet {
            gamma: 0.5,
            ..ParamSet::zero()
        };
        assert!(p.check().is_err());
        let p = ParamSet {
            gamma: 2.0,
            beta: 3.0,
            ..ParamSet::zero()
        };
        assert!(p.check().is_err());
        assert!(ParamSet::zero().check().is_ok());
    }

    #[test]
    fn alpha_l1_matches_grid_sum() {
        let grid = TimeGrid::build(2.0, 40, &[0.5]).unwrap();
        let b = ScenarioBundle::simulate(&grid, &ScenarioSpec::brownian(1, 0, 3), RandomSource::new(1, 0))
            .unwrap();
        let p = ParamSet {
            lambda: LambdaProcess::Level {
                alpha: 2.0,
                until: Some(0.5),
            },
            ..ParamSet::zero()
        };
        let f = p.alpha_field(&b);
        for l in &f.l1 {
            assert!((l - 1.0).abs() < 1e-12);
        }
        // λ consistent with α
        let at = b.point(0, 0);
        let lam = p.lambda.lambda(&at, 1);
        assert!((at.b_norm_sq(&lam) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_lambda_is_path_dependent_and_bounded() {
        let l = LambdaProcess::TanhFirst {
            base: 0.3,
            amp: 0.2,
            dim: 2,
        };
        assert!(!l.is_deterministic());
        let at = Point {
            node: 0,
            t: 0.0,
            m: &[50.0, 0.0],
            orth: &[],
            b: None,
        };
        assert!((l.alpha(&at) - 0.25).abs() < 1e-12);
    }
}
