use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::kernel::ScenarioBundle;

type TerminalFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Terminal condition `ξ` as a function of `(M_T, W⊥_T)`.
#[derive(Clone)]
pub enum TerminalCondition {
    Constant(f64),
    /// `a + bᵀ M_T + b⊥ᵀ W⊥_T`.
    Affine {
        intercept: f64,
        m: Vec<f64>,
        orth: Vec<f64>,
    },
    /// `|a + bᵀ M_T + b⊥ᵀ W⊥_T|`.
    AbsAffine {
        intercept: f64,
        m: Vec<f64>,
        orth: Vec<f64>,
    },
    /// `ξ⁺ ∧ upper − ξ⁻ ∧ lower`.
    Truncated {
        inner: Box<TerminalCondition>,
        upper: f64,
        lower: f64,
    },
    Custom { label: String, f: Arc<TerminalFn> },
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum()
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(", "))
}

impl TerminalCondition {
    /// `ξ = W¹_T`.
    pub fn first_coordinate() -> Self {
        TerminalCondition::Affine {
            intercept: 0.0,
            m: vec![1.0],
            orth: vec![],
        }
    }

    pub fn eval(&self, m: &[f64], orth: &[f64]) -> f64 {
        match self {
            TerminalCondition::Constant(c) => *c,
            TerminalCondition::Affine { intercept, m: b, orth: bo } => {
                intercept + dot(b, m) + dot(bo, orth)
            }
            TerminalCondition::AbsAffine { intercept, m: b, orth: bo } => {
                (intercept + dot(b, m) + dot(bo, orth)).abs()
            }
            TerminalCondition::Truncated { inner, upper, lower } => {
                let x = inner.eval(m, orth);
                x.max(0.0).min(*upper) - (-x).max(0.0).min(*lower)
            }
            TerminalCondition::Custom { f, .. } => f(m, orth),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TerminalCondition::Constant(c) => format!("constant({c})"),
            TerminalCondition::Affine { intercept, m, orth } => {
                format!("affine({intercept}, m={}, orth={})", fmt_vec(m), fmt_vec(orth))
            }
            TerminalCondition::AbsAffine { intercept, m, orth } => {
                format!("abs_affine({intercept}, m={}, orth={})", fmt_vec(m), fmt_vec(orth))
            }
            TerminalCondition::Truncated { inner, upper, lower } => {
                format!("truncated({}, upper={upper}, lower={lower})", inner.describe())
            }
            TerminalCondition::Custom { label, .. } => format!("custom({label})"),
        }
    }

    /// `(a, b, b⊥)` when `ξ` is affine in the terminal state.
    pub fn affine_parts(&self) -> Option<(f64, &[f64], &[f64])> {
        match self {
            TerminalCondition::Constant(c) => Some((*c, &[], &[])),
            TerminalCondition::Affine { intercept, m, orth } => Some((*intercept, m, orth)),
            _ => None,
        }
    }

    /// `(a, b, b⊥)` when `|ξ|` is the absolute value of an affine function.
    pub fn abs_affine_parts(&self) -> Option<(f64, &[f64], &[f64])> {
        match self {
            TerminalCondition::AbsAffine { intercept, m, orth }
            | TerminalCondition::Affine { intercept, m, orth } => Some((*intercept, m, orth)),
            TerminalCondition::Constant(c) => Some((*c, &[], &[])),
            _ => None,
        }
    }

    /// `ξ⁺ ∧ upper − ξ⁻ ∧ lower`.
    pub fn truncate(&self, upper: f64, lower: f64) -> Self {
        TerminalCondition::Truncated {
            inner: Box::new(self.clone()),
            upper,
            lower,
        }
    }

    /// Checks coefficient lengths against the scenario dimensions.
    pub fn check_dims(&self, dim_m: usize, dim_orth: usize) -> Result<()> {
        match self {
            TerminalCondition::Affine { m, orth, .. } | TerminalCondition::AbsAffine { m, orth, .. } => {
                if m.len() > dim_m || orth.len() > dim_orth {
                    return Err(LabError::invalid(format!(
                        "terminal coefficients ({}, {}) exceed scenario dimensions ({dim_m}, {dim_orth})",
                        m.len(),
                        orth.len()
                    )));
                }
                Ok(())
            }
            TerminalCondition::Truncated { inner, upper, lower } => {
                if !(*upper >= 0.0 && *lower >= 0.0) {
                    return Err(LabError::invalid("truncation levels must be nonnegative"));
                }
                inner.check_dims(dim_m, dim_orth)
            }
            _ => Ok(()),
        }
    }

    /// `ξ` on every path; errors if any value is not finite.
    pub fn values(&self, bundle: &ScenarioBundle) -> Result<Vec<f64>> {
        self.check_dims(bundle.dim_m(), bundle.dim_orth())?;
        let k = bundle.grid().steps();
        let out: Vec<f64> = (0..bundle.n_paths())
            .map(|p| self.eval(bundle.m_at(k, p), bundle.orth_at(k, p)))
            .collect();
        if let Some(p) = out.iter().position(|x| !x.is_finite()) {
            return Err(LabError::invalid(format!(
                "terminal condition {} is not finite on path {p}",
                self.describe()
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_truncation() {
        let xi = TerminalCondition::first_coordinate().truncate(2.0, 1.0);
        assert_eq!(xi.eval(&[3.0], &[]), 2.0);
        assert_eq!(xi.eval(&[0.5], &[]), 0.5);
        assert_eq!(xi.eval(&[-0.5], &[]), -0.5);
        assert_eq!(xi.eval(&[-4.0], &[]), -1.0);
    }

    #[test]
    fn affine_and_abs() {
        let a = TerminalCondition::Affine {
            intercept: 1.0,
            m: vec![2.0, -1.0],
            orth: vec![0.5],
        };
        assert_eq!(a.eval(&[1.0, 4.0], &[2.0]), 1.0 + 2.0 - 4.0 + 1.0);
        let b = TerminalCondition::AbsAffine {
            intercept: 0.0,
            m: vec![1.0],
            orth: vec![],
        };
        assert_eq!(b.eval(&[-3.0], &[]), 3.0);
        assert!(b.affine_parts().is_none());
        assert!(a.check_dims(1, 1).is_err());
    }
}
