use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use crate::error::{LabError, Result};

/// Shape of the deterministic clock `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockKind {
    /// `A_t = t` (Brownian case).
    Identity,
    /// `A_t = rate · t`.
    Scaled { rate: f64 },
    /// Linear interpolation through `(t, A)` knots; flat after the last knot.
    Piecewise { knots: Vec<(f64, f64)> },
}

/// Clock specification with its declared slope bound `c_A` and uniform bound `K_A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSpec {
    pub kind: ClockKind,
    /// Declared slope bound `A_t <= c_A t`; inferred when absent.
    pub c_a: Option<f64>,
    /// Declared uniform bound; defaults to `A_T`.
    pub k_a: Option<f64>,
}

impl ClockSpec {
    pub fn identity() -> Self {
        ClockSpec {
            kind: ClockKind::Identity,
            c_a: None,
            k_a: None,
        }
    }

    pub fn scaled(rate: f64) -> Self {
        ClockSpec {
            kind: ClockKind::Scaled { rate },
            c_a: None,
            k_a: None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            ClockKind::Identity => t,
            ClockKind::Scaled { rate } => rate * t,
            ClockKind::Piecewise { knots } => {
                let mut prev = (0.0, 0.0);
                for &(tk, ak) in knots {
                    if t <= tk {
                        let w = if tk > prev.0 { (t - prev.0) / (tk - prev.0) } else { 1.0 };
                        return prev.1 + w * (ak - prev.1);
                    }
                    prev = (tk, ak);
                }
                prev.1
            }
        }
    }

    /// Smallest `c` with `A_t <= c t` over the grid.
    pub fn slope_bound(&self, grid: &TimeGrid) -> f64 {
        match &self.kind {
            ClockKind::Identity => 1.0,
            ClockKind::Scaled { rate } => *rate,
            ClockKind::Piecewise { .. } => grid
                .nodes()
                .iter()
                .skip(1)
                .map(|&t| self.eval(t) / t)
                .fold(0.0, f64::max),
        }
    }

    /// `c_A`: declared value, or the inferred slope bound.
    pub fn c_a(&self, grid: &TimeGrid) -> f64 {
        self.c_a.unwrap_or_else(|| self.slope_bound(grid))
    }

    /// Evaluates the clock on the grid and checks its invariants.
    pub fn evaluate_on(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        if let ClockKind::Scaled { rate } = self.kind {
            if !(rate > 0.0) {
                return Err(LabError::invalid(format!("clock rate must be positive, got {rate}")));
            }
        }
        if let ClockKind::Piecewise { knots } = &self.kind {
            let mut prev = (0.0, 0.0);
            for &(t, a) in knots {
                if t < prev.0 || a < prev.1 {
                    return Err(LabError::invalid("clock knots must be nondecreasing in t and A"));
                }
                prev = (t, a);
            }
        }
        let values: Vec<f64> = grid.nodes().iter().map(|&t| self.eval(t)).collect();
        if values[0] != 0.0 {
            return Err(LabError::invalid("clock must start at A_0 = 0"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(LabError::invalid("clock must be nondecreasing"));
        }
        let k_a = self.k_a.unwrap_or(*values.last().unwrap());
        if let Some(&bad) = values.iter().find(|&&a| a > k_a * (1.0 + 1e-12)) {
            return Err(LabError::invalid(format!("clock value {bad} exceeds K_A = {k_a}")));
        }
        if let Some(c) = self.c_a {
            for (&t, &a) in grid.nodes().iter().zip(&values) {
                if a > c * t * (1.0 + 1e-12) + 1e-15 {
                    return Err(LabError::invalid(format!(
                        "clock violates A_t <= c_A t at t = {t} (A = {a}, c_A = {c})"
                    )));
                }
            }
        }
        Ok(values)
    }
}

/// Deterministic factor `B` with `C = BᵀB` the density of `⟨M⟩` against `dA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorSpec {
    Identity,
    /// Same matrix (row-major rows) at every node.
    Constant { rows: Vec<Vec<f64>> },
    /// One matrix per grid node.
    PerNode { matrices: Vec<Vec<Vec<f64>>> },
}

/// Factor resolved against a grid and dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Factor {
    Identity,
    Constant(DMatrix<f64>),
    PerNode(Vec<DMatrix<f64>>),
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(LabError::invalid(format!("factor matrix must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl FactorSpec {
    pub fn resolve(&self, d: usize, nodes: usize) -> Result<Factor> {
        match self {
            FactorSpec::Identity => Ok(Factor::Identity),
            FactorSpec::Constant { rows } => Ok(Factor::Constant(matrix_from_rows(rows, d)?)),
            FactorSpec::PerNode { matrices } => {
                if matrices.len() != nodes {
                    return Err(LabError::invalid(format!(
                        "per-node factor needs {nodes} matrices, got {}",
                        matrices.len()
                    )));
                }
                matrices
                    .iter()
                    .map(|m| matrix_from_rows(m, d))
                    .collect::<Result<Vec<_>>>()
                    .map(Factor::PerNode)
            }
        }
    }
}

impl Factor {
    /// `B` at a node, or `None` for the identity.
    pub fn at(&self, node: usize) -> Option<&DMatrix<f64>> {
        match self {
            Factor::Identity => None,
            Factor::Constant(b) => Some(b),
            Factor::PerNode(bs) => Some(&bs[node.min(bs.len() - 1)]),
        }
    }

    /// `C = BᵀB` at a node.
    pub fn cov(&self, node: usize, d: usize) -> DMatrix<f64> {
        match self.at(node) {
            None => DMatrix::identity(d, d),
            Some(b) => b.transpose() * b,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Factor::Identity)
    }
}

/// `‖B v‖²` with `b = None` meaning the identity.
pub fn b_norm_sq(b: Option<&DMatrix<f64>>, v: &[f64]) -> f64 {
    match b {
        None => v.iter().map(|x| x * x).sum(),
        Some(b) => {
            let d = v.len();
            let mut acc = 0.0;
            for i in 0..d {
                let mut row = 0.0;
                for j in 0..d {
                    row += b[(i, j)] * v[j];
                }
                acc += row * row;
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_clock_on_grid() {
        let g = TimeGrid::build(2.0, 4, &[]).unwrap();
        let a = ClockSpec::identity().evaluate_on(&g).unwrap();
        assert_eq!(a, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn piecewise_clock_interpolates_and_bounds() {
        let c = ClockSpec {
            kind: ClockKind::Piecewise {
                knots: vec![(0.5, 1.0), (1.0, 1.2)],
            },
            c_a: Some(2.0),
            k_a: Some(1.5),
        };
        let g = TimeGrid::build(2.0, 8, &[]).unwrap();
        let a = c.evaluate_on(&g).unwrap();
        assert_eq!(a[1], 0.5);
        assert!((a[3] - 1.1).abs() < 1e-15);
        assert_eq!(*a.last().unwrap(), 1.2);
        assert!((c.slope_bound(&g) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn slope_violation_is_rejected() {
        let c = ClockSpec {
            kind: ClockKind::Scaled { rate: 2.0 },
            c_a: Some(1.0),
            k_a: None,
        };
        let g = TimeGrid::build(1.0, 4, &[]).unwrap();
        assert!(c.evaluate_on(&g).is_err());
    }

    #[test]
    fn factor_covariance() {
        let f = FactorSpec::Constant {
            rows: vec![vec![1.0, 1.0], vec![0.0, 2.0]],
        }
        .resolve(2, 3)
        .unwrap();
        let c = f.cov(0, 2);
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 1.0);
        assert_eq!(c[(1, 1)], 5.0);
        assert_eq!(b_norm_sq(f.at(0), &[1.0, 1.0]), 4.0 + 4.0);
    }
}
