use nalgebra::{DMatrix, DVector};

use crate::error::{LabError, Result};
use crate::kernel::b_norm_sq;

const GRID_POINTS: usize = 21;
const REFINE_ROUNDS: usize = 12;
const FEAS_TOL: f64 = 1e-12;

/// Closed convex constraint set for the investor's strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    /// `lo ≤ ν ≤ hi` componentwise (infinite bounds allowed).
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ν : normalᵀν ≤ offset}`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `{ν : Aν ≤ b}` intersected with the bounded box `[lo, hi]`.
    Polytope {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn is_diagonal(b: &DMatrix<f64>) -> bool {
    (0..b.nrows()).all(|i| (0..b.ncols()).all(|j| i == j || b[(i, j)] == 0.0))
}

impl ConstraintSet {
    pub fn dim(&self) -> usize {
        match self {
            ConstraintSet::Box { lo, .. } => lo.len(),
            ConstraintSet::HalfSpace { normal, .. } => normal.len(),
            ConstraintSet::Polytope { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        match self {
            ConstraintSet::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *x >= l - FEAS_TOL && *x <= h + FEAS_TOL),
            ConstraintSet::HalfSpace { normal, offset } => dot(normal, v) <= offset + FEAS_TOL,
            ConstraintSet::Polytope {
                normals,
                offsets,
                lo,
                hi,
            } => {
                ConstraintSet::Box {
                    lo: lo.clone(),
                    hi: hi.clone(),
                }
                .contains(v)
                    && normals
                        .iter()
                        .zip(offsets)
                        .all(|(a, b)| dot(a, v) <= b + FEAS_TOL)
            }
        }
    }

    /// Rejects malformed or empty sets, and sets not containing the origin.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(LabError::invalid(format!(
                "constraint set has dimension {}, driver has {d}",
                self.dim()
            )));
        }
        match self {
            ConstraintSet::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(LabError::invalid("box bounds have different lengths"));
                }
                if lo.iter().zip(hi).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
                    return Err(LabError::invalid("constraint set is empty (box with lo > hi)"));
                }
            }
            ConstraintSet::HalfSpace { normal, offset } => {
                if normal.iter().all(|a| *a == 0.0) && *offset < 0.0 {
                    return Err(LabError::invalid("constraint set is empty (0 <= negative offset)"));
                }
                if !offset.is_finite() || normal.iter().any(|a| !a.is_finite()) {
                    return Err(LabError::invalid("half-space must have finite coefficients"));
                }
            }
            ConstraintSet::Polytope {
                normals,
                offsets,
                lo,
                hi,
            } => {
                if normals.len() != offsets.len() || normals.iter().any(|a| a.len() != d) || hi.len() != d {
                    return Err(LabError::invalid("polytope rows do not match the dimension"));
                }
                if d > 3 {
                    return Err(LabError::invalid("polytope projection supports at most 3 dimensions"));
                }
                if lo.iter().chain(hi).any(|x| !x.is_finite()) {
                    return Err(LabError::invalid("polytope bounding box must be finite"));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(LabError::invalid("constraint set is empty (bounding box)"));
                }
            }
        }
        if !self.contains(&vec![0.0; d]) {
            return Err(LabError::invalid(
                "constraint set must contain the zero strategy (empty or excluding 0)",
            ));
        }
        Ok(())
    }

    /// `inf_{ν ∈ C} ‖B(ν − u)‖²`; `b = None` is the identity.
    pub fn dist_sq(&self, u: &[f64], b: Option<&DMatrix<f64>>) -> f64 {
        match self {
            ConstraintSet::Box { lo, hi } if b.is_none_or(is_diagonal) => {
                let mut acc = 0.0;
                for (k, x) in u.iter().enumerate() {
                    let w = b.map_or(1.0, |b| b[(k, k)] * b[(k, k)]);
                    let e = x - x.clamp(lo[k], hi[k]);
                    acc += w * e * e;
                }
                acc
            }
            ConstraintSet::HalfSpace { normal, offset } => {
                let excess = dot(normal, u) - offset;
                if excess <= 0.0 {
                    return 0.0;
                }
                let a = DVector::from_column_slice(normal);
                let denom = match b {
                    None => a.norm_squared(),
                    Some(b) => {
                        let c = b.transpose() * b;
                        match c.clone().pseudo_inverse(1e-12) {
                            Ok(ci) => (a.transpose() * ci * &a)[(0, 0)],
                            Err(_) => a.norm_squared(),
                        }
                    }
                };
                if denom > 0.0 {
                    excess * excess / denom
                } else {
                    0.0
                }
            }
            ConstraintSet::Box { lo, hi } => {
                let lo: Vec<f64> = lo.iter().zip(u).map(|(l, x)| l.max(x - search_radius(u))).collect();
                let hi: Vec<f64> = hi.iter().zip(u).map(|(h, x)| h.min(x + search_radius(u))).collect();
                grid_search(&lo, &hi, |v| self.contains(v), |v| obj(u, v, b))
            }
            ConstraintSet::Polytope { lo, hi, .. } => {
                grid_search(lo, hi, |v| self.contains(v), |v| obj(u, v, b))
            }
        }
    }
}

fn search_radius(u: &[f64]) -> f64 {
    4.0 * (1.0 + u.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn obj(u: &[f64], v: &[f64], b: Option<&DMatrix<f64>>) -> f64 {
    let diff: Vec<f64> = v.iter().zip(u).map(|(v, u)| v - u).collect();
    b_norm_sq(b, &diff)
}

/// Minimises `f` over feasible points of a shrinking grid on `[lo, hi]`.
fn grid_search(
    lo: &[f64],
    hi: &[f64],
    feasible: impl Fn(&[f64]) -> bool,
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    let d = lo.len();
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let outer = (lo.clone(), hi.clone());
    let mut best = f64::INFINITY;
    let mut best_pt = vec![0.0; d];
    if feasible(&best_pt) {
        best = f(&best_pt);
    }
    let total = GRID_POINTS.pow(d as u32);
    let mut v = vec![0.0; d];
    for _ in 0..REFINE_ROUNDS {
        for idx in 0..total {
            let mut r = idx;
            for k in 0..d {
                let j = r % GRID_POINTS;
                r /= GRID_POINTS;
                v[k] = lo[k] + (hi[k] - lo[k]) * j as f64 / (GRID_POINTS - 1) as f64;
            }
            if feasible(&v) {
                let val = f(&v);
                if val < best {
                    best = val;
                    best_pt.copy_from_slice(&v);
                }
            }
        }
        for k in 0..d {
            let cell = (hi[k] - lo[k]) / (GRID_POINTS - 1) as f64;
            lo[k] = (best_pt[k] - 2.0 * cell).max(outer.0[k]);
            hi[k] = (best_pt[k] + 2.0 * cell).min(outer.1[k]);
        }
    }
    best
}
