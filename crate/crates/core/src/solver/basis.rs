use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LabError, Result};
use crate::kernel::ScenarioBundle;

/// Family of regression functions of the Markov state `(M_t, W⊥_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// Normalised Hermite polynomials of total degree ≤ `degree` in the
    /// standardised state.
    Hermite { degree: usize },
    /// `bins` equiprobable bins on the first state coordinate, with a
    /// Hermite polynomial of total degree ≤ `degree` inside each bin.
    Local { bins: usize, degree: usize },
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::Hermite { degree: 2 }
    }
}

impl BasisSpec {
    pub fn check(&self) -> Result<()> {
        match self {
            BasisSpec::Hermite { degree } if *degree > 8 => {
                Err(LabError::invalid("Hermite degree above 8 is not supported"))
            }
            BasisSpec::Local { bins, degree } if *bins == 0 || *degree > 4 => {
                Err(LabError::invalid("local basis needs bins >= 1 and degree <= 4"))
            }
            _ => Ok(()),
        }
    }
}

fn multi_indices(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    for total in 1..=degree {
        let mut cur = vec![0; vars];
        push_compositions(&mut out, &mut cur, 0, total);
    }
    out
}

fn push_compositions(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, k: usize, left: usize) {
    if k + 1 == cur.len() {
        cur[k] = left;
        out.push(cur.clone());
        cur[k] = 0;
        return;
    }
    if cur.is_empty() {
        return;
    }
    for v in (0..=left).rev() {
        cur[k] = v;
        push_compositions(out, cur, k + 1, left - v);
    }
    cur[k] = 0;
}

/// `He_k(x)/sqrt(k!)` for `k = 0..=degree`.
fn hermite_row(x: f64, degree: usize, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if degree == 0 {
        return;
    }
    out.push(x);
    let mut raw = vec![1.0, x];
    for k in 1..degree {
        let next = x * raw[k] - k as f64 * raw[k - 1];
        raw.push(next);
    }
    let mut fact = 1.0;
    for (k, v) in raw.iter().enumerate().skip(2) {
        fact *= k as f64;
        out.push(v / fact.sqrt());
    }
}

/// Least-squares projection onto a basis evaluated at one node.
#[derive(Debug, Clone)]
pub struct Regressor {
    n: usize,
    m: usize,
    block: Vec<usize>,
    feats: Vec<f64>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

impl Regressor {
    /// Builds the design at `node`; `step` is only used in error messages.
    pub fn new(bundle: &ScenarioBundle, node: usize, spec: &BasisSpec, step: usize) -> Result<Self> {
        let n = bundle.n_paths();
        let (vm, vo) = bundle.state_variances(node);
        let (dm, dorth) = (bundle.dim_m(), bundle.dim_orth());
        let mut coords: Vec<(bool, usize, f64)> = Vec::new();
        for (k, v) in vm.iter().enumerate() {
            if *v > 0.0 {
                coords.push((true, k, v.sqrt()));
            }
        }
        for (k, v) in vo.iter().enumerate() {
            if *v > 0.0 {
                coords.push((false, k, v.sqrt()));
            }
        }
        let q = coords.len();
        let (degree, bins) = match spec {
            BasisSpec::Hermite { degree } => (*degree, 1),
            BasisSpec::Local { bins, degree } => (*degree, if q == 0 { 1 } else { *bins }),
        };
        let degree = if q == 0 { 0 } else { degree };
        let idx = multi_indices(q.max(1), degree);
        let idx: Vec<Vec<usize>> = if q == 0 { vec![vec![0]] } else { idx };
        let m = idx.len();

        let edges: Vec<f64> = if bins > 1 {
            let g = Normal::new(0.0, 1.0).unwrap();
            (1..bins).map(|j| g.inverse_cdf(j as f64 / bins as f64)).collect()
        } else {
            Vec::new()
        };

        let mut feats = vec![0.0; n * m];
        let mut block = vec![0usize; n];
        let mut x = vec![0.0; q];
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); q];
        let mcol = bundle.m_column(node);
        let ocol = bundle.orth_column(node);
        for p in 0..n {
            for (j, &(is_m, k, sd)) in coords.iter().enumerate() {
                let v = if is_m { mcol[p * dm + k] } else { ocol[p * dorth + k] };
                x[j] = v / sd;
            }
            for j in 0..q {
                let mut row = Vec::new();
                hermite_row(x[j], degree, &mut row);
                rows[j] = row;
            }
            let out = &mut feats[p * m..(p + 1) * m];
            for (c, mi) in idx.iter().enumerate() {
                let mut v = 1.0;
                for j in 0..q {
                    v *= rows[j][mi[j]];
                }
                out[c] = v;
            }
            if bins > 1 {
                block[p] = edges.partition_point(|e| *e <= x[0]);
            }
        }

        let mut grams = vec![DMatrix::<f64>::zeros(m, m); bins];
        let mut counts = vec![0usize; bins];
        for p in 0..n {
            let f = &feats[p * m..(p + 1) * m];
            let g = &mut grams[block[p]];
            counts[block[p]] += 1;
            for a in 0..m {
                for b in a..m {
                    g[(a, b)] += f[a] * f[b];
                }
            }
        }
        let mut chol = Vec::with_capacity(bins);
        for (bi, mut g) in grams.into_iter().enumerate() {
            if counts[bi] < m {
                return Err(LabError::DegenerateBasis {
                    step,
                    detail: format!("bin {bi} holds {} paths for {m} basis functions", counts[bi]),
                });
            }
            for a in 0..m {
                for b in 0..a {
                    g[(a, b)] = g[(b, a)];
                }
            }
            let c = Cholesky::new(g).ok_or_else(|| LabError::DegenerateBasis {
                step,
                detail: format!("Gram matrix of bin {bi} is not positive definite"),
            })?;
            let l = c.l_dirty();
            let diag: Vec<f64> = (0..m).map(|i| l[(i, i)]).collect();
            let (lo, hi) = diag
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
            if !(lo / hi > 1e-7) {
                return Err(LabError::DegenerateBasis {
                    step,
                    detail: format!("Gram matrix of bin {bi} is numerically singular"),
                });
            }
            chol.push(c);
        }
        Ok(Regressor {
            n,
            m,
            block,
            feats,
            chol,
        })
    }

    pub fn n_coef(&self) -> usize {
        self.m * self.chol.len()
    }

    fn coefficients(&self, target: &[f64]) -> Vec<DVector<f64>> {
        let mut rhs = vec![DVector::<f64>::zeros(self.m); self.chol.len()];
        for (p, y) in target.iter().enumerate() {
            let f = &self.feats[p * self.m..(p + 1) * self.m];
            let r = &mut rhs[self.block[p]];
            for a in 0..self.m {
                r[a] += f[a] * y;
            }
        }
        rhs.into_iter()
            .zip(&self.chol)
            .map(|(r, c)| c.solve(&r))
            .collect()
    }

    /// Fitted conditional expectation on every path. A bitwise-constant
    /// target is returned unchanged.
    pub fn fit(&self, target: &[f64]) -> Vec<f64> {
        debug_assert_eq!(target.len(), self.n);
        if let Some(&first) = target.first() {
            if target.iter().all(|v| v.to_bits() == first.to_bits()) {
                return target.to_vec();
            }
        }
        let coef = self.coefficients(target);
        (0..self.n)
            .map(|p| {
                let f = &self.feats[p * self.m..(p + 1) * self.m];
                let c = &coef[self.block[p]];
                f.iter().zip(c.iter()).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Leverages `φ_pᵀ G⁻¹ φ_p`.
    pub fn leverage(&self) -> Vec<f64> {
        (0..self.n)
            .map(|p| {
                let f = DVector::from_column_slice(&self.feats[p * self.m..(p + 1) * self.m]);
                let s = self.chol[self.block[p]].solve(&f);
                f.dot(&s)
            })
            .collect()
    }

    /// Residual variance of `target` around its fit, with the degrees of
    /// freedom correction.
    pub fn residual_variance(&self, target: &[f64]) -> f64 {
        let fit = self.fit(target);
        let ss: f64 = target.iter().zip(&fit).map(|(a, b)| (a - b) * (a - b)).sum();
        let dof = self.n.saturating_sub(self.n_coef()).max(1);
        ss / dof as f64
    }
}
