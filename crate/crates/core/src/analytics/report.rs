use std::collections::BTreeMap;

use serde::Serialize;

/// Outcome of one check. `pass` holds exactly when `margin <= tol`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Worst signed violation; negative means slack.
    pub margin: f64,
    /// Tolerance actually applied, including any standard-error allowance.
    pub tol: f64,
    pub n_paths: usize,
    pub se: f64,
    /// Set when the check's premise did not hold and the verdict says nothing.
    pub vacuous: bool,
    pub details: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, margin: f64, tol: f64, n_paths: usize, se: f64) -> Self {
        CheckReport {
            name: name.into(),
            pass: margin <= tol,
            margin,
            tol,
            n_paths,
            se,
            vacuous: false,
            details: BTreeMap::new(),
        }
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

/// Largest pointwise excess `a - b` together with the largest combined
/// standard error over the same set; the band `tol + 3·se` is uniform.
pub(crate) fn uniform_band(
    a: &[Vec<f64>],
    a_se: &[Vec<f64>],
    b: &[Vec<f64>],
    b_se: &[Vec<f64>],
    transform: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let mut worst = f64::NEG_INFINITY;
    let mut se = 0.0f64;
    for i in 0..a.len() {
        for p in 0..a[i].len() {
            worst = worst.max(transform(a[i][p]) - b[i][p]);
            se = se.max((a_se[i][p].powi(2) + b_se[i][p].powi(2)).sqrt());
        }
    }
    (worst, se)
}
