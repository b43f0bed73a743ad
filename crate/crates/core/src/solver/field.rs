use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::kernel::{ScenarioBundle, TimeGrid};
use crate::stats::Estimate;

/// Grid estimates of `(Y, Z, Z⊥)` and the quadratic variations of the
/// martingale part.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim_m: usize,
    pub dim_orth: usize,
    /// `y[i][p]` for nodes `0..=K`.
    pub y: Vec<Vec<f64>>,
    /// Standard error of each `y[i][p]`.
    pub y_se: Vec<Vec<f64>>,
    /// `z[i][p * dim_m + k]` for nodes `0..K`.
    pub z: Vec<Vec<f64>>,
    /// `z_orth[i][p * dim_orth + k]` for nodes `0..K`.
    pub z_orth: Vec<Vec<f64>>,
    /// `⟨Z·M⟩_T` per path.
    pub qv_zm: Vec<f64>,
    /// `⟨N⟩_T` per path.
    pub qv_n: Vec<f64>,
    pub y0: Estimate,
    pub meta: SolveMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveMeta {
    pub method: String,
    pub config_hash: String,
    pub grid_hash: String,
    /// Largest number of Picard iterations used at any step.
    pub max_picard: usize,
}

/// Short content hash used to tag solver outputs.
pub fn short_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

impl SolutionField {
    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn z_at(&self, node: usize, path: usize) -> &[f64] {
        &self.z[node][path * self.dim_m..(path + 1) * self.dim_m]
    }

    pub fn z_orth_at(&self, node: usize, path: usize) -> &[f64] {
        &self.z_orth[node][path * self.dim_orth..(path + 1) * self.dim_orth]
    }

    /// Errors unless both fields live on the same grid and path count.
    pub fn check_compatible(&self, other: &SolutionField) -> Result<()> {
        if self.grid != other.grid || self.n_paths != other.n_paths {
            return Err(LabError::GridMismatch(format!(
                "fields differ in grid or paths ({} vs {} nodes, {} vs {} paths)",
                self.grid.len(),
                other.grid.len(),
                self.n_paths,
                other.n_paths
            )));
        }
        Ok(())
    }

    /// Errors unless the field was computed on `bundle`'s grid and paths.
    pub fn check_bundle(&self, bundle: &ScenarioBundle) -> Result<()> {
        if &self.grid != bundle.grid() || self.n_paths != bundle.n_paths() || self.dim_m != bundle.dim_m() {
            return Err(LabError::GridMismatch(
                "solution field and scenario bundle disagree on grid, paths or dimension".into(),
            ));
        }
        Ok(())
    }

    /// `Σ_i (z_iᵀ ΔM_i + z⊥_iᵀ ΔW⊥_i)` per path, up to node `upto`.
    pub fn martingale_part(&self, bundle: &ScenarioBundle, upto: usize) -> Vec<f64> {
        let (d, o) = (self.dim_m, self.dim_orth);
        (0..self.n_paths)
            .map(|p| {
                let mut acc = 0.0;
                for i in 0..upto {
                    let z = self.z_at(i, p);
                    for k in 0..d {
                        acc += z[k] * bundle.dm(i, p, k);
                    }
                    let zo = self.z_orth_at(i, p);
                    for k in 0..o {
                        acc += zo[k] * bundle.dw_orth(i, p, k);
                    }
                }
                acc
            })
            .collect()
    }

    /// Fills `qv_zm` and `qv_n` from `z` and `z_orth`.
    pub(crate) fn compute_qv(&mut self, bundle: &ScenarioBundle) {
        let (d, o) = (self.dim_m, self.dim_orth);
        let mut zm = vec![0.0; self.n_paths];
        let mut nn = vec![0.0; self.n_paths];
        for i in 0..self.steps() {
            let c = bundle.cov(i);
            let da = bundle.d_clock(i);
            let dt = self.grid.dt(i);
            for p in 0..self.n_paths {
                let z = &self.z[i][p * d..(p + 1) * d];
                if da > 0.0 {
                    zm[p] += crate::kernel::quad_form(&c, z) * da;
                }
                let zo = &self.z_orth[i][p * o..(p + 1) * o];
                nn[p] += zo.iter().map(|v| v * v).sum::<f64>() * dt;
            }
        }
        self.qv_zm = zm;
        self.qv_n = nn;
    }
}
