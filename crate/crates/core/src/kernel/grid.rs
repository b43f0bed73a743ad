use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

/// Relative distance under which a mandatory node replaces a uniform one.
const MERGE_TOL: f64 = 1e-12;

/// Discretisation `0 = t_0 < t_1 < … < t_K = T` of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    max_step: f64,
}

impl TimeGrid {
    /// Uniform grid of `n_steps` steps on `[0, horizon]`, augmented with
    /// `mandatory` nodes. A mandatory node that coincides with a uniform node
    /// (up to rounding) replaces it, so e.g. `1/3` is stored exactly.
    pub fn build(horizon: f64, n_steps: usize, mandatory: &[f64]) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(LabError::invalid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(LabError::invalid("n_steps must be at least 1"));
        }
        let mut nodes: Vec<f64> = (0..=n_steps)
            .map(|k| k as f64 * horizon / n_steps as f64)
            .collect();
        nodes[n_steps] = horizon;
        for &m in mandatory {
            if !(0.0..=horizon).contains(&m) {
                return Err(LabError::invalid(format!(
                    "mandatory node {m} lies outside [0, {horizon}]"
                )));
            }
            match nodes
                .iter()
                .position(|&t| (t - m).abs() <= MERGE_TOL * horizon)
            {
                Some(k) if k != 0 && k != nodes.len() - 1 => nodes[k] = m,
                Some(_) => {}
                None => nodes.push(m),
            }
        }
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        Self::from_nodes(nodes)
    }

    /// Grid from an explicit node list; must start at 0 and increase strictly.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(LabError::invalid("a grid needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(LabError::invalid("first grid node must be 0"));
        }
        let mut max_step = 0.0f64;
        for w in nodes.windows(2) {
            let dt = w[1] - w[0];
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(LabError::invalid(format!(
                    "grid nodes must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
            max_step = max_step.max(dt);
        }
        let horizon = *nodes.last().unwrap();
        Ok(TimeGrid {
            horizon,
            nodes,
            max_step,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Number of steps `K` (one less than the number of nodes).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// Index of a node equal to `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.nodes
            .iter()
            .position(|&s| (s - t).abs() <= MERGE_TOL * self.horizon)
    }

    /// Whether every node of `coarse` is also a node of `self`.
    pub fn contains_grid(&self, coarse: &TimeGrid) -> bool {
        coarse.nodes.iter().all(|&t| self.index_of(t).is_some())
    }

    /// Stable content hash of the node values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.nodes {
            h.update(t.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}
