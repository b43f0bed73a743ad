use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::clock::{ClockSpec, Factor, FactorSpec};
use super::grid::TimeGrid;
use crate::error::{LabError, Result};

/// Default cap on stored path values (`n_paths × nodes × dims`).
pub const DEFAULT_VALUE_CAP: usize = 100_000_000;

/// Paths per independently seeded block.
const BLOCK: usize = 512;

/// Seed and stream identifying a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        RandomSource { seed, stream }
    }

    /// Generator for a sub-block; independent of how blocks are scheduled.
    pub fn rng_for(&self, block: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(block)));
        rng.set_stream(self.stream);
        rng
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        RandomSource {
            seed: self.seed,
            stream,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Everything except the grid and the random source needed to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub dim_m: usize,
    pub dim_orth: usize,
    pub n_paths: usize,
    pub clock: ClockSpec,
    pub factor: FactorSpec,
    pub value_cap: usize,
}

impl ScenarioSpec {
    /// Brownian `M` of dimension `dim_m`, `A_t = t`, `B = I`.
    pub fn brownian(dim_m: usize, dim_orth: usize, n_paths: usize) -> Self {
        ScenarioSpec {
            dim_m,
            dim_orth,
            n_paths,
            clock: ClockSpec::identity(),
            factor: FactorSpec::Identity,
            value_cap: DEFAULT_VALUE_CAP,
        }
    }
}

/// State of one path at one node, as seen by drivers and terminal conditions.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub node: usize,
    pub t: f64,
    /// `M_t`.
    pub m: &'a [f64],
    /// Orthogonal noise `W⊥_t`.
    pub orth: &'a [f64],
    /// Factor `B_t`; `None` is the identity.
    pub b: Option<&'a DMatrix<f64>>,
}

impl Point<'_> {
    pub fn b_norm_sq(&self, v: &[f64]) -> f64 {
        super::clock::b_norm_sq(self.b, v)
    }
}

/// Simulated paths of `M` and `W⊥` on a grid, with the clock and factor.
///
/// Values are stored node-major: `m[i][p * dim_m + k]` is `M^k_{t_i}` on path `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub(crate) grid: TimeGrid,
    pub(crate) dim_m: usize,
    pub(crate) dim_orth: usize,
    pub(crate) n_paths: usize,
    pub(crate) source: RandomSource,
    pub(crate) clock_spec: ClockSpec,
    pub(crate) clock: Vec<f64>,
    pub(crate) factor_spec: FactorSpec,
    pub(crate) factor: Factor,
    pub(crate) m: Vec<Vec<f64>>,
    pub(crate) orth: Vec<Vec<f64>>,
}

impl ScenarioBundle {
    /// Simulates independent Gaussian increments
    /// `ΔM_i = sqrt(ΔA_i) B_iᵀ G` and `ΔW⊥_i = sqrt(Δ_i) G⊥`.
    pub fn simulate(grid: &TimeGrid, spec: &ScenarioSpec, source: RandomSource) -> Result<Self> {
        if spec.dim_m == 0 {
            return Err(LabError::invalid("dim_m must be at least 1"));
        }
        if spec.n_paths == 0 {
            return Err(LabError::invalid("n_paths must be at least 1"));
        }
        let nodes = grid.len();
        let requested =
            spec.n_paths as u128 * nodes as u128 * (spec.dim_m + spec.dim_orth) as u128;
        if requested > spec.value_cap as u128 {
            return Err(LabError::Capacity {
                what: "scenario values (paths x nodes x dims)".into(),
                requested,
                cap: spec.value_cap as u128,
            });
        }
        let clock = spec.clock.evaluate_on(grid)?;
        let factor = spec.factor.resolve(spec.dim_m, nodes)?;
        let (d, dorth, n) = (spec.dim_m, spec.dim_orth, spec.n_paths);

        let mut m = vec![vec![0.0; n * d]; nodes];
        let mut orth = vec![vec![0.0; n * dorth]; nodes];
        let mut g = vec![0.0; d];
        let mut dm = vec![0.0; d];
        let scales: Vec<(f64, f64)> = (0..grid.steps())
            .map(|i| ((clock[i + 1] - clock[i]).sqrt(), grid.dt(i).sqrt()))
            .collect();

        for block in 0..n.div_ceil(BLOCK) {
            let mut rng = source.rng_for(block as u64);
            for p in block * BLOCK..((block + 1) * BLOCK).min(n) {
                for i in 0..grid.steps() {
                    let (sa, st) = scales[i];
                    for gk in g.iter_mut() {
                        *gk = StandardNormal.sample(&mut rng);
                    }
                    match factor.at(i) {
                        None => dm.copy_from_slice(&g),
                        Some(b) => {
                            // Bᵀ g
                            for (k, dmk) in dm.iter_mut().enumerate() {
                                *dmk = (0..d).map(|j| b[(j, k)] * g[j]).sum();
                            }
                        }
                    }
                    for k in 0..d {
                        m[i + 1][p * d + k] = m[i][p * d + k] + sa * dm[k];
                    }
                    for k in 0..dorth {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        orth[i + 1][p * dorth + k] = orth[i][p * dorth + k] + st * e;
                    }
                }
            }
        }

        Ok(ScenarioBundle {
            grid: grid.clone(),
            dim_m: d,
            dim_orth: dorth,
            n_paths: n,
            source,
            clock_spec: spec.clock.clone(),
            clock,
            factor_spec: spec.factor.clone(),
            factor,
            m,
            orth,
        })
    }

    /// The same paths observed only at the nodes of `coarse`; coarse
    /// increments are sums of the fine ones.
    pub fn restrict_to(&self, coarse: &TimeGrid) -> Result<Self> {
        let idx: Vec<usize> = coarse
            .nodes()
            .iter()
            .map(|&t| {
                self.grid
                    .index_of(t)
                    .ok_or_else(|| LabError::GridMismatch(format!("node {t} not in the fine grid")))
            })
            .collect::<Result<_>>()?;
        if *idx.last().unwrap() != self.grid.steps() {
            return Err(LabError::GridMismatch("coarse grid must end at the horizon".into()));
        }
        let factor = match &self.factor {
            Factor::PerNode(bs) => Factor::PerNode(idx.iter().map(|&i| bs[i].clone()).collect()),
            f => f.clone(),
        };
        Ok(ScenarioBundle {
            grid: coarse.clone(),
            dim_m: self.dim_m,
            dim_orth: self.dim_orth,
            n_paths: self.n_paths,
            source: self.source,
            clock_spec: self.clock_spec.clone(),
            clock: idx.iter().map(|&i| self.clock[i]).collect(),
            factor_spec: self.factor_spec.clone(),
            factor,
            m: idx.iter().map(|&i| self.m[i].clone()).collect(),
            orth: idx.iter().map(|&i| self.orth[i].clone()).collect(),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn dim_orth(&self) -> usize {
        self.dim_orth
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn source(&self) -> RandomSource {
        self.source
    }

    pub fn clock_spec(&self) -> &ClockSpec {
        &self.clock_spec
    }

    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    /// Clock values `A_{t_i}`.
    pub fn clock(&self) -> &[f64] {
        &self.clock
    }

    /// `ΔA_i = A_{t_{i+1}} - A_{t_i}`.
    pub fn d_clock(&self, i: usize) -> f64 {
        self.clock[i + 1] - self.clock[i]
    }

    pub fn max_d_clock(&self) -> f64 {
        (0..self.grid.steps()).map(|i| self.d_clock(i)).fold(0.0, f64::max)
    }

    /// `c_A` of the clock on this grid.
    pub fn c_a(&self) -> f64 {
        self.clock_spec.c_a(&self.grid)
    }

    pub fn m_at(&self, node: usize, path: usize) -> &[f64] {
        &self.m[node][path * self.dim_m..(path + 1) * self.dim_m]
    }

    pub fn orth_at(&self, node: usize, path: usize) -> &[f64] {
        &self.orth[node][path * self.dim_orth..(path + 1) * self.dim_orth]
    }

    /// Increment `M^k_{t_{i+1}} - M^k_{t_i}`.
    pub fn dm(&self, i: usize, path: usize, k: usize) -> f64 {
        let j = path * self.dim_m + k;
        self.m[i + 1][j] - self.m[i][j]
    }

    pub fn dw_orth(&self, i: usize, path: usize, k: usize) -> f64 {
        let j = path * self.dim_orth + k;
        self.orth[i + 1][j] - self.orth[i][j]
    }

    /// `M` values at a node, all paths.
    pub fn m_column(&self, node: usize) -> &[f64] {
        &self.m[node]
    }

    pub fn orth_column(&self, node: usize) -> &[f64] {
        &self.orth[node]
    }

    pub fn point(&self, node: usize, path: usize) -> Point<'_> {
        Point {
            node,
            t: self.grid.t(node),
            m: self.m_at(node, path),
            orth: self.orth_at(node, path),
            b: self.factor.at(node),
        }
    }

    /// `C_i = B_iᵀ B_i`.
    pub fn cov(&self, node: usize) -> DMatrix<f64> {
        self.factor.cov(node, self.dim_m)
    }

    /// Variance of each `M` component and `W⊥` component at a node, from the
    /// law of the simulation (not the sample).
    pub fn state_variances(&self, node: usize) -> (Vec<f64>, Vec<f64>) {
        let mut vm = vec![0.0; self.dim_m];
        for i in 0..node {
            let c = self.cov(i);
            let da = self.d_clock(i);
            for (k, v) in vm.iter_mut().enumerate() {
                *v += c[(k, k)] * da;
            }
        }
        let t = self.grid.t(node);
        (vm, vec![t; self.dim_orth])
    }

    /// Covariance matrix of `M_T - M_{t_i}` implied by the simulation law.
    pub fn remaining_cov(&self, node: usize) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.dim_m, self.dim_m);
        for i in node..self.grid.steps() {
            acc += self.cov(i) * self.d_clock(i);
        }
        acc
    }
}

/// Discrete `⟨Z·M⟩_T = Σ_i z_iᵀ C_i z_i ΔA_i` per path.
///
/// `integrand[i]` holds `n_paths × dim_m` values for node `i`; at least
/// `K` nodes are required (the terminal node is not used).
pub fn quadratic_variation(bundle: &ScenarioBundle, integrand: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = bundle.grid.steps();
    let (n, d) = (bundle.n_paths, bundle.dim_m);
    if integrand.len() < k {
        return Err(LabError::invalid(format!(
            "integrand defined on {} nodes, grid has {k} steps",
            integrand.len()
        )));
    }
    if let Some(bad) = integrand.iter().take(k).position(|col| col.len() != n * d) {
        return Err(LabError::invalid(format!(
            "integrand at node {bad} has wrong length (expected {} = paths x dim_m)",
            n * d
        )));
    }
    let mut qv = vec![0.0; n];
    for (i, col) in integrand.iter().enumerate().take(k) {
        let c = bundle.cov(i);
        let da = bundle.d_clock(i);
        if da == 0.0 {
            continue;
        }
        for (p, acc) in qv.iter_mut().enumerate() {
            let z = &col[p * d..(p + 1) * d];
            *acc += quad_form(&c, z) * da;
        }
    }
    Ok(qv)
}

/// `zᵀ C z`.
pub fn quad_form(c: &DMatrix<f64>, z: &[f64]) -> f64 {
    let d = z.len();
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            acc += z[a] * c[(a, b)] * z[b];
        }
    }
    acc
}
