use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::backward::{fixed_point, SolverConfig};
use super::field::{short_hash, SolutionField, SolveMeta};
use crate::drivers::{DriverSpec, TerminalCondition};
use crate::error::{LabError, Result};
use crate::kernel::{Point, RandomSource, ScenarioBundle};
use crate::stats::Estimate;

/// Largest number of simulated leaves the oracle accepts by default.
pub const DEFAULT_ORACLE_CAP: u128 = 2_000_000_000;

/// Largest number of steps the oracle accepts.
pub const MAX_ORACLE_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub branching: usize,
    pub source: RandomSource,
    pub cap: u128,
    pub solver: SolverConfig,
}

impl OracleConfig {
    pub fn new(branching: usize, source: RandomSource) -> Self {
        OracleConfig {
            branching,
            source,
            cap: DEFAULT_ORACLE_CAP,
            solver: SolverConfig::default(),
        }
    }
}

struct NodeValue {
    y: f64,
    se: f64,
    z: Vec<f64>,
    z_orth: Vec<f64>,
}

struct Oracle<'a> {
    bundle: &'a ScenarioBundle,
    driver: &'a DriverSpec,
    xi: &'a TerminalCondition,
    cfg: &'a OracleConfig,
    rng: ChaCha8Rng,
    cinv: Vec<DMatrix<f64>>,
}

impl Oracle<'_> {
    fn value(&mut self, i: usize, m: &[f64], orth: &[f64]) -> Result<NodeValue> {
        let b = self.bundle;
        let k = b.grid().steps();
        let (d, o) = (b.dim_m(), b.dim_orth());
        if i == k {
            return Ok(NodeValue {
                y: self.xi.eval(m, orth),
                se: 0.0,
                z: Vec::new(),
                z_orth: Vec::new(),
            });
        }
        let da = b.d_clock(i);
        let dt = b.grid().dt(i);
        let factor = b.factor().at(i).cloned();
        let nb = self.cfg.branching;
        let (sda, sdt) = (da.sqrt(), dt.sqrt());

        let mut sum_y = 0.0;
        let mut sum_y2 = 0.0;
        let mut sum_ydm = vec![0.0; d];
        let mut sum_dm = vec![0.0; d];
        let mut sum_ydw = vec![0.0; o];
        let mut sum_dw = vec![0.0; o];
        let mut first: Option<f64> = None;
        let mut constant = true;

        let mut g = vec![0.0; d];
        let mut dm = vec![0.0; d];
        let mut dw = vec![0.0; o];
        let mut cm = vec![0.0; d];
        let mut co = vec![0.0; o];
        let mut rng = self.rng.clone();
        let scalar_leaf = d == 1 && o == 0 && factor.is_none() && i + 1 == k;
        if scalar_leaf {
            let m0 = m[0];
            let (mut s_ydm, mut s_dm) = (0.0, 0.0);
            let mut cm1 = [0.0];
            for _ in 0..nb {
                let x: f64 = StandardNormal.sample(&mut rng);
                let dm0 = sda * x;
                cm1[0] = m0 + dm0;
                let y = self.xi.eval(&cm1, &[]);
                match first {
                    None => first = Some(y),
                    Some(f) => constant &= f.to_bits() == y.to_bits(),
                }
                sum_y += y;
                sum_y2 += y * y;
                s_ydm += y * dm0;
                s_dm += dm0;
            }
            sum_ydm[0] = s_ydm;
            sum_dm[0] = s_dm;
        }
        for _ in 0..if scalar_leaf { 0 } else { nb } {
            for v in g.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            for v in dw.iter_mut() {
                let x: f64 = StandardNormal.sample(&mut rng);
                *v = sdt * x;
            }
            match &factor {
                None => {
                    for kk in 0..d {
                        dm[kk] = sda * g[kk];
                    }
                }
                Some(bm) => {
                    for kk in 0..d {
                        let mut acc = 0.0;
                        for r in 0..d {
                            acc += bm[(r, kk)] * g[r];
                        }
                        dm[kk] = sda * acc;
                    }
                }
            }
            for kk in 0..d {
                cm[kk] = m[kk] + dm[kk];
            }
            for kk in 0..o {
                co[kk] = orth[kk] + dw[kk];
            }
            let y = if i + 1 == k {
                self.xi.eval(&cm, &co)
            } else {
                self.rng = rng.clone();
                let v = self.value(i + 1, &cm, &co)?.y;
                rng = self.rng.clone();
                v
            };
            match first {
                None => first = Some(y),
                Some(f) => constant &= f.to_bits() == y.to_bits(),
            }
            sum_y += y;
            sum_y2 += y * y;
            for kk in 0..d {
                sum_ydm[kk] += y * dm[kk];
                sum_dm[kk] += dm[kk];
            }
            for kk in 0..o {
                sum_ydw[kk] += y * dw[kk];
                sum_dw[kk] += dw[kk];
            }
        }

        self.rng = rng;
        let nf = nb as f64;
        let (ey, se, z, z_orth) = if constant {
            (first.unwrap_or(0.0), 0.0, vec![0.0; d], vec![0.0; o])
        } else {
            let ey = sum_y / nf;
            let var = ((sum_y2 - nf * ey * ey) / (nf - 1.0)).max(0.0);
            let mut z = vec![0.0; d];
            if da > 0.0 {
                let cov = DVector::from_iterator(d, (0..d).map(|kk| (sum_ydm[kk] - ey * sum_dm[kk]) / nf));
                let zz = &self.cinv[i] * cov;
                z.copy_from_slice(zz.as_slice());
            }
            let z_orth = (0..o).map(|kk| (sum_ydw[kk] - ey * sum_dw[kk]) / (nf * dt)).collect();
            (ey, (var / nf).sqrt(), z, z_orth)
        };
        let at = Point {
            node: i,
            t: b.grid().t(i),
            m,
            orth,
            b: b.factor().at(i),
        };
        let orth_term = 0.5 * z_orth.iter().map(|v: &f64| v * v).sum::<f64>() * dt;
        let (y, _) = if da > 0.0 {
            fixed_point(self.driver, &at, ey, &z, orth_term, da, &self.cfg.solver, i)?
        } else {
            (ey + orth_term, 0)
        };
        Ok(NodeValue { y, se, z, z_orth })
    }
}

/// Solves by nested resimulation: every conditional expectation is a fresh
/// Monte Carlo average over `branching` children.
pub fn nested_mc_oracle(
    bundle: &ScenarioBundle,
    driver: &DriverSpec,
    xi: &TerminalCondition,
    cfg: &OracleConfig,
) -> Result<SolutionField> {
    let k = bundle.grid().steps();
    if k > MAX_ORACLE_STEPS {
        return Err(LabError::invalid(format!(
            "nested oracle supports at most {MAX_ORACLE_STEPS} steps, grid has {k}"
        )));
    }
    if cfg.branching < 2 {
        return Err(LabError::invalid("branching must be at least 2"));
    }
    let n = bundle.n_paths();
    let b = cfg.branching as u128;
    let requested = b.pow(k as u32) + (1..k).map(|i| n as u128 * b.pow((k - i) as u32)).sum::<u128>();
    if requested > cfg.cap {
        return Err(LabError::Capacity {
            what: format!("nested oracle leaves (branching {} over {k} steps)", cfg.branching),
            requested,
            cap: cfg.cap,
        });
    }
    cfg.solver.check(driver, bundle)?;
    xi.check_dims(bundle.dim_m(), bundle.dim_orth())?;
    let (d, o) = (bundle.dim_m(), bundle.dim_orth());
    let cinv = (0..k)
        .map(|i| {
            let c = bundle.cov(i) * bundle.d_clock(i);
            let eps = 1e-12 * c.norm();
            c.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(d, d))
        })
        .collect();
    let mut oracle = Oracle {
        bundle,
        driver,
        xi,
        cfg,
        rng: cfg.source.rng_for(u64::MAX),
        cinv,
    };

    let mut y = vec![vec![0.0; n]; k + 1];
    let mut y_se = vec![vec![0.0; n]; k + 1];
    let mut z = vec![vec![0.0; n * d]; k];
    let mut z_orth = vec![vec![0.0; n * o]; k];
    let root = oracle.value(0, &vec![0.0; d], &vec![0.0; o])?;
    for p in 0..n {
        y[0][p] = root.y;
        y_se[0][p] = root.se;
        z[0][p * d..(p + 1) * d].copy_from_slice(&root.z);
        z_orth[0][p * o..(p + 1) * o].copy_from_slice(&root.z_orth);
    }
    for i in 1..k {
        for p in 0..n {
            let v = oracle.value(i, bundle.m_at(i, p), bundle.orth_at(i, p))?;
            y[i][p] = v.y;
            y_se[i][p] = v.se;
            z[i][p * d..(p + 1) * d].copy_from_slice(&v.z);
            z_orth[i][p * o..(p + 1) * o].copy_from_slice(&v.z_orth);
        }
    }
    y[k] = xi.values(bundle)?;
    let mut field = SolutionField {
        grid: bundle.grid().clone(),
        n_paths: n,
        dim_m: d,
        dim_orth: o,
        y,
        y_se,
        z,
        z_orth,
        qv_zm: Vec::new(),
        qv_n: Vec::new(),
        y0: Estimate {
            mean: root.y,
            se: root.se,
            n: cfg.branching,
        },
        meta: SolveMeta {
            method: "nested_mc".into(),
            config_hash: short_hash(&format!(
                "oracle:{}:{}:{}:{:?}",
                driver.name,
                xi.describe(),
                cfg.branching,
                cfg.source
            )),
            grid_hash: bundle.grid().fingerprint(),
            max_picard: 0,
        },
    };
    field.compute_qv(bundle);
    Ok(field)
}
