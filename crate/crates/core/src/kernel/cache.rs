//! Binary scenario cache.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "QBSDSCN\0"
//! version    u32
//! seed       u64
//! stream     u64
//! dim_m      u32
//! dim_orth   u32
//! n_paths    u64
//! n_nodes    u32
//! spec_len   u32, then spec_len bytes of JSON (clock and factor specs)
//! nodes      n_nodes × f64
//! m          n_nodes × n_paths × dim_m f64 (node-major)
//! orth       n_nodes × n_paths × dim_orth f64
//! ```
//!
//! Clock values and factor matrices are re-derived from the specs on load.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clock::{ClockSpec, FactorSpec};
use super::grid::TimeGrid;
use super::scenario::{RandomSource, ScenarioBundle};
use crate::error::{LabError, Result};

const MAGIC: &[u8; 8] = b"QBSDSCN\0";
pub const CACHE_VERSION: u32 = 1;

/// Identity of a cached bundle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub seed: u64,
    pub stream: u64,
    pub grid_hash: String,
    pub dim_m: usize,
    pub dim_orth: usize,
    pub n_paths: usize,
}

impl CacheKey {
    pub fn of(bundle: &ScenarioBundle) -> Self {
        CacheKey {
            seed: bundle.source.seed,
            stream: bundle.source.stream,
            grid_hash: bundle.grid.fingerprint(),
            dim_m: bundle.dim_m,
            dim_orth: bundle.dim_orth,
            n_paths: bundle.n_paths,
        }
    }

    /// File name used inside a cache directory.
    pub fn file_name(&self) -> String {
        format!(
            "scn-{}-{}-{}-m{}-o{}-n{}.bin",
            self.seed, self.stream, self.grid_hash, self.dim_m, self.dim_orth, self.n_paths
        )
    }
}

#[derive(Serialize, Deserialize)]
struct Specs {
    clock: ClockSpec,
    factor: FactorSpec,
}

pub fn write_cache(bundle: &ScenarioBundle, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&bundle.source.seed.to_le_bytes())?;
    out.write_all(&bundle.source.stream.to_le_bytes())?;
    out.write_all(&(bundle.dim_m as u32).to_le_bytes())?;
    out.write_all(&(bundle.dim_orth as u32).to_le_bytes())?;
    out.write_all(&(bundle.n_paths as u64).to_le_bytes())?;
    out.write_all(&(bundle.grid.len() as u32).to_le_bytes())?;
    let specs = serde_json::to_vec(&Specs {
        clock: bundle.clock_spec.clone(),
        factor: bundle.factor_spec.clone(),
    })
    .map_err(|e| LabError::Cache(e.to_string()))?;
    out.write_all(&(specs.len() as u32).to_le_bytes())?;
    out.write_all(&specs)?;
    for t in bundle.grid.nodes() {
        out.write_all(&t.to_le_bytes())?;
    }
    for col in bundle.m.iter().chain(&bundle.orth) {
        for v in col {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| LabError::Cache(format!("truncated file: {e}")))?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_cache(path: &Path) -> Result<ScenarioBundle> {
    let mut r = Reader {
        inner: std::io::BufReader::new(std::fs::File::open(path)?),
    };
    if &r.bytes::<8>()? != MAGIC {
        return Err(LabError::Cache("not a scenario cache file".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(LabError::Cache(format!(
            "unsupported cache version {version} (expected {CACHE_VERSION})"
        )));
    }
    let seed = r.u64()?;
    let stream = r.u64()?;
    let dim_m = r.u32()? as usize;
    let dim_orth = r.u32()? as usize;
    let n_paths = r.u64()? as usize;
    let n_nodes = r.u32()? as usize;
    let spec_len = r.u32()? as usize;
    let mut spec_bytes = vec![0u8; spec_len];
    r.inner
        .read_exact(&mut spec_bytes)
        .map_err(|e| LabError::Cache(format!("truncated spec block: {e}")))?;
    let specs: Specs =
        serde_json::from_slice(&spec_bytes).map_err(|e| LabError::Cache(e.to_string()))?;
    let nodes = (0..n_nodes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = TimeGrid::from_nodes(nodes)?;
    let mut read_cols = |width: usize| -> Result<Vec<Vec<f64>>> {
        (0..n_nodes)
            .map(|_| (0..n_paths * width).map(|_| r.f64()).collect())
            .collect()
    };
    let m = read_cols(dim_m)?;
    let orth = read_cols(dim_orth)?;
    let clock = specs.clock.evaluate_on(&grid)?;
    let factor = specs.factor.resolve(dim_m, n_nodes)?;
    Ok(ScenarioBundle {
        grid,
        dim_m,
        dim_orth,
        n_paths,
        source: RandomSource { seed, stream },
        clock_spec: specs.clock,
        clock,
        factor_spec: specs.factor,
        factor,
        m,
        orth,
    })
}

/// Loads the bundle for `key` from `dir` if present, otherwise simulates it
/// with `make` and stores it.
pub fn load_or_simulate(
    dir: &Path,
    key: &CacheKey,
    make: impl FnOnce() -> Result<ScenarioBundle>,
) -> Result<ScenarioBundle> {
    let path = dir.join(key.file_name());
    if path.exists() {
        let b = read_cache(&path)?;
        if CacheKey::of(&b) == *key {
            return Ok(b);
        }
    }
    let b = make()?;
    std::fs::create_dir_all(dir)?;
    write_cache(&b, &path)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::scenario::ScenarioSpec;

    #[test]
    fn cache_round_trip_and_version_check() {
        let grid = TimeGrid::build(1.0, 5, &[0.3]).unwrap();
        let b = ScenarioBundle::simulate(
            &grid,
            &ScenarioSpec::brownian(2, 1, 37),
            RandomSource::new(4, 2),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        write_cache(&b, &path).unwrap();
        assert_eq!(read_cache(&path).unwrap(), b);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_cache(&path), Err(LabError::Cache(_))));
    }

    #[test]
    fn load_or_simulate_reuses_file() {
        let grid = TimeGrid::build(1.0, 3, &[]).unwrap();
        let spec = ScenarioSpec::brownian(1, 0, 10);
        let src = RandomSource::new(1, 0);
        let first = ScenarioBundle::simulate(&grid, &spec, src).unwrap();
        let key = CacheKey::of(&first);
        let dir = tempfile::tempdir().unwrap();
        let a = load_or_simulate(dir.path(), &key, || Ok(first.clone())).unwrap();
        let b = load_or_simulate(dir.path(), &key, || panic!("should hit the cache")).unwrap();
        assert_eq!(a, b);
    }
}
