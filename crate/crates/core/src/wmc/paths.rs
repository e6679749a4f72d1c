//! Prior path sets and their binary file format.

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Dynamics a path set was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PathPrior {
    Brownian { sigma: f64 },
    Sabr { alpha: f64, rho: f64, volvol: f64 },
    /// Loaded from a file that does not record the dynamics.
    Unknown,
}

/// `ν` paths of the rate in strike-offset space on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    nu: usize,
    steps: usize,
    horizon: f64,
    seed: u64,
    prior: PathPrior,
    /// Row-major `ν × (steps + 1)`.
    values: Vec<f64>,
}

/// Shape and seed that identify a path set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathIdentity {
    pub nu: usize,
    pub steps: usize,
    pub horizon: f64,
    pub seed: u64,
}

impl PathSet {
    pub fn from_values(values: Vec<f64>, nu: usize, steps: usize, horizon: f64, seed: u64, prior: PathPrior) -> Result<Self> {
        if values.len() != nu * (steps + 1) {
            return Err(Error::Dimension {
                context: "PathSet values",
                expected: nu * (steps + 1),
                got: values.len(),
            });
        }
        if nu == 0 || steps == 0 || !(horizon > 0.0) {
            return Err(invalid("path set needs paths, steps and a positive horizon"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("path values must be finite"));
        }
        if values.chunks(steps + 1).any(|r| r[0] != 0.0) {
            return Err(invalid("every path must start at 0"));
        }
        Ok(Self {
            nu,
            steps,
            horizon,
            seed,
            prior,
            values,
        })
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prior(&self) -> PathPrior {
        self.prior
    }

    pub fn identity(&self) -> PathIdentity {
        PathIdentity {
            nu: self.nu,
            steps: self.steps,
            horizon: self.horizon,
            seed: self.seed,
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 * self.dt()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.steps + 1;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn paths(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.steps + 1)
    }

    /// Grid index of time `t`, snapped to the nearest node within half a step.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) || t > self.horizon + 0.5 * self.dt() {
            return Err(Error::Extrapolation {
                time: t,
                limit: self.horizon,
            });
        }
        let idx = (t / self.dt()).round() as usize;
        if (self.time(idx) - t).abs() > 0.5 * self.dt() + 1e-12 || idx > self.steps {
            return Err(Error::Extrapolation {
                time: t,
                limit: self.horizon,
            });
        }
        Ok(idx)
    }

    /// Values of every path at grid index `idx`.
    pub fn slice_at(&self, idx: usize) -> Vec<f64> {
        self.paths().map(|p| p[idx]).collect()
    }
}

/// Arithmetic Brownian paths `ΔS = σ√Δt ξ`, path `i` drawn from stream `i`
/// of `seed`.
pub fn generate_brownian_paths(nu: usize, horizon: f64, steps: usize, sigma_prior: f64, seed: u64) -> Result<PathSet> {
    if nu < 2 {
        return Err(invalid(format!("need at least 2 paths, got {nu}")));
    }
    if steps == 0 {
        return Err(invalid("need at least one time step"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(sigma_prior > 0.0 && sigma_prior.is_finite()) {
        return Err(invalid(format!("prior vol must be positive, got {sigma_prior}")));
    }
    let width = steps + 1;
    let scale = sigma_prior * (horizon / steps as f64).sqrt();
    let mut values = vec![0.0; nu * width];
    values.par_chunks_mut(width).enumerate().for_each(|(i, row)| {
        let mut r = rng::stream(seed, i as u64);
        let mut s = 0.0;
        for v in row.iter_mut().skip(1) {
            let z: f64 = StandardNormal.sample(&mut r);
            s += scale * z;
            *v = s;
        }
    });
    PathSet::from_values(values, nu, steps, horizon, seed, PathPrior::Brownian { sigma: sigma_prior })
}

// ---------------------------------------------------------------------------
// binary format: magic[8] | version u32 | nu u64 | steps u64 | horizon f64 | seed u64 | f64 data, all LE

pub const PATHS_MAGIC: &[u8; 8] = b"VWMCPATH";
pub const WEIGHTS_MAGIC: &[u8; 8] = b"VWMCWGHT";
pub const BINARY_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8 + 8 + 8;

fn write_binary(path: &Path, magic: &[u8; 8], id: PathIdentity, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(id.nu as u64).to_le_bytes());
    buf.extend_from_slice(&(id.steps as u64).to_le_bytes());
    buf.extend_from_slice(&id.horizon.to_le_bytes());
    buf.extend_from_slice(&id.seed.to_le_bytes());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_binary(path: &Path, magic: &[u8; 8], expected_len: impl Fn(&PathIdentity) -> usize) -> Result<(PathIdentity, Vec<f64>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!("{}: truncated header", path.display())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Corrupt(format!("{}: bad magic", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != BINARY_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BINARY_VERSION,
        });
    }
    let id = PathIdentity {
        nu: u64_at(12) as usize,
        steps: u64_at(20) as usize,
        horizon: f64::from_bits(u64_at(28)),
        seed: u64_at(36),
    };
    let n = expected_len(&id);
    if bytes.len() != HEADER_LEN + 8 * n {
        return Err(Error::Corrupt(format!(
            "{}: expected {} values, file holds {} bytes of data",
            path.display(),
            n,
            bytes.len() - HEADER_LEN
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((id, data))
}

pub fn save_paths(paths: &PathSet, path: impl AsRef<Path>) -> Result<()> {
    write_binary(path.as_ref(), PATHS_MAGIC, paths.identity(), &paths.values)
}

pub fn load_paths(path: impl AsRef<Path>) -> Result<PathSet> {
    let (id, data) = read_binary(path.as_ref(), PATHS_MAGIC, |id| id.nu * (id.steps + 1))?;
    PathSet::from_values(data, id.nu, id.steps, id.horizon, id.seed, PathPrior::Unknown)
}

/// Weights are stored with the identity of the path set they belong to.
pub fn save_weights(weights: &[f64], paths: PathIdentity, path: impl AsRef<Path>) -> Result<()> {
    if weights.len() != paths.nu {
        return Err(Error::Dimension {
            context: "save_weights",
            expected: paths.nu,
            got: weights.len(),
        });
    }
    write_binary(path.as_ref(), WEIGHTS_MAGIC, paths, weights)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(PathIdentity, Vec<f64>)> {
    read_binary(path.as_ref(), WEIGHTS_MAGIC, |id| id.nu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_start_at_zero_and_are_seeded() {
        let a = generate_brownian_paths(50, 1.0, 10, 0.01, 4).unwrap();
        assert!(a.paths().all(|p| p[0] == 0.0));
        let b = generate_brownian_paths(50, 1.0, 10, 0.01, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn path_values_do_not_depend_on_path_count() {
        let small = generate_brownian_paths(10, 2.0, 20, 0.006, 8).unwrap();
        let large = generate_brownian_paths(1000, 2.0, 20, 0.006, 8).unwrap();
        for i in 0..10 {
            assert_eq!(small.path(i), large.path(i));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(generate_brownian_paths(1, 1.0, 10, 0.01, 0).is_err());
        assert!(generate_brownian_paths(10, 1.0, 0, 0.01, 0).is_err());
        assert!(generate_brownian_paths(10, 1.0, 10, 0.0, 0).is_err());
    }

    #[test]
    fn snapping_to_grid() {
        let p = generate_brownian_paths(4, 5.0, 500, 0.01, 1).unwrap();
        assert_eq!(p.time_index(0.75).unwrap(), 75);
        assert_eq!(p.time_index(0.7549).unwrap(), 75);
        assert_eq!(p.time_index(5.0).unwrap(), 500);
        assert!(p.time_index(5.1).is_err());
    }

    #[test]
    fn binary_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = generate_brownian_paths(7, 1.0, 9, 0.01, 3).unwrap();
        let f = dir.path().join("p.bin");
        save_paths(&p, &f).unwrap();
        let back = load_paths(&f).unwrap();
        assert_eq!(back.values(), p.values());
        assert_eq!(back.identity(), p.identity());

        let w = vec![1.0 / 7.0; 7];
        let wf = dir.path().join("w.bin");
        save_weights(&w, p.identity(), &wf).unwrap();
        let (id, wb) = load_weights(&wf).unwrap();
        assert_eq!(id, p.identity());
        assert_eq!(wb, w);

        let bytes = std::fs::read(&f).unwrap();
        std::fs::write(&f, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_paths(&f), Err(Error::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        std::fs::write(&f, &bad).unwrap();
        assert!(matches!(load_paths(&f), Err(Error::Version { found: 9, .. })));
        assert!(matches!(load_weights(&f), Err(Error::Corrupt(_))));
    }
}
