//! Up-and-out barrier calls on weighted path sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::wmc::{PathSet, WeightVector};

/// `Σᵢ pᵢ · 1{max_{t≤T} S_{i,t} < B} · (S_{i,T} − K)⁺`, monitored at every grid time.
pub fn barrier_call_price(paths: &PathSet, p: &WeightVector, strike: f64, barrier: f64, expiry: f64) -> Result<f64> {
    Ok(barrier_curve(paths, p, strike, &[barrier], expiry)?[0])
}

fn barrier_curve(paths: &PathSet, p: &WeightVector, strike: f64, barriers: &[f64], expiry: f64) -> Result<Vec<f64>> {
    if p.len() != paths.nu() {
        return Err(Error::Dimension {
            context: "barrier pricing weights",
            expected: paths.nu(),
            got: p.len(),
        });
    }
    if barriers.iter().any(|b| b.is_nan()) || !strike.is_finite() {
        return Err(invalid("barrier levels and strike must be numbers"));
    }
    let idx = paths.time_index(expiry)?;
    // one pass per path: running maximum and terminal payoff
    let per_path: Vec<(f64, f64)> = paths
        .paths()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|path| {
            let max = path[..=idx].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (max, (path[idx] - strike).max(0.0))
        })
        .collect();
    Ok(barriers
        .iter()
        .map(|&b| {
            per_path
                .iter()
                .zip(p.as_slice())
                .filter(|((max, _), _)| *max < b)
                .map(|((_, payoff), w)| w * payoff)
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierPoint {
    pub barrier: f64,
    pub price: f64,
}

/// `from, from + step, …` up to `to` inclusive (within a rounding tolerance).
pub fn barrier_levels(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(to >= from) {
        return Err(invalid("barrier range needs from ≤ to and a positive step"));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + step * i as f64).collect())
}

/// Barrier levels 0.01, 0.015, …, 0.1.
pub fn default_barriers() -> Vec<f64> {
    barrier_levels(0.01, 0.1, 0.005).expect("valid default range")
}

/// Prices of the up-and-out call at each barrier level.
pub fn barrier_sweep(paths: &PathSet, p: &WeightVector, strike: f64, barriers: &[f64], expiry: f64) -> Result<Vec<BarrierPoint>> {
    let prices = barrier_curve(paths, p, strike, barriers, expiry)?;
    Ok(barriers.iter().zip(prices).map(|(&barrier, price)| BarrierPoint { barrier, price }).collect())
}

/// Monte Carlo standard error of the weighted barrier price, `sqrt(Σ pᵢ² (Xᵢ − μ)²)`.
pub fn barrier_standard_error(paths: &PathSet, p: &WeightVector, strike: f64, barrier: f64, expiry: f64) -> Result<f64> {
    let idx = paths.time_index(expiry)?;
    let x: Vec<f64> = paths
        .paths()
        .map(|path| {
            let alive = path[..=idx].iter().all(|v| *v < barrier);
            if alive {
                (path[idx] - strike).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let mean: f64 = x.iter().zip(p.as_slice()).map(|(a, w)| a * w).sum();
    Ok(x.iter().zip(p.as_slice()).map(|(a, w)| w * w * (a - mean).powi(2)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wmc::{generate_brownian_paths, PathPrior};
    use approx::assert_abs_diff_eq;

    fn hand_paths() -> PathSet {
        // peaks 0.03 ending 0.02; peaks 0.01 ending 0.005
        PathSet::from_values(vec![0.0, 0.03, 0.02, 0.0, 0.01, 0.005], 2, 2, 2.0, 0, PathPrior::Unknown).unwrap()
    }

    #[test]
    fn hand_evaluated_price() {
        let p = barrier_call_price(&hand_paths(), &WeightVector::uniform(2), 0.0, 0.02, 2.0).unwrap();
        assert_abs_diff_eq!(p, 0.0025, epsilon = 1e-18);
    }

    #[test]
    fn limits() {
        let paths = generate_brownian_paths(500, 5.0, 50, 0.006, 2).unwrap();
        let p = WeightVector::uniform(500);
        let vanilla: f64 = paths.paths().map(|x| x[50].max(0.0)).sum::<f64>() / 500.0;
        let max = paths.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(barrier_call_price(&paths, &p, 0.0, max + 1.0, 5.0).unwrap(), vanilla, epsilon = 1e-15);
        assert_eq!(barrier_call_price(&paths, &p, 0.0, 0.0, 5.0).unwrap(), 0.0);
        assert!(barrier_call_price(&paths, &p, 0.0, 0.05, 6.0).is_err());
    }

    #[test]
    fn sweep_is_monotone() {
        let paths = generate_brownian_paths(300, 5.0, 50, 0.006, 4).unwrap();
        let levels = default_barriers();
        assert_eq!(levels.len(), 19);
        assert_abs_diff_eq!(*levels.last().unwrap(), 0.1, epsilon = 1e-12);
        let curve = barrier_sweep(&paths, &WeightVector::uniform(300), 0.0, &levels, 5.0).unwrap();
        assert!(curve.windows(2).all(|w| w[0].price <= w[1].price));
    }

    #[test]
    fn one_hot_is_single_path() {
        let p = WeightVector::one_hot(2, 1);
        assert_eq!(barrier_call_price(&hand_paths(), &p, 0.0, 0.02, 2.0).unwrap(), 0.005);
        assert_eq!(barrier_call_price(&hand_paths(), &WeightVector::one_hot(2, 0), 0.0, 0.02, 2.0).unwrap(), 0.0);
    }
}
