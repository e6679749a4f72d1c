//! Window-conditional martingale diagnostics and constraint columns.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::wmc::measure::{ColumnMeta, PayoffMatrix, WeightVector};
use crate::wmc::PathSet;

/// Paths with `|S_{t1} − center| ≤ half_width`, checked between `t1` and `t2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleWindow {
    pub t1: f64,
    pub t2: f64,
    pub center: f64,
    pub half_width: f64,
}

impl MartingaleWindow {
    pub fn contains(&self, s: f64) -> bool {
        (s - self.center).abs() <= self.half_width
    }
}

/// Windows over consecutive expiry pairs and the rate range they span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<MartingaleWindow>,
    pub range: (f64, f64),
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn range_width(&self) -> f64 {
        self.range.1 - self.range.0
    }
}

/// `n_positions` equally spaced centres on `range` for every consecutive
/// pair of `expiries`.
pub fn martingale_windows(expiries: &[f64], n_positions: usize, range: (f64, f64), delta: f64) -> Result<WindowSet> {
    if expiries.len() < 2 {
        return Err(invalid("martingale windows need at least two expiries"));
    }
    if expiries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("expiries must be strictly increasing"));
    }
    if n_positions == 0 || !(range.1 >= range.0) || !(delta > 0.0) {
        return Err(invalid("need positions, an ordered range and a positive half-width"));
    }
    let centers: Vec<f64> = if n_positions == 1 {
        vec![0.5 * (range.0 + range.1)]
    } else {
        let step = (range.1 - range.0) / (n_positions - 1) as f64;
        (0..n_positions).map(|i| range.0 + step * i as f64).collect()
    };
    let windows = expiries
        .windows(2)
        .flat_map(|w| {
            centers.iter().map(move |&c| MartingaleWindow {
                t1: w[0],
                t2: w[1],
                center: c,
                half_width: delta,
            })
        })
        .collect();
    Ok(WindowSet { windows, range })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    /// Conditional mean increment per window; `None` where the window was too thin.
    pub residuals: Vec<Option<f64>>,
    pub skipped: usize,
    /// Mean `|residual|` over evaluated windows divided by the window range width.
    pub relative_loss: f64,
}

fn window_indices(paths: &PathSet, w: &MartingaleWindow) -> Result<(usize, usize)> {
    let (a, b) = (paths.time_index(w.t1)?, paths.time_index(w.t2)?);
    if a >= b {
        return Err(invalid("window times must be increasing on the path grid"));
    }
    Ok((a, b))
}

/// Weighted conditional increments `Σ_{j∈W} (S_{t2} − S_{t1}) pⱼ / Σ_{i∈W} pᵢ`.
/// Windows holding less than `10/ν` of the mass are skipped.
pub fn martingale_loss(paths: &PathSet, p: &WeightVector, set: &WindowSet) -> Result<MartingaleReport> {
    if p.len() != paths.nu() {
        return Err(Error::Dimension {
            context: "martingale_loss",
            expected: paths.nu(),
            got: p.len(),
        });
    }
    let min_mass = 10.0 / paths.nu() as f64;
    let mut residuals = Vec::with_capacity(set.len());
    for w in &set.windows {
        let (a, b) = window_indices(paths, w)?;
        let (mut mass, mut moved) = (0.0, 0.0);
        for (path, &pj) in paths.paths().zip(p.as_slice()) {
            if w.contains(path[a]) {
                mass += pj;
                moved += pj * (path[b] - path[a]);
            }
        }
        residuals.push(if mass >= min_mass { Some(moved / mass) } else { None });
    }
    let evaluated: Vec<f64> = residuals.iter().flatten().map(|r| r.abs()).collect();
    let width = set.range_width();
    let relative_loss = if evaluated.is_empty() || width <= 0.0 {
        0.0
    } else {
        evaluated.iter().sum::<f64>() / evaluated.len() as f64 / width
    };
    Ok(MartingaleReport {
        skipped: residuals.iter().filter(|r| r.is_none()).count(),
        residuals,
        relative_loss,
    })
}

/// Zero-price pseudo-instruments paying `S_{t2} − S_{t1}` on in-window paths.
pub fn martingale_constraint_columns(paths: &PathSet, set: &WindowSet) -> Result<PayoffMatrix> {
    let idx: Vec<(usize, usize)> = set.windows.iter().map(|w| window_indices(paths, w)).collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(paths.nu() * set.len());
    for path in paths.paths() {
        data.extend(set.windows.iter().zip(&idx).map(|(w, &(a, b))| {
            if w.contains(path[a]) {
                path[b] - path[a]
            } else {
                0.0
            }
        }));
    }
    PayoffMatrix::new(
        paths.nu(),
        data,
        set.windows.iter().map(|&window| ColumnMeta::Martingale { window }).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wmc::PathPrior;
    use approx::assert_abs_diff_eq;

    #[test]
    fn window_counts() {
        let exp = crate::market::SurfaceGrid::default().expiries;
        let set = martingale_windows(&exp, 20, (-0.01, 0.01), 0.001).unwrap();
        assert_eq!(set.len(), 120);
        let one = martingale_windows(&[1.0, 2.0], 1, (-0.01, 0.01), 0.001).unwrap();
        assert_eq!(one.windows, vec![MartingaleWindow { t1: 1.0, t2: 2.0, center: 0.0, half_width: 0.001 }]);
        let c: Vec<f64> = set.windows[..20].iter().map(|w| w.center).collect();
        assert_eq!(c[0], -0.01);
        assert_abs_diff_eq!(c[19], 0.01, epsilon = 1e-16);
        let gaps: Vec<f64> = c.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (g - gaps[0]).abs() < 1e-15));
        assert!(martingale_windows(&[1.0], 20, (-0.01, 0.01), 0.001).is_err());
    }

    fn two_paths(a: f64) -> PathSet {
        // 20 paths at 0 at t=1, alternately moving ±a by t=2
        let values = (0..20).flat_map(|i| [0.0, 0.0, if i % 2 == 0 { a } else { -a }]).collect();
        PathSet::from_values(values, 20, 2, 2.0, 0, PathPrior::Unknown).unwrap()
    }

    #[test]
    fn hand_evaluated_residuals() {
        let set = martingale_windows(&[1.0, 2.0], 1, (-0.01, 0.01), 0.001).unwrap();
        let paths = two_paths(0.003);
        let even = martingale_loss(&paths, &WeightVector::uniform(20), &set).unwrap();
        assert_eq!(even.residuals, vec![Some(0.0)]);
        let skew = martingale_loss(&paths, &WeightVector::one_hot(20, 0), &set).unwrap();
        assert_abs_diff_eq!(skew.residuals[0].unwrap(), 0.003, epsilon = 1e-18);
        assert_abs_diff_eq!(skew.relative_loss, 0.003 / 0.02, epsilon = 1e-15);
    }

    #[test]
    fn constant_paths_have_no_drift() {
        let paths = PathSet::from_values(vec![0.0; 30 * 6], 30, 5, 5.0, 0, PathPrior::Unknown).unwrap();
        let set = martingale_windows(&[1.0, 2.0, 3.0], 3, (-0.001, 0.001), 0.001).unwrap();
        let rep = martingale_loss(&paths, &WeightVector::uniform(30), &set).unwrap();
        assert!(rep.residuals.iter().flatten().all(|r| *r == 0.0));
    }

    #[test]
    fn columns_zero_outside_window() {
        let paths = PathSet::from_values(vec![0.0, 0.05, 0.06, 0.0, 0.0, 0.002], 2, 2, 2.0, 0, PathPrior::Unknown).unwrap();
        let set = martingale_windows(&[1.0, 2.0], 1, (-0.01, 0.01), 0.001).unwrap();
        let g = martingale_constraint_columns(&paths, &set).unwrap();
        assert_eq!(g.cols(), 1);
        assert_eq!(g.column(0), vec![0.0, 0.002]);
    }

    #[test]
    fn thin_windows_are_skipped() {
        let paths = two_paths(0.001);
        let set = martingale_windows(&[1.0, 2.0], 1, (0.5, 0.5), 0.001).unwrap();
        let rep = martingale_loss(&paths, &WeightVector::uniform(20), &set).unwrap();
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.relative_loss, 0.0);
    }
}
