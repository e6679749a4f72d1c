//! Path payoffs, weighted pricing and the entropy geometry of path weights.

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::bachelier::{Flavor, OptionQuote};
use crate::error::{invalid, Error, Result};
use crate::market::SurfaceGrid;
use crate::wmc::martingale::MartingaleWindow;
use crate::wmc::PathSet;

/// Probability weights over the paths of one path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

const SUM_TOL: f64 = 1e-10;

impl WeightVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(invalid("weight vector is empty"));
        }
        if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("weights must be finite and non-negative, found {v}")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("weights must sum to 1, sum is {s}")));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Normalises non-negative scores into weights.
    pub(crate) fn from_unnormalised(mut w: Vec<f64>) -> Self {
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        Self(w)
    }
}

/// What a payoff column represents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnMeta {
    Vanilla {
        flavor: Flavor,
        strike_offset: f64,
        expiry: f64,
    },
    Martingale {
        window: MartingaleWindow,
    },
}

/// `ν × N` discounted payoffs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    rows: usize,
    data: Vec<f64>,
    columns: Vec<ColumnMeta>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, data: Vec<f64>, columns: Vec<ColumnMeta>) -> Result<Self> {
        if data.len() != rows * columns.len() {
            return Err(Error::Dimension {
                context: "PayoffMatrix",
                expected: rows * columns.len(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("payoffs must be finite"));
        }
        Ok(Self { rows, data, columns })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols() + j]).collect()
    }

    /// Horizontal concatenation.
    pub fn append(&self, other: &PayoffMatrix) -> Result<PayoffMatrix> {
        if other.rows != self.rows {
            return Err(Error::Dimension {
                context: "PayoffMatrix::append",
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().cloned());
        Ok(PayoffMatrix {
            rows: self.rows,
            data,
            columns,
        })
    }

    /// Keeps the listed columns in the given order.
    pub fn select(&self, cols: &[usize]) -> PayoffMatrix {
        let n = self.cols();
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            data.extend(cols.iter().map(|&j| self.data[i * n + j]));
        }
        PayoffMatrix {
            rows: self.rows,
            data,
            columns: cols.iter().map(|&j| self.columns[j].clone()).collect(),
        }
    }
}

/// Vanilla payoffs `(S_T − ΔK)⁺` / `(ΔK − S_T)⁺` for every grid node and
/// flavor; columns are flavor-major, then expiry-major grid order.
pub fn vanilla_payoffs(paths: &PathSet, grid: &SurfaceGrid, flavors: &[Flavor]) -> Result<PayoffMatrix> {
    let expiry_idx: Vec<usize> = grid
        .expiries
        .iter()
        .map(|&t| paths.time_index(t))
        .collect::<Result<_>>()?;
    let mut columns = Vec::with_capacity(flavors.len() * grid.len());
    let mut nodes = Vec::with_capacity(flavors.len() * grid.len());
    for &flavor in flavors {
        for (ei, &t) in grid.expiries.iter().enumerate() {
            for &k in &grid.strike_offsets {
                columns.push(ColumnMeta::Vanilla {
                    flavor,
                    strike_offset: k,
                    expiry: t,
                });
                nodes.push((flavor, k, expiry_idx[ei]));
            }
        }
    }
    let mut data = Vec::with_capacity(paths.nu() * columns.len());
    for path in paths.paths() {
        data.extend(nodes.iter().map(|&(flavor, k, idx)| match flavor {
            Flavor::Call => (path[idx] - k).max(0.0),
            Flavor::Put => (k - path[idx]).max(0.0),
        }));
    }
    PayoffMatrix::new(paths.nu(), data, columns)
}

/// Payoffs of arbitrary quoted vanillas, one column per quote.
pub fn quote_payoffs(paths: &PathSet, quotes: &[OptionQuote]) -> Result<PayoffMatrix> {
    let idx: Vec<usize> = quotes.iter().map(|q| paths.time_index(q.expiry)).collect::<Result<_>>()?;
    let columns = quotes
        .iter()
        .map(|q| ColumnMeta::Vanilla {
            flavor: q.flavor,
            strike_offset: q.strike_offset,
            expiry: q.expiry,
        })
        .collect();
    let mut data = Vec::with_capacity(paths.nu() * quotes.len());
    for path in paths.paths() {
        data.extend(quotes.iter().zip(&idx).map(|(q, &i)| match q.flavor {
            Flavor::Call => (path[i] - q.strike_offset).max(0.0),
            Flavor::Put => (q.strike_offset - path[i]).max(0.0),
        }));
    }
    PayoffMatrix::new(paths.nu(), data, columns)
}

#[derive(Deserialize)]
struct QuoteRow {
    kind: String,
    strike_offset: f64,
    expiry_years: f64,
    price: f64,
}

/// Reads `kind,strike_offset,expiry_years,price` rows.
pub fn load_quotes(path: impl AsRef<Path>) -> Result<Vec<OptionQuote>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<QuoteRow>().enumerate() {
        let line = i + 2;
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| parse(e.to_string()))?;
        let flavor: Flavor = row.kind.parse().map_err(|e: Error| parse(e.to_string()))?;
        out.push(OptionQuote::new(flavor, row.strike_offset, row.expiry_years, row.price).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

/// `pᵀG`, one price per column.
pub fn weighted_price(g: &PayoffMatrix, p: &WeightVector) -> Result<Vec<f64>> {
    if p.len() != g.rows() {
        return Err(Error::Dimension {
            context: "weighted_price",
            expected: g.rows(),
            got: p.len(),
        });
    }
    let mut out = vec![0.0; g.cols()];
    for (i, &w) in p.as_slice().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// `D(p‖q) = Σ pᵢ ln(pᵢ/qᵢ)` with `0·ln 0 = 0`.
pub fn relative_entropy(p: &WeightVector, q: &WeightVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            context: "relative_entropy",
            expected: q.len(),
            got: p.len(),
        });
    }
    let mut d = 0.0;
    for (&a, &b) in p.as_slice().iter().zip(q.as_slice()) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(invalid("p puts mass where q has none"));
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d.max(0.0))
}

/// Gibbs weights `pᵢ ∝ exp(Σⱼ gᵢⱼ λⱼ)` under the uniform prior.
pub fn weights_from_lagrange(g: &PayoffMatrix, lambda: &[f64]) -> Result<WeightVector> {
    if lambda.len() != g.cols() {
        return Err(Error::Dimension {
            context: "weights_from_lagrange",
            expected: g.cols(),
            got: lambda.len(),
        });
    }
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(invalid("Lagrange multipliers must be finite"));
    }
    let logits: Vec<f64> = (0..g.rows())
        .map(|i| g.row(i).iter().zip(lambda).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax_weights(&logits))
}

pub(crate) fn softmax_weights(logits: &[f64]) -> WeightVector {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    WeightVector::from_unnormalised(logits.iter().map(|l| (l - m).exp()).collect())
}

/// Weighted histogram of the path values at one expiry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub expiry: f64,
    pub edges: Vec<f64>,
    /// Probability mass per bin; sums to 1.
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Mass divided by bin width.
    pub fn density(&self) -> Vec<f64> {
        self.edges.windows(2).zip(&self.mass).map(|(w, m)| m / (w[1] - w[0])).collect()
    }

    pub fn mean_and_std(&self) -> (f64, f64) {
        let c = self.centers();
        let mean: f64 = c.iter().zip(&self.mass).map(|(x, m)| x * m).sum();
        let var: f64 = c.iter().zip(&self.mass).map(|(x, m)| m * (x - mean).powi(2)).sum();
        (mean, var.sqrt())
    }
}

/// Equal-width bins on `[lo, hi]`; values outside land in the end bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

pub fn risk_neutral_density(paths: &PathSet, p: &WeightVector, expiry: f64, bins: Bins) -> Result<Histogram> {
    if p.len() != paths.nu() {
        return Err(Error::Dimension {
            context: "risk_neutral_density",
            expected: paths.nu(),
            got: p.len(),
        });
    }
    if bins.count == 0 || !(bins.hi > bins.lo) {
        return Err(invalid("histogram needs at least one bin and hi > lo"));
    }
    let idx = paths.time_index(expiry)?;
    let width = (bins.hi - bins.lo) / bins.count as f64;
    let mut mass = vec![0.0; bins.count];
    for (path, &w) in paths.paths().zip(p.as_slice()) {
        let b = ((path[idx] - bins.lo) / width).floor();
        let b = if b < 0.0 { 0 } else { (b as usize).min(bins.count - 1) };
        mass[b] += w;
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(Histogram {
        expiry: paths.time(idx),
        edges: (0..=bins.count).map(|i| bins.lo + width * i as f64).collect(),
        mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wmc::{generate_brownian_paths, PathPrior};
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    #[test]
    fn quotes_match_grid_payoffs() {
        let paths = generate_brownian_paths(30, 5.0, 20, 0.006, 1).unwrap();
        let g = vanilla_payoffs(&paths, &SurfaceGrid::default(), &[Flavor::Call]).unwrap();
        let q = [OptionQuote::new(Flavor::Call, 0.0025, 2.0, 0.01).unwrap()];
        let one = quote_payoffs(&paths, &q).unwrap();
        // ΔK = 0.0025 at T = 2 is node 3·7 + 5
        assert_eq!(one.column(0), g.column(26));
    }

    #[test]
    fn quote_file_errors_carry_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "kind,strike_offset,expiry_years,price\ncall,0.0,1.0,0.002\nswap,0.0,1.0,0.002").unwrap();
        match load_quotes(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn tiny_matrix(col: &[f64]) -> PayoffMatrix {
        PayoffMatrix::new(
            col.len(),
            col.to_vec(),
            vec![ColumnMeta::Vanilla {
                flavor: Flavor::Call,
                strike_offset: 0.0,
                expiry: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn weighted_price_examples() {
        let g = tiny_matrix(&[0.0, 1.0, 4.0]);
        let p = WeightVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_abs_diff_eq!(weighted_price(&g, &p).unwrap()[0], 2.3, epsilon = 1e-15);
        let u = WeightVector::uniform(3);
        assert_abs_diff_eq!(weighted_price(&g, &u).unwrap()[0], 5.0 / 3.0, epsilon = 1e-15);
        assert_eq!(weighted_price(&g, &WeightVector::one_hot(3, 2)).unwrap(), vec![4.0]);
        assert!(weighted_price(&g, &WeightVector::uniform(4)).is_err());
    }

    #[test]
    fn entropy_examples() {
        let q = WeightVector::uniform(8);
        assert_eq!(relative_entropy(&q, &q).unwrap(), 0.0);
        assert_abs_diff_eq!(relative_entropy(&WeightVector::one_hot(8, 3), &q).unwrap(), 8f64.ln(), epsilon = 1e-15);
        let p = WeightVector::new(vec![0.5, 0.5]).unwrap();
        let q = WeightVector::new(vec![0.25, 0.75]).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert_abs_diff_eq!(relative_entropy(&p, &q).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.143_841, epsilon = 1e-6);
        let q0 = WeightVector::new(vec![1.0, 0.0]).unwrap();
        assert!(relative_entropy(&p, &q0).is_err());
    }

    #[test]
    fn gibbs_examples() {
        let g = tiny_matrix(&[1.0, -1.0]);
        assert_eq!(weights_from_lagrange(&g, &[0.0]).unwrap(), WeightVector::uniform(2));
        let p = weights_from_lagrange(&g, &[0.5 * 2f64.ln()]).unwrap();
        assert_abs_diff_eq!(p.as_slice()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.as_slice()[1], 1.0 / 3.0, epsilon = 1e-15);
        // overflow-safe
        let p = weights_from_lagrange(&g, &[1e4]).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn weight_vector_validation() {
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![-0.1, 1.1]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
    }

    #[test]
    fn constant_path_payoffs() {
        let paths = PathSet::from_values(vec![0.0; 2 * 11], 2, 10, 5.0, 0, PathPrior::Unknown).unwrap();
        let grid = SurfaceGrid::default();
        let g = vanilla_payoffs(&paths, &grid, &[Flavor::Call, Flavor::Put]).unwrap();
        assert_eq!(g.cols(), 98);
        let col = g
            .columns()
            .iter()
            .position(|c| matches!(c, ColumnMeta::Vanilla { flavor: Flavor::Call, strike_offset, .. } if *strike_offset == 0.0025))
            .unwrap();
        assert_eq!(g.column(col), vec![0.0, 0.0]);
        let put = col + 49;
        assert_eq!(g.column(put), vec![0.0025, 0.0025]);
        let late = PathSet::from_values(vec![0.0; 2 * 11], 2, 10, 4.0, 0, PathPrior::Unknown).unwrap();
        assert!(vanilla_payoffs(&late, &grid, &[Flavor::Call]).is_err());
    }

    #[test]
    fn density_mass_and_one_hot() {
        let paths = generate_brownian_paths(500, 1.0, 10, 0.01, 2).unwrap();
        let bins = Bins { lo: -0.03, hi: 0.03, count: 30 };
        let h = risk_neutral_density(&paths, &WeightVector::uniform(500), 1.0, bins).unwrap();
        assert_abs_diff_eq!(h.mass.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let h = risk_neutral_density(&paths, &WeightVector::one_hot(500, 17), 1.0, bins).unwrap();
        assert_eq!(h.mass.iter().filter(|m| **m > 0.0).count(), 1);
        assert!(risk_neutral_density(&paths, &WeightVector::uniform(500), 2.0, bins).is_err());
    }

    #[test]
    fn append_and_select() {
        let a = tiny_matrix(&[1.0, 2.0]);
        let b = tiny_matrix(&[3.0, 4.0]);
        let ab = a.append(&b).unwrap();
        assert_eq!(ab.row(1), &[2.0, 4.0]);
        assert_eq!(ab.select(&[1]).column(0), vec![3.0, 4.0]);
    }
}
