//! Minimum-relative-entropy calibration of path weights via the Lagrange dual.
//!
//! The weights that minimise `D(p‖q)` subject to `pG = c` have Gibbs form
//! `pᵢ ∝ exp(gᵢ·λ)`. The multipliers minimise the convex dual
//! `F(λ) = ln( (1/ν) Σᵢ exp(gᵢ·λ) ) − λ·c`, whose gradient is the pricing
//! error `E_p[g] − c` and whose Hessian is the weighted payoff covariance.
//! `F` is minimised by a damped Newton iteration with backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::solve_dense;
use crate::wmc::measure::{weighted_price, weights_from_lagrange, PayoffMatrix, WeightVector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualOptions {
    /// Target accuracy `max |pG − c|` in price units.
    pub tolerance: f64,
    /// Per-column tolerances overriding `tolerance`.
    pub column_tolerances: Option<Vec<f64>>,
    pub max_iterations: usize,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            column_tolerances: None,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    pub weights: WeightVector,
    /// Model prices `pG`.
    pub achieved: Vec<f64>,
    /// `pG − c` per column.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some target lies outside the range of its payoff column.
    pub infeasible: bool,
}

struct Scaled {
    n: usize,
    rows: usize,
    /// column-scaled payoffs, row-major
    h: Vec<f64>,
    target: Vec<f64>,
}

impl Scaled {
    /// Dual value, gradient and (optionally) Hessian at scaled multipliers `mu`.
    fn eval(&self, mu: &[f64], hessian: bool) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.n;
        let logits: Vec<f64> = (0..self.rows)
            .map(|i| self.h[i * n..(i + 1) * n].iter().zip(mu).map(|(a, b)| a * b).sum())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        let value = m + (z / self.rows as f64).ln() - mu.iter().zip(&self.target).map(|(a, b)| a * b).sum::<f64>();
        let p: Vec<f64> = w.iter().map(|v| v / z).collect();
        let mut mean = vec![0.0; n];
        for (i, &pi) in p.iter().enumerate() {
            for (o, v) in mean.iter_mut().zip(&self.h[i * n..(i + 1) * n]) {
                *o += pi * v;
            }
        }
        let grad: Vec<f64> = mean.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let mut hess = Vec::new();
        if hessian {
            hess = vec![0.0; n * n];
            let mut centred = vec![0.0; n];
            for (i, &pi) in p.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                for ((c, v), mu_j) in centred.iter_mut().zip(&self.h[i * n..(i + 1) * n]).zip(&mean) {
                    *c = v - mu_j;
                }
                for a in 0..n {
                    let fa = pi * centred[a];
                    if fa == 0.0 {
                        continue;
                    }
                    let row = &mut hess[a * n..a * n + n];
                    for b in a..n {
                        row[b] += fa * centred[b];
                    }
                }
            }
            for a in 0..n {
                for b in 0..a {
                    hess[a * n + b] = hess[b * n + a];
                }
            }
        }
        (value, grad, hess, p)
    }
}

/// Solves `pG = c` for the minimum-entropy weights relative to the uniform prior.
pub fn solve_lagrange_dual(g: &PayoffMatrix, targets: &[f64], opts: &DualOptions) -> Result<DualSolution> {
    let n = g.cols();
    let rows = g.rows();
    if targets.len() != n {
        return Err(Error::Dimension {
            context: "solve_lagrange_dual targets",
            expected: n,
            got: targets.len(),
        });
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(invalid(format!("target prices must be finite, found {t}")));
    }
    let tol: Vec<f64> = match &opts.column_tolerances {
        Some(t) if t.len() != n => {
            return Err(Error::Dimension {
                context: "solve_lagrange_dual tolerances",
                expected: n,
                got: t.len(),
            })
        }
        Some(t) => t.clone(),
        None => vec![opts.tolerance; n],
    };

    // column scaling by the uniform-measure spread; all-zero columns stay inactive
    let mut scale = vec![0.0; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for i in 0..rows {
        for (j, &v) in g.row(i).iter().enumerate() {
            scale[j] += v * v;
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut infeasible = false;
    for j in 0..n {
        scale[j] = (scale[j] / rows as f64).sqrt();
        if targets[j] < lo[j] - tol[j] || targets[j] > hi[j] + tol[j] {
            infeasible = true;
        }
    }
    let active: Vec<usize> = (0..n).filter(|&j| scale[j] > 0.0).collect();
    let k = active.len();
    let mut h = Vec::with_capacity(rows * k);
    for i in 0..rows {
        let r = g.row(i);
        h.extend(active.iter().map(|&j| r[j] / scale[j]));
    }
    let problem = Scaled {
        n: k,
        rows,
        h,
        target: active.iter().map(|&j| targets[j] / scale[j]).collect(),
    };

    let unscale = |mu: &[f64]| -> Vec<f64> {
        let mut lambda = vec![0.0; n];
        for (a, &j) in active.iter().enumerate() {
            lambda[j] = mu[a] / scale[j];
        }
        lambda
    };
    let within = |p: &WeightVector| -> Result<(Vec<f64>, bool)> {
        let prices = weighted_price(g, p)?;
        let ok = prices.iter().zip(targets).zip(&tol).all(|((a, c), t)| (a - c).abs() <= *t);
        Ok((prices, ok))
    };

    let mut mu = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;
    let mut damping = 1e-10;
    if !infeasible {
        let (mut value, mut grad, mut hess, _) = problem.eval(&mu, true);
        while iterations < opts.max_iterations {
            let p = weights_from_lagrange(g, &unscale(&mu))?;
            if within(&p)?.1 {
                converged = true;
                break;
            }
            iterations += 1;
            let gnorm2: f64 = grad.iter().map(|v| v * v).sum();
            let mut stepped = false;
            for _ in 0..12 {
                let mut a = hess.clone();
                let trace = (0..k).map(|i| hess[i * k + i]).sum::<f64>() / k.max(1) as f64;
                for i in 0..k {
                    a[i * k + i] += damping * trace.max(1e-300);
                }
                let mut rhs: Vec<f64> = grad.iter().map(|v| -v).collect();
                let dir = match solve_dense(&mut a, &mut rhs, k) {
                    Ok(d) => d,
                    Err(_) => {
                        damping *= 100.0;
                        continue;
                    }
                };
                let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let dir = if slope < 0.0 { dir } else { grad.iter().map(|v| -v).collect() };
                let slope = if slope < 0.0 { slope } else { -gnorm2 };
                let mut t = 1.0;
                for _ in 0..40 {
                    let trial: Vec<f64> = mu.iter().zip(&dir).map(|(m, d)| m + t * d).collect();
                    let (tv, tg, th, _) = problem.eval(&trial, true);
                    if tv.is_finite() && tv <= value + 1e-4 * t * slope {
                        mu = trial;
                        value = tv;
                        grad = tg;
                        hess = th;
                        stepped = true;
                        break;
                    }
                    t *= 0.5;
                }
                if stepped {
                    damping = if t == 1.0 { (damping * 0.1).max(1e-14) } else { damping };
                    break;
                }
                damping *= 100.0;
            }
            if !stepped {
                break;
            }
        }
    }

    let lambda = unscale(&mu);
    let weights = weights_from_lagrange(g, &lambda)?;
    let (achieved, ok) = within(&weights)?;
    let residuals: Vec<f64> = achieved.iter().zip(targets).map(|(a, c)| a - c).collect();
    let max_residual = residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
    Ok(DualSolution {
        lambda,
        weights,
        achieved,
        residuals,
        max_residual,
        iterations,
        converged: ok && !infeasible,
        infeasible: infeasible || !(ok || converged),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bachelier::Flavor;
    use crate::wmc::measure::ColumnMeta;
    use approx::assert_abs_diff_eq;

    fn two_path(target: f64) -> DualSolution {
        let g = PayoffMatrix::new(
            2,
            vec![1.0, -1.0],
            vec![ColumnMeta::Vanilla {
                flavor: Flavor::Call,
                strike_offset: 0.0,
                expiry: 1.0,
            }],
        )
        .unwrap();
        solve_lagrange_dual(&g, &[target], &DualOptions::default()).unwrap()
    }

    #[test]
    fn symmetric_target_keeps_uniform() {
        let s = two_path(0.0);
        assert!(s.converged);
        assert_eq!(s.lambda, vec![0.0]);
        assert_eq!(s.weights, WeightVector::uniform(2));
    }

    #[test]
    fn closed_form_two_path_solution() {
        let s = two_path(1.0 / 3.0);
        assert!(s.converged, "{s:?}");
        assert_abs_diff_eq!(s.weights.as_slice()[0], 2.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(s.lambda[0], 0.5 * 2f64.ln(), epsilon = 1e-7);
    }

    #[test]
    fn target_outside_hull_is_flagged() {
        let s = two_path(2.0);
        assert!(s.infeasible);
        assert!(!s.converged);
        assert!(s.max_residual > 0.5);
    }
}
