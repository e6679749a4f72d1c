//! Small dense linear algebra and a box-constrained least-squares driver.

use crate::error::{Error, Result};

/// Solves `a x = b` for a dense row-major `n × n` system by Gaussian
/// elimination with partial pivoting. `a` and `b` are overwritten.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n {
        return Err(Error::Dimension {
            context: "solve_dense",
            expected: n * n,
            got: a.len(),
        });
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let pv = a[pivot * n + col];
        if pv.abs() < 1e-300 || !pv.is_finite() {
            return Err(Error::Numerical("singular linear system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / pv;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row * n + k] * x[k];
        }
        x[row] = s / a[row * n + row];
    }
    Ok(x)
}

/// Box bounds for [`least_squares`]. Infinite entries are allowed.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; n],
            upper: vec![hi; n],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative cost-decrease tolerance.
    pub ftol: f64,
    /// Step-size tolerance relative to `|x| + xtol`.
    pub xtol: f64,
    /// Projected-gradient tolerance.
    pub gtol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-15,
            xtol: 1e-12,
            gtol: 1e-18,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqReport {
    pub x: Vec<f64>,
    /// `½ Σ r²` at `x`.
    pub cost: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Gauss-Newton (Levenberg-Marquardt) with projection onto the box.
///
/// `model(x)` returns residuals `r` (length m) and the row-major Jacobian
/// `∂r/∂x` (m × n). Variables pinned at an active bound whose gradient points
/// outwards are frozen for the step.
pub fn least_squares<F>(mut model: F, x0: &[f64], bounds: &Bounds, opts: &LsqOptions) -> Result<LsqReport>
where
    F: FnMut(&[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let n = x0.len();
    if bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::Dimension {
            context: "least_squares bounds",
            expected: n,
            got: bounds.lower.len(),
        });
    }
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut r, mut jac) = model(&x)?;
    let m = r.len();
    if m == 0 {
        return Err(Error::InvalidInput("least_squares needs at least one residual".into()));
    }
    let mut cost = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        // normal equations
        let mut jtj = vec![0.0; n * n];
        let mut jtr = vec![0.0; n];
        for row in 0..m {
            let jr = &jac[row * n..(row + 1) * n];
            for a in 0..n {
                jtr[a] += jr[a] * r[row];
                for b in 0..n {
                    jtj[a * n + b] += jr[a] * jr[b];
                }
            }
        }
        let free: Vec<bool> = (0..n)
            .map(|a| {
                let at_lo = x[a] <= bounds.lower[a] && jtr[a] > 0.0;
                let at_hi = x[a] >= bounds.upper[a] && jtr[a] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let gnorm = (0..n).filter(|&a| free[a]).map(|a| jtr[a].abs()).fold(0.0, f64::max);
        if gnorm <= opts.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a_mat = jtj.clone();
            let mut rhs: Vec<f64> = jtr.iter().map(|g| -g).collect();
            for a in 0..n {
                if free[a] {
                    a_mat[a * n + a] += mu * (jtj[a * n + a] + 1e-30);
                } else {
                    for b in 0..n {
                        a_mat[a * n + b] = 0.0;
                        a_mat[b * n + a] = 0.0;
                    }
                    a_mat[a * n + a] = 1.0;
                    rhs[a] = 0.0;
                }
            }
            let step = match solve_dense(&mut a_mat, &mut rhs, n) {
                Ok(s) => s,
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            bounds.project(&mut trial);
            let (tr, tj) = model(&trial)?;
            let tcost = 0.5 * tr.iter().map(|v| v * v).sum::<f64>();
            if tcost.is_finite() && tcost < cost {
                let dx = trial.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let xs = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let rel_drop = (cost - tcost) / cost.max(1e-300);
                x = trial;
                r = tr;
                jac = tj;
                cost = tcost;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel_drop < opts.ftol || dx < opts.xtol * (xs + opts.xtol) {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if !accepted {
            // no descent possible from here: a local minimum at working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    Ok(LsqReport {
        residual_norm: (2.0 * cost).sqrt(),
        x,
        cost,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_matches_known_system() {
        let mut a = vec![2.0, 1.0, 1.0, 1.0, 3.0, 2.0, 1.0, 0.0, 0.0];
        let mut b = vec![4.0, 5.0, 6.0];
        let x = solve_dense(&mut a, &mut b, 3).unwrap();
        assert!((x[0] - 6.0).abs() < 1e-12);
        assert!((x[1] - 15.0).abs() < 1e-12);
        assert!((x[2] + 23.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(solve_dense(&mut a, &mut b, 2).is_err());
    }

    #[test]
    fn rosenbrock_residuals_converge() {
        let model = |x: &[f64]| {
            let r = vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]];
            let j = vec![-20.0 * x[0], 10.0, -1.0, 0.0];
            Ok((r, j))
        };
        let rep = least_squares(model, &[-1.2, 1.0], &Bounds::uniform(2, -5.0, 5.0), &LsqOptions::default()).unwrap();
        assert!((rep.x[0] - 1.0).abs() < 1e-8 && (rep.x[1] - 1.0).abs() < 1e-8, "{:?}", rep.x);
    }

    #[test]
    fn active_bound_is_respected() {
        // minimum of (x - 3)^2 inside [0, 1] sits on the upper bound
        let model = |x: &[f64]| Ok((vec![x[0] - 3.0], vec![1.0]));
        let rep = least_squares(model, &[0.2], &Bounds::uniform(1, 0.0, 1.0), &LsqOptions::default()).unwrap();
        assert_eq!(rep.x[0], 1.0);
    }
}
