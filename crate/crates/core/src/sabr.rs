//! Normal (β = 0) SABR: smile approximation, single-smile calibration and
//! path simulation.
//!
//! Dynamics: `dS = σ dW¹`, `dσ = ν σ dW²`, `dW¹dW² = ρ dt`, `σ(0) = α`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};
use crate::optim::{least_squares, Bounds, LsqOptions};
use crate::rng;
use crate::wmc::{PathPrior, PathSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SabrParams {
    /// Initial normal volatility σ₀.
    pub alpha: f64,
    pub rho: f64,
    /// Volatility of volatility.
    pub volvol: f64,
}

impl SabrParams {
    pub fn new(alpha: f64, rho: f64, volvol: f64) -> Result<Self> {
        let p = Self { alpha, rho, volvol };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(invalid(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if !(self.volvol >= 0.0) || !self.volvol.is_finite() {
            return Err(invalid(format!("volvol must be non-negative, got {}", self.volvol)));
        }
        Ok(())
    }
}

/// `ζ/x(ζ)` with the small-ζ series branch.
fn zeta_over_x(zeta: f64, rho: f64) -> f64 {
    if zeta.abs() < 1e-4 {
        let r2 = rho * rho;
        return 1.0 - 0.5 * rho * zeta + (1.0 / 6.0 - 0.25 * r2) * zeta * zeta
            + (5.0 * rho / 24.0 - 0.25 * r2 * rho) * zeta * zeta * zeta;
    }
    let x = (((1.0 - 2.0 * rho * zeta + zeta * zeta).sqrt() + zeta - rho) / (1.0 - rho)).ln();
    zeta / x
}

/// Hagan's β = 0 normal implied volatility,
/// `σ = α·(ζ/x(ζ))·[1 + (2 − 3ρ²)/24·ν²T]`, `ζ = (ν/α)(S0 − K)`.
pub fn sabr_normal_vol(p: &SabrParams, s0: f64, k: f64, t: f64) -> Result<f64> {
    p.validate()?;
    ensure_finite(s0, "S0")?;
    ensure_finite(k, "K")?;
    if !(t > 0.0) {
        return Err(invalid(format!("T must be positive, got {t}")));
    }
    let zeta = p.volvol / p.alpha * (s0 - k);
    let correction = 1.0 + (2.0 - 3.0 * p.rho * p.rho) / 24.0 * p.volvol * p.volvol * t;
    Ok(p.alpha * zeta_over_x(zeta, p.rho) * correction)
}

/// Calibrated smile parameters and fit quality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SabrFit {
    pub params: SabrParams,
    /// Model minus market vol per input point.
    pub residuals: Vec<f64>,
    pub rms: f64,
    pub converged: bool,
}

const ALPHA_BOUNDS: (f64, f64) = (1e-6, 0.1);
const RHO_BOUNDS: (f64, f64) = (-0.999, 0.999);
const VOLVOL_BOUNDS: (f64, f64) = (0.0, 5.0);

/// Bounded least-squares fit of `(α, ρ, ν)` to one smile of `(ΔK, σ)` points
/// quoted at expiry `t`, best of three starts.
pub fn fit_sabr_smile(smile: &[(f64, f64)], t: f64) -> Result<SabrFit> {
    if smile.len() < 3 {
        return Err(invalid(format!(
            "SABR smile fit needs at least 3 points, got {}",
            smile.len()
        )));
    }
    if !(t > 0.0) {
        return Err(invalid(format!("T must be positive, got {t}")));
    }
    for &(k, v) in smile {
        ensure_finite(k, "strike offset")?;
        if !(v > 0.0) {
            return Err(invalid(format!("smile vol must be positive, got {v}")));
        }
    }
    // ATM level from the point closest to the money
    let atm = smile
        .iter()
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .map(|p| p.1)
        .unwrap_or(smile[0].1);

    let bounds = Bounds {
        lower: vec![ALPHA_BOUNDS.0, RHO_BOUNDS.0, VOLVOL_BOUNDS.0],
        upper: vec![ALPHA_BOUNDS.1, RHO_BOUNDS.1, VOLVOL_BOUNDS.1],
    };
    // α is fitted in units of the ATM level so all three variables are O(1)
    let scale = atm;
    let residuals = |x: &[f64]| -> Vec<f64> {
        let p = SabrParams {
            alpha: x[0],
            rho: x[1],
            volvol: x[2],
        };
        smile
            .iter()
            .map(|&(k, v)| match sabr_normal_vol(&p, 0.0, k, t) {
                Ok(m) => (m - v) / scale,
                Err(_) => f64::INFINITY,
            })
            .collect()
    };
    let model = |x: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let r = residuals(x);
        let m = r.len();
        let mut jac = vec![0.0; m * 3];
        for a in 0..3 {
            let h = 1e-6 * x[a].abs().max(if a == 0 { scale } else { 1e-2 });
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[a] = (x[a] + h).min(bounds.upper[a]);
            dn[a] = (x[a] - h).max(bounds.lower[a]);
            let (ru, rd) = (residuals(&up), residuals(&dn));
            let width = up[a] - dn[a];
            for i in 0..m {
                jac[i * 3 + a] = (ru[i] - rd[i]) / width;
            }
        }
        Ok((r, jac))
    };

    let starts = [
        [atm, 0.0, 0.3],
        [atm, -0.5, 0.8],
        [atm, 0.5, 0.1],
    ];
    let opts = LsqOptions::default();
    let mut best: Option<crate::optim::LsqReport> = None;
    for s in starts {
        let rep = least_squares(model, &s, &bounds, &opts)?;
        if best.as_ref().map_or(true, |b| rep.cost < b.cost) {
            best = Some(rep);
        }
    }
    let best = best.expect("at least one start");
    let params = SabrParams {
        alpha: best.x[0],
        rho: best.x[1],
        volvol: best.x[2],
    };
    let res: Vec<f64> = smile
        .iter()
        .map(|&(k, v)| sabr_normal_vol(&params, 0.0, k, t).map(|m| m - v))
        .collect::<Result<_>>()?;
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    Ok(SabrFit {
        params,
        residuals: res,
        rms,
        converged: best.converged,
    })
}

/// Simulates `nu_paths` SABR paths of the rate in strike-offset space.
///
/// `S` takes arithmetic Euler steps; `σ` takes the exact lognormal step
/// `σ·exp(−½ν²Δt + ν√Δt ξ₂)`, so it stays positive.
pub fn simulate_sabr_paths(p: &SabrParams, nu_paths: usize, horizon: f64, steps: usize, seed: u64) -> Result<PathSet> {
    p.validate()?;
    if nu_paths < 2 || steps == 0 || !(horizon > 0.0) {
        return Err(invalid(format!(
            "invalid simulation shape: paths={nu_paths} steps={steps} horizon={horizon}"
        )));
    }
    let dt = horizon / steps as f64;
    let sq = dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let drift = -0.5 * p.volvol * p.volvol * dt;
    let width = steps + 1;
    let mut values = vec![0.0; nu_paths * width];
    values.par_chunks_mut(width).enumerate().for_each(|(i, row)| {
        let mut rng = rng::stream(seed, i as u64);
        let mut s = 0.0;
        let mut vol = p.alpha;
        row[0] = 0.0;
        for v in row.iter_mut().skip(1) {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let w2 = p.rho * z1 + rho_c * z2;
            s += vol * sq * z1;
            vol *= (drift + p.volvol * sq * w2).exp();
            *v = s;
        }
    });
    PathSet::from_values(
        values,
        nu_paths,
        steps,
        horizon,
        seed,
        PathPrior::Sabr {
            alpha: p.alpha,
            rho: p.rho,
            volvol: p.volvol,
        },
    )
}
