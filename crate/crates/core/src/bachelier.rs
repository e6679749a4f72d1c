//! Normal-model (Bachelier) vanilla pricing and implied normal volatility.
//!
//! Prices are annuity-normalised: with annuity `A` the payer premium is
//! `A·[(S0−K)Φ(d) + σ√T φ(d)]`, `d = (S0−K)/(σ√T)`. Internally every price is
//! assembled as intrinsic value plus the out-of-the-money time value
//! `σ√T·ψ(|d|)`, `ψ(u) = φ(u) − uΦ(−u)`, which is the same quantity but keeps
//! full relative precision far from the money.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};

/// Payer swaptions are calls on the swap rate, receivers are puts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    #[serde(alias = "payer")]
    Call,
    #[serde(alias = "receiver")]
    Put,
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "call" | "payer" => Ok(Flavor::Call),
            "put" | "receiver" => Ok(Flavor::Put),
            other => Err(invalid(format!("unknown option flavor `{other}`"))),
        }
    }
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::Call => "call",
            Flavor::Put => "put",
        })
    }
}

/// A quoted vanilla in strike-offset space (`S0 = 0`, notional 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub flavor: Flavor,
    pub strike_offset: f64,
    pub expiry: f64,
    pub price: f64,
}

impl OptionQuote {
    pub fn new(flavor: Flavor, strike_offset: f64, expiry: f64, price: f64) -> Result<Self> {
        ensure_finite(strike_offset, "strike_offset")?;
        ensure_finite(price, "price")?;
        if !(expiry > 0.0) {
            return Err(invalid(format!("expiry must be positive, got {expiry}")));
        }
        let intrinsic = intrinsic(0.0, strike_offset, flavor);
        if price < intrinsic {
            return Err(invalid(format!(
                "price {price} below intrinsic {intrinsic} for {flavor} at {strike_offset}"
            )));
        }
        Ok(Self {
            flavor,
            strike_offset,
            expiry,
            price,
        })
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn intrinsic(s0: f64, k: f64, flavor: Flavor) -> f64 {
    match flavor {
        Flavor::Call => (s0 - k).max(0.0),
        Flavor::Put => (k - s0).max(0.0),
    }
}

/// `ψ(u) = φ(u) − uΦ(−u)` for `u ≥ 0`.
fn psi(u: f64) -> f64 {
    normal_pdf(u) - u * normal_cdf(-u)
}

/// `ln ψ(u)`, finite even where `ψ` underflows.
fn ln_psi(u: f64) -> f64 {
    if u < 10.0 {
        return psi(u).ln();
    }
    // ψ(u) = φ(u)/u² · Σ_k (−1)^k (2k+1)!! / u^{2k}
    let inv2 = 1.0 / (u * u);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..14 {
        term *= -((2 * k + 1) as f64) * inv2;
        sum += term;
    }
    -0.5 * u * u - 0.5 * (2.0 * PI).ln() - 2.0 * u.ln() + sum.ln()
}

/// Annuity-normalised Bachelier premium.
pub fn bachelier_price(s0: f64, k: f64, sigma: f64, t: f64, flavor: Flavor, annuity: f64) -> Result<f64> {
    ensure_finite(s0, "S0")?;
    ensure_finite(k, "K")?;
    ensure_finite(sigma, "sigma")?;
    if sigma < 0.0 {
        return Err(invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("T must be positive, got {t}")));
    }
    if !(annuity > 0.0) || !annuity.is_finite() {
        return Err(invalid(format!("annuity must be positive, got {annuity}")));
    }
    let scale = sigma * t.sqrt();
    let tv = if scale == 0.0 {
        0.0
    } else {
        scale * psi((s0 - k).abs() / scale)
    };
    Ok(annuity * (intrinsic(s0, k, flavor) + tv))
}

/// `∂price/∂σ = A·√T·φ(d)`.
pub fn bachelier_vega(s0: f64, k: f64, sigma: f64, t: f64, annuity: f64) -> f64 {
    let scale = sigma * t.sqrt();
    if scale == 0.0 {
        return if s0 == k { annuity * t.sqrt() * normal_pdf(0.0) } else { 0.0 };
    }
    annuity * t.sqrt() * normal_pdf((s0 - k) / scale)
}

const MAX_ITER: usize = 200;
const PRICE_TOL: f64 = 1e-12;

/// Inverts [`bachelier_price`] for `σ` with a bracketed Newton iteration on
/// the log of the out-of-the-money time value.
pub fn implied_normal_vol(price: f64, s0: f64, k: f64, t: f64, flavor: Flavor, annuity: f64) -> Result<f64> {
    if !price.is_finite() {
        return Err(invalid(format!("price must be finite, got {price}")));
    }
    ensure_finite(s0, "S0")?;
    ensure_finite(k, "K")?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("T must be positive, got {t}")));
    }
    if !(annuity > 0.0) {
        return Err(invalid(format!("annuity must be positive, got {annuity}")));
    }
    let normalised = price / annuity;
    let tv = normalised - intrinsic(s0, k, flavor);
    if !(tv > 0.0) {
        return Err(Error::NoSolution(format!(
            "price {price} does not exceed intrinsic value for {flavor} S0={s0} K={k}"
        )));
    }
    let sqrt_t = t.sqrt();
    let m = (s0 - k).abs();
    let phi0 = normal_pdf(0.0);
    if m == 0.0 {
        return Ok(tv / (sqrt_t * phi0));
    }

    // s = σ√T; f(s) = s·ψ(m/s) is increasing, s·φ(0) − m/2 ≤ f(s) ≤ s·φ(0)
    let ln_target = tv.ln();
    let h = |s: f64| s.ln() + ln_psi(m / s) - ln_target;
    let mut lo = tv / phi0;
    let mut hi = (tv + 0.5 * m) / phi0;
    let mut s = if h(lo) >= 0.0 {
        lo
    } else {
        // asymptotic guess far from the money, clipped into the bracket
        let guess = m / (2.0 * (m / tv).ln().max(1.0)).sqrt();
        guess.clamp(lo, hi)
    };
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let hv = h(s);
        if hv == 0.0 {
            converged = true;
            break;
        }
        if hv > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        // h'(s) = φ(u) / f(s) with u = m/s, written in logs
        let u = m / s;
        let dh = (-0.5 * u * u - 0.5 * (2.0 * PI).ln() - s.ln() - ln_psi(u)).exp();
        let mut next = s - hv / dh;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo * hi).sqrt();
        }
        if (next - s).abs() <= 4.0 * f64::EPSILON * s {
            s = next;
            converged = true;
            break;
        }
        s = next;
        if (hi - lo) <= 2.0 * f64::EPSILON * hi {
            converged = true;
            break;
        }
    }
    let sigma = s / sqrt_t;
    let repriced = bachelier_price(s0, k, sigma, t, flavor, annuity)?;
    if !converged && (repriced - price).abs() > PRICE_TOL * annuity {
        return Err(Error::Numerical(format!(
            "implied vol iteration did not converge (price {price}, repriced {repriced})"
        )));
    }
    Ok(sigma)
}

/// Put premium implied by parity in strike-offset space: `put = ΔK + call`.
pub fn put_from_call(strike_offset: f64, call: f64) -> f64 {
    strike_offset + call
}

/// `ΔK + call − put`; zero for parity-consistent quotes.
pub fn parity_residual(strike_offset: f64, call: f64, put: f64) -> f64 {
    strike_offset + call - put
}
