//! Surfaces, curves, synthetic histories, splits and reconstruction metrics.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::sabr::{sabr_normal_vol, SabrParams};

/// Strike-offset × expiry quoting grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    /// ΔK in decimal rate units.
    pub strike_offsets: Vec<f64>,
    /// Expiries in years.
    pub expiries: Vec<f64>,
}

impl Default for SurfaceGrid {
    fn default() -> Self {
        Self {
            strike_offsets: vec![-0.0050, -0.0025, -0.00125, 0.0, 0.00125, 0.0025, 0.0050],
            expiries: vec![0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

impl SurfaceGrid {
    pub fn new(strike_offsets: Vec<f64>, expiries: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if strike_offsets.is_empty() || !increasing(&strike_offsets) {
            return Err(invalid("strike offsets must be non-empty and strictly increasing"));
        }
        if !strike_offsets.contains(&0.0) {
            return Err(invalid("strike offsets must contain the ATM point 0"));
        }
        if expiries.is_empty() || !increasing(&expiries) || expiries[0] <= 0.0 {
            return Err(invalid("expiries must be positive and strictly increasing"));
        }
        Ok(Self {
            strike_offsets,
            expiries,
        })
    }

    pub fn len(&self) -> usize {
        self.strike_offsets.len() * self.expiries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(expiry i, strike j)`; storage is expiry-major.
    pub fn index(&self, expiry: usize, strike: usize) -> usize {
        expiry * self.strike_offsets.len() + strike
    }

    /// `(ΔK, T)` of every node in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.expiries
            .iter()
            .flat_map(move |&t| self.strike_offsets.iter().map(move |&k| (k, t)))
    }

    pub fn atm_index(&self) -> usize {
        self.strike_offsets.iter().position(|&k| k == 0.0).unwrap_or(0)
    }
}

/// Normal implied vols on a grid for one date.
#[derive(Debug, Clone, PartialEq)]
pub struct VolSurface {
    pub date: NaiveDate,
    pub grid: Arc<SurfaceGrid>,
    /// Expiry-major, `grid.len()` values.
    pub vols: Vec<f64>,
}

impl VolSurface {
    pub fn new(date: NaiveDate, grid: Arc<SurfaceGrid>, vols: Vec<f64>) -> Result<Self> {
        if vols.len() != grid.len() {
            return Err(Error::Dimension {
                context: "VolSurface",
                expected: grid.len(),
                got: vols.len(),
            });
        }
        if let Some(v) = vols.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(format!("surface for {date} holds non-positive or non-finite vol {v}")));
        }
        Ok(Self { date, grid, vols })
    }

    pub fn vol(&self, expiry: usize, strike: usize) -> f64 {
        self.vols[self.grid.index(expiry, strike)]
    }

    /// Smile at one expiry as `(ΔK, σ)` pairs.
    pub fn smile(&self, expiry: usize) -> Vec<(f64, f64)> {
        self.grid
            .strike_offsets
            .iter()
            .enumerate()
            .map(|(j, &k)| (k, self.vol(expiry, j)))
            .collect()
    }
}

/// Date-ordered surfaces on one shared grid.
#[derive(Debug, Clone)]
pub struct MarketHistory {
    pub grid: Arc<SurfaceGrid>,
    surfaces: Vec<VolSurface>,
}

impl MarketHistory {
    pub fn new(grid: Arc<SurfaceGrid>, surfaces: Vec<VolSurface>) -> Result<Self> {
        for w in surfaces.windows(2) {
            if w[0].date >= w[1].date {
                return Err(invalid(format!(
                    "history dates must be strictly increasing ({} then {})",
                    w[0].date, w[1].date
                )));
            }
        }
        if let Some(s) = surfaces.iter().find(|s| *s.grid != *grid) {
            return Err(invalid(format!("surface {} is on a different grid", s.date)));
        }
        Ok(Self { grid, surfaces })
    }

    pub fn surfaces(&self) -> &[VolSurface] {
        &self.surfaces
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.surfaces.iter().map(|s| s.date).collect()
    }

    /// Mean ATM vol at the expiry closest to `t`.
    pub fn mean_atm_vol(&self, t: f64) -> f64 {
        let e = self
            .grid
            .expiries
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let j = self.grid.atm_index();
        self.surfaces.iter().map(|s| s.vol(e, j)).sum::<f64>() / self.surfaces.len().max(1) as f64
    }
}

// ---------------------------------------------------------------------------
// curves

/// Discount factors `P(0, T)` at pillar times, log-linear in between.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscountCurve {
    times: Vec<f64>,
    factors: Vec<f64>,
}

impl DiscountCurve {
    pub fn new(times: Vec<f64>, factors: Vec<f64>) -> Result<Self> {
        if times.len() != factors.len() || times.is_empty() {
            return Err(invalid("curve needs matching, non-empty pillar and factor lists"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) || times[0] < 0.0 {
            return Err(invalid("curve pillars must be non-negative and strictly increasing"));
        }
        if factors.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(invalid("discount factors must be positive and finite"));
        }
        let (mut times, mut factors) = (times, factors);
        if times[0] > 0.0 {
            times.insert(0, 0.0);
            factors.insert(0, 1.0);
        } else if (factors[0] - 1.0).abs() > 1e-12 {
            return Err(invalid("P(0,0) must equal 1"));
        }
        Ok(Self { times, factors })
    }

    /// Continuously compounded flat curve sampled at `pillars`.
    pub fn flat(rate: f64, pillars: &[f64]) -> Result<Self> {
        let f = pillars.iter().map(|t| (-rate * t).exp()).collect();
        Self::new(pillars.to_vec(), f)
    }

    pub fn discount(&self, t: f64) -> Result<f64> {
        let last = *self.times.last().expect("non-empty");
        if t < 0.0 || t > last + 1e-12 {
            return Err(Error::Extrapolation { time: t, limit: last });
        }
        let i = self.times.partition_point(|&x| x <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (l0, l1) = (self.factors[i - 1].ln(), self.factors[i].ln());
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Ok((l0 + w * (l1 - l0)).exp())
    }
}

/// Forward-starting swap: start `T_k`, then payment dates `T_{k+1}..T_{k+m}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapSchedule {
    pub start: f64,
    pub payments: Vec<f64>,
}

impl SwapSchedule {
    pub fn new(start: f64, payments: Vec<f64>) -> Result<Self> {
        if payments.is_empty() {
            return Err(invalid("swap schedule needs at least one payment period"));
        }
        let mut prev = start;
        for &p in &payments {
            if !(p > prev) {
                return Err(invalid("swap schedule times must be strictly increasing"));
            }
            prev = p;
        }
        Ok(Self { start, payments })
    }

    /// Regular schedule with `n` periods of length `tau` after `start`.
    pub fn regular(start: f64, tau: f64, n: usize) -> Result<Self> {
        Self::new(start, (1..=n).map(|i| start + tau * i as f64).collect())
    }
}

/// `A = Σ P(0,T_{n+1})(T_{n+1} − T_n)`.
pub fn annuity_factor(curve: &DiscountCurve, sched: &SwapSchedule) -> Result<f64> {
    if sched.payments.is_empty() {
        return Err(invalid("swap schedule needs at least one payment period"));
    }
    let mut prev = sched.start;
    let mut a = 0.0;
    for &t in &sched.payments {
        a += curve.discount(t)? * (t - prev);
        prev = t;
    }
    Ok(a)
}

/// Par rate `(P(0,T_k) − P(0,T_{k+m})) / A`.
pub fn forward_swap_rate(curve: &DiscountCurve, sched: &SwapSchedule) -> Result<f64> {
    let a = annuity_factor(curve, sched)?;
    if !(a > 0.0) {
        return Err(Error::Numerical(format!("annuity factor {a} is not positive")));
    }
    let end = *sched.payments.last().expect("validated non-empty");
    Ok((curve.discount(sched.start)? - curve.discount(end)?) / a)
}

// ---------------------------------------------------------------------------
// CSV

const CSV_HEADER: [&str; 4] = ["date", "expiry_years", "strike_offset", "normal_vol"];

/// Reads a long-format history file (`date,expiry_years,strike_offset,normal_vol`).
pub fn load_history(path: impl AsRef<Path>) -> Result<MarketHistory> {
    let path = path.as_ref();
    let grid = Arc::new(SurfaceGrid::default());
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    // date → (vols, filled, last line seen)
    let mut cells: BTreeMap<NaiveDate, (Vec<f64>, Vec<bool>, usize)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        if rec.len() != 4 {
            return Err(perr(format!("expected 4 fields, found {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| perr(format!("bad date `{}`: {e}", &rec[0])))?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| perr(format!("bad {} `{}`: {e}", CSV_HEADER[i], &rec[i])))
        };
        let (t, k, v) = (num(1)?, num(2)?, num(3)?);
        if !(v.is_finite() && v > 0.0) {
            return Err(perr(format!("non-positive normal_vol {v}")));
        }
        let ei = grid
            .expiries
            .iter()
            .position(|&e| (e - t).abs() < 1e-9)
            .ok_or_else(|| perr(format!("expiry {t} is not on the grid")))?;
        let kj = grid
            .strike_offsets
            .iter()
            .position(|&s| (s - k).abs() < 1e-12)
            .ok_or_else(|| perr(format!("strike offset {k} is not on the grid")))?;
        let entry = cells
            .entry(date)
            .or_insert_with(|| (vec![0.0; grid.len()], vec![false; grid.len()], line));
        let idx = grid.index(ei, kj);
        if entry.1[idx] {
            return Err(perr(format!("duplicate cell ({t}, {k}) for {date}")));
        }
        entry.0[idx] = v;
        entry.1[idx] = true;
        entry.2 = line;
    }
    let mut surfaces = Vec::with_capacity(cells.len());
    for (date, (vols, filled, line)) in cells {
        if let Some(missing) = filled.iter().position(|f| !f) {
            let (k, t) = grid.nodes().nth(missing).expect("index in range");
            return Err(Error::Parse {
                path: path.into(),
                line,
                message: format!("date {date} is missing grid cell (T={t}, dK={k})"),
            });
        }
        surfaces.push(VolSurface::new(date, grid.clone(), vols)?);
    }
    MarketHistory::new(grid, surfaces)
}

/// Writes a history in the long CSV format; values round-trip exactly.
pub fn save_history(h: &MarketHistory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for s in h.surfaces() {
        let date = s.date.format("%Y-%m-%d").to_string();
        for ((k, t), v) in s.grid.nodes().zip(&s.vols) {
            w.write_record([date.clone(), t.to_string(), k.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synthetic history

/// Parameters of the synthetic SABR-driven market generator.
///
/// Each day the smile at expiry `T` is the normal-SABR smile with
/// `(α·m(T), ρ, ν)`, where `ln m(T) = tilt(α)·ln(T/2)` and
/// `tilt(α) = tilt − tilt_sensitivity·ln(α/α̅)`. The three SABR parameters
/// follow mean-reverting daily random walks (α and ν in logs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub start_date: NaiveDate,
    pub alpha_mean: f64,
    pub alpha_reversion: f64,
    pub alpha_daily_vol: f64,
    pub rho_mean: f64,
    pub rho_reversion: f64,
    pub rho_daily_vol: f64,
    pub volvol_mean: f64,
    pub volvol_reversion: f64,
    pub volvol_daily_vol: f64,
    pub tilt: f64,
    pub tilt_sensitivity: f64,
    /// Fraction of the history after which the crisis regime starts.
    pub crisis_start: f64,
    /// Multiplier on the α reversion level during the crisis.
    pub crisis_alpha_multiplier: f64,
    /// Relative standard deviation of i.i.d. quote noise per node.
    pub quote_noise: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2015, 9, 1).expect("valid date"),
            alpha_mean: 0.0060,
            alpha_reversion: 0.02,
            alpha_daily_vol: 0.025,
            rho_mean: -0.15,
            rho_reversion: 0.02,
            rho_daily_vol: 0.04,
            volvol_mean: 0.35,
            volvol_reversion: 0.02,
            volvol_daily_vol: 0.04,
            tilt: -0.08,
            tilt_sensitivity: 0.15,
            crisis_start: 0.88,
            crisis_alpha_multiplier: 1.5,
            quote_noise: 0.003,
        }
    }
}

fn next_business_day(d: NaiveDate) -> NaiveDate {
    let mut n = d + Duration::days(1);
    while matches!(n.weekday(), Weekday::Sat | Weekday::Sun) {
        n += Duration::days(1);
    }
    n
}

/// Generates `n_days` business-day surfaces on the default grid.
pub fn synthetic_history(n_days: usize, seed: u64, cfg: &RegimeConfig) -> Result<MarketHistory> {
    if n_days == 0 {
        return Err(invalid("synthetic history needs at least one day"));
    }
    let grid = Arc::new(SurfaceGrid::default());
    let mut rng = rng::stream(seed, 0);
    let mut noise_rng = rng::stream(seed, 1);
    let mut n = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut date = cfg.start_date;
    while matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        date += Duration::days(1);
    }
    let mut log_alpha = cfg.alpha_mean.ln();
    let mut rho = cfg.rho_mean;
    let mut log_volvol = cfg.volvol_mean.max(1e-6).ln();
    let crisis_day = (cfg.crisis_start * n_days as f64).floor() as usize;

    let mut surfaces = Vec::with_capacity(n_days);
    for day in 0..n_days {
        if day > 0 {
            let level = if day >= crisis_day {
                (cfg.alpha_mean * cfg.crisis_alpha_multiplier).ln()
            } else {
                cfg.alpha_mean.ln()
            };
            // the crisis moves faster
            let speed = if day >= crisis_day { 4.0 } else { 1.0 };
            log_alpha += speed * cfg.alpha_reversion * (level - log_alpha) + speed.sqrt() * cfg.alpha_daily_vol * n();
            rho += cfg.rho_reversion * (cfg.rho_mean - rho) + cfg.rho_daily_vol * n();
            log_volvol += cfg.volvol_reversion * (cfg.volvol_mean.max(1e-6).ln() - log_volvol) + cfg.volvol_daily_vol * n();
            date = next_business_day(date);
        }
        rho = rho.clamp(-0.95, 0.95);
        log_alpha = log_alpha.clamp((1e-5f64).ln(), (0.1f64).ln());
        let alpha = log_alpha.exp();
        let volvol = log_volvol.exp().clamp(0.0, 3.0);
        let tilt = cfg.tilt - cfg.tilt_sensitivity * (alpha / cfg.alpha_mean).ln();

        let mut vols = Vec::with_capacity(grid.len());
        for (k, t) in grid.nodes() {
            let m = (tilt * (t / 2.0).ln()).exp();
            let p = SabrParams::new(alpha * m, rho, volvol)?;
            let v = sabr_normal_vol(&p, 0.0, k, t)?;
            let eps: f64 = StandardNormal.sample(&mut noise_rng);
            vols.push(v * (1.0 + cfg.quote_noise * eps).max(0.5));
        }
        surfaces.push(VolSurface::new(date, grid.clone(), vols)?);
    }
    MarketHistory::new(grid, surfaces)
}

// ---------------------------------------------------------------------------
// splits and metrics

/// Chronological split plus a random validation draw from the training block.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: MarketHistory,
    pub validation: MarketHistory,
    pub test: MarketHistory,
}

pub fn chronological_split(h: &MarketHistory, train_fraction: f64, n_validation: usize, val_seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = h.len();
    let n_block = (n as f64 * train_fraction).floor() as usize;
    if n_block == 0 || n_block == n || n_validation >= n_block {
        return Err(invalid(format!(
            "history of {n} days is too short for fraction {train_fraction} with {n_validation} validation days"
        )));
    }
    let mut is_val = vec![false; n_block];
    let mut rng = rng::stream(val_seed, 0);
    for i in sample(&mut rng, n_block, n_validation) {
        is_val[i] = true;
    }
    let block = &h.surfaces()[..n_block];
    let pick = |want: bool| -> Vec<VolSurface> {
        block
            .iter()
            .zip(&is_val)
            .filter(|(_, v)| **v == want)
            .map(|(s, _)| s.clone())
            .collect()
    };
    Ok(Split {
        train: MarketHistory::new(h.grid.clone(), pick(false))?,
        validation: MarketHistory::new(h.grid.clone(), pick(true))?,
        test: MarketHistory::new(h.grid.clone(), h.surfaces()[n_block..].to_vec())?,
    })
}

/// Mean relative absolute error between two vol vectors on the same grid.
pub fn mrae_values(real: &[f64], rec: &[f64]) -> Result<f64> {
    if real.len() != rec.len() || real.is_empty() {
        return Err(Error::Dimension {
            context: "mrae",
            expected: real.len(),
            got: rec.len(),
        });
    }
    if let Some(v) = real.iter().find(|v| !(**v > 0.0)) {
        return Err(invalid(format!("reference vol must be positive, got {v}")));
    }
    Ok(real.iter().zip(rec).map(|(a, b)| (a - b).abs() / a).sum::<f64>() / real.len() as f64)
}

pub fn mrae(real: &VolSurface, rec: &VolSurface) -> Result<f64> {
    if real.grid != rec.grid && *real.grid != *rec.grid {
        return Err(invalid("surfaces are on different grids"));
    }
    mrae_values(&real.vols, &rec.vols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dispersion {
    /// Per-node standard deviation divided by the windowed mean, averaged.
    #[default]
    Relative,
    /// Per-node standard deviation, averaged.
    Absolute,
}

/// Day-to-day surface fluctuation: for each window of `window` consecutive
/// surfaces, the population standard deviation of every node around its
/// windowed mean, averaged over nodes.
pub fn sliding_window_std(h: &MarketHistory, window: usize, mode: Dispersion) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(invalid("sliding window must span at least 2 days"));
    }
    if h.len() < window {
        return Err(invalid(format!("history of {} days is shorter than window {window}", h.len())));
    }
    let s = h.surfaces();
    let npts = h.grid.len();
    Ok((window - 1..s.len())
        .map(|end| {
            let w = &s[end + 1 - window..=end];
            (0..npts)
                .map(|p| {
                    let mean = w.iter().map(|x| x.vols[p]).sum::<f64>() / window as f64;
                    let var = w.iter().map(|x| (x.vols[p] - mean).powi(2)).sum::<f64>() / window as f64;
                    match mode {
                        Dispersion::Relative => var.sqrt() / mean,
                        Dispersion::Absolute => var.sqrt(),
                    }
                })
                .sum::<f64>()
                / npts as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn surface(date: NaiveDate, level: f64) -> VolSurface {
        let g = Arc::new(SurfaceGrid::default());
        VolSurface::new(date, g.clone(), vec![level; g.len()]).unwrap()
    }

    fn day(i: i64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + Duration::days(i)
    }

    #[test]
    fn unit_discount_annuity() {
        let c = DiscountCurve::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let s = SwapSchedule::regular(0.0, 1.0, 2).unwrap();
        assert_abs_diff_eq!(annuity_factor(&c, &s).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(forward_swap_rate(&c, &s).unwrap(), 0.0);
    }

    #[test]
    fn flat_rate_annuity_and_forward() {
        let c = DiscountCurve::flat(0.02, &[1.0, 2.0, 3.0]).unwrap();
        let s = SwapSchedule::new(0.0, vec![1.0]).unwrap();
        assert_abs_diff_eq!(annuity_factor(&c, &s).unwrap(), (-0.02f64).exp(), epsilon = 1e-15);
        // hand evaluation: start 1, annual payments to 3
        let s = SwapSchedule::regular(1.0, 1.0, 2).unwrap();
        let p = |t: f64| (-0.02 * t).exp();
        let expected = (p(1.0) - p(3.0)) / (p(2.0) + p(3.0));
        assert_abs_diff_eq!(forward_swap_rate(&c, &s).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn schedule_errors() {
        assert!(SwapSchedule::new(0.0, vec![]).is_err());
        let c = DiscountCurve::flat(0.01, &[1.0, 2.0]).unwrap();
        let s = SwapSchedule::regular(0.0, 1.0, 3).unwrap();
        assert!(matches!(annuity_factor(&c, &s), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn annuity_is_additive_over_concatenation() {
        let c = DiscountCurve::flat(0.015, &[0.5, 5.0]).unwrap();
        let a = SwapSchedule::regular(1.0, 0.5, 4).unwrap();
        let b = SwapSchedule::regular(3.0, 0.5, 3).unwrap();
        let ab = SwapSchedule::regular(1.0, 0.5, 7).unwrap();
        let sum = annuity_factor(&c, &a).unwrap() + annuity_factor(&c, &b).unwrap();
        assert_abs_diff_eq!(annuity_factor(&c, &ab).unwrap(), sum, epsilon = 1e-14);
    }

    #[test]
    fn mrae_examples() {
        let real = surface(day(0), 0.005);
        assert_eq!(mrae(&real, &real).unwrap(), 0.0);
        let mut scaled = real.clone();
        scaled.vols.iter_mut().for_each(|v| *v *= 1.01);
        assert_abs_diff_eq!(mrae(&real, &scaled).unwrap(), 0.01, epsilon = 1e-14);
        assert_abs_diff_eq!(mrae(&real, &surface(day(0), 0.004)).unwrap(), 0.2, epsilon = 1e-14);
        assert!(mrae_values(&[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn split_small_history() {
        let g = Arc::new(SurfaceGrid::default());
        let h = MarketHistory::new(g, (0..10).map(|i| surface(day(i), 0.005)).collect()).unwrap();
        let sp = chronological_split(&h, 0.7, 0, 1).unwrap();
        assert_eq!(sp.train.dates(), (0..7).map(day).collect::<Vec<_>>());
        assert_eq!(sp.test.dates(), (7..10).map(day).collect::<Vec<_>>());
        assert!(sp.validation.is_empty());
        assert!(chronological_split(&h, 0.7, 7, 1).is_err());
        assert!(chronological_split(&h, 1.0, 0, 1).is_err());
    }

    #[test]
    fn split_paper_scale_counts() {
        let g = Arc::new(SurfaceGrid::default());
        let h = MarketHistory::new(g, (0..1338).map(|i| surface(day(i), 0.005)).collect()).unwrap();
        let sp = chronological_split(&h, 0.7, 100, 3).unwrap();
        assert_eq!(sp.test.len(), 402);
        assert_eq!(sp.train.len() + sp.validation.len(), 936);
        assert_eq!(sp.validation.len(), 100);
        let mut all: Vec<_> = sp.train.dates();
        all.extend(sp.validation.dates());
        all.extend(sp.test.dates());
        all.sort();
        assert_eq!(all, h.dates());
        let last_fit = sp.train.dates().into_iter().chain(sp.validation.dates()).max().unwrap();
        assert!(sp.test.dates().iter().all(|d| *d > last_fit));
    }

    #[test]
    fn sliding_std_examples() {
        let g = Arc::new(SurfaceGrid::default());
        let constant = MarketHistory::new(g.clone(), (0..6).map(|i| surface(day(i), 0.006)).collect()).unwrap();
        let out = sliding_window_std(&constant, 5, Dispersion::Relative).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|v| *v == 0.0));

        let (a, b) = (0.004, 0.007);
        let alt = MarketHistory::new(
            g,
            (0..5).map(|i| surface(day(i), if i % 2 == 0 { a } else { b })).collect(),
        )
        .unwrap();
        let rel = sliding_window_std(&alt, 2, Dispersion::Relative).unwrap();
        assert_eq!(rel.len(), 4);
        for v in rel {
            assert_abs_diff_eq!(v, (a - b).abs() / (a + b), epsilon = 1e-14);
        }
        let abs = sliding_window_std(&alt, 2, Dispersion::Absolute).unwrap();
        assert_abs_diff_eq!(abs[0], (a - b).abs() / 2.0, epsilon = 1e-16);
        assert!(sliding_window_std(&constant, 1, Dispersion::Relative).is_err());
        assert!(sliding_window_std(&constant, 7, Dispersion::Relative).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_positive() {
        let cfg = RegimeConfig::default();
        let a = synthetic_history(300, 5, &cfg).unwrap();
        let b = synthetic_history(300, 5, &cfg).unwrap();
        assert_eq!(a.len(), 300);
        for (x, y) in a.surfaces().iter().zip(b.surfaces()) {
            assert_eq!(x, y);
            assert!(x.vols.iter().all(|v| *v > 0.0));
            assert!(!matches!(x.date.weekday(), Weekday::Sat | Weekday::Sun));
        }
        let c = synthetic_history(300, 6, &cfg).unwrap();
        assert_ne!(a.surfaces()[10].vols, c.surfaces()[10].vols);
        assert!(synthetic_history(0, 5, &cfg).is_err());
    }

    #[test]
    fn synthetic_crisis_raises_levels() {
        let h = synthetic_history(1000, 2, &RegimeConfig::default()).unwrap();
        let atm = |s: &VolSurface| s.vol(3, 3);
        let calm = h.surfaces()[..800].iter().map(atm).sum::<f64>() / 800.0;
        let crisis = h.surfaces()[950..].iter().map(atm).sum::<f64>() / 50.0;
        assert!(crisis > 1.2 * calm, "calm {calm} crisis {crisis}");
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let h = synthetic_history(2, 9, &RegimeConfig::default()).unwrap();
        let path = dir.path().join("h.csv");
        save_history(&h, &path).unwrap();
        let back = load_history(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (x, y) in h.surfaces().iter().zip(back.surfaces()) {
            assert_eq!(x.vols, y.vols);
            assert_eq!(x.date, y.date);
        }

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let fields: Vec<&str> = lines[5].split(',').collect();
        lines[5] = format!("{},{},{},-0.001", fields[0], fields[1], fields[2]);
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, lines.join("\n")).unwrap();
        match load_history(&bad) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("non-positive"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let missing = dir.path().join("missing.csv");
        let short: Vec<&str> = text.lines().take(40).collect();
        std::fs::write(&missing, short.join("\n")).unwrap();
        assert!(matches!(load_history(&missing), Err(Error::Parse { .. })));
    }
}
