//! End-to-end runs: configuration, resumable stages, metrics manifest and
//! figure tables.
//!
//! A run directory holds
//!
//! ```text
//! config.toml          copy of the configuration
//! config.hash          SHA-256 of the canonical configuration
//! manifest.json        seeds, versions, stage status and metrics
//! data/history.csv     the surface history
//! stages/*.json        per-stage checkpoints (a present file is not recomputed)
//! models/*.json        VAE, fine-tuned VAE and weight decoder
//! paths/brownian.bin   the weighted path set
//! artifacts/*.json     figure tables
//! reports/*.csv        tables emitted by [`emit_report`]
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exotics::{barrier_levels, barrier_standard_error, barrier_sweep};
use crate::market::{
    chronological_split, load_history, mrae_values, save_history, sliding_window_std, synthetic_history, Dispersion,
    MarketHistory, RegimeConfig, SurfaceGrid, VolSurface,
};
use crate::rng::derive_seed;
use crate::sabr::{fit_sabr_smile, sabr_normal_vol, simulate_sabr_paths, SabrParams};
use crate::vae::{
    calibrate_latent, default_sweep_values, finetune_encoder, latent_sweep, sample_synthetic_surfaces,
    surface_observations, train_vae, FinetuneConfig, FinetuneReport, LatentPoint, SyntheticSet, VaeConfig, VaeModel,
    VaeReport,
};
use crate::weight_decoder::{
    build_training_targets, latent_sweep_densities, reconstruct_surface_via_wmc, train_weight_decoder, LrDecay,
    ParityMode, WdConfig, WdPayoffs, WdReport, WeightDecoder,
};
use crate::wmc::{
    generate_brownian_paths, load_paths, martingale_loss, martingale_windows, risk_neutral_density, save_paths, Bins,
    PathSet, WeightVector, WindowSet,
};

pub const MANIFEST_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub vae: VaeSection,
    pub wmc: WmcSection,
    pub wd: WdSection,
    pub sabr: SabrSection,
    pub exotic: ExoticSection,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `"synthetic"` or the path of a history CSV.
    pub source: String,
    /// Length of a synthetic history.
    pub days: usize,
    pub train_fraction: f64,
    pub validation_days: usize,
    /// Sliding window for the surface fluctuation reference curve.
    pub std_window: usize,
    /// Synthetic generator parameters; library defaults when absent.
    pub regime: Option<RegimeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSection {
    pub latent_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Latent dimensions trained for the MSE comparison table.
    pub dim_study: Vec<usize>,
    /// Box `[-b, b]` for latent calibration.
    pub latent_bound: f64,
    pub synthetic_samples: usize,
    pub synthetic_variance: f64,
    pub finetune_lr: f64,
    pub finetune_epochs: usize,
    pub finetune_patience: usize,
    pub logvar_floor: f64,
    pub holdout_fraction: f64,
    /// Equally spaced refinements decoded for the interpolation table.
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPrior {
    /// Mean ATM 2Y vol of the training dates.
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SigmaPriorRepr {
    Number(f64),
    Text(String),
}

impl Serialize for SigmaPrior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SigmaPrior::Auto => SigmaPriorRepr::Text("auto".into()),
            SigmaPrior::Fixed(v) => SigmaPriorRepr::Number(*v),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SigmaPrior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match SigmaPriorRepr::deserialize(d)? {
            SigmaPriorRepr::Number(v) if v > 0.0 && v.is_finite() => Ok(SigmaPrior::Fixed(v)),
            SigmaPriorRepr::Text(t) if t == "auto" => Ok(SigmaPrior::Auto),
            _ => Err(serde::de::Error::custom("sigma_prior must be \"auto\" or a positive number")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WmcSection {
    pub nu: usize,
    pub steps: usize,
    pub horizon: f64,
    pub sigma_prior: SigmaPrior,
    pub window_positions: usize,
    pub window_range: [f64; 2],
    pub window_half_width: f64,
    /// Uniform-weight path sets averaged into the martingale noise floor.
    pub noise_regenerations: usize,
    pub density_bins: usize,
    pub density_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdSection {
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    /// `"parity-constrained"` or `"dual-payoff"`.
    pub parity_mode: String,
    /// Penalty weight in dual-payoff mode.
    pub parity_weight: f64,
    /// Synthetic latents added to the daily training latents.
    pub synthetic_draws: usize,
    pub lr_decay: Option<LrDecay>,
}

impl WdSection {
    pub fn parity(&self) -> Result<ParityMode> {
        match self.parity_mode.as_str() {
            "parity-constrained" => Ok(ParityMode::ParityConstrained),
            "dual-payoff" => Ok(ParityMode::DualPayoff {
                parity_weight: self.parity_weight,
            }),
            other => Err(Error::Config(format!(
                "wd.parity_mode must be \"parity-constrained\" or \"dual-payoff\", got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SabrSection {
    /// Expiry of the smile the benchmark is fitted to.
    pub expiry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExoticSection {
    pub strike: f64,
    pub expiry: f64,
    pub barrier_from: f64,
    pub barrier_to: f64,
    pub barrier_step: f64,
    /// `"best-fit"` (training date with the lowest weight-decoder error) or `YYYY-MM-DD`.
    pub comparison_date: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub vae: u64,
    pub synthetic: u64,
    pub finetune: u64,
    pub paths: u64,
    pub wd: u64,
    pub sabr: u64,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.source == "synthetic" && d.days == 0 {
            return Err(config_err("data.days must be positive"));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(config_err("data.train_fraction must lie in (0, 1)"));
        }
        if d.std_window < 2 {
            return Err(config_err("data.std_window must be at least 2"));
        }
        let v = &self.vae;
        if !(2..=4).contains(&v.latent_dim) || v.dim_study.iter().any(|d| !(1..=8).contains(d)) {
            return Err(config_err("vae.latent_dim must be 2, 3 or 4 and vae.dim_study entries in 1..=8"));
        }
        if v.batch == 0 || v.epochs == 0 || v.finetune_epochs == 0 {
            return Err(config_err("vae batch and epoch counts must be positive"));
        }
        if !(v.latent_bound > 0.0) || !(v.synthetic_variance > 0.0) || !(v.beta >= 0.0) || !(v.lr > 0.0) {
            return Err(config_err("vae.latent_bound, synthetic_variance and lr must be positive, beta non-negative"));
        }
        if v.synthetic_samples < 10 {
            return Err(config_err("vae.synthetic_samples must be at least 10"));
        }
        if v.resolutions.iter().any(|&r| r < 2) {
            return Err(config_err("vae.resolutions entries must be at least 2"));
        }
        let w = &self.wmc;
        if w.nu < 2 || w.steps == 0 || !(w.horizon > 0.0) {
            return Err(config_err("wmc needs nu ≥ 2, steps ≥ 1 and a positive horizon"));
        }
        if w.window_positions == 0 || !(w.window_range[1] > w.window_range[0]) || !(w.window_half_width > 0.0) {
            return Err(config_err("wmc window settings need positions, an increasing range and a positive half-width"));
        }
        if w.density_bins == 0 || !(w.density_range[1] > w.density_range[0]) {
            return Err(config_err("wmc density settings need bins and an increasing range"));
        }
        let wd = &self.wd;
        wd.parity()?;
        if wd.batch == 0 || wd.epochs == 0 || !(wd.lr > 0.0) || !(wd.gamma >= 0.0) || !(wd.parity_weight >= 0.0) {
            return Err(config_err("wd needs positive batch, epochs and lr, non-negative gamma and parity_weight"));
        }
        if !(self.sabr.expiry > 0.0) || self.sabr.expiry > w.horizon {
            return Err(config_err("sabr.expiry must lie in (0, wmc.horizon]"));
        }
        let e = &self.exotic;
        if !(e.expiry > 0.0) || e.expiry > w.horizon {
            return Err(config_err("exotic.expiry must lie in (0, wmc.horizon]"));
        }
        barrier_levels(e.barrier_from, e.barrier_to, e.barrier_step).map_err(|e| config_err(format!("exotic barriers: {e}")))?;
        self.comparison_date()?;
        Ok(())
    }

    fn comparison_date(&self) -> Result<Option<NaiveDate>> {
        match self.exotic.comparison_date.as_str() {
            "best-fit" => Ok(None),
            s => NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(Some)
                .map_err(|_| config_err(format!("exotic.comparison_date must be \"best-fit\" or YYYY-MM-DD, got {s:?}"))),
        }
    }

    fn vae_config(&self, latent_dim: usize) -> VaeConfig {
        VaeConfig {
            latent_dim,
            beta: self.vae.beta,
            lr: self.vae.lr,
            batch: self.vae.batch,
            epochs: self.vae.epochs,
            patience: self.vae.patience,
        }
    }

    fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lr: self.vae.finetune_lr,
            batch: self.vae.batch,
            epochs: self.vae.finetune_epochs,
            patience: self.vae.finetune_patience,
            logvar_floor: self.vae.logvar_floor,
            holdout_fraction: self.vae.holdout_fraction,
        }
    }

    fn wd_config(&self) -> Result<WdConfig> {
        Ok(WdConfig {
            gamma: self.wd.gamma,
            lr: self.wd.lr,
            batch: self.wd.batch,
            epochs: self.wd.epochs,
            patience: self.wd.patience,
            parity: self.wd.parity()?,
            lr_decay: self.wd.lr_decay.clone(),
        })
    }

    fn windows(&self, grid: &SurfaceGrid) -> Result<WindowSet> {
        let w = &self.wmc;
        martingale_windows(
            &grid.expiries,
            w.window_positions,
            (w.window_range[0], w.window_range[1]),
            w.window_half_width,
        )
    }

    fn bins(&self) -> Bins {
        Bins {
            lo: self.wmc.density_range[0],
            hi: self.wmc.density_range[1],
            count: self.wmc.density_bins,
        }
    }
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub stages: Vec<StageStatus>,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub data: DataMetrics,
    pub vae: VaeMetrics,
    pub dim_study: Vec<DimMetrics>,
    pub synthetic_samples: usize,
    pub synthetic_discarded: usize,
    pub finetune: FinetuneReport,
    pub sigma_prior: f64,
    pub path_seed: u64,
    pub weight_decoder: WdMetrics,
    pub noise_floor: f64,
    pub max_parity_residual: f64,
    pub failed_nodes: usize,
    pub summary: Vec<SetSummary>,
    pub comparison: ComparisonMetrics,
    pub per_date: Vec<DateMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMetrics {
    pub days: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeMetrics {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub train_mrae: f64,
    pub validation_mrae: f64,
}

impl From<&VaeReport> for VaeMetrics {
    fn from(r: &VaeReport) -> Self {
        Self {
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            train_mse: r.train_mse,
            validation_mse: r.validation_mse,
            train_mrae: r.train_mrae,
            validation_mrae: r.validation_mrae,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimMetrics {
    pub latent_dim: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdMetrics {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub training_latents: usize,
    pub flagged_targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub set: String,
    pub dates: usize,
    pub mrae_direct: f64,
    pub mrae_finetuned: f64,
    pub mrae_calibration: f64,
    pub mrae_weight_decoder: f64,
    pub mean_relative_mart_loss: f64,
    pub max_relative_mart_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub date: NaiveDate,
    pub sabr: SabrParams,
    pub sabr_fit_rms: f64,
    pub mrae_weight_decoder: f64,
    pub mrae_sabr: f64,
    pub barrier: Vec<BarrierRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub barrier: f64,
    pub price_wmc: f64,
    pub price_sabr: f64,
    pub se_wmc: f64,
    pub se_sabr: f64,
}

/// Reconstruction and diagnostics of one date; errors are mean relative absolute errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateMetrics {
    pub date: NaiveDate,
    pub set: String,
    pub mrae_direct: f64,
    pub mrae_finetuned: f64,
    pub mrae_calibration: f64,
    pub mrae_weight_decoder: f64,
    pub relative_mart_loss: f64,
    pub failed_nodes: usize,
    pub max_parity_residual: f64,
    pub calibration_converged: bool,
}

// ---------------------------------------------------------------------------
// stage records

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitRecord {
    train: Vec<NaiveDate>,
    validation: Vec<NaiveDate>,
    test: Vec<NaiveDate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DimRecord {
    latent_dim: usize,
    report: VaeReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LatentRecord {
    date: NaiveDate,
    set: String,
    mu_direct: Vec<f64>,
    mu_finetuned: Vec<f64>,
    z: LatentPoint,
    mrae_direct: f64,
    mrae_finetuned: f64,
    mrae_calibration: f64,
    converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathRecord {
    sigma_prior: f64,
    seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WdRecord {
    report: WdReport,
    training_latents: usize,
    flagged_targets: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalRecord {
    date: NaiveDate,
    vols: Vec<Option<f64>>,
    mrae: f64,
    failed_nodes: usize,
    max_parity_residual: f64,
    relative_mart_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalStage {
    dates: Vec<EvalRecord>,
    noise_floor: f64,
    noise_levels: Vec<f64>,
}

// ---------------------------------------------------------------------------
// tables

/// Column-named rows; numbers that are not finite are stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn text(s: impl Into<String>) -> Value {
    Value::String(s.into())
}

/// Figure tags with a table in every completed run.
pub const REPORT_TAGS: &[&str] = &[
    "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig9", "fig10", "fig11", "fig12", "fig13", "fig13-paths", "fig14",
];

// ---------------------------------------------------------------------------
// run directory plumbing

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn file(&self, dir: &str, name: &str) -> PathBuf {
        self.root.join(dir).join(name)
    }

    fn stage(&self, name: &str) -> PathBuf {
        self.file("stages", &format!("{name}.json"))
    }

    fn artifact(&self, tag: &str) -> PathBuf {
        self.file("artifacts", &format!("{tag}.json"))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
}

/// Loads a stage checkpoint, or computes and stores it.
fn checkpoint<T, F>(path: &Path, compute: F) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T>,
{
    if path.exists() {
        return read_json(path);
    }
    let v = compute()?;
    write_json(path, &v)?;
    Ok(v)
}

struct Tracker {
    stages: Vec<StageStatus>,
}

impl Tracker {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let out = f();
        self.stages.push(StageStatus {
            name: name.to_string(),
            status: if out.is_ok() { "done" } else { "failed" }.to_string(),
            error: out.as_ref().err().map(|e| e.to_string()),
        });
        out
    }
}

// ---------------------------------------------------------------------------
// stages

fn history_from_dates(h: &MarketHistory, dates: &[NaiveDate]) -> Result<MarketHistory> {
    let keep: BTreeSet<NaiveDate> = dates.iter().copied().collect();
    let surfaces = h.surfaces().iter().filter(|s| keep.contains(&s.date)).cloned().collect();
    MarketHistory::new(h.grid.clone(), surfaces)
}

fn set_label(split: &SplitRecord, date: NaiveDate) -> &'static str {
    if split.train.binary_search(&date).is_ok() {
        "train"
    } else if split.validation.binary_search(&date).is_ok() {
        "validation"
    } else {
        "test"
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Direct and fine-tuned encodings plus bounded calibration of one surface,
/// started from both encodings.
fn latent_record(vae: &VaeModel, tuned: &VaeModel, surface: &VolSurface, set: &str, bound: f64) -> Result<LatentRecord> {
    let (mu_direct, _) = vae.encode(surface)?;
    let (mu_finetuned, _) = tuned.encode(surface)?;
    let mrae_direct = mrae_values(&surface.vols, &vae.decode_surface(&mu_direct)?)?;
    let mrae_finetuned = mrae_values(&surface.vols, &tuned.decode_surface(&mu_finetuned)?)?;
    let obs = surface_observations(surface);
    let mut cal = None;
    for start in [&mu_direct, &mu_finetuned] {
        let init = LatentPoint::new(start.iter().map(|v| v.clamp(-bound, bound)).collect())?;
        let c = calibrate_latent(vae, &obs, &init, (-bound, bound))?;
        if cal.as_ref().is_none_or(|b: &crate::vae::CalibrationResult| c.residual_norm < b.residual_norm) {
            cal = Some(c);
        }
    }
    let cal = cal.expect("two starts");
    let mrae_calibration = mrae_values(&surface.vols, &vae.decode_surface(cal.z.as_slice())?)?;
    Ok(LatentRecord {
        date: surface.date,
        set: set.to_string(),
        mu_direct,
        mu_finetuned,
        z: cal.z,
        mrae_direct,
        mrae_finetuned,
        mrae_calibration,
        converged: cal.converged,
    })
}

/// MRAE of a weighted-measure surface; nodes whose inversion failed count as a 100 % error.
fn wmc_mrae(real: &[f64], vols: &[f64]) -> Result<f64> {
    let v: Vec<f64> = vols.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
    mrae_values(real, &v)
}

/// Relative martingale loss of uniform weights, averaged over `n` fresh path sets.
pub fn martingale_noise_floor(
    nu: usize,
    horizon: f64,
    steps: usize,
    sigma_prior: f64,
    set: &WindowSet,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n)
        .map(|r| {
            let paths = generate_brownian_paths(nu, horizon, steps, sigma_prior, derive_seed(seed, 100 + r as u64))?;
            Ok(martingale_loss(&paths, &WeightVector::uniform(nu), set)?.relative_loss)
        })
        .collect()
}

/// Trains one VAE per latent dimension on the same data and seed.
pub fn latent_dimension_study(
    grid: &SurfaceGrid,
    train: &[VolSurface],
    validation: &[VolSurface],
    base: &VaeConfig,
    dims: &[usize],
    seed: u64,
) -> Result<Vec<(usize, VaeReport)>> {
    dims.iter()
        .map(|&d| {
            let cfg = VaeConfig {
                latent_dim: d,
                ..base.clone()
            };
            Ok((d, train_vae(grid, train, validation, &cfg, seed)?.1))
        })
        .collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Executes every stage into `out`, reusing checkpoints already present.
///
/// Fails with a config error when `out` was created by a different configuration.
pub fn run_pipeline(config: &PipelineConfig, out: impl AsRef<Path>) -> Result<Manifest> {
    config.validate()?;
    let run = RunDir {
        root: out.as_ref().to_path_buf(),
    };
    fs::create_dir_all(&run.root)?;
    let hash = config.hash();
    let hash_path = run.root.join("config.hash");
    if hash_path.exists() {
        let old = fs::read_to_string(&hash_path)?;
        if old.trim() != hash {
            return Err(config_err(format!(
                "{} holds a run of a different configuration",
                run.root.display()
            )));
        }
    } else {
        write_atomic(&hash_path, hash.as_bytes())?;
        write_atomic(&run.root.join("config.toml"), config.to_toml_string()?.as_bytes())?;
    }

    let mut tracker = Tracker { stages: Vec::new() };
    let result = execute(config, &run, &mut tracker);
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        seeds: config.seeds,
        stages: tracker.stages,
        metrics: result.as_ref().ok().cloned(),
    };
    write_json(&run.root.join("manifest.json"), &manifest)?;
    result.map(|_| manifest)
}

fn execute(cfg: &PipelineConfig, run: &RunDir, tr: &mut Tracker) -> Result<Metrics> {
    let seeds = cfg.seeds;

    let history = tr.run("data", || {
        let path = run.file("data", "history.csv");
        if !path.exists() {
            let h = if cfg.data.source == "synthetic" {
                synthetic_history(cfg.data.days, seeds.data, &cfg.data.regime.clone().unwrap_or_default())?
            } else {
                load_history(&cfg.data.source)?
            };
            fs::create_dir_all(run.root.join("data"))?;
            save_history(&h, &path)?;
        }
        load_history(&path)
    })?;
    let grid = (*history.grid).clone();

    let split = tr.run("split", || {
        checkpoint(&run.stage("split"), || {
            let s = chronological_split(&history, cfg.data.train_fraction, cfg.data.validation_days, seeds.split)?;
            Ok(SplitRecord {
                train: s.train.dates(),
                validation: s.validation.dates(),
                test: s.test.dates(),
            })
        })
    })?;
    let train = history_from_dates(&history, &split.train)?;
    let validation = history_from_dates(&history, &split.validation)?;

    let (vae, vae_report) = tr.run("vae", || {
        let model_path = run.file("models", "vae.json");
        let report_path = run.stage("vae");
        if model_path.exists() && report_path.exists() {
            return Ok((VaeModel::load(&model_path)?, read_json::<VaeReport>(&report_path)?));
        }
        let (m, r) = train_vae(&grid, train.surfaces(), validation.surfaces(), &cfg.vae_config(cfg.vae.latent_dim), seeds.vae)?;
        fs::create_dir_all(run.root.join("models"))?;
        m.save(&model_path)?;
        write_json(&report_path, &r)?;
        Ok((m, r))
    })?;

    let dims: Vec<DimRecord> = tr.run("dim-study", || {
        checkpoint(&run.stage("dim-study"), || {
            let mut out = Vec::new();
            for &d in &cfg.vae.dim_study {
                let report = if d == cfg.vae.latent_dim {
                    vae_report.clone()
                } else {
                    latent_dimension_study(&grid, train.surfaces(), validation.surfaces(), &cfg.vae_config(d), &[d], seeds.vae)?
                        .remove(0)
                        .1
                };
                out.push(DimRecord { latent_dim: d, report });
            }
            Ok(out)
        })
    })?;

    let synthetic: SyntheticSet = tr.run("synthetic", || {
        checkpoint(&run.stage("synthetic"), || {
            let s = sample_synthetic_surfaces(&vae, cfg.vae.synthetic_samples, cfg.vae.synthetic_variance, seeds.synthetic)?;
            if s.samples.len() < 10 {
                return Err(Error::Numerical(format!(
                    "only {} of {} synthetic surfaces were usable",
                    s.samples.len(),
                    cfg.vae.synthetic_samples
                )));
            }
            Ok(s)
        })
    })?;

    let (tuned, ft_report) = tr.run("finetune", || {
        let model_path = run.file("models", "vae_finetuned.json");
        let report_path = run.stage("finetune");
        if model_path.exists() && report_path.exists() {
            return Ok((VaeModel::load(&model_path)?, read_json::<FinetuneReport>(&report_path)?));
        }
        let (m, r) = finetune_encoder(&vae, &synthetic.samples, &cfg.finetune_config(), seeds.finetune)?;
        m.save(&model_path)?;
        write_json(&report_path, &r)?;
        Ok((m, r))
    })?;

    let latents: Vec<LatentRecord> = tr.run("latents", || {
        checkpoint(&run.stage("latents"), || {
            history
                .surfaces()
                .par_iter()
                .map(|s| latent_record(&vae, &tuned, s, set_label(&split, s.date), cfg.vae.latent_bound))
                .collect()
        })
    })?;

    let (paths, path_rec) = tr.run("paths", || {
        let rec: PathRecord = checkpoint(&run.stage("paths"), || {
            let sigma_prior = match cfg.wmc.sigma_prior {
                SigmaPrior::Auto => train.mean_atm_vol(2.0),
                SigmaPrior::Fixed(v) => v,
            };
            Ok(PathRecord {
                sigma_prior,
                seed: seeds.paths,
            })
        })?;
        let file = run.file("paths", "brownian.bin");
        if file.exists() {
            let p = load_paths(&file)?;
            let id = p.identity();
            if id.nu == cfg.wmc.nu && id.steps == cfg.wmc.steps && id.seed == rec.seed {
                return Ok((p, rec));
            }
        }
        let p = generate_brownian_paths(cfg.wmc.nu, cfg.wmc.horizon, cfg.wmc.steps, rec.sigma_prior, rec.seed)?;
        fs::create_dir_all(run.root.join("paths"))?;
        save_paths(&p, &file)?;
        Ok((p, rec))
    })?;

    let parity = cfg.wd.parity()?;
    let (wd, wd_rec) = tr.run("weight-decoder", || {
        let model_path = run.file("models", "weight_decoder.json");
        let report_path = run.stage("weight-decoder");
        if model_path.exists() && report_path.exists() {
            return Ok((WeightDecoder::load(&model_path)?, read_json::<WdRecord>(&report_path)?));
        }
        let train_latents: Vec<LatentPoint> = latents.iter().filter(|r| r.set == "train").map(|r| r.z.clone()).collect();
        let mut all = train_latents.clone();
        all.extend(synthetic.samples.iter().take(cfg.wd.synthetic_draws).map(|s| s.z.clone()));
        let targets = build_training_targets(&vae, &all, &grid)?;
        let monitor = build_training_targets(&vae, &train_latents, &grid)?;
        let (wd, report) = train_weight_decoder(&paths, path_rec.sigma_prior, &grid, &targets, &monitor, &cfg.wd_config()?, seeds.wd)?;
        let rec = WdRecord {
            report,
            training_latents: targets.len(),
            flagged_targets: targets.flagged(),
        };
        wd.save(&model_path)?;
        write_json(&report_path, &rec)?;
        Ok((wd, rec))
    })?;

    let windows = cfg.windows(&grid)?;
    let payoffs = WdPayoffs::new(&paths, &grid)?;
    let eval: EvalStage = tr.run("evaluate", || {
        checkpoint(&run.stage("evaluate"), || {
            let dates = history
                .surfaces()
                .par_iter()
                .zip(latents.par_iter())
                .map(|(s, l)| {
                    let rec = reconstruct_surface_via_wmc(&wd, &payoffs, &paths, &grid, &l.z, parity)?;
                    let p = wd.decode_weights(&paths, &l.z)?;
                    Ok(EvalRecord {
                        date: s.date,
                        mrae: wmc_mrae(&s.vols, &rec.vols)?,
                        vols: rec.vols.iter().map(|v| v.is_finite().then_some(*v)).collect(),
                        failed_nodes: rec.failed_nodes.len(),
                        max_parity_residual: rec.max_parity_residual,
                        relative_mart_loss: martingale_loss(&paths, &p, &windows)?.relative_loss,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let noise_levels = martingale_noise_floor(
                cfg.wmc.nu,
                cfg.wmc.horizon,
                cfg.wmc.steps,
                path_rec.sigma_prior,
                &windows,
                cfg.wmc.noise_regenerations,
                seeds.paths,
            )?;
            let noise_floor = if noise_levels.is_empty() {
                martingale_loss(&paths, &WeightVector::uniform(paths.nu()), &windows)?.relative_loss
            } else {
                mean(noise_levels.iter().copied())
            };
            Ok(EvalStage {
                dates,
                noise_floor,
                noise_levels,
            })
        })
    })?;

    let comparison = tr.run("comparison", || {
        compare(cfg, run, &history, &grid, &latents, &eval, &wd, &paths, &payoffs, parity)
    })?;

    tr.run("artifacts", || {
        write_artifacts(cfg, run, &history, &grid, &vae, &tuned, &dims, &synthetic, &latents, &eval, &wd, &paths, &comparison)
    })?;

    let per_date: Vec<DateMetrics> = latents
        .iter()
        .zip(&eval.dates)
        .map(|(l, e)| DateMetrics {
            date: l.date,
            set: l.set.clone(),
            mrae_direct: l.mrae_direct,
            mrae_finetuned: l.mrae_finetuned,
            mrae_calibration: l.mrae_calibration,
            mrae_weight_decoder: e.mrae,
            relative_mart_loss: e.relative_mart_loss,
            failed_nodes: e.failed_nodes,
            max_parity_residual: e.max_parity_residual,
            calibration_converged: l.converged,
        })
        .collect();
    let summary = ["train", "validation", "test"]
        .iter()
        .map(|set| {
            let rows: Vec<&DateMetrics> = per_date.iter().filter(|d| d.set == *set).collect();
            SetSummary {
                set: set.to_string(),
                dates: rows.len(),
                mrae_direct: mean(rows.iter().map(|d| d.mrae_direct)),
                mrae_finetuned: mean(rows.iter().map(|d| d.mrae_finetuned)),
                mrae_calibration: mean(rows.iter().map(|d| d.mrae_calibration)),
                mrae_weight_decoder: mean(rows.iter().map(|d| d.mrae_weight_decoder)),
                mean_relative_mart_loss: mean(rows.iter().map(|d| d.relative_mart_loss)),
                max_relative_mart_loss: rows.iter().map(|d| d.relative_mart_loss).fold(f64::NAN, f64::max),
            }
        })
        .collect();
    let dates = history.dates();
    Ok(Metrics {
        data: DataMetrics {
            days: history.len(),
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
            first_date: dates[0],
            last_date: *dates.last().expect("non-empty history"),
        },
        vae: VaeMetrics::from(&vae_report),
        dim_study: dims
            .iter()
            .map(|d| DimMetrics {
                latent_dim: d.latent_dim,
                train_mse: d.report.train_mse,
                validation_mse: d.report.validation_mse,
            })
            .collect(),
        synthetic_samples: synthetic.samples.len(),
        synthetic_discarded: synthetic.discarded,
        finetune: ft_report,
        sigma_prior: path_rec.sigma_prior,
        path_seed: path_rec.seed,
        weight_decoder: WdMetrics {
            epochs_run: wd_rec.report.epochs_run,
            best_epoch: wd_rec.report.best_epoch,
            best_validation: wd_rec.report.best_validation,
            training_latents: wd_rec.training_latents,
            flagged_targets: wd_rec.flagged_targets,
        },
        noise_floor: eval.noise_floor,
        max_parity_residual: eval.dates.iter().map(|e| e.max_parity_residual).fold(0.0, f64::max),
        failed_nodes: eval.dates.iter().map(|e| e.failed_nodes).sum(),
        summary,
        comparison: comparison.metrics,
        per_date,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComparisonStage {
    metrics: ComparisonMetrics,
    sabr_vols: Vec<f64>,
    densities: Vec<(String, f64, Vec<f64>, Vec<f64>)>,
    sample_paths: Vec<(String, usize, f64, f64, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn compare(
    cfg: &PipelineConfig,
    run: &RunDir,
    history: &MarketHistory,
    grid: &SurfaceGrid,
    latents: &[LatentRecord],
    eval: &EvalStage,
    wd: &WeightDecoder,
    paths: &PathSet,
    payoffs: &WdPayoffs,
    parity: ParityMode,
) -> Result<ComparisonStage> {
    checkpoint(&run.stage("comparison"), || {
        let idx = match cfg.comparison_date()? {
            None => latents
                .iter()
                .zip(&eval.dates)
                .enumerate()
                .filter(|(_, (l, _))| l.set == "train")
                .min_by(|a, b| a.1 .1.mrae.total_cmp(&b.1 .1.mrae))
                .map(|(i, _)| i)
                .ok_or_else(|| Error::Numerical("no training dates to compare on".into()))?,
            Some(d) => history
                .dates()
                .iter()
                .position(|x| *x == d)
                .ok_or_else(|| config_err(format!("exotic.comparison_date {d} is not in the history")))?,
        };
        let surface = &history.surfaces()[idx];
        let e = grid
            .expiries
            .iter()
            .position(|t| (t - cfg.sabr.expiry).abs() < 1e-12)
            .ok_or_else(|| config_err(format!("sabr.expiry {} is not a grid expiry", cfg.sabr.expiry)))?;
        let fit = fit_sabr_smile(&surface.smile(e), cfg.sabr.expiry)?;
        let sabr_vols: Vec<f64> = grid
            .nodes()
            .map(|(k, t)| sabr_normal_vol(&fit.params, 0.0, k, t))
            .collect::<Result<_>>()?;
        let sabr_paths = simulate_sabr_paths(&fit.params, cfg.wmc.nu, cfg.wmc.horizon, cfg.wmc.steps, cfg.seeds.sabr)?;
        let z = &latents[idx].z;
        let p_wd = wd.decode_weights(paths, z)?;
        let uniform = WeightVector::uniform(sabr_paths.nu());
        let x = &cfg.exotic;
        let levels = barrier_levels(x.barrier_from, x.barrier_to, x.barrier_step)?;
        let wmc_curve = barrier_sweep(paths, &p_wd, x.strike, &levels, x.expiry)?;
        let sabr_curve = barrier_sweep(&sabr_paths, &uniform, x.strike, &levels, x.expiry)?;
        let barrier = wmc_curve
            .iter()
            .zip(&sabr_curve)
            .map(|(a, b)| {
                Ok(BarrierRow {
                    barrier: a.barrier,
                    price_wmc: a.price,
                    price_sabr: b.price,
                    se_wmc: barrier_standard_error(paths, &p_wd, x.strike, a.barrier, x.expiry)?,
                    se_sabr: barrier_standard_error(&sabr_paths, &uniform, x.strike, a.barrier, x.expiry)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut densities = Vec::new();
        for &t in &grid.expiries {
            for (model, set, w) in [("weight_decoder", paths, &p_wd), ("sabr", &sabr_paths, &uniform)] {
                let h = risk_neutral_density(set, w, t, cfg.bins())?;
                densities.push((model.to_string(), t, h.centers(), h.density()));
            }
        }
        let every = (cfg.wmc.steps / 50).max(1);
        let mut sample_paths = Vec::new();
        for (model, set, w) in [("weight_decoder", paths, &p_wd), ("sabr", &sabr_paths, &uniform)] {
            for i in 0..set.nu().min(30) {
                for j in (0..=set.steps()).step_by(every) {
                    sample_paths.push((model.to_string(), i, set.time(j), set.path(i)[j], w.as_slice()[i]));
                }
            }
        }
        let rec = reconstruct_surface_via_wmc(wd, payoffs, paths, grid, z, parity)?;
        Ok(ComparisonStage {
            metrics: ComparisonMetrics {
                date: surface.date,
                sabr: fit.params,
                sabr_fit_rms: fit.rms,
                mrae_weight_decoder: wmc_mrae(&surface.vols, &rec.vols)?,
                mrae_sabr: mrae_values(&surface.vols, &sabr_vols)?,
                barrier,
            },
            sabr_vols,
            densities,
            sample_paths,
        })
    })
}

/// Surface fluctuation aligned with the dates; the first `window − 1` dates have none.
fn aligned_window_std(history: &MarketHistory, window: usize) -> Result<Vec<f64>> {
    if history.len() < window {
        return Ok(vec![f64::NAN; history.len()]);
    }
    let s = sliding_window_std(history, window, Dispersion::Relative)?;
    let mut out = vec![f64::NAN; window - 1];
    out.extend(s);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    cfg: &PipelineConfig,
    run: &RunDir,
    history: &MarketHistory,
    grid: &SurfaceGrid,
    vae: &VaeModel,
    tuned: &VaeModel,
    dims: &[DimRecord],
    synthetic: &SyntheticSet,
    latents: &[LatentRecord],
    eval: &EvalStage,
    wd: &WeightDecoder,
    paths: &PathSet,
    cmp: &ComparisonStage,
) -> Result<()> {
    let d = vae.latent_dim;
    let nodes: Vec<(f64, f64)> = grid.nodes().collect();
    let idx = history
        .dates()
        .iter()
        .position(|x| *x == cmp.metrics.date)
        .expect("comparison date comes from the history");
    let z_ref = latents[idx].z.as_slice();

    let mut t = Table::new(&["latent_dim", "epoch", "train_loss", "validation_mse"]);
    for r in dims {
        for e in &r.report.history {
            t.push(vec![json!(r.latent_dim), json!(e.epoch), num(e.train_loss), num(e.validation_mse)]);
        }
    }
    write_json(&run.artifact("fig2"), &t)?;

    let mut t = Table::new(&["resolution", "dK", "T", "vol"]);
    let vols = vae.decode_surface(z_ref)?;
    for (&(k, tt), v) in nodes.iter().zip(&vols) {
        t.push(vec![text("original"), num(k), num(tt), num(*v)]);
    }
    let (k0, k1) = (grid.strike_offsets[0], *grid.strike_offsets.last().expect("strikes"));
    let (t0, t1) = (grid.expiries[0], *grid.expiries.last().expect("expiries"));
    for &n in &cfg.vae.resolutions {
        let ks = linspace(k0, k1, n);
        let ts = linspace(t0, t1, n);
        let vols = vae.decode_grid(z_ref, &ks, &ts)?;
        let pts = ts.iter().flat_map(|&tt| ks.iter().map(move |&k| (k, tt)));
        for ((k, tt), v) in pts.zip(vols) {
            t.push(vec![text(format!("{n}x{n}")), num(k), num(tt), num(v)]);
        }
    }
    write_json(&run.artifact("fig3"), &t)?;

    let mut t = Table::new(&["dim", "value", "dK", "T", "vol", "diff_vs_origin"]);
    let origin = LatentPoint::origin(d);
    for dim in 0..d {
        for s in latent_sweep(vae, dim, &default_sweep_values(), &origin)? {
            for ((&(k, tt), v), df) in nodes.iter().zip(&s.vols).zip(&s.diff) {
                t.push(vec![json!(dim), num(s.value), num(k), num(tt), num(*v), num(*df)]);
            }
        }
    }
    write_json(&run.artifact("fig4"), &t)?;

    let mut t = Table::new(&["set", "id", "coord", "value"]);
    for (i, s) in synthetic.samples.iter().enumerate() {
        for (c, v) in s.z.as_slice().iter().enumerate() {
            t.push(vec![text("synthetic"), text(format!("s{i}")), json!(c), num(*v)]);
        }
    }
    for l in latents {
        for (c, v) in l.z.as_slice().iter().enumerate() {
            t.push(vec![text(l.set.clone()), text(l.date.to_string()), json!(c), num(*v)]);
        }
    }
    write_json(&run.artifact("fig5"), &t)?;

    let mut t = Table::new(&["case", "date", "dK", "T", "vol_market", "vol_model", "rel_error"]);
    let train_idx: Vec<usize> = (0..latents.len()).filter(|&i| latents[i].set == "train").collect();
    let best = train_idx.iter().copied().min_by(|&a, &b| latents[a].mrae_finetuned.total_cmp(&latents[b].mrae_finetuned));
    let worst = train_idx.iter().copied().max_by(|&a, &b| latents[a].mrae_finetuned.total_cmp(&latents[b].mrae_finetuned));
    for (case, i) in [("best", best), ("worst", worst)] {
        let Some(i) = i else { continue };
        let s = &history.surfaces()[i];
        let rec = tuned.decode_surface(&latents[i].mu_finetuned)?;
        for ((&(k, tt), a), b) in nodes.iter().zip(&s.vols).zip(&rec) {
            t.push(vec![text(case), text(s.date.to_string()), num(k), num(tt), num(*a), num(*b), num((a - b).abs() / a)]);
        }
    }
    write_json(&run.artifact("fig6"), &t)?;

    let wstd = aligned_window_std(history, cfg.data.std_window)?;
    let mut t7 = Table::new(&["date", "set", "series", "value"]);
    let mut t9 = Table::new(&["date", "set", "series", "value"]);
    for ((l, e), w) in latents.iter().zip(&eval.dates).zip(&wstd) {
        let date = text(l.date.to_string());
        let set = text(l.set.clone());
        for (series, v) in [
            ("direct", l.mrae_direct),
            ("finetuned", l.mrae_finetuned),
            ("calibration", l.mrae_calibration),
            ("window_std", *w),
        ] {
            t7.push(vec![date.clone(), set.clone(), text(series), num(v)]);
        }
        for (series, v) in [("weight_decoder", e.mrae), ("calibration", l.mrae_calibration), ("window_std", *w)] {
            t9.push(vec![date.clone(), set.clone(), text(series), num(v)]);
        }
    }
    write_json(&run.artifact("fig7"), &t7)?;
    write_json(&run.artifact("fig9"), &t9)?;

    let mut t = Table::new(&["dim", "value", "expiry", "bin_center", "density"]);
    for dim in 0..d {
        for s in latent_sweep_densities(wd, paths, dim, &default_sweep_values(), &origin, &grid.expiries, cfg.bins())? {
            for (c, v) in s.histogram.centers().iter().zip(s.histogram.density()) {
                t.push(vec![json!(dim), num(s.value), num(s.expiry), num(*c), num(v)]);
            }
        }
    }
    write_json(&run.artifact("fig10"), &t)?;

    let mut t = Table::new(&["model", "dK", "T", "vol"]);
    let market = &history.surfaces()[idx].vols;
    let wd_vols: Vec<f64> = eval.dates[idx].vols.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    for (model, vols) in [("market", market), ("weight_decoder", &wd_vols), ("sabr", &cmp.sabr_vols)] {
        for (&(k, tt), v) in nodes.iter().zip(vols.iter()) {
            t.push(vec![text(model), num(k), num(tt), num(*v)]);
        }
    }
    write_json(&run.artifact("fig11"), &t)?;

    let mut t = Table::new(&["date", "relative_mart_loss", "noise_floor"]);
    for e in &eval.dates {
        t.push(vec![text(e.date.to_string()), num(e.relative_mart_loss), num(eval.noise_floor)]);
    }
    write_json(&run.artifact("fig12"), &t)?;

    let mut t = Table::new(&["model", "expiry", "bin_center", "density"]);
    for (model, expiry, centers, dens) in &cmp.densities {
        for (c, v) in centers.iter().zip(dens) {
            t.push(vec![text(model.clone()), num(*expiry), num(*c), num(*v)]);
        }
    }
    write_json(&run.artifact("fig13"), &t)?;

    let mut t = Table::new(&["model", "path", "t", "value", "weight"]);
    for (model, i, time, v, w) in &cmp.sample_paths {
        t.push(vec![text(model.clone()), json!(i), num(*time), num(*v), num(*w)]);
    }
    write_json(&run.artifact("fig13-paths"), &t)?;

    let mut t = Table::new(&["barrier", "price_wmc", "price_sabr"]);
    for r in &cmp.metrics.barrier {
        t.push(vec![num(r.barrier), num(r.price_wmc), num(r.price_sabr)]);
    }
    write_json(&run.artifact("fig14"), &t)
}

// ---------------------------------------------------------------------------
// reports

pub fn read_manifest(run_dir: impl AsRef<Path>) -> Result<Manifest> {
    read_json(&run_dir.as_ref().join("manifest.json"))
}

/// Reads the figure table `which` of a run.
pub fn load_artifact(run_dir: impl AsRef<Path>, which: &str) -> Result<Table> {
    if !REPORT_TAGS.contains(&which) {
        return Err(config_err(format!("unknown figure tag {which:?}; expected one of {}", REPORT_TAGS.join(", "))));
    }
    read_json(&run_dir.as_ref().join("artifacts").join(format!("{which}.json")))
}

/// Writes `reports/<which>.csv` of a run and returns its path.
pub fn emit_report(run_dir: impl AsRef<Path>, which: &str) -> Result<PathBuf> {
    let table = load_artifact(&run_dir, which)?;
    let dir = run_dir.as_ref().join("reports");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{which}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| match v {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }))?;
    }
    w.flush()?;
    Ok(path)
}

/// A complete configuration at desk scale.
pub fn desk_config() -> PipelineConfig {
    PipelineConfig {
        data: DataSection {
            source: "synthetic".into(),
            days: 1000,
            train_fraction: 0.7,
            validation_days: 100,
            std_window: 5,
            regime: None,
        },
        vae: VaeSection {
            latent_dim: 3,
            beta: 5e-5,
            lr: 1e-3,
            batch: 32,
            epochs: 2000,
            patience: 200,
            dim_study: vec![2, 3, 4],
            latent_bound: 4.0,
            synthetic_samples: 10_000,
            synthetic_variance: 4.0,
            finetune_lr: 1e-3,
            finetune_epochs: 200,
            finetune_patience: 20,
            logvar_floor: -8.0,
            holdout_fraction: 0.1,
            resolutions: vec![10, 25, 50],
        },
        wmc: WmcSection {
            nu: 4000,
            steps: 500,
            horizon: 5.0,
            sigma_prior: SigmaPrior::Auto,
            window_positions: 20,
            window_range: [-0.01, 0.01],
            window_half_width: 0.001,
            noise_regenerations: 5,
            density_bins: 40,
            density_range: [-0.04, 0.04],
        },
        wd: WdSection {
            gamma: 1e-8,
            lr: 0.01,
            batch: 32,
            epochs: 200,
            patience: 30,
            parity_mode: "parity-constrained".into(),
            parity_weight: 1.0,
            synthetic_draws: 500,
            lr_decay: None,
        },
        sabr: SabrSection { expiry: 5.0 },
        exotic: ExoticSection {
            strike: 0.0,
            expiry: 5.0,
            barrier_from: 0.01,
            barrier_to: 0.1,
            barrier_step: 0.005,
            comparison_date: "best-fit".into(),
        },
        seeds: Seeds {
            data: 42,
            split: 1,
            vae: 7,
            synthetic: 3,
            finetune: 13,
            paths: 11,
            wd: 5,
            sabr: 17,
        },
    }
}

/// A seconds-scale configuration for smoke runs and tests.
pub fn quick_config() -> PipelineConfig {
    let mut c = desk_config();
    c.data.days = 160;
    c.data.validation_days = 16;
    c.vae.epochs = 40;
    c.vae.patience = 20;
    c.vae.dim_study = vec![2, 3];
    c.vae.synthetic_samples = 300;
    c.vae.finetune_epochs = 10;
    c.vae.resolutions = vec![10];
    c.wmc.nu = 400;
    c.wmc.steps = 50;
    c.wmc.noise_regenerations = 2;
    c.wd.epochs = 5;
    c.wd.synthetic_draws = 50;
    c
}
