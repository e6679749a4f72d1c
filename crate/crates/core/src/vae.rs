//! Pointwise variational autoencoder for vol surfaces.
//!
//! The encoder maps the standardised 49 grid vols to a Gaussian posterior
//! `(μ, log σ²)` over `d` latent coordinates. The decoder maps one
//! `(z, ΔK, T)` triple to one vol, so a surface is decoded node by node and
//! can be evaluated off-grid.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market::{mrae_values, SurfaceGrid, VolSurface};
use crate::nn::{check_version, Activation, AdamConfig, AdamState, DenseNet, Grads, CHECKPOINT_VERSION};
use crate::optim::{least_squares, Bounds, LsqOptions};
use crate::rng;

/// Floor of the smoothed positivity clamp on decoded vols.
pub const SIGMA_MIN: f64 = 1e-6;
const HIDDEN: usize = 10;
/// Starting bias of the encoder's log-variance outputs.
const INITIAL_LOGVAR: f64 = -6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentPoint(Vec<f64>);

impl LatentPoint {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("latent coordinates must be finite and non-empty"));
        }
        Ok(Self(z))
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `z = μ + exp(logvar/2) ⊙ noise`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Result<LatentPoint> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::Dimension {
            context: "reparameterize",
            expected: mu.len(),
            got: noise.len().min(logvar.len()),
        });
    }
    LatentPoint::new(mu.iter().zip(logvar).zip(noise).map(|((m, l), e)| m + (0.5 * l).exp() * e).collect())
}

/// KL divergence of `N(μ, diag e^logvar)` from the standard normal.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(m, l)| m * m + l.exp() - 1.0 - l).sum::<f64>()
}

/// Smoothed clamp `σ_min + τ·ln(1 + e^{(x−σ_min)/τ})` with `τ = σ_min`, and its slope.
fn positive_clamp(x: f64) -> (f64, f64) {
    let u = (x - SIGMA_MIN) / SIGMA_MIN;
    if u > 40.0 {
        (x, 1.0)
    } else {
        (SIGMA_MIN + SIGMA_MIN * u.exp().ln_1p(), 1.0 / (1.0 + (-u).exp()))
    }
}

/// Affine maps between raw quantities and network units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    /// Per-node mean and std of encoder inputs.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Global mean and std of decoder targets.
    pub output_mean: f64,
    pub output_std: f64,
    pub strike_range: (f64, f64),
    pub expiry_range: (f64, f64),
}

impl Scalers {
    fn fit(grid: &SurfaceGrid, surfaces: &[VolSurface]) -> Result<Self> {
        let n = grid.len();
        let count = surfaces.len() as f64;
        let mut mean = vec![0.0; n];
        for s in surfaces {
            mean.iter_mut().zip(&s.vols).for_each(|(m, v)| *m += v / count);
        }
        let mut var = vec![0.0; n];
        for s in surfaces {
            var.iter_mut().zip(&s.vols).zip(&mean).for_each(|((a, v), m)| *a += (v - m) * (v - m) / count);
        }
        let all_mean = mean.iter().sum::<f64>() / n as f64;
        let all_var = surfaces.iter().flat_map(|s| &s.vols).map(|v| (v - all_mean) * (v - all_mean)).sum::<f64>() / (count * n as f64);
        let floor = 1e-3 * all_mean.abs().max(1e-12);
        let span = |v: &[f64]| (v[0], *v.last().unwrap());
        Ok(Self {
            input_mean: mean,
            input_std: var.iter().map(|v| v.sqrt().max(floor)).collect(),
            output_mean: all_mean,
            output_std: all_var.sqrt().max(floor),
            strike_range: span(&grid.strike_offsets),
            expiry_range: span(&grid.expiries),
        })
    }

    fn unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            2.0 * (x - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    fn unit_slope((lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            2.0 / (hi - lo)
        } else {
            0.0
        }
    }

    fn standardize_surface(&self, vols: &[f64], out: &mut Vec<f64>) {
        out.extend(vols.iter().zip(&self.input_mean).zip(&self.input_std).map(|((v, m), s)| (v - m) / s));
    }

    fn strike(&self, k: f64) -> f64 {
        Self::unit(k, self.strike_range)
    }

    fn expiry(&self, t: f64) -> f64 {
        Self::unit(t, self.expiry_range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub latent_dim: usize,
    pub beta: f64,
    pub grid: SurfaceGrid,
    pub scalers: Scalers,
    encoder: DenseNet,
    decoder: DenseNet,
}

/// Input gradients of one decoded vol.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGreeks {
    pub d_z: Vec<f64>,
    pub d_strike: f64,
    pub d_expiry: f64,
}

impl VaeModel {
    /// Untrained model with scalers fitted on `surfaces`.
    pub fn new(grid: &SurfaceGrid, surfaces: &[VolSurface], latent_dim: usize, beta: f64, seed: u64) -> Result<Self> {
        if latent_dim == 0 {
            return Err(invalid("latent dimension must be positive"));
        }
        if surfaces.is_empty() {
            return Err(invalid("need at least one surface to fit input scaling"));
        }
        for s in surfaces {
            check_grid(grid, s)?;
        }
        let n = grid.len();
        let elu = Activation::Elu;
        let mut encoder = DenseNet::new(&[n, HIDDEN, HIDDEN, 2 * latent_dim], &[elu, elu, Activation::Linear], rng::derive_seed(seed, 1))?;
        let head = encoder.layers_mut().last_mut().expect("encoder has layers");
        head.bias[latent_dim..].iter_mut().for_each(|b| *b = INITIAL_LOGVAR);
        Ok(Self {
            latent_dim,
            beta,
            grid: grid.clone(),
            scalers: Scalers::fit(grid, surfaces)?,
            encoder,
            decoder: DenseNet::new(&[latent_dim + 2, HIDDEN, HIDDEN, 1], &[elu, elu, Activation::Linear], rng::derive_seed(seed, 2))?,
        })
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder
    }

    /// Posterior mean and log-variance of a surface's latent coordinates.
    pub fn encode(&self, surface: &VolSurface) -> Result<(Vec<f64>, Vec<f64>)> {
        check_grid(&self.grid, surface)?;
        self.encode_vols(&surface.vols)
    }

    pub fn encode_vols(&self, vols: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if vols.len() != self.grid.len() {
            return Err(Error::Dimension {
                context: "encode",
                expected: self.grid.len(),
                got: vols.len(),
            });
        }
        let mut x = Vec::with_capacity(vols.len());
        self.scalers.standardize_surface(vols, &mut x);
        let out = self.encoder.forward(&x)?;
        let d = self.latent_dim;
        Ok((out[..d].to_vec(), out[d..].to_vec()))
    }

    fn decoder_row(&self, z: &[f64], k: f64, t: f64, out: &mut Vec<f64>) {
        out.extend_from_slice(z);
        out.push(self.scalers.strike(k));
        out.push(self.scalers.expiry(t));
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::Dimension {
                context: "latent point",
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// Decoder output before the positivity clamp.
    pub fn decode_raw(&self, z: &[f64], points: &[(f64, f64)]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        let mut x = Vec::with_capacity(points.len() * (self.latent_dim + 2));
        for &(k, t) in points {
            self.decoder_row(z, k, t, &mut x);
        }
        let y = self.decoder.forward_batch(&x, points.len())?;
        Ok(y.iter().map(|v| self.scalers.output_mean + self.scalers.output_std * v).collect())
    }

    pub fn decode_points(&self, z: &[f64], points: &[(f64, f64)]) -> Result<Vec<f64>> {
        Ok(self.decode_raw(z, points)?.into_iter().map(|v| positive_clamp(v).0).collect())
    }

    pub fn decode_point(&self, z: &LatentPoint, strike_offset: f64, expiry: f64) -> Result<f64> {
        Ok(self.decode_points(z.as_slice(), &[(strike_offset, expiry)])?[0])
    }

    /// Vols at every node of the model grid, expiry-major.
    pub fn decode_surface(&self, z: &[f64]) -> Result<Vec<f64>> {
        let nodes: Vec<(f64, f64)> = self.grid.nodes().collect();
        self.decode_points(z, &nodes)
    }

    /// Vols on an arbitrary `strikes × expiries` refinement, expiry-major.
    pub fn decode_grid(&self, z: &[f64], strikes: &[f64], expiries: &[f64]) -> Result<Vec<f64>> {
        let nodes: Vec<(f64, f64)> = expiries.iter().flat_map(|&t| strikes.iter().map(move |&k| (k, t))).collect();
        self.decode_points(z, &nodes)
    }

    /// Decoded vols and their gradients with respect to `z`, row-major `m × d`.
    fn decode_with_jacobian(&self, z: &[f64], points: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>, Vec<[f64; 2]>)> {
        self.check_latent(z)?;
        let d = self.latent_dim;
        let mut x = Vec::with_capacity(points.len() * (d + 2));
        for &(k, t) in points {
            self.decoder_row(z, k, t, &mut x);
        }
        let trace = self.decoder.trace_batch(&x, points.len())?;
        let mut scratch = Grads::zeros_like(&self.decoder);
        let d_in = self.decoder.backward(&trace, &vec![1.0; points.len()], &mut scratch)?;
        let s = &self.scalers;
        let mut vols = Vec::with_capacity(points.len());
        let mut jz = Vec::with_capacity(points.len() * d);
        let mut jkt = Vec::with_capacity(points.len());
        for (y, g) in trace.output().iter().zip(d_in.chunks_exact(d + 2)) {
            let (v, slope) = positive_clamp(s.output_mean + s.output_std * y);
            let c = slope * s.output_std;
            vols.push(v);
            jz.extend(g[..d].iter().map(|a| c * a));
            jkt.push([
                c * g[d] * Scalers::unit_slope(s.strike_range),
                c * g[d + 1] * Scalers::unit_slope(s.expiry_range),
            ]);
        }
        Ok((vols, jz, jkt))
    }

    /// Exact gradients of the decoded vol with respect to `z`, `ΔK` and `T`.
    pub fn decoder_greeks(&self, z: &LatentPoint, strike_offset: f64, expiry: f64) -> Result<DecoderGreeks> {
        let (_, jz, jkt) = self.decode_with_jacobian(z.as_slice(), &[(strike_offset, expiry)])?;
        Ok(DecoderGreeks {
            d_z: jz,
            d_strike: jkt[0][0],
            d_expiry: jkt[0][1],
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VaeDoc {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("unreadable VAE checkpoint: {e}")))?;
        check_version(&value)?;
        let doc: VaeDoc = serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("malformed VAE checkpoint: {e}")))?;
        let m = doc.model;
        let n = m.grid.len();
        if m.encoder.input_dim() != n
            || m.encoder.output_dim() != 2 * m.latent_dim
            || m.decoder.input_dim() != m.latent_dim + 2
            || m.decoder.output_dim() != 1
            || m.scalers.input_mean.len() != n
            || m.scalers.input_std.len() != n
        {
            return Err(Error::Corrupt("VAE checkpoint shapes are inconsistent".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct VaeDoc {
    version: u32,
    #[serde(flatten)]
    model: VaeModel,
}

fn check_grid(grid: &SurfaceGrid, s: &VolSurface) -> Result<()> {
    if *s.grid != *grid {
        return Err(invalid(format!("surface for {} is not on the model grid", s.date)));
    }
    Ok(())
}

/// Loss `L_rec + β·L_KL` of one minibatch and its gradients.
#[derive(Debug, Clone)]
pub struct VaeLoss {
    pub loss: f64,
    /// Mean squared error per node in standardised units.
    pub reconstruction: f64,
    /// Mean KL divergence per surface.
    pub kl: f64,
    pub encoder: Grads,
    pub decoder: Grads,
}

/// Evaluates the VAE objective on `vols` (`b × 49`, raw) with fixed noise (`b × d`).
pub fn vae_loss_and_grads(model: &VaeModel, vols: &[f64], noise: &[f64]) -> Result<VaeLoss> {
    let n = model.grid.len();
    let d = model.latent_dim;
    let b = vols.len() / n;
    if b == 0 || vols.len() != b * n || noise.len() != b * d {
        return Err(invalid("batch vols and noise have inconsistent shapes"));
    }
    let s = &model.scalers;
    let mut x = Vec::with_capacity(b * n);
    for v in vols.chunks_exact(n) {
        s.standardize_surface(v, &mut x);
    }
    let enc = model.encoder.trace_batch(&x, b)?;
    let enc_out = enc.output();
    let mut z = Vec::with_capacity(b * d);
    for (o, e) in enc_out.chunks_exact(2 * d).zip(noise.chunks_exact(d)) {
        z.extend((0..d).map(|i| o[i] + (0.5 * o[d + i]).exp() * e[i]));
    }

    let nodes: Vec<(f64, f64)> = model.grid.nodes().map(|(k, t)| (s.strike(k), s.expiry(t))).collect();
    let mut dx = Vec::with_capacity(b * n * (d + 2));
    for zr in z.chunks_exact(d) {
        for &(k, t) in &nodes {
            dx.extend_from_slice(zr);
            dx.push(k);
            dx.push(t);
        }
    }
    let dec = model.decoder.trace_batch(&dx, b * n)?;
    let m = (b * n) as f64;
    let mut rec = 0.0;
    let d_out: Vec<f64> = dec
        .output()
        .iter()
        .zip(vols)
        .map(|(y, v)| {
            let r = y - (v - s.output_mean) / s.output_std;
            rec += r * r;
            2.0 * r / m
        })
        .collect();
    rec /= m;
    let mut dec_grads = Grads::zeros_like(&model.decoder);
    let d_dec_in = model.decoder.backward(&dec, &d_out, &mut dec_grads)?;

    let beta = model.beta;
    let mut kl = 0.0;
    let mut d_enc = vec![0.0; b * 2 * d];
    for (((o, e), g), dz_rows) in enc_out
        .chunks_exact(2 * d)
        .zip(noise.chunks_exact(d))
        .zip(d_enc.chunks_exact_mut(2 * d))
        .zip(d_dec_in.chunks_exact(n * (d + 2)))
    {
        kl += kl_divergence(&o[..d], &o[d..]);
        for i in 0..d {
            let dz: f64 = dz_rows.chunks_exact(d + 2).map(|r| r[i]).sum();
            let (mu, lv) = (o[i], o[d + i]);
            let sd = (0.5 * lv).exp();
            g[i] = dz + beta * mu / b as f64;
            g[d + i] = dz * e[i] * 0.5 * sd + beta * 0.5 * (lv.exp() - 1.0) / b as f64;
        }
    }
    kl /= b as f64;
    let mut enc_grads = Grads::zeros_like(&model.encoder);
    model.encoder.backward(&enc, &d_enc, &mut enc_grads)?;
    Ok(VaeLoss {
        loss: rec + beta * kl,
        reconstruction: rec,
        kl,
        encoder: enc_grads,
        decoder: dec_grads,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub beta: f64,
    pub lr: f64,
    /// Surfaces per minibatch; each contributes all its grid nodes.
    pub batch: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 3,
            beta: 5e-5,
            lr: 1e-3,
            batch: 32,
            epochs: 2000,
            patience: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeReport {
    pub epochs_run: usize,
    pub updates: usize,
    pub best_epoch: usize,
    /// Deterministic (`z = μ`) reconstruction MSE in standardised units at the retained parameters.
    pub train_mse: f64,
    pub validation_mse: f64,
    /// `train_mse + β·mean KL` at the retained parameters.
    pub train_loss: f64,
    pub train_mrae: f64,
    pub validation_mrae: f64,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mse: f64,
}

/// Deterministic reconstruction statistics of a set of surfaces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub mse: f64,
    pub kl: f64,
    pub mrae: f64,
}

/// Direct-encoding reconstruction (`z = μ`) of `surfaces`.
pub fn reconstruction_stats(model: &VaeModel, surfaces: &[VolSurface]) -> Result<Reconstruction> {
    if surfaces.is_empty() {
        return Ok(Reconstruction {
            mse: f64::NAN,
            kl: f64::NAN,
            mrae: f64::NAN,
        });
    }
    let s = &model.scalers;
    let (mut mse, mut kl, mut mrae) = (0.0, 0.0, 0.0);
    for surf in surfaces {
        let (mu, lv) = model.encode(surf)?;
        let rec = model.decode_surface(&mu)?;
        mse += rec.iter().zip(&surf.vols).map(|(a, b)| ((a - b) / s.output_std).powi(2)).sum::<f64>() / rec.len() as f64;
        kl += kl_divergence(&mu, &lv);
        mrae += mrae_values(&surf.vols, &rec)?;
    }
    let c = surfaces.len() as f64;
    Ok(Reconstruction {
        mse: mse / c,
        kl: kl / c,
        mrae: mrae / c,
    })
}

/// Trains a fresh model on `train`, keeping the parameters with the lowest
/// validation MSE (training MSE when `validation` is empty).
pub fn train_vae(grid: &SurfaceGrid, train: &[VolSurface], validation: &[VolSurface], config: &VaeConfig, seed: u64) -> Result<(VaeModel, VaeReport)> {
    if train.is_empty() {
        return Err(invalid("VAE training set is empty"));
    }
    if config.batch == 0 || config.epochs == 0 {
        return Err(invalid("batch size and epoch count must be positive"));
    }
    let mut model = VaeModel::new(grid, train, config.latent_dim, config.beta, seed)?;
    let n = grid.len();
    let d = config.latent_dim;
    let adam = AdamConfig::with_lr(config.lr);
    let mut enc_opt = AdamState::new(&model.encoder, adam.clone());
    let mut dec_opt = AdamState::new(&model.decoder, adam);
    let monitor = if validation.is_empty() { train } else { validation };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::new();
    let mut updates = 0;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        let epoch_seed = rng::derive_seed(seed, 1000 + epoch as u64);
        order.shuffle(&mut rng::stream(epoch_seed, u64::MAX));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch) {
            let mut vols = Vec::with_capacity(chunk.len() * n);
            let mut noise = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                vols.extend_from_slice(&train[i].vols);
                let mut r = rng::stream(epoch_seed, i as u64);
                noise.extend((0..d).map(|_| { let x: f64 = StandardNormal.sample(&mut r); x }));
            }
            let l = vae_loss_and_grads(&model, &vols, &noise)?;
            if !l.loss.is_finite() {
                return Err(Error::Numerical(format!("VAE loss diverged at epoch {epoch} after {updates} updates")));
            }
            epoch_loss += l.loss * chunk.len() as f64;
            enc_opt.step(&mut model.encoder, &l.encoder)?;
            dec_opt.step(&mut model.decoder, &l.decoder)?;
            updates += 1;
        }
        let val = reconstruction_stats(&model, monitor)?.mse;
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            validation_mse: val,
        });
        if val < best.0 {
            best = (val, epoch, model.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    let (_, best_epoch, model) = best;
    let tr = reconstruction_stats(&model, train)?;
    let va = reconstruction_stats(&model, validation)?;
    Ok((
        model,
        VaeReport {
            epochs_run,
            updates,
            best_epoch,
            train_mse: tr.mse,
            validation_mse: va.mse,
            train_loss: tr.mse + config.beta * tr.kl,
            train_mrae: tr.mrae,
            validation_mrae: va.mrae,
            history,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub z: LatentPoint,
    /// Euclidean norm of decoded minus observed vols.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Latent coordinates whose decoded vols best match `observations` of
/// `(ΔK, T, σ)` in the least-squares sense, within `bounds` per coordinate.
pub fn calibrate_latent(model: &VaeModel, observations: &[(f64, f64, f64)], init: &LatentPoint, bounds: (f64, f64)) -> Result<CalibrationResult> {
    if observations.is_empty() {
        return Err(invalid("latent calibration needs at least one observation"));
    }
    model.check_latent(init.as_slice())?;
    let points: Vec<(f64, f64)> = observations.iter().map(|o| (o.0, o.1)).collect();
    let scale = 1.0 / model.scalers.output_std;
    let residuals = |z: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (vols, mut jac, _) = model.decode_with_jacobian(z, &points)?;
        let r = vols.iter().zip(observations).map(|(v, o)| (v - o.2) * scale).collect();
        jac.iter_mut().for_each(|j| *j *= scale);
        Ok((r, jac))
    };
    let b = Bounds::uniform(model.latent_dim, bounds.0, bounds.1);
    let opts = LsqOptions {
        max_iterations: 500,
        ..LsqOptions::default()
    };
    let rep = least_squares(residuals, init.as_slice(), &b, &opts)?;
    Ok(CalibrationResult {
        residual_norm: rep.residual_norm / scale,
        z: LatentPoint::new(rep.x)?,
        iterations: rep.iterations,
        converged: rep.converged,
    })
}

/// Observations of every grid node of a surface.
pub fn surface_observations(surface: &VolSurface) -> Vec<(f64, f64, f64)> {
    surface.grid.nodes().zip(&surface.vols).map(|((k, t), &v)| (k, t, v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSurface {
    pub z: LatentPoint,
    pub vols: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub samples: Vec<SyntheticSurface>,
    /// Draws whose raw decoded surface held a non-positive vol.
    pub discarded: usize,
}

/// Decodes `n` latent draws from `N(0, variance·I)`, dropping surfaces with
/// any non-positive raw vol.
pub fn sample_synthetic_surfaces(model: &VaeModel, n: usize, variance: f64, seed: u64) -> Result<SyntheticSet> {
    if !(variance > 0.0) {
        return Err(invalid("sampling variance must be positive"));
    }
    let sd = variance.sqrt();
    let nodes: Vec<(f64, f64)> = model.grid.nodes().collect();
    let mut samples = Vec::with_capacity(n);
    let mut discarded = 0;
    for i in 0..n {
        let mut r = rng::stream(seed, i as u64);
        let z: Vec<f64> = (0..model.latent_dim).map(|_| sd * { let x: f64 = StandardNormal.sample(&mut r); x }).collect();
        let raw = model.decode_raw(&z, &nodes)?;
        if raw.iter().all(|v| *v > 0.0) {
            samples.push(SyntheticSurface {
                z: LatentPoint::new(z)?,
                vols: raw.into_iter().map(|v| positive_clamp(v).0).collect(),
            });
        } else {
            discarded += 1;
        }
    }
    Ok(SyntheticSet { samples, discarded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Target for the encoder's log-variance output.
    pub logvar_floor: f64,
    /// Share of the synthetic set held out for model selection.
    pub holdout_fraction: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 32,
            epochs: 200,
            patience: 20,
            logvar_floor: -8.0,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs_run: usize,
    pub holdout_size: usize,
    /// Direct-encoding MRAE on the synthetic holdout before and after.
    pub holdout_mrae_before: f64,
    pub holdout_mrae_after: f64,
    /// Root mean squared `μ − z` on the holdout after fine-tuning.
    pub latent_rmse: f64,
}

fn synthetic_direct_mrae(model: &VaeModel, set: &[SyntheticSurface]) -> Result<f64> {
    let mut acc = 0.0;
    for s in set {
        let (mu, _) = model.encode_vols(&s.vols)?;
        acc += mrae_values(&s.vols, &model.decode_surface(&mu)?)?;
    }
    Ok(acc / set.len().max(1) as f64)
}

fn encoder_supervised_loss(model: &VaeModel, set: &[&SyntheticSurface], floor: f64) -> Result<(f64, Grads)> {
    let d = model.latent_dim;
    let n = model.grid.len();
    let mut x = Vec::with_capacity(set.len() * n);
    for s in set {
        model.scalers.standardize_surface(&s.vols, &mut x);
    }
    let tr = model.encoder.trace_batch(&x, set.len())?;
    let b = set.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(set.len() * 2 * d);
    for (o, s) in tr.output().chunks_exact(2 * d).zip(set) {
        for (m, z) in o[..d].iter().zip(s.z.as_slice()) {
            loss += (m - z).powi(2) / b;
            grad.push(2.0 * (m - z) / b);
        }
        for l in &o[d..] {
            loss += (l - floor).powi(2) / b;
            grad.push(2.0 * (l - floor) / b);
        }
    }
    let mut g = Grads::zeros_like(&model.encoder);
    model.encoder.backward(&tr, &grad, &mut g)?;
    Ok((loss, g))
}

/// Retrains the encoder alone so that `μ(decode(z)) ≈ z` on synthetic
/// surfaces. The decoder is left untouched.
pub fn finetune_encoder(model: &VaeModel, synthetic: &[SyntheticSurface], config: &FinetuneConfig, seed: u64) -> Result<(VaeModel, FinetuneReport)> {
    if synthetic.is_empty() {
        return Err(invalid("fine-tuning needs synthetic surfaces"));
    }
    let n_hold = ((synthetic.len() as f64 * config.holdout_fraction).round() as usize).min(synthetic.len() - 1);
    let (fit, hold) = synthetic.split_at(synthetic.len() - n_hold);
    let monitor = if hold.is_empty() { fit } else { hold };
    let before = synthetic_direct_mrae(model, monitor)?;

    let mut tuned = model.clone();
    let mut opt = AdamState::new(&tuned.encoder, AdamConfig::with_lr(config.lr));
    let score = |m: &VaeModel| -> Result<f64> {
        let refs: Vec<&SyntheticSurface> = monitor.iter().collect();
        Ok(encoder_supervised_loss(m, &refs, config.logvar_floor)?.0)
    };
    let mut best = (score(&tuned)?, 0usize, tuned.encoder.clone());
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut rng::stream(rng::derive_seed(seed, epoch as u64), 0));
        for chunk in order.chunks(config.batch.max(1)) {
            let batch: Vec<&SyntheticSurface> = chunk.iter().map(|&i| &fit[i]).collect();
            let (loss, g) = encoder_supervised_loss(&tuned, &batch, config.logvar_floor)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("encoder fine-tuning diverged at epoch {epoch}")));
            }
            opt.step(&mut tuned.encoder, &g)?;
        }
        let s = score(&tuned)?;
        if s < best.0 {
            best = (s, epoch + 1, tuned.encoder.clone());
        } else if epoch + 1 - best.1 >= config.patience {
            break;
        }
    }
    tuned.encoder = best.2;
    let after = synthetic_direct_mrae(&tuned, monitor)?;
    let mut sq = 0.0;
    for s in monitor {
        let (mu, _) = tuned.encode_vols(&s.vols)?;
        sq += mu.iter().zip(s.z.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((
        tuned,
        FinetuneReport {
            epochs_run,
            holdout_size: hold.len(),
            holdout_mrae_before: before,
            holdout_mrae_after: after,
            latent_rmse: (sq / (monitor.len() * model.latent_dim) as f64).sqrt(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSurface {
    pub value: f64,
    pub z: Vec<f64>,
    pub vols: Vec<f64>,
    /// `vols` minus the surface decoded at `fixed`.
    pub diff: Vec<f64>,
}

/// Surfaces decoded while moving coordinate `dim` of `fixed` through `values`.
pub fn latent_sweep(model: &VaeModel, dim: usize, values: &[f64], fixed: &LatentPoint) -> Result<Vec<SweepSurface>> {
    if dim >= model.latent_dim {
        return Err(invalid(format!("latent dimension {dim} out of range 0..{}", model.latent_dim)));
    }
    model.check_latent(fixed.as_slice())?;
    let base = model.decode_surface(fixed.as_slice())?;
    values
        .iter()
        .map(|&v| {
            let mut z = fixed.as_slice().to_vec();
            z[dim] = v;
            let vols = model.decode_surface(&z)?;
            let diff = vols.iter().zip(&base).map(|(a, b)| a - b).collect();
            Ok(SweepSurface { value: v, z, vols, diff })
        })
        .collect()
}

/// `−2, −1.5, …, 2`.
pub fn default_sweep_values() -> Vec<f64> {
    (0..=8).map(|i| -2.0 + 0.5 * i as f64).collect()
}
