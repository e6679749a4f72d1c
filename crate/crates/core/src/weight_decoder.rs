//! Network mapping latent coordinates to weights on a fixed path set.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bachelier::{bachelier_price, implied_normal_vol, parity_residual, put_from_call, Flavor};
use crate::error::{invalid, Error, Result};
use crate::market::SurfaceGrid;
use crate::nn::{check_version, Activation, AdamConfig, AdamState, DenseNet, Grads, CHECKPOINT_VERSION};
use crate::rng;
use crate::vae::{LatentPoint, VaeModel};
use crate::wmc::{generate_brownian_paths, risk_neutral_density, vanilla_payoffs, weighted_price, Bins, Histogram, PathIdentity, PathSet, PayoffMatrix, WeightVector};

const HIDDEN: [usize; 2] = [20, 49];

/// How model put prices are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParityMode {
    /// Puts follow from calls through parity, so parity holds by construction.
    ParityConstrained,
    /// Puts are priced from their own payoffs; parity violations are penalised.
    DualPayoff { parity_weight: f64 },
}

impl Default for ParityMode {
    fn default() -> Self {
        Self::ParityConstrained
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDecoder {
    pub latent_dim: usize,
    /// Path set the readout is bound to.
    pub paths: PathIdentity,
    /// Prior vol of the bound Brownian paths, so they can be regenerated.
    pub sigma_prior: f64,
    net: DenseNet,
}

impl WeightDecoder {
    /// Fresh decoder whose zero readout layer yields uniform weights.
    pub fn new(latent_dim: usize, paths: &PathSet, sigma_prior: f64, seed: u64) -> Result<Self> {
        let mut net = DenseNet::new(
            &[latent_dim, HIDDEN[0], HIDDEN[1], paths.nu()],
            &[Activation::Elu, Activation::Elu, Activation::Softmax],
            seed,
        )?;
        let last = net.layers_mut().last_mut().expect("three layers");
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        Ok(Self {
            latent_dim,
            paths: paths.identity(),
            sigma_prior,
            net,
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    fn check_paths(&self, paths: &PathSet) -> Result<()> {
        if paths.identity() != self.paths {
            return Err(invalid(format!(
                "weight decoder is bound to paths {:?}, got {:?}",
                self.paths,
                paths.identity()
            )));
        }
        Ok(())
    }

    pub fn decode_weights(&self, paths: &PathSet, z: &LatentPoint) -> Result<WeightVector> {
        self.check_paths(paths)?;
        if z.dim() != self.latent_dim {
            return Err(Error::Dimension {
                context: "decode_weights latent",
                expected: self.latent_dim,
                got: z.dim(),
            });
        }
        WeightVector::new(self.net.forward(z.as_slice())?)
    }

    /// Regenerates the Brownian path set this decoder is bound to.
    pub fn regenerate_paths(&self) -> Result<PathSet> {
        let id = self.paths;
        generate_brownian_paths(id.nu, id.horizon, id.steps, self.sigma_prior, id.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WdDoc {
            version: CHECKPOINT_VERSION,
            decoder: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("unreadable weight-decoder checkpoint: {e}")))?;
        check_version(&value)?;
        let doc: WdDoc = serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("malformed weight-decoder checkpoint: {e}")))?;
        let d = doc.decoder;
        if d.net.input_dim() != d.latent_dim || d.net.output_dim() != d.paths.nu {
            return Err(Error::Corrupt("weight-decoder shapes do not match its path binding".into()));
        }
        Ok(d)
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
struct WdDoc {
    version: u32,
    #[serde(flatten)]
    decoder: WeightDecoder,
}

/// Smooth call/put price surfaces implied by decoded vols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTargets {
    pub latents: Vec<LatentPoint>,
    /// Per latent, grid order.
    pub calls: Vec<Vec<f64>>,
    pub puts: Vec<Vec<f64>>,
    /// `false` where the raw decoded vol was non-positive; such nodes carry no loss.
    pub valid: Vec<Vec<bool>>,
}

impl PriceTargets {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn flagged(&self) -> usize {
        self.valid.iter().flatten().filter(|v| !**v).count()
    }

    /// Targets priced from explicit vol surfaces rather than a decoder.
    pub fn from_vols(grid: &SurfaceGrid, latents: Vec<LatentPoint>, vols: &[Vec<f64>]) -> Result<Self> {
        if latents.len() != vols.len() {
            return Err(Error::Dimension {
                context: "PriceTargets::from_vols",
                expected: latents.len(),
                got: vols.len(),
            });
        }
        let mut out = Self {
            latents,
            calls: Vec::new(),
            puts: Vec::new(),
            valid: Vec::new(),
        };
        for v in vols {
            let (c, p, ok) = price_surface(grid, v)?;
            out.calls.push(c);
            out.puts.push(p);
            out.valid.push(ok);
        }
        Ok(out)
    }
}

fn price_surface(grid: &SurfaceGrid, vols: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    if vols.len() != grid.len() {
        return Err(Error::Dimension {
            context: "price surface",
            expected: grid.len(),
            got: vols.len(),
        });
    }
    let mut calls = Vec::with_capacity(vols.len());
    let mut puts = Vec::with_capacity(vols.len());
    let mut valid = Vec::with_capacity(vols.len());
    for ((k, t), &s) in grid.nodes().zip(vols) {
        let ok = s > 0.0 && s.is_finite();
        let c = if ok { bachelier_price(0.0, k, s, t, Flavor::Call, 1.0)? } else { 0.0 };
        calls.push(c);
        puts.push(put_from_call(k, c));
        valid.push(ok);
    }
    Ok((calls, puts, valid))
}

/// Bachelier call and parity put prices of the decoded surface at every latent.
pub fn build_training_targets(vae: &VaeModel, latents: &[LatentPoint], grid: &SurfaceGrid) -> Result<PriceTargets> {
    let nodes: Vec<(f64, f64)> = grid.nodes().collect();
    let mut vols = Vec::with_capacity(latents.len());
    for z in latents {
        let raw = vae.decode_raw(z.as_slice(), &nodes)?;
        vols.push(raw.into_iter().map(|v| if v > 0.0 { v } else { f64::NAN }).collect());
    }
    PriceTargets::from_vols(grid, latents.to_vec(), &vols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    /// Multiplier applied when validation stalls.
    pub factor: f64,
    /// Stalled epochs before each decay.
    pub patience: usize,
    pub min_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdConfig {
    /// Weight of `D(p‖q)` in the loss.
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub parity: ParityMode,
    pub lr_decay: Option<LrDecay>,
}

impl Default for WdConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-8,
            lr: 0.01,
            batch: 32,
            epochs: 150,
            patience: 30,
            parity: ParityMode::ParityConstrained,
            lr_decay: None,
        }
    }
}

/// Payoff matrices the decoder is trained against.
#[derive(Debug, Clone)]
pub struct WdPayoffs {
    pub calls: PayoffMatrix,
    pub puts: PayoffMatrix,
    pub strikes: Vec<f64>,
}

impl WdPayoffs {
    pub fn new(paths: &PathSet, grid: &SurfaceGrid) -> Result<Self> {
        Ok(Self {
            calls: vanilla_payoffs(paths, grid, &[Flavor::Call])?,
            puts: vanilla_payoffs(paths, grid, &[Flavor::Put])?,
            strikes: grid.nodes().map(|(k, _)| k).collect(),
        })
    }
}

/// Components of the weight-decoder objective averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WdLoss {
    pub loss: f64,
    pub call_mse: f64,
    pub put_mse: f64,
    /// Mean squared parity residual (dual-payoff mode only).
    pub parity_mse: f64,
    pub entropy: f64,
}

fn mat_vec_t(g: &PayoffMatrix, p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.cols()];
    for (i, &w) in p.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += w * v;
        }
    }
    out
}

fn add_mat_vec(g: &PayoffMatrix, r: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o += g.row(i).iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Loss `L_call + L_put + γ·D(p‖q)` (plus the parity penalty in dual-payoff
/// mode) over the latents `batch` indexes, with its parameter gradient when
/// `want_grad` is set.
pub fn wd_loss_and_grads(
    wd: &WeightDecoder,
    payoffs: &WdPayoffs,
    targets: &PriceTargets,
    batch: &[usize],
    gamma: f64,
    parity: ParityMode,
    want_grad: bool,
) -> Result<(WdLoss, Option<Grads>)> {
    let d = wd.latent_dim;
    let nu = wd.paths.nu;
    if payoffs.calls.rows() != nu {
        return Err(Error::Dimension {
            context: "weight-decoder payoffs",
            expected: nu,
            got: payoffs.calls.rows(),
        });
    }
    let b = batch.len();
    if b == 0 {
        return Err(invalid("empty weight-decoder batch"));
    }
    let mut x = Vec::with_capacity(b * d);
    for &i in batch {
        x.extend_from_slice(targets.latents[i].as_slice());
    }
    let trace = wd.net.trace_batch(&x, b)?;
    let nu_f = nu as f64;
    let mut total = WdLoss::default();
    let mut d_out = if want_grad { vec![0.0; b * nu] } else { Vec::new() };
    for (row, &i) in batch.iter().enumerate() {
        let p = &trace.output()[row * nu..(row + 1) * nu];
        let valid = &targets.valid[i];
        let n_valid = valid.iter().filter(|v| **v).count().max(1) as f64;
        let calls = mat_vec_t(&payoffs.calls, p);
        let mut r_call = vec![0.0; calls.len()];
        let mut r_put = vec![0.0; calls.len()];
        let (mut lc, mut lp, mut lpar) = (0.0, 0.0, 0.0);
        match parity {
            ParityMode::ParityConstrained => {
                for j in 0..calls.len() {
                    if !valid[j] {
                        continue;
                    }
                    let e = calls[j] - targets.calls[i][j];
                    let ep = put_from_call(payoffs.strikes[j], calls[j]) - targets.puts[i][j];
                    lc += e * e / n_valid;
                    lp += ep * ep / n_valid;
                    r_call[j] = 2.0 * (e + ep) / n_valid;
                }
            }
            ParityMode::DualPayoff { parity_weight } => {
                let puts = mat_vec_t(&payoffs.puts, p);
                for j in 0..calls.len() {
                    if !valid[j] {
                        continue;
                    }
                    let e = calls[j] - targets.calls[i][j];
                    let ep = puts[j] - targets.puts[i][j];
                    let par = parity_residual(payoffs.strikes[j], calls[j], puts[j]);
                    lc += e * e / n_valid;
                    lp += ep * ep / n_valid;
                    lpar += par * par / n_valid;
                    r_call[j] = 2.0 * (e + parity_weight * par) / n_valid;
                    r_put[j] = 2.0 * (ep - parity_weight * par) / n_valid;
                }
                total.parity_mse += lpar / b as f64;
                lpar *= parity_weight;
            }
        }
        let mut ent = 0.0;
        for &v in p {
            if v > 0.0 {
                ent += v * (nu_f * v).ln();
            }
        }
        total.call_mse += lc / b as f64;
        total.put_mse += lp / b as f64;
        total.entropy += ent / b as f64;
        total.loss += (lc + lp + lpar + gamma * ent) / b as f64;
        if want_grad {
            let g = &mut d_out[row * nu..(row + 1) * nu];
            add_mat_vec(&payoffs.calls, &r_call, g);
            if matches!(parity, ParityMode::DualPayoff { .. }) {
                add_mat_vec(&payoffs.puts, &r_put, g);
            }
            for (gi, &v) in g.iter_mut().zip(p) {
                let de = if v > 0.0 { gamma * ((nu_f * v).ln() + 1.0) } else { 0.0 };
                *gi = (*gi + de) / b as f64;
            }
        }
    }
    if !want_grad {
        return Ok((total, None));
    }
    let mut grads = Grads::zeros_like(&wd.net);
    wd.net.backward(&trace, &d_out, &mut grads)?;
    Ok((total, Some(grads)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdReport {
    pub epochs_run: usize,
    pub updates: usize,
    pub best_epoch: usize,
    /// Validation price loss (calls + puts, no entropy term) at the retained parameters.
    pub best_validation: f64,
    /// Best validation loss seen after each epoch; non-increasing.
    pub checkpoint_losses: Vec<f64>,
    pub history: Vec<WdEpoch>,
}

/// Trains a fresh decoder on `train` targets, retaining the parameters with
/// the lowest validation price loss.
pub fn train_weight_decoder(
    paths: &PathSet,
    sigma_prior: f64,
    grid: &SurfaceGrid,
    train: &PriceTargets,
    validation: &PriceTargets,
    config: &WdConfig,
    seed: u64,
) -> Result<(WeightDecoder, WdReport)> {
    if train.is_empty() {
        return Err(invalid("weight-decoder training set is empty"));
    }
    let d = train.latents[0].dim();
    let mut wd = WeightDecoder::new(d, paths, sigma_prior, rng::derive_seed(seed, 11))?;
    let payoffs = WdPayoffs::new(paths, grid)?;
    let monitor = if validation.is_empty() { train } else { validation };
    let all_monitor: Vec<usize> = (0..monitor.len()).collect();
    let price_loss = |wd: &WeightDecoder| -> Result<f64> {
        let mut acc = 0.0;
        for chunk in all_monitor.chunks(256) {
            let (l, _) = wd_loss_and_grads(wd, &payoffs, monitor, chunk, 0.0, config.parity, false)?;
            acc += (l.call_mse + l.put_mse) * chunk.len() as f64;
        }
        Ok(acc / monitor.len() as f64)
    };

    let mut opt = AdamState::new(&wd.net, AdamConfig::with_lr(config.lr));
    let mut best = (price_loss(&wd)?, 0usize, wd.net.clone());
    let mut checkpoint_losses = Vec::new();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut updates = 0;
    let mut epochs_run = 0;
    let mut last_decay = 0;
    for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut rng::stream(rng::derive_seed(seed, 5000 + epoch as u64), 0));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch.max(1)) {
            let (l, g) = wd_loss_and_grads(&wd, &payoffs, train, chunk, config.gamma, config.parity, true)?;
            if !l.loss.is_finite() {
                return Err(Error::Numerical(format!("weight-decoder loss diverged at epoch {epoch}")));
            }
            epoch_loss += l.loss * chunk.len() as f64;
            opt.step(&mut wd.net, &g.expect("gradient requested"))?;
            updates += 1;
        }
        let val = price_loss(&wd)?;
        history.push(WdEpoch {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            validation_loss: val,
            lr: opt.config.lr,
        });
        if val < best.0 {
            best = (val, epoch + 1, wd.net.clone());
        } else {
            let stalled = epoch + 1 - best.1.max(last_decay);
            if let Some(decay) = &config.lr_decay {
                if stalled >= decay.patience && opt.config.lr > decay.min_lr {
                    opt.config.lr = (opt.config.lr * decay.factor).max(decay.min_lr);
                    last_decay = epoch + 1;
                }
            }
            if epoch + 1 - best.1 >= config.patience {
                checkpoint_losses.push(best.0);
                break;
            }
        }
        checkpoint_losses.push(best.0);
    }
    let (best_validation, best_epoch, net) = best;
    wd.net = net;
    Ok((
        wd,
        WdReport {
            epochs_run,
            updates,
            best_epoch,
            best_validation,
            checkpoint_losses,
            history,
        },
    ))
}

/// Prices, implied vols and parity diagnostics of the weighted measure at one latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmcSurface {
    pub z: LatentPoint,
    pub calls: Vec<f64>,
    pub puts: Vec<f64>,
    /// Implied normal vols from the call prices; `NaN` where inversion failed.
    pub vols: Vec<f64>,
    /// Grid indices whose call price did not exceed intrinsic value.
    pub failed_nodes: Vec<usize>,
    pub max_parity_residual: f64,
}

/// Implied vol surface of a weight vector on `payoffs`.
pub fn surface_from_weights(payoffs: &WdPayoffs, grid: &SurfaceGrid, p: &WeightVector, parity: ParityMode) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>, f64)> {
    let calls = weighted_price(&payoffs.calls, p)?;
    let puts = match parity {
        ParityMode::ParityConstrained => calls.iter().zip(&payoffs.strikes).map(|(c, k)| put_from_call(*k, *c)).collect(),
        ParityMode::DualPayoff { .. } => weighted_price(&payoffs.puts, p)?,
    };
    let mut vols = Vec::with_capacity(calls.len());
    let mut failed = Vec::new();
    let mut max_par: f64 = 0.0;
    for (j, ((k, t), (&c, &pu))) in grid.nodes().zip(calls.iter().zip(&puts)).enumerate() {
        max_par = max_par.max(parity_residual(k, c, pu).abs());
        match implied_normal_vol(c, 0.0, k, t, Flavor::Call, 1.0) {
            Ok(v) => vols.push(v),
            Err(_) => {
                vols.push(f64::NAN);
                failed.push(j);
            }
        }
    }
    Ok((calls, puts, vols, failed, max_par))
}

/// Decodes weights at `z`, prices the grid on the weighted paths and inverts
/// the call prices to normal vols.
pub fn reconstruct_surface_via_wmc(wd: &WeightDecoder, payoffs: &WdPayoffs, paths: &PathSet, grid: &SurfaceGrid, z: &LatentPoint, parity: ParityMode) -> Result<WmcSurface> {
    let p = wd.decode_weights(paths, z)?;
    let (calls, puts, vols, failed_nodes, max_parity_residual) = surface_from_weights(payoffs, grid, &p, parity)?;
    Ok(WmcSurface {
        z: z.clone(),
        calls,
        puts,
        vols,
        failed_nodes,
        max_parity_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDensity {
    pub value: f64,
    pub expiry: f64,
    pub histogram: Histogram,
}

/// Risk-neutral densities at every expiry while coordinate `dim` of `fixed` moves through `values`.
pub fn latent_sweep_densities(
    wd: &WeightDecoder,
    paths: &PathSet,
    dim: usize,
    values: &[f64],
    fixed: &LatentPoint,
    expiries: &[f64],
    bins: Bins,
) -> Result<Vec<SweepDensity>> {
    if dim >= wd.latent_dim {
        return Err(invalid(format!("latent dimension {dim} out of range 0..{}", wd.latent_dim)));
    }
    let mut out = Vec::with_capacity(values.len() * expiries.len());
    for &v in values {
        let mut z = fixed.as_slice().to_vec();
        z[dim] = v;
        let p = wd.decode_weights(paths, &LatentPoint::new(z)?)?;
        for &t in expiries {
            out.push(SweepDensity {
                value: v,
                expiry: t,
                histogram: risk_neutral_density(paths, &p, t, bins)?,
            });
        }
    }
    Ok(out)
}
