//! Small dense networks with hand-written reverse-mode gradients and Adam.
//!
//! Evaluation works on row-major batches (`n × width`) so that a whole
//! minibatch shares one set of buffers.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
    Softmax,
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Affine map `y = W x + b` followed by an activation. `weights` is
/// `rows × cols` row-major with `rows` outputs and `cols` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Corrupt("layer with zero width".into()));
        }
        if self.weights.len() != self.rows * self.cols || self.bias.len() != self.rows {
            return Err(Error::Corrupt(format!(
                "layer {}x{} carries {} weights and {} biases",
                self.rows,
                self.cols,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Corrupt("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Pre- and post-activation values of every layer for one batch.
#[derive(Debug, Clone)]
pub struct Trace {
    pub n: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("network has layers")
    }
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights).chain(self.bias.iter_mut().zip(&other.bias)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Flattened in the same order as [`DenseNet::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.bias).flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl DenseNet {
    /// Glorot-uniform weights and zero biases. `sizes` lists the input width
    /// followed by every layer's output width.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(invalid("need one activation per layer and at least one layer"));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, &activation))| {
                let (cols, rows) = (w[0], w[1]);
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let mut r = rng::stream(seed, i as u64);
                Layer {
                    rows,
                    cols,
                    weights: (0..rows * cols).map(|_| r.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; rows],
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Corrupt("network without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate()?;
            if i > 0 && layers[i - 1].rows != l.cols {
                return Err(Error::Corrupt(format!("layer {i} expects {} inputs, previous layer gives {}", l.cols, layers[i - 1].rows)));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::Corrupt("softmax is only allowed on the last layer".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Dimension {
                context: "set_parameters",
                expected: self.parameter_count(),
                got: values.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// SHA-256 over the bit patterns of every parameter.
    pub fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.parameters() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, input: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_input(input, n)?;
        let mut x = input.to_vec();
        for l in &self.layers {
            let mut z = affine(l, &x, n);
            activate(l.activation, &mut z, l.rows);
            x = z;
        }
        Ok(x)
    }

    pub fn trace_batch(&self, input: &[f64], n: usize) -> Result<Trace> {
        self.check_input(input, n)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let x = post.last().map(|v| v.as_slice()).unwrap_or(input);
            let z = affine(l, x, n);
            let mut a = z.clone();
            activate(l.activation, &mut a, l.rows);
            pre.push(z);
            post.push(a);
        }
        Ok(Trace {
            n,
            input: input.to_vec(),
            pre,
            post,
        })
    }

    /// Back-propagates `d_out = ∂L/∂output` (`n × output_dim`), accumulating
    /// parameter gradients into `grads` and returning `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut Grads) -> Result<Vec<f64>> {
        let n = trace.n;
        if d_out.len() != n * self.output_dim() {
            return Err(Error::Dimension {
                context: "backward output gradient",
                expected: n * self.output_dim(),
                got: d_out.len(),
            });
        }
        let mut delta = d_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            // through the activation
            match l.activation {
                Activation::Linear => {}
                Activation::Elu => {
                    // elu'(z) = elu(z) + 1 for z < 0
                    for ((d, z), a) in delta.iter_mut().zip(&trace.pre[li]).zip(&trace.post[li]) {
                        if *z < 0.0 {
                            *d *= a + 1.0;
                        }
                    }
                }
                Activation::Softmax => {
                    for (d, s) in delta.chunks_exact_mut(l.rows).zip(trace.post[li].chunks_exact(l.rows)) {
                        let dot: f64 = d.iter().zip(s).map(|(a, b)| a * b).sum();
                        d.iter_mut().zip(s).for_each(|(a, b)| *a = b * (*a - dot));
                    }
                }
            }
            let x = if li == 0 { &trace.input } else { &trace.post[li - 1] };
            let gw = &mut grads.weights[li];
            let gb = &mut grads.bias[li];
            for (d, xr) in delta.chunks_exact(l.rows).zip(x.chunks_exact(l.cols)) {
                for (r, &dr) in d.iter().enumerate() {
                    if dr == 0.0 {
                        continue;
                    }
                    gb[r] += dr;
                    gw[r * l.cols..(r + 1) * l.cols].iter_mut().zip(xr).for_each(|(g, xv)| *g += dr * xv);
                }
            }
            let mut d_in = vec![0.0; n * l.cols];
            for (d, di) in delta.chunks_exact(l.rows).zip(d_in.chunks_exact_mut(l.cols)) {
                for (r, &dr) in d.iter().enumerate() {
                    if dr == 0.0 {
                        continue;
                    }
                    di.iter_mut().zip(&l.weights[r * l.cols..(r + 1) * l.cols]).for_each(|(a, w)| *a += dr * w);
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    fn check_input(&self, input: &[f64], n: usize) -> Result<()> {
        if input.len() != n * self.input_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: n * self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CheckpointDoc {
            version: CHECKPOINT_VERSION,
            layers: self.layers.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(format!("unreadable checkpoint: {e}")))?;
        check_version(&value)?;
        let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| Error::Corrupt(format!("malformed checkpoint: {e}")))?;
        Self::from_layers(doc.layers)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    layers: Vec<Layer>,
}

/// Rejects documents whose top-level `version` differs from [`CHECKPOINT_VERSION`].
pub(crate) fn check_version(value: &serde_json::Value) -> Result<()> {
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt("checkpoint has no version tag".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::Version {
            found: found as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(())
}

pub fn save_checkpoint(net: &DenseNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, net.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenseNet> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    DenseNet::from_json(&std::fs::read_to_string(path)?)
}

fn affine(l: &Layer, x: &[f64], n: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(n * l.rows);
    for xr in x.chunks_exact(l.cols) {
        for r in 0..l.rows {
            let w = &l.weights[r * l.cols..(r + 1) * l.cols];
            z.push(l.bias[r] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    z
}

fn activate(a: Activation, z: &mut [f64], width: usize) {
    match a {
        Activation::Linear => {}
        Activation::Elu => z.iter_mut().for_each(|v| *v = elu(*v)),
        Activation::Softmax => {
            for row in z.chunks_exact_mut(width) {
                softmax_in_place(row);
            }
        }
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

/// Registered scalar losses with analytic gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossHead {
    Mse,
    Vae,
    WeightDecoder,
}

impl LossHead {
    pub const ALL: [LossHead; 3] = [LossHead::Mse, LossHead::Vae, LossHead::WeightDecoder];

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse" => Ok(Self::Mse),
            "vae" => Ok(Self::Vae),
            "weight-decoder" | "wd" => Ok(Self::WeightDecoder),
            other => Err(invalid(format!("unregistered loss head '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::Vae => "vae",
            Self::WeightDecoder => "weight-decoder",
        }
    }
}

/// Mean over the batch of `Σ_k (y_k − t_k)²`, with its parameter gradient.
pub fn mse_loss_and_grad(net: &DenseNet, inputs: &[f64], targets: &[f64], n: usize) -> Result<(f64, Grads)> {
    if targets.len() != n * net.output_dim() {
        return Err(Error::Dimension {
            context: "mse targets",
            expected: n * net.output_dim(),
            got: targets.len(),
        });
    }
    let trace = net.trace_batch(inputs, n)?;
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let d: Vec<f64> = trace
        .output()
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            loss += (y - t) * (y - t);
            2.0 * (y - t) * scale
        })
        .collect();
    let mut g = Grads::zeros_like(net);
    net.backward(&trace, &d, &mut g)?;
    Ok((loss * scale, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Grads,
    v: Grads,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    /// One bias-corrected Adam update of `net` along `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Grads) -> Result<()> {
        if grads.weights.len() != net.layers.len() || grads.weights.iter().zip(&net.layers).any(|(g, l)| g.len() != l.weights.len()) {
            return Err(invalid("gradient shape does not match network"));
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &grads.weights[li], &mut self.m.weights[li], &mut self.v.weights[li]),
                (&mut layer.bias, &grads.bias[li], &mut self.m.bias[li], &mut self.v.bias[li]),
            ];
            for (theta, g, m, v) in pairs {
                for k in 0..theta.len() {
                    m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                    v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                    theta[k] -= c.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_net(seed: u64, last: Activation) -> DenseNet {
        DenseNet::new(&[3, 4, 4, 2], &[Activation::Elu, Activation::Elu, last], seed).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = DenseNet::from_layers(vec![Layer {
            rows: 2,
            cols: 2,
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 2],
            activation: Activation::Linear,
        }])
        .unwrap();
        assert_eq!(net.forward(&[0.3, -7.0]).unwrap(), vec![0.3, -7.0]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert_abs_diff_eq!(elu(-20.0), -1.0, epsilon = 1e-8);
        let mut z = [0.0; 5];
        softmax_in_place(&mut z);
        assert_eq!(z, [0.2; 5]);
        let mut big = [1000.0, -1000.0, 0.0];
        softmax_in_place(&mut big);
        assert!(big.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(big.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_only_last() {
        let r = DenseNet::new(&[2, 3, 1], &[Activation::Softmax, Activation::Linear], 0);
        assert!(r.is_err());
    }

    #[test]
    fn finite_difference_gradients() {
        for last in [Activation::Linear, Activation::Softmax] {
            for seed in 0..5 {
                let net = small_net(seed, last);
                let mut r = rng::stream(seed, 99);
                let x: Vec<f64> = (0..9).map(|_| r.random_range(-1.5..1.5)).collect();
                let t: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
                let (_, g) = mse_loss_and_grad(&net, &x, &t, 3).unwrap();
                let analytic = g.flatten();
                let theta = net.parameters();
                let h = 1e-6;
                for k in 0..theta.len() {
                    let mut probe = net.clone();
                    let mut up = theta.clone();
                    up[k] += h;
                    probe.set_parameters(&up).unwrap();
                    let lp = mse_loss_and_grad(&probe, &x, &t, 3).unwrap().0;
                    up[k] -= 2.0 * h;
                    probe.set_parameters(&up).unwrap();
                    let lm = mse_loss_and_grad(&probe, &x, &t, 3).unwrap().0;
                    let fd = (lp - lm) / (2.0 * h);
                    let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
                    assert!(err < 1e-4, "param {k}: fd {fd} vs {}", analytic[k]);
                }
            }
        }
    }

    #[test]
    fn linear_least_squares_gradient_matches_closed_form() {
        // L = (1/n) Σ (w·x + b − t)², ∂L/∂w = (2/n) Σ (w·x + b − t) x
        let net = DenseNet::from_layers(vec![Layer {
            rows: 1,
            cols: 2,
            weights: vec![0.5, -0.25],
            bias: vec![0.1],
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = [1.0, 2.0, -1.0, 0.5, 3.0, -2.0];
        let t = [0.3, -0.2, 1.0];
        let (_, g) = mse_loss_and_grad(&net, &x, &t, 3).unwrap();
        let mut gw = [0.0; 2];
        let mut gb = 0.0;
        for i in 0..3 {
            let r = 0.5 * x[2 * i] - 0.25 * x[2 * i + 1] + 0.1 - t[i];
            gw[0] += 2.0 / 3.0 * r * x[2 * i];
            gw[1] += 2.0 / 3.0 * r * x[2 * i + 1];
            gb += 2.0 / 3.0 * r;
        }
        assert_abs_diff_eq!(g.weights[0][0], gw[0], epsilon = 1e-15);
        assert_abs_diff_eq!(g.weights[0][1], gw[1], epsilon = 1e-15);
        assert_abs_diff_eq!(g.bias[0][0], gb, epsilon = 1e-15);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let net = small_net(3, Activation::Linear);
        let tr = net.trace_batch(&[0.1, 0.2, 0.3], 1).unwrap();
        let mut g = Grads::zeros_like(&net);
        let d_in = net.backward(&tr, &[0.0, 0.0], &mut g).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(d_in.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = small_net(11, Activation::Linear);
        let x = [0.3, -0.8, 1.1];
        let tr = net.trace_batch(&x, 1).unwrap();
        let mut g = Grads::zeros_like(&net);
        let d_in = net.backward(&tr, &[1.0, 0.0], &mut g).unwrap();
        for k in 0..3 {
            let mut up = x;
            up[k] += 1e-6;
            let mut dn = x;
            dn[k] -= 1e-6;
            let fd = (net.forward(&up).unwrap()[0] - net.forward(&dn).unwrap()[0]) / 2e-6;
            assert_abs_diff_eq!(fd, d_in[k], epsilon = 1e-8);
        }
    }

    fn one_param_net(w: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer {
            rows: 1,
            cols: 1,
            weights: vec![w],
            bias: vec![0.0],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut net = one_param_net(1.0);
        let mut st = AdamState::new(&net, AdamConfig::with_lr(0.01));
        let zero = Grads::zeros_like(&net);
        st.step(&mut net, &zero).unwrap();
        assert_eq!(net.parameters(), vec![1.0, 0.0]);
        let mut net = one_param_net(1.0);
        let mut st = AdamState::new(&net, AdamConfig::with_lr(0.01));
        let mut g = Grads::zeros_like(&net);
        g.weights[0][0] = 3.0;
        st.step(&mut net, &g).unwrap();
        assert_abs_diff_eq!(net.parameters()[0], 1.0 - 0.01, epsilon = 1e-10);
    }

    #[test]
    fn adam_trace_matches_scalar_oracle() {
        // minimise (w − 2)² from w = 0
        let lr = 0.1;
        let mut net = one_param_net(0.0);
        let mut st = AdamState::new(&net, AdamConfig::with_lr(lr));
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let gw = 2.0 * (net.parameters()[0] - 2.0);
            let mut g = Grads::zeros_like(&net);
            g.weights[0][0] = gw;
            st.step(&mut net, &g).unwrap();

            let go = 2.0 * (w - 2.0);
            m = 0.9 * m + 0.1 * go;
            v = 0.999 * v + 0.001 * go * go;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= lr * mh / (vh.sqrt() + 1e-8);
            assert_abs_diff_eq!(net.parameters()[0], w, epsilon = 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let net = small_net(5, Activation::Softmax);
        let path = dir.path().join("net.json");
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let x = [0.4, -0.1, 2.0];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert_eq!(net.parameter_hash(), back.parameter_hash());

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt(_))));
        std::fs::write(&path, text.replacen("\"version\":1", "\"version\":7", 1)).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn loss_head_registry() {
        assert_eq!(LossHead::from_name("vae").unwrap(), LossHead::Vae);
        assert!(LossHead::from_name("hinge").is_err());
        for h in LossHead::ALL {
            assert_eq!(LossHead::from_name(h.name()).unwrap(), h);
        }
    }
}
