//! Multilayer-perceptron variational autoencoder.
//!
//! All parameters live in one flat vector so the optimizer and the gradient
//! checks treat them uniformly. Layers are, in order: encoder trunk, μ_z head,
//! logσ²_z head, decoder trunk (the encoder widths reversed), μ_x head and,
//! with the Gaussian likelihood only, the logσ²_x head.

mod grad;
mod score;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Prng;

pub use grad::{decoder_vjp, encoder_vjp, kl_divergence, loss, loss_with_noise};
pub use score::{log_density, recon_log_prob, vae_score, vae_scores, DEFAULT_SCORE_SAMPLES};
pub use train::{train_vae, EpochLoss, LossHistory, TrainConfig};

pub const FORMAT: &str = "vae-v1";
pub const VAR_FLOOR: f64 = 1e-4;
const SCALING_RULE: &str = "l1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Gaussian negative log-likelihood with a learned variance head.
    Nll,
    /// Squared error; the decoder variance is fixed at 1.
    Mse,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VaeTopology {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub loss_mode: LossMode,
}

impl VaeTopology {
    pub fn new(
        input_dim: usize,
        encoder_hidden: Vec<usize>,
        latent_dim: usize,
        loss_mode: LossMode,
    ) -> Result<Self> {
        let t = VaeTopology {
            input_dim,
            encoder_hidden,
            latent_dim,
            loss_mode,
        };
        t.validate()?;
        Ok(t)
    }

    /// Numbered configurations: 1 is `50-25`, 2 is `50-35-25`, 3 is `50-25-2`
    /// (hidden widths, then latent size), all with the Gaussian likelihood;
    /// 4 to 6 repeat them with squared error.
    pub fn numbered(config: u8, input_dim: usize) -> Result<Self> {
        let (hidden, d) = match config {
            1 | 4 => (vec![50], 25),
            2 | 5 => (vec![50, 35], 25),
            3 | 6 => (vec![50, 25], 2),
            _ => {
                return Err(Error::contract(format!(
                    "no VAE configuration {config}; expected 1-6"
                )))
            }
        };
        let mode = if config <= 3 {
            LossMode::Nll
        } else {
            LossMode::Mse
        };
        Self::new(input_dim, hidden, d, mode)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.encoder_hidden.contains(&0) {
            return Err(Error::contract("VAE layer widths must be at least 1"));
        }
        Ok(())
    }

    pub fn decoder_hidden(&self) -> Vec<usize> {
        self.encoder_hidden.iter().rev().copied().collect()
    }

    /// `(fan_in, fan_out)` of every layer in parameter order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.encoder_hidden {
            shapes.push((prev, h));
            prev = h;
        }
        shapes.push((prev, self.latent_dim));
        shapes.push((prev, self.latent_dim));
        prev = self.latent_dim;
        for h in self.decoder_hidden() {
            shapes.push((prev, h));
            prev = h;
        }
        shapes.push((prev, self.input_dim));
        if self.loss_mode == LossMode::Nll {
            shapes.push((prev, self.input_dim));
        }
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Fully connected layer. Weights are row-major `n_out × n_in` starting at
/// `w`, biases start at `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub(crate) fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &p[self.w..self.w + self.n_in * self.n_out];
        let b = &p[self.b..self.b + self.n_out];
        w.chunks_exact(self.n_in)
            .zip(b)
            .map(|(row, &bias)| row.iter().zip(x).fold(bias, |acc, (wi, xi)| acc + wi * xi))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and input gradients into
    /// `g_in`, given the gradient `g_out` at the pre-activation.
    pub(crate) fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        g_out: &[f64],
        grad: Option<&mut [f64]>,
        g_in: Option<&mut [f64]>,
    ) {
        if let Some(grad) = grad {
            let (gw, gb) = grad.split_at_mut(self.b);
            let gw = &mut gw[self.w..self.w + self.n_in * self.n_out];
            for ((row, gb), &go) in gw
                .chunks_exact_mut(self.n_in)
                .zip(&mut gb[..self.n_out])
                .zip(g_out)
            {
                *gb += go;
                if go != 0.0 {
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += go * xi;
                    }
                }
            }
        }
        if let Some(g_in) = g_in {
            let w = &p[self.w..self.w + self.n_in * self.n_out];
            for (row, &go) in w.chunks_exact(self.n_in).zip(g_out) {
                if go != 0.0 {
                    for (gi, wi) in g_in.iter_mut().zip(row) {
                        *gi += go * wi;
                    }
                }
            }
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one encoder pass.
pub(crate) struct EncoderPass {
    /// Input followed by each trunk activation.
    pub acts: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Intermediate values of one decoder pass.
pub(crate) struct DecoderPass {
    pub acts: Vec<Vec<f64>>,
    /// Sigmoid outputs before renormalization, and their sum.
    pub s: Vec<f64>,
    pub s_sum: f64,
    pub mu: Vec<f64>,
    /// `σ²_x`; all ones under squared error.
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl Decoded {
    pub fn log_var(&self, mode: LossMode) -> Vec<f64> {
        match mode {
            LossMode::Nll => self.var.iter().map(|v| v.ln()).collect(),
            LossMode::Mse => vec![0.0; self.var.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub topology: VaeTopology,
    pub seed: u64,
    pub var_floor: f64,
    params: Vec<f64>,
    layers: Vec<Dense>,
}

/// Glorot-uniform weights from a PRNG seeded with `seed`; zero biases.
pub fn init_vae(topology: &VaeTopology, seed: u64) -> Result<VaeModel> {
    let mut model = VaeModel::zeros(topology, seed)?;
    let mut rng = Prng::new(seed);
    for layer in model.layers.clone() {
        let bound = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
        for w in &mut model.params[layer.w..layer.w + layer.n_in * layer.n_out] {
            *w = (2.0 * rng.next_f64() - 1.0) * bound;
        }
    }
    Ok(model)
}

impl VaeModel {
    /// All parameters zero.
    pub fn zeros(topology: &VaeTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut layers = Vec::new();
        let mut off = 0;
        for (n_in, n_out) in topology.layer_shapes() {
            layers.push(Dense {
                n_in,
                n_out,
                w: off,
                b: off + n_in * n_out,
            });
            off += n_in * n_out + n_out;
        }
        Ok(VaeModel {
            topology: topology.clone(),
            seed,
            var_floor: VAR_FLOOR,
            params: vec![0.0; off],
            layers,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(weights, biases)` of layer `i` in parameter order.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let l = self.layers[i];
        (
            &self.params[l.w..l.w + l.n_in * l.n_out],
            &self.params[l.b..l.b + l.n_out],
        )
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let l = self.layers[i];
        let (w, rest) = self.params[l.w..].split_at_mut(l.n_in * l.n_out);
        (w, &mut rest[..l.n_out])
    }

    /// Index of the first μ_x head parameter layer.
    pub fn mu_x_layer(&self) -> usize {
        2 * self.topology.encoder_hidden.len() + 2
    }

    pub fn log_var_x_layer(&self) -> Option<usize> {
        match self.topology.loss_mode {
            LossMode::Nll => Some(self.mu_x_layer() + 1),
            LossMode::Mse => None,
        }
    }

    pub(crate) fn layers(&self) -> &[Dense] {
        &self.layers
    }

    fn k(&self) -> usize {
        self.topology.encoder_hidden.len()
    }

    pub(crate) fn encoder_pass(&self, x: &[f64]) -> EncoderPass {
        let k = self.k();
        let mut acts = Vec::with_capacity(k + 1);
        acts.push(x.to_vec());
        for layer in &self.layers[..k] {
            let mut a = layer.forward(&self.params, acts.last().unwrap());
            relu_in_place(&mut a);
            acts.push(a);
        }
        let top = acts.last().unwrap();
        let mu = self.layers[k].forward(&self.params, top);
        let log_var = self.layers[k + 1].forward(&self.params, top);
        EncoderPass { acts, mu, log_var }
    }

    pub(crate) fn decoder_pass(&self, z: &[f64]) -> DecoderPass {
        let k = self.k();
        let mut acts = Vec::with_capacity(k + 1);
        acts.push(z.to_vec());
        for layer in &self.layers[k + 2..2 * k + 2] {
            let mut a = layer.forward(&self.params, acts.last().unwrap());
            relu_in_place(&mut a);
            acts.push(a);
        }
        let top = acts.last().unwrap();
        let s: Vec<f64> = self.layers[2 * k + 2]
            .forward(&self.params, top)
            .into_iter()
            .map(sigmoid)
            .collect();
        let s_sum: f64 = s.iter().sum();
        let mu = s.iter().map(|v| v / s_sum).collect();
        let var = match self.topology.loss_mode {
            LossMode::Nll => self.layers[2 * k + 3]
                .forward(&self.params, top)
                .into_iter()
                .map(|h| h.exp() + self.var_floor)
                .collect(),
            LossMode::Mse => vec![1.0; self.topology.input_dim],
        };
        DecoderPass {
            acts,
            s,
            s_sum,
            mu,
            var,
        }
    }

    /// Posterior mean and log-variance of `x`.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(x.len(), self.topology.input_dim)?;
        let pass = self.encoder_pass(x);
        if !all_finite(&pass.mu) || !all_finite(&pass.log_var) {
            return Err(Error::NonFinite("encoder output"));
        }
        Ok((pass.mu, pass.log_var))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Decoded> {
        check_len(z.len(), self.topology.latent_dim)?;
        let pass = self.decoder_pass(z);
        if !all_finite(&pass.mu) || !all_finite(&pass.var) {
            return Err(Error::NonFinite("decoder output"));
        }
        Ok(Decoded {
            mu: pass.mu,
            var: pass.var,
        })
    }

    /// Decoder mean at the encoder mean, without sampling.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (mu, _) = self.encode(x)?;
        Ok(self.decode(&mu)?.mu)
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.params)
    }
}

/// `z = μ + exp(logσ²/2) ⊙ ε` with `ε ~ N(0, I)` drawn from `prng`.
pub fn reparameterize(prng: &mut Prng, mu: &[f64], log_var: &[f64]) -> Vec<f64> {
    assert_eq!(mu.len(), log_var.len(), "reparameterize: shape mismatch");
    mu.iter()
        .zip(log_var)
        .map(|(m, lv)| {
            let e = prng.next_gaussian();
            let sd = (0.5 * lv).exp();
            if sd == 0.0 {
                *m
            } else {
                m + sd * e
            }
        })
        .collect()
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::LengthMismatch {
            left: got,
            right: want,
        });
    }
    Ok(())
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    input_dim: usize,
    encoder_hidden: Vec<usize>,
    latent_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct VaeFile {
    format: String,
    topology: TopologyFile,
    loss_mode: LossMode,
    seed: u64,
    scaling: String,
    var_floor: f64,
    layers: Vec<LayerFile>,
}

impl Serialize for VaeModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let layers = (0..self.layers.len())
            .map(|i| {
                let (w, b) = self.layer(i);
                LayerFile {
                    w: w.chunks_exact(self.layers[i].n_in)
                        .map(<[f64]>::to_vec)
                        .collect(),
                    b: b.to_vec(),
                }
            })
            .collect();
        VaeFile {
            format: FORMAT.into(),
            topology: TopologyFile {
                input_dim: self.topology.input_dim,
                encoder_hidden: self.topology.encoder_hidden.clone(),
                latent_dim: self.topology.latent_dim,
            },
            loss_mode: self.topology.loss_mode,
            seed: self.seed,
            scaling: SCALING_RULE.into(),
            var_floor: self.var_floor,
            layers,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for VaeModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = VaeFile::deserialize(d)?;
        VaeModel::try_from(file).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<VaeFile> for VaeModel {
    type Error = Error;

    fn try_from(f: VaeFile) -> Result<Self> {
        if f.format != FORMAT {
            return Err(Error::Format(format!(
                "expected format {FORMAT:?}, found {:?}",
                f.format
            )));
        }
        if f.scaling != SCALING_RULE {
            return Err(Error::Format(format!(
                "unsupported feature scaling {:?}",
                f.scaling
            )));
        }
        if !(f.var_floor > 0.0 && f.var_floor.is_finite()) {
            return Err(Error::Format("variance floor must be positive".into()));
        }
        let topology = VaeTopology::new(
            f.topology.input_dim,
            f.topology.encoder_hidden,
            f.topology.latent_dim,
            f.loss_mode,
        )?;
        let mut model = VaeModel::zeros(&topology, f.seed)?;
        model.var_floor = f.var_floor;
        if f.layers.len() != model.layers.len() {
            return Err(Error::Format(format!(
                "expected {} layers, found {}",
                model.layers.len(),
                f.layers.len()
            )));
        }
        for (i, lf) in f.layers.iter().enumerate() {
            let shape = model.layers[i];
            let ok = lf.b.len() == shape.n_out
                && lf.w.len() == shape.n_out
                && lf.w.iter().all(|r| r.len() == shape.n_in);
            if !ok {
                return Err(Error::Format(format!(
                    "layer {i} is not {}x{}",
                    shape.n_out, shape.n_in
                )));
            }
            let (w, b) = model.layer_mut(i);
            for (dst, src) in w.chunks_exact_mut(shape.n_in).zip(&lf.w) {
                dst.copy_from_slice(src);
            }
            b.copy_from_slice(&lf.b);
        }
        if !model.is_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(model)
    }
}
