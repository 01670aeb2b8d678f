use super::{all_finite, DecoderPass, Dense, EncoderPass, LossMode, VaeModel};
use crate::error::{Error, Result};
use crate::numerics::Prng;

/// `KL(N(μ, diag(e^lv)) || N(0, I))` in closed form.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

fn recon(mode: LossMode, x: &[f64], pass: &DecoderPass) -> f64 {
    match mode {
        LossMode::Nll => x
            .iter()
            .zip(&pass.mu)
            .zip(&pass.var)
            .map(|((xi, m), v)| 0.5 * v.ln() + (xi - m).powi(2) / (2.0 * v))
            .sum(),
        LossMode::Mse => {
            0.5 * x
                .iter()
                .zip(&pass.mu)
                .map(|(xi, m)| (xi - m).powi(2))
                .sum::<f64>()
        }
    }
}

/// Backpropagates through a ReLU trunk. `g` enters as the gradient at the
/// trunk output and leaves as the gradient at its input (if requested).
fn trunk_backward(
    p: &[f64],
    layers: &[Dense],
    acts: &[Vec<f64>],
    mut g: Vec<f64>,
    mut grad: Option<&mut [f64]>,
    want_input: bool,
) -> Vec<f64> {
    for (j, layer) in layers.iter().enumerate().rev() {
        for (gi, a) in g.iter_mut().zip(&acts[j + 1]) {
            if *a <= 0.0 {
                *gi = 0.0;
            }
        }
        let need_in = j > 0 || want_input;
        let mut g_in = vec![0.0; if need_in { layer.n_in } else { 0 }];
        layer.backward(
            p,
            &acts[j],
            &g,
            grad.as_deref_mut(),
            need_in.then_some(g_in.as_mut_slice()),
        );
        g = g_in;
    }
    g
}

impl VaeModel {
    /// Given gradients at the decoder mean and variance, returns the gradient
    /// at the latent input and accumulates parameter gradients.
    fn decoder_backward(
        &self,
        pass: &DecoderPass,
        g_mu: &[f64],
        g_var: Option<&[f64]>,
        mut grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let k = self.topology.encoder_hidden.len();
        let layers = self.layers();
        let p = self.params();
        let top = pass.acts.last().unwrap();
        let mut g_top = vec![0.0; top.len()];

        // μ_j = s_j / S
        let dot: f64 = g_mu.iter().zip(&pass.mu).map(|(g, m)| g * m).sum();
        let g_h: Vec<f64> = g_mu
            .iter()
            .zip(&pass.s)
            .map(|(g, s)| (g - dot) / pass.s_sum * s * (1.0 - s))
            .collect();
        layers[2 * k + 2].backward(p, top, &g_h, grad.as_deref_mut(), Some(&mut g_top));

        if let (Some(g_var), LossMode::Nll) = (g_var, self.topology.loss_mode) {
            // σ² = e^h + floor
            let g_hv: Vec<f64> = g_var
                .iter()
                .zip(&pass.var)
                .map(|(g, v)| g * (v - self.var_floor))
                .collect();
            layers[2 * k + 3].backward(p, top, &g_hv, grad.as_deref_mut(), Some(&mut g_top));
        }
        trunk_backward(p, &layers[k + 2..2 * k + 2], &pass.acts, g_top, grad, true)
    }

    /// Backpropagates gradients at μ_z and logσ²_z through the encoder.
    fn encoder_backward(
        &self,
        pass: &EncoderPass,
        g_mu: &[f64],
        g_lv: &[f64],
        mut grad: Option<&mut [f64]>,
        want_input: bool,
    ) -> Vec<f64> {
        let k = self.topology.encoder_hidden.len();
        let layers = self.layers();
        let p = self.params();
        let top = pass.acts.last().unwrap();
        let need_top = k > 0 || want_input;
        let mut g_top = vec![0.0; if need_top { top.len() } else { 0 }];
        layers[k].backward(
            p,
            top,
            g_mu,
            grad.as_deref_mut(),
            need_top.then_some(g_top.as_mut_slice()),
        );
        layers[k + 1].backward(
            p,
            top,
            g_lv,
            grad.as_deref_mut(),
            need_top.then_some(g_top.as_mut_slice()),
        );
        if k == 0 {
            return g_top;
        }
        trunk_backward(p, &layers[..k], &pass.acts, g_top, grad, want_input)
    }

    /// Loss of one point averaged over the `L = eps.len() / d` noise draws in
    /// `eps`. Gradients, scaled by `scale`, are added into `grad`.
    fn point_loss(&self, x: &[f64], eps: &[f64], scale: f64, mut grad: Option<&mut [f64]>) -> f64 {
        let d = self.topology.latent_dim;
        let l = eps.len() / d;
        let enc = self.encoder_pass(x);
        let kl = kl_divergence(&enc.mu, &enc.log_var);
        let sd: Vec<f64> = enc.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();

        let mut g_mu: Vec<f64> = enc.mu.iter().map(|m| scale * m).collect();
        let mut g_lv: Vec<f64> = enc
            .log_var
            .iter()
            .map(|lv| scale * 0.5 * (lv.exp() - 1.0))
            .collect();

        let mut total = 0.0;
        let w = scale / l as f64;
        for e in eps.chunks_exact(d) {
            let z: Vec<f64> = enc
                .mu
                .iter()
                .zip(&sd)
                .zip(e)
                .map(|((m, s), e)| m + s * e)
                .collect();
            let dec = self.decoder_pass(&z);
            total += recon(self.topology.loss_mode, x, &dec);
            if grad.is_none() {
                continue;
            }
            let (gm, gv): (Vec<f64>, Option<Vec<f64>>) = match self.topology.loss_mode {
                LossMode::Nll => {
                    let gm = x
                        .iter()
                        .zip(&dec.mu)
                        .zip(&dec.var)
                        .map(|((xi, m), v)| -w * (xi - m) / v)
                        .collect();
                    let gv = x
                        .iter()
                        .zip(&dec.mu)
                        .zip(&dec.var)
                        .map(|((xi, m), v)| w * (0.5 / v - (xi - m).powi(2) / (2.0 * v * v)))
                        .collect();
                    (gm, Some(gv))
                }
                LossMode::Mse => (
                    x.iter().zip(&dec.mu).map(|(xi, m)| -w * (xi - m)).collect(),
                    None,
                ),
            };
            let g_z = self.decoder_backward(&dec, &gm, gv.as_deref(), grad.as_deref_mut());
            for j in 0..d {
                g_mu[j] += g_z[j];
                g_lv[j] += g_z[j] * e[j] * sd[j] * 0.5;
            }
        }
        if let Some(grad) = grad {
            self.encoder_backward(&enc, &g_mu, &g_lv, Some(grad), false);
        }
        kl + total / l as f64
    }
}

/// Mean loss over `batch` with caller-supplied noise: `eps` holds
/// `samples × latent_dim` standard normals per row, rows in batch order.
/// Returns the loss and, if `with_grad`, its gradient over all parameters.
pub fn loss_with_noise(
    model: &VaeModel,
    batch: &[&[f64]],
    eps: &[f64],
    samples: usize,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::contract("loss of an empty batch"));
    }
    let d = model.topology.latent_dim;
    let per = samples * d;
    if samples == 0 || eps.len() != batch.len() * per {
        return Err(Error::contract(format!(
            "need {} noise values for {} rows, got {}",
            batch.len() * per,
            batch.len(),
            eps.len()
        )));
    }
    if let Some(x) = batch.iter().find(|x| x.len() != model.topology.input_dim) {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: model.topology.input_dim,
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = if with_grad {
        vec![0.0; model.params().len()]
    } else {
        Vec::new()
    };
    let mut total = 0.0;
    for (x, e) in batch.iter().zip(eps.chunks_exact(per)) {
        let g = with_grad.then_some(grad.as_mut_slice());
        total += model.point_loss(x, e, scale, g);
    }
    Ok((total * scale, grad))
}

/// Mean negative ELBO over `batch` and its gradient, drawing `samples`
/// latent samples per row from `prng`.
pub fn loss(
    model: &VaeModel,
    batch: &[&[f64]],
    prng: &mut Prng,
    samples: usize,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.len() * samples * model.topology.latent_dim;
    let eps: Vec<f64> = (0..n).map(|_| prng.next_gaussian()).collect();
    let (value, grad) = loss_with_noise(model, batch, &eps, samples, true)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    if !all_finite(&grad) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((value, grad))
}

/// `(∂μ_z/∂x)ᵀ v` at `x`.
pub fn encoder_vjp(model: &VaeModel, x: &[f64], v: &[f64]) -> Vec<f64> {
    let pass = model.encoder_pass(x);
    let zeros = vec![0.0; v.len()];
    model.encoder_backward(&pass, v, &zeros, None, true)
}

/// `(∂μ_x/∂z)ᵀ v_mu + (∂σ²_x/∂z)ᵀ v_var` at `z`.
pub fn decoder_vjp(model: &VaeModel, z: &[f64], v_mu: &[f64], v_var: Option<&[f64]>) -> Vec<f64> {
    let pass = model.decoder_pass(z);
    model.decoder_backward(&pass, v_mu, v_var, None)
}
