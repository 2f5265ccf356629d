//! Backpropagation-through-time training for adLIF networks.
//!
//! The spike nonlinearity is differentiated with a box surrogate (1 inside a
//! window around the threshold, 0 elsewhere); everything else — the state
//! recursions, batch normalization, the time-averaged readout and the
//! cross-entropy loss — is differentiated exactly. Parameters are updated
//! with Adam plus L2 weight decay folded into the gradient, a step learning
//! rate schedule, and per-parameter clipping of the neuron coefficients back
//! into their valid ranges.
//!
//! For gradient verification there is a linear probe mode
//! ([`GradMode::LinearProbe`]): spiking is disabled and layers pass their
//! membrane potential forward instead of spikes, which makes the whole
//! network smooth so analytic gradients can be checked against finite
//! differences. The probe shares all code paths with spiking training except
//! the spike indicator itself.

use crate::adapt::NeuronForm;
use crate::neuron::AdLifParams;
use crate::resample::Sample;
use crate::rng::Xoshiro256pp;

use super::{cross_entropy, NetworkError, NetworkModel, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Margin keeping clipped decay parameters strictly inside (0, 1).
const CLIP_MARGIN: f64 = 1e-6;

/// Differentiation mode for the forward/backward pass.
#[derive(Clone, Copy, Debug)]
pub enum GradMode {
    /// Normal spiking dynamics with a box surrogate of the given half-width.
    Spiking { half_width: f64 },
    /// Spiking disabled; layers output membrane potentials. The network is
    /// smooth, so gradients admit a finite-difference check.
    LinearProbe,
}

#[derive(Clone, Debug)]
pub struct EarlyStopConfig {
    /// Number of consecutive epochs with insufficient validation-loss
    /// reduction before stopping.
    pub patience: usize,
    /// Minimum epoch-over-epoch reduction that counts as progress.
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            patience: 10,
            min_delta: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Learning rate is multiplied by `lr_decay` every `lr_step_epochs`.
    pub lr_step_epochs: usize,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub surrogate_half_width: f64,
    pub batch_size: usize,
    /// Early stopping on validation loss; needs validation data.
    pub early_stop: Option<EarlyStopConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 0.01,
            lr_step_epochs: 10,
            lr_decay: 0.1,
            weight_decay: 1e-4,
            surrogate_half_width: 0.5,
            batch_size: 32,
            early_stop: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: NetworkModel,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch (empty without validation data).
    pub val_loss: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Flat parameter layout

#[derive(Clone, Debug)]
struct LayerOffsets {
    w: usize,
    v: Option<usize>,
    gain: usize,
    bias: usize,
    alpha: usize,
    beta: usize,
    a: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Arch {
    in_dims: Vec<usize>,
    out_dims: Vec<usize>,
    thetas: Vec<Vec<f64>>,
    eps: Vec<f64>,
    layer_offsets: Vec<LayerOffsets>,
    ro_w: usize,
    ro_b: usize,
    classes: usize,
    total: usize,
}

fn plan(model: &NetworkModel) -> Result<Arch> {
    model.validate_shapes()?;
    let mut total = 0usize;
    let mut layer_offsets = Vec::new();
    let mut thetas = Vec::new();
    let mut in_dims = Vec::new();
    let mut out_dims = Vec::new();
    let mut eps = Vec::new();
    for layer in &model.layers {
        let mut theta = Vec::with_capacity(layer.out_dim);
        for neuron in &layer.neurons {
            match neuron {
                NeuronForm::AdLif(p) => theta.push(p.threshold),
                NeuronForm::General(_) => return Err(NetworkError::NotTrainable),
            }
        }
        let mut offset = |len: usize| {
            let at = total;
            total += len;
            at
        };
        let w = offset(layer.out_dim * layer.in_dim);
        let v = layer
            .recurrent
            .as_ref()
            .map(|_| offset(layer.out_dim * layer.out_dim));
        let gain = offset(layer.in_dim);
        let bias = offset(layer.in_dim);
        let alpha = offset(layer.out_dim);
        let beta = offset(layer.out_dim);
        let a = offset(layer.out_dim);
        let b = offset(layer.out_dim);
        layer_offsets.push(LayerOffsets {
            w,
            v,
            gain,
            bias,
            alpha,
            beta,
            a,
            b,
        });
        thetas.push(theta);
        in_dims.push(layer.in_dim);
        out_dims.push(layer.out_dim);
        eps.push(layer.norm.eps);
    }
    let ro_w = total;
    total += model.readout.classes * model.readout.in_dim;
    let ro_b = total;
    total += model.readout.classes;
    Ok(Arch {
        in_dims,
        out_dims,
        thetas,
        eps,
        layer_offsets,
        ro_w,
        ro_b,
        classes: model.readout.classes,
        total,
    })
}

/// Extracts the trainable parameters (weights, recurrent weights, affine
/// normalization terms, neuron coefficients, readout) as one flat vector.
pub fn flatten_params(model: &NetworkModel) -> Result<Vec<f64>> {
    let arch = plan(model)?;
    let mut params = vec![0.0; arch.total];
    for (layer, off) in model.layers.iter().zip(&arch.layer_offsets) {
        params[off.w..off.w + layer.weights.len()].copy_from_slice(&layer.weights);
        if let (Some(vo), Some(v)) = (off.v, &layer.recurrent) {
            params[vo..vo + v.len()].copy_from_slice(v);
        }
        params[off.gain..off.gain + layer.in_dim].copy_from_slice(&layer.norm.gain);
        params[off.bias..off.bias + layer.in_dim].copy_from_slice(&layer.norm.bias);
        for (j, neuron) in layer.neurons.iter().enumerate() {
            if let NeuronForm::AdLif(p) = neuron {
                params[off.alpha + j] = p.alpha;
                params[off.beta + j] = p.beta;
                params[off.a + j] = p.a;
                params[off.b + j] = p.b;
            }
        }
    }
    params[arch.ro_w..arch.ro_w + model.readout.weights.len()]
        .copy_from_slice(&model.readout.weights);
    params[arch.ro_b..arch.ro_b + model.readout.bias.len()].copy_from_slice(&model.readout.bias);
    Ok(params)
}

/// Returns a copy of `model` with the trainable parameters replaced from a
/// flat vector (layout per [`flatten_params`]); stored normalization
/// statistics are kept.
pub fn with_params(model: &NetworkModel, params: &[f64]) -> Result<NetworkModel> {
    let arch = plan(model)?;
    assert_eq!(params.len(), arch.total, "parameter vector length");
    let mut out = model.clone();
    for (layer, off) in out.layers.iter_mut().zip(&arch.layer_offsets) {
        layer
            .weights
            .copy_from_slice(&params[off.w..off.w + layer.out_dim * layer.in_dim]);
        if let (Some(vo), Some(v)) = (off.v, &mut layer.recurrent) {
            v.copy_from_slice(&params[vo..vo + layer.out_dim * layer.out_dim]);
        }
        layer
            .norm
            .gain
            .copy_from_slice(&params[off.gain..off.gain + layer.in_dim]);
        layer
            .norm
            .bias
            .copy_from_slice(&params[off.bias..off.bias + layer.in_dim]);
        for (j, neuron) in layer.neurons.iter_mut().enumerate() {
            if let NeuronForm::AdLif(p) = neuron {
                *neuron = NeuronForm::AdLif(AdLifParams {
                    alpha: params[off.alpha + j],
                    beta: params[off.beta + j],
                    a: params[off.a + j],
                    b: params[off.b + j],
                    threshold: p.threshold,
                });
            }
        }
    }
    let ro_len = out.readout.classes * out.readout.in_dim;
    out.readout
        .weights
        .copy_from_slice(&params[arch.ro_w..arch.ro_w + ro_len]);
    out.readout
        .bias
        .copy_from_slice(&params[arch.ro_b..arch.ro_b + out.readout.classes]);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dense batch representation

struct DenseSample {
    /// Time-major input, `x[t * channels + c]`.
    x: Vec<f64>,
    label: usize,
}

fn densify(data: &[Sample]) -> Result<(Vec<DenseSample>, usize, usize)> {
    let first = data.first().ok_or(NetworkError::EmptyDataset)?;
    let channels = first.tensor.channels();
    let t_len = first.tensor.timesteps();
    let mut out = Vec::with_capacity(data.len());
    for s in data {
        if s.tensor.channels() != channels || s.tensor.timesteps() != t_len {
            return Err(NetworkError::RaggedDataset);
        }
        let mut x = vec![0.0; t_len * channels];
        for c in 0..channels {
            for t in 0..t_len {
                x[t * channels + c] = s.tensor.at(c, t) as f64;
            }
        }
        out.push(DenseSample { x, label: s.label });
    }
    Ok((out, channels, t_len))
}

// ---------------------------------------------------------------------------
// Forward + backward over one batch

/// Per-layer running statistics updated during training.
#[derive(Clone, Debug)]
struct Running {
    mu: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

struct LayerCache {
    xhat: Vec<f64>,
    y: Vec<f64>,
    drive: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    s: Vec<f64>,
    out: Vec<f64>,
    inv_sigma: Vec<f64>,
}

/// Batch-mean loss and its gradient with respect to the flat parameter
/// vector. Training mode uses batch statistics for normalization; when
/// `running` is given, the stored statistics are advanced with momentum 0.1
/// (unbiased variance), mirroring the usual batch-norm bookkeeping.
fn batch_pass(
    params: &[f64],
    arch: &Arch,
    batch: &[&DenseSample],
    t_len: usize,
    mode: GradMode,
    mut running: Option<(&mut Running, f64)>,
) -> (f64, Vec<f64>) {
    let b_len = batch.len();
    let n_layers = arch.in_dims.len();
    let mut grads = vec![0.0; arch.total];

    // ---- forward ----
    let mut caches: Vec<LayerCache> = Vec::with_capacity(n_layers);
    let mut input: Vec<f64> = {
        let c = arch.in_dims[0];
        let mut buf = vec![0.0; b_len * t_len * c];
        for (bi, sample) in batch.iter().enumerate() {
            buf[bi * t_len * c..(bi + 1) * t_len * c].copy_from_slice(&sample.x);
        }
        buf
    };

    for l in 0..n_layers {
        let c_in = arch.in_dims[l];
        let c_out = arch.out_dims[l];
        let off = &arch.layer_offsets[l];
        let n_elems = (b_len * t_len) as f64;

        // Batch statistics per channel.
        let mut mu_b = vec![0.0; c_in];
        for chunk in input.chunks_exact(c_in) {
            for (c, &x) in chunk.iter().enumerate() {
                mu_b[c] += x;
            }
        }
        for m in &mut mu_b {
            *m /= n_elems;
        }
        let mut var_b = vec![0.0; c_in];
        for chunk in input.chunks_exact(c_in) {
            for (c, &x) in chunk.iter().enumerate() {
                let d = x - mu_b[c];
                var_b[c] += d * d;
            }
        }
        for v in &mut var_b {
            *v /= n_elems;
        }
        if let Some((running, momentum)) = running.as_mut() {
            let unbias = if n_elems > 1.0 {
                n_elems / (n_elems - 1.0)
            } else {
                1.0
            };
            for c in 0..c_in {
                running.mu[l][c] = (1.0 - *momentum) * running.mu[l][c] + *momentum * mu_b[c];
                running.var[l][c] =
                    (1.0 - *momentum) * running.var[l][c] + *momentum * var_b[c] * unbias;
            }
        }
        let inv_sigma: Vec<f64> = var_b
            .iter()
            .map(|v| 1.0 / (v + arch.eps[l]).sqrt())
            .collect();

        let gain = &params[off.gain..off.gain + c_in];
        let bias = &params[off.bias..off.bias + c_in];
        let mut xhat = vec![0.0; input.len()];
        let mut y = vec![0.0; input.len()];
        for (i, &x) in input.iter().enumerate() {
            let c = i % c_in;
            let h = (x - mu_b[c]) * inv_sigma[c];
            xhat[i] = h;
            y[i] = gain[c] * h + bias[c];
        }

        // Neuron recursion.
        let sz = b_len * t_len * c_out;
        let mut drive = vec![0.0; sz];
        let mut u = vec![0.0; sz];
        let mut w = vec![0.0; sz];
        let mut s = vec![0.0; sz];
        let mut out = vec![0.0; sz];
        let w_mat = &params[off.w..off.w + c_out * c_in];
        let v_mat = off.v.map(|vo| &params[vo..vo + c_out * c_out]);
        let alpha = &params[off.alpha..off.alpha + c_out];
        let a_par = &params[off.a..off.a + c_out];
        let beta = &params[off.beta..off.beta + c_out];
        let b_par = &params[off.b..off.b + c_out];
        let theta = &arch.thetas[l];
        let spiking = matches!(mode, GradMode::Spiking { .. });

        for bi in 0..b_len {
            let mut u_cur = vec![0.0; c_out];
            let mut w_cur = vec![0.0; c_out];
            for t in 0..t_len {
                let at = (bi * t_len + t) * c_out;
                let y_row = &y[(bi * t_len + t) * c_in..(bi * t_len + t + 1) * c_in];
                for j in 0..c_out {
                    let fired = spiking && u_cur[j] >= theta[j];
                    s[at + j] = f64::from(fired);
                    u[at + j] = u_cur[j];
                    w[at + j] = w_cur[j];
                    out[at + j] = if spiking { s[at + j] } else { u_cur[j] };
                }
                for j in 0..c_out {
                    let row = &w_mat[j * c_in..(j + 1) * c_in];
                    let mut d = 0.0;
                    for c in 0..c_in {
                        d += row[c] * y_row[c];
                    }
                    if let Some(v) = v_mat {
                        let vrow = &v[j * c_out..(j + 1) * c_out];
                        for k in 0..c_out {
                            d += vrow[k] * s[at + k];
                        }
                    }
                    drive[at + j] = d;
                }
                for j in 0..c_out {
                    let sj = s[at + j];
                    let u_next = alpha[j] * (u_cur[j] - theta[j] * sj)
                        + (1.0 - alpha[j]) * (drive[at + j] - w_cur[j]);
                    let w_next = a_par[j] * u_cur[j] + beta[j] * w_cur[j] + b_par[j] * sj;
                    u_cur[j] = u_next;
                    w_cur[j] = w_next;
                }
            }
        }
        caches.push(LayerCache {
            xhat,
            y,
            drive,
            u,
            w,
            s,
            out: out.clone(),
            inv_sigma,
        });
        input = out;
    }

    // ---- readout and loss ----
    let c_last = *arch.out_dims.last().expect("at least one layer");
    let ro_w = &params[arch.ro_w..arch.ro_w + arch.classes * c_last];
    let ro_b = &params[arch.ro_b..arch.ro_b + arch.classes];
    let mut loss = 0.0;
    // dL/d(out[t][j]) for the last layer, accumulated per sample below.
    let mut d_out = vec![0.0; b_len * t_len * c_last];
    {
        let last = caches.last().expect("at least one layer");
        for (bi, sample) in batch.iter().enumerate() {
            let mut mean = vec![0.0; c_last];
            for t in 0..t_len {
                let at = (bi * t_len + t) * c_last;
                for j in 0..c_last {
                    mean[j] += last.out[at + j];
                }
            }
            let t_f = t_len.max(1) as f64;
            for m in &mut mean {
                *m /= t_f;
            }
            let mut scores = ro_b.to_vec();
            for (k, score) in scores.iter_mut().enumerate() {
                let row = &ro_w[k * c_last..(k + 1) * c_last];
                for j in 0..c_last {
                    *score += row[j] * mean[j];
                }
            }
            loss += cross_entropy(&scores, sample.label);

            // Softmax gradient, scaled for the batch mean.
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            let scale = 1.0 / b_len as f64;
            let mut d_mean = vec![0.0; c_last];
            for k in 0..arch.classes {
                let mut delta = exp[k] / sum;
                if k == sample.label {
                    delta -= 1.0;
                }
                delta *= scale;
                grads[arch.ro_b + k] += delta;
                let row = &ro_w[k * c_last..(k + 1) * c_last];
                let grow = &mut grads[arch.ro_w + k * c_last..arch.ro_w + (k + 1) * c_last];
                for j in 0..c_last {
                    grow[j] += delta * mean[j];
                    d_mean[j] += delta * row[j];
                }
            }
            for t in 0..t_len {
                let at = (bi * t_len + t) * c_last;
                for j in 0..c_last {
                    d_out[at + j] = d_mean[j] / t_f;
                }
            }
        }
    }
    loss /= b_len as f64;

    // ---- backward through layers ----
    let mut d_out_cur = d_out;
    for l in (0..n_layers).rev() {
        let c_in = arch.in_dims[l];
        let c_out = arch.out_dims[l];
        let off = &arch.layer_offsets[l];
        let cache = &caches[l];
        let w_mat = &params[off.w..off.w + c_out * c_in];
        let v_mat = off.v.map(|vo| &params[vo..vo + c_out * c_out]);
        let alpha = &params[off.alpha..off.alpha + c_out];
        let beta = &params[off.beta..off.beta + c_out];
        let a_par = &params[off.a..off.a + c_out];
        let b_par = &params[off.b..off.b + c_out];
        let theta = &arch.thetas[l];
        let mut d_y = vec![0.0; b_len * t_len * c_in];

        for bi in 0..b_len {
            let mut gu_next = vec![0.0; c_out];
            let mut gw_next = vec![0.0; c_out];
            let mut gdrive = vec![0.0; c_out];
            let mut gs = vec![0.0; c_out];
            for t in (0..t_len).rev() {
                let at = (bi * t_len + t) * c_out;
                for j in 0..c_out {
                    gdrive[j] = gu_next[j] * (1.0 - alpha[j]);
                }
                match mode {
                    GradMode::Spiking { half_width } => {
                        for j in 0..c_out {
                            let mut g = d_out_cur[at + j];
                            g += gu_next[j] * (-alpha[j] * theta[j]);
                            g += gw_next[j] * b_par[j];
                            gs[j] = g;
                        }
                        if let Some(v) = v_mat {
                            // Own spikes feed the same-step recurrent drive.
                            for k in 0..c_out {
                                let mut acc = 0.0;
                                for j in 0..c_out {
                                    acc += v[j * c_out + k] * gdrive[j];
                                }
                                gs[k] += acc;
                            }
                        }
                        for j in 0..c_out {
                            let inside = (cache.u[at + j] - theta[j]).abs() < half_width;
                            let sur = f64::from(inside);
                            let gu = gu_next[j] * alpha[j] + gw_next[j] * a_par[j] + sur * gs[j];
                            let gw = gw_next[j] * beta[j] - gu_next[j] * (1.0 - alpha[j]);
                            // Parameter gradients for the t -> t+1 update.
                            grads[off.alpha + j] += gu_next[j]
                                * (cache.u[at + j]
                                    - theta[j] * cache.s[at + j]
                                    - cache.drive[at + j]
                                    + cache.w[at + j]);
                            grads[off.beta + j] += gw_next[j] * cache.w[at + j];
                            grads[off.a + j] += gw_next[j] * cache.u[at + j];
                            grads[off.b + j] += gw_next[j] * cache.s[at + j];
                            gu_next[j] = gu;
                            gw_next[j] = gw;
                        }
                    }
                    GradMode::LinearProbe => {
                        for j in 0..c_out {
                            let gu =
                                gu_next[j] * alpha[j] + gw_next[j] * a_par[j] + d_out_cur[at + j];
                            let gw = gw_next[j] * beta[j] - gu_next[j] * (1.0 - alpha[j]);
                            grads[off.alpha + j] += gu_next[j]
                                * (cache.u[at + j] - cache.drive[at + j] + cache.w[at + j]);
                            grads[off.beta + j] += gw_next[j] * cache.w[at + j];
                            grads[off.a + j] += gw_next[j] * cache.u[at + j];
                            gu_next[j] = gu;
                            gw_next[j] = gw;
                        }
                    }
                }
                // Weight gradients and input-gradient propagation.
                let y_row = &cache.y[(bi * t_len + t) * c_in..(bi * t_len + t + 1) * c_in];
                let dy_row = &mut d_y[(bi * t_len + t) * c_in..(bi * t_len + t + 1) * c_in];
                for j in 0..c_out {
                    let g = gdrive[j];
                    if g == 0.0 {
                        continue;
                    }
                    let grow = &mut grads[off.w + j * c_in..off.w + (j + 1) * c_in];
                    let row = &w_mat[j * c_in..(j + 1) * c_in];
                    for c in 0..c_in {
                        grow[c] += g * y_row[c];
                        dy_row[c] += g * row[c];
                    }
                }
                if let Some(vo) = off.v {
                    for j in 0..c_out {
                        let g = gdrive[j];
                        if g == 0.0 {
                            continue;
                        }
                        let grow = &mut grads[vo + j * c_out..vo + (j + 1) * c_out];
                        for k in 0..c_out {
                            grow[k] += g * cache.s[at + k];
                        }
                    }
                }
            }
        }

        // Batch-norm backward: dX from dY with batch statistics.
        let n_elems = (b_len * t_len) as f64;
        let gain = &params[off.gain..off.gain + c_in];
        let mut sum_dy = vec![0.0; c_in];
        let mut sum_dy_xhat = vec![0.0; c_in];
        for (i, &dy) in d_y.iter().enumerate() {
            let c = i % c_in;
            sum_dy[c] += dy;
            sum_dy_xhat[c] += dy * cache.xhat[i];
        }
        for c in 0..c_in {
            grads[off.bias + c] += sum_dy[c];
            grads[off.gain + c] += sum_dy_xhat[c];
        }
        if l > 0 {
            let mut d_x = vec![0.0; d_y.len()];
            for (i, &dy) in d_y.iter().enumerate() {
                let c = i % c_in;
                d_x[i] = gain[c]
                    * cache.inv_sigma[c]
                    * (dy - sum_dy[c] / n_elems - cache.xhat[i] * sum_dy_xhat[c] / n_elems);
            }
            d_out_cur = d_x;
        }
    }

    (loss, grads)
}

/// Loss and flat-parameter gradient on a batch; the entry point used by the
/// gradient checks. Does not touch stored statistics.
pub fn loss_and_grads(
    model: &NetworkModel,
    batch: &[Sample],
    mode: GradMode,
) -> Result<(f64, Vec<f64>)> {
    let arch = plan(model)?;
    let params = flatten_params(model)?;
    let (dense, channels, t_len) = densify(batch)?;
    if channels != arch.in_dims[0] {
        return Err(NetworkError::ChannelMismatch {
            expected: arch.in_dims[0],
            got: channels,
        });
    }
    super::check_labels(batch, arch.classes)?;
    let refs: Vec<&DenseSample> = dense.iter().collect();
    Ok(batch_pass(&params, &arch, &refs, t_len, mode, None))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Clips neuron coefficients back into their ranges and zeroes recurrent
/// diagonals after an optimizer step.
fn clamp_params(params: &mut [f64], arch: &Arch) {
    for (l, off) in arch.layer_offsets.iter().enumerate() {
        let c_out = arch.out_dims[l];
        for j in 0..c_out {
            let clip = |x: f64, lo: f64, hi: f64| x.max(lo).min(hi);
            params[off.alpha + j] = clip(params[off.alpha + j], CLIP_MARGIN, 1.0 - CLIP_MARGIN);
            params[off.beta + j] = clip(params[off.beta + j], CLIP_MARGIN, 1.0 - CLIP_MARGIN);
            params[off.a + j] = clip(params[off.a + j], 0.0, 1.0 - CLIP_MARGIN);
            params[off.b + j] = clip(params[off.b + j], 0.0, 2.0);
        }
        if let Some(vo) = off.v {
            for j in 0..c_out {
                params[vo + j * c_out + j] = 0.0;
            }
        }
    }
}

fn assemble(base: &NetworkModel, params: &[f64], running: &Running) -> Result<NetworkModel> {
    let mut model = with_params(base, params)?;
    for (l, layer) in model.layers.iter_mut().enumerate() {
        layer.norm.mu.copy_from_slice(&running.mu[l]);
        layer.norm.var.copy_from_slice(&running.var[l]);
    }
    Ok(model)
}

/// Trains with BPTT + box surrogate, Adam and the step learning-rate
/// schedule. Deterministic for a fixed `(seed, config, dataset)`.
///
/// With validation data and `early_stop` set, training stops once the
/// epoch-over-epoch validation-loss reduction stays below `min_delta` for
/// `patience` consecutive epochs, and the best-on-validation model is
/// returned; otherwise the final model is returned.
pub fn train(
    model: &NetworkModel,
    train_data: &[Sample],
    val_data: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let arch = plan(model)?;
    let mut params = flatten_params(model)?;
    let (dense, channels, t_len) = densify(train_data)?;
    if channels != arch.in_dims[0] {
        return Err(NetworkError::ChannelMismatch {
            expected: arch.in_dims[0],
            got: channels,
        });
    }
    super::check_labels(train_data, arch.classes)?;
    let batch_size = cfg.batch_size.max(1);
    let mut running = Running {
        mu: model.layers.iter().map(|l| l.norm.mu.clone()).collect(),
        var: model.layers.iter().map(|l| l.norm.var.clone()).collect(),
    };
    let mut adam = Adam::new(params.len());
    let mut rng = Xoshiro256pp::from_seed(cfg.seed);
    let mode = GradMode::Spiking {
        half_width: cfg.surrogate_half_width,
    };

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::new();
    let mut best: Option<(f64, Vec<f64>, Running)> = None;
    let mut prev_val = f64::INFINITY;
    let mut stall = 0usize;

    let mut order: Vec<usize> = (0..dense.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.base_lr
            * cfg
                .lr_decay
                .powi((epoch / cfg.lr_step_epochs.max(1)) as i32);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&DenseSample> = chunk.iter().map(|&i| &dense[i]).collect();
            let (loss, grads) = batch_pass(
                &params,
                &arch,
                &batch,
                t_len,
                mode,
                Some((&mut running, 0.1)),
            );
            if !loss.is_finite() {
                return Err(NetworkError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut params, &grads, lr, cfg.weight_decay);
            clamp_params(&mut params, &arch);
        }
        train_loss.push(epoch_loss / dense.len() as f64);

        if let Some(val) = val_data {
            let current = assemble(model, &params, &running)?;
            let loss = super::model_loss(&current, val)?;
            val_loss.push(loss);
            if best.as_ref().map_or(true, |(b, _, _)| loss < *b) {
                best = Some((loss, params.clone(), running.clone()));
            }
            if let Some(es) = &cfg.early_stop {
                if prev_val - loss < es.min_delta {
                    stall += 1;
                } else {
                    stall = 0;
                }
                prev_val = loss;
                if stall >= es.patience {
                    break;
                }
            } else {
                prev_val = loss;
            }
        }
    }

    let final_model = match (&cfg.early_stop, best) {
        (Some(_), Some((_, best_params, best_running))) => {
            assemble(model, &best_params, &best_running)?
        }
        _ => assemble(model, &params, &running)?,
    };
    Ok(TrainResult {
        model: final_model,
        train_loss,
        val_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{evaluate, init_model, ModelConfig, ModelMeta};
    use crate::resample::SpikeTensor;

    fn meta(seed: u64) -> ModelMeta {
        ModelMeta {
            dt_ms: 1.0,
            bin_size: 1,
            seed,
        }
    }

    /// Two linearly separable classes: distinct channel groups fire.
    fn separable_dataset(seed: u64, per_class: usize, t_len: usize) -> Vec<Sample> {
        let mut rng = Xoshiro256pp::from_seed(seed);
        let channels = 8;
        let mut data = Vec::new();
        for class in 0..2usize {
            for _ in 0..per_class {
                let mut counts = vec![0u32; channels * t_len];
                for c in 0..channels {
                    let active = (class == 0 && c < 4) || (class == 1 && c >= 4);
                    let rate = if active { 1.2 } else { 0.05 };
                    for t in 0..t_len {
                        counts[c * t_len + t] = rng.poisson(rate);
                    }
                }
                data.push(Sample {
                    tensor: SpikeTensor::new(channels, t_len, counts, 1.0).unwrap(),
                    label: class,
                });
            }
        }
        data
    }

    #[test]
    fn flatten_round_trips() {
        let model = init_model(
            &ModelConfig {
                input_channels: 5,
                hidden: vec![7, 6],
                classes: 3,
                recurrent: true,
            },
            meta(3),
        );
        let params = flatten_params(&model).unwrap();
        let rebuilt = with_params(&model, &params).unwrap();
        assert_eq!(rebuilt, model);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_and_loss_flat() {
        let model = init_model(
            &ModelConfig {
                input_channels: 8,
                hidden: vec![12],
                classes: 2,
                recurrent: false,
            },
            meta(5),
        );
        let data = separable_dataset(40, 10, 16);
        let cfg = TrainConfig {
            epochs: 4,
            base_lr: 0.0,
            batch_size: data.len(),
            seed: 9,
            ..TrainConfig::default()
        };
        let result = train(&model, &data, None, &cfg).unwrap();
        // Trainable parameters stay bit-identical; stored normalization
        // statistics still track the data, which is a property of the
        // forward pass, not of the optimizer.
        assert_eq!(
            flatten_params(&result.model).unwrap(),
            flatten_params(&model).unwrap()
        );
        for window in result.train_loss.windows(2) {
            assert_eq!(window[0], window[1]);
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let model = init_model(
            &ModelConfig {
                input_channels: 8,
                hidden: vec![12],
                classes: 2,
                recurrent: false,
            },
            meta(6),
        );
        let data = separable_dataset(41, 8, 12);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train(&model, &data, None, &cfg).unwrap();
        let b = train(&model, &data, None, &cfg).unwrap();
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn learns_separable_classes() {
        let model = init_model(
            &ModelConfig {
                input_channels: 8,
                hidden: vec![16],
                classes: 2,
                recurrent: false,
            },
            meta(8),
        );
        let data = separable_dataset(42, 20, 20);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            seed: 4,
            ..TrainConfig::default()
        };
        let result = train(&model, &data, None, &cfg).unwrap();
        let acc = evaluate(&result.model, &data).unwrap();
        assert!(acc >= 0.95, "training accuracy {acc}");
        assert!(result.train_loss.last().unwrap() < result.train_loss.first().unwrap());
    }

    #[test]
    fn early_stopping_halts_on_plateau() {
        let model = init_model(
            &ModelConfig {
                input_channels: 8,
                hidden: vec![16],
                classes: 2,
                recurrent: false,
            },
            meta(10),
        );
        let data = separable_dataset(43, 15, 16);
        let val = separable_dataset(44, 5, 16);
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 15,
            seed: 12,
            early_stop: Some(EarlyStopConfig {
                patience: 5,
                min_delta: 1e-5,
            }),
            ..TrainConfig::default()
        };
        let result = train(&model, &data, Some(&val), &cfg).unwrap();
        assert!(
            result.train_loss.len() < 100,
            "expected early stop, ran {} epochs",
            result.train_loss.len()
        );
        assert_eq!(result.val_loss.len(), result.train_loss.len());
    }

    #[test]
    fn rejects_empty_and_ragged_datasets() {
        let model = init_model(
            &ModelConfig {
                input_channels: 2,
                hidden: vec![4],
                classes: 2,
                recurrent: false,
            },
            meta(11),
        );
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&model, &[], None, &cfg),
            Err(NetworkError::EmptyDataset)
        ));
        let ragged = vec![
            Sample {
                tensor: SpikeTensor::new(2, 4, vec![0; 8], 1.0).unwrap(),
                label: 0,
            },
            Sample {
                tensor: SpikeTensor::new(2, 5, vec![0; 10], 1.0).unwrap(),
                label: 1,
            },
        ];
        assert!(matches!(
            train(&model, &ragged, None, &cfg),
            Err(NetworkError::RaggedDataset)
        ));
    }

    #[test]
    fn gradients_match_finite_differences_in_probe_mode() {
        let model = init_model(
            &ModelConfig {
                input_channels: 4,
                hidden: vec![8, 8],
                classes: 2,
                recurrent: true,
            },
            meta(13),
        );
        let mut rng = Xoshiro256pp::from_seed(99);
        let t_len = 10;
        let batch: Vec<Sample> = (0..3)
            .map(|i| Sample {
                tensor: SpikeTensor::new(
                    4,
                    t_len,
                    (0..4 * t_len).map(|_| rng.below(4) as u32).collect(),
                    1.0,
                )
                .unwrap(),
                label: i % 2,
            })
            .collect();

        let (_, analytic) = loss_and_grads(&model, &batch, GradMode::LinearProbe).unwrap();
        let params = flatten_params(&model).unwrap();
        let mut checked = 0usize;
        for i in 0..params.len() {
            let h = 1e-5 * (1.0 + params[i].abs());
            let mut plus = params.clone();
            plus[i] += h;
            let mut minus = params.clone();
            minus[i] -= h;
            let model_plus = with_params(&model, &plus).unwrap();
            let model_minus = with_params(&model, &minus).unwrap();
            let (lp, _) = loss_and_grads(&model_plus, &batch, GradMode::LinearProbe).unwrap();
            let (lm, _) = loss_and_grads(&model_minus, &batch, GradMode::LinearProbe).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[i] - fd).abs() / denom;
            assert!(
                rel < 1e-4,
                "param {i}: analytic {} vs fd {} (rel {rel})",
                analytic[i],
                fd
            );
            checked += 1;
        }
        assert!(checked > 100);
    }
}
