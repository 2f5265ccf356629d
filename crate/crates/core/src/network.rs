//! Desk-scale spiking network: adLIF layers with pre-layer normalization,
//! a time-averaged linear readout, inference, training and whole-model
//! adaptation.
//!
//! Layers carry per-neuron parameters in either form (see
//! [`crate::adapt::NeuronForm`]): freshly initialized and trained models use
//! the adLIF parameterization; after matrix-form adaptation the layer
//! simulates the general form. Synaptic weights and the readout are never
//! touched by adaptation.

mod train;

pub use train::{
    flatten_params, loss_and_grads, train, with_params, EarlyStopConfig, GradMode, TrainConfig,
    TrainResult,
};

use thiserror::Error;

use crate::adapt::{adapt_neuron, AdaptError, AdaptMethod, NeuronForm, ResolutionRatio};
use crate::neuron::AdLifParams;
use crate::normstats::{adapt_model_norms, NormError, NormStats, StatAdaptRule};
use crate::resample::{Sample, SpikeTensor};
use crate::rng::Xoshiro256pp;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("input has {got} channels, the first layer expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("layer {layer}: {what} has inconsistent dimensions")]
    BadShape { layer: usize, what: &'static str },
    #[error("recurrent weights must have a zero diagonal (layer {0})")]
    NonZeroDiagonal(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("samples must share one channel count and length")]
    RaggedDataset,
    #[error("label {label} outside the {classes} model classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("training requires adLIF-form neurons in every layer")]
    NotTrainable,
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Norm(#[from] NormError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

/// One spiking layer: pre-layer normalization, input weights, optional
/// zero-diagonal recurrent weights and per-neuron parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikingLayer {
    pub norm: NormStats<f64>,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    /// `out_dim x out_dim`, row-major, zero diagonal. Present only for the
    /// recurrent (RadLIF) variant.
    pub recurrent: Option<Vec<f64>>,
    pub neurons: Vec<NeuronForm<f64>>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl SpikingLayer {
    fn validate_shapes(&self, index: usize) -> Result<()> {
        if self.weights.len() != self.out_dim * self.in_dim {
            return Err(NetworkError::BadShape {
                layer: index,
                what: "weights",
            });
        }
        if self.neurons.len() != self.out_dim {
            return Err(NetworkError::BadShape {
                layer: index,
                what: "neurons",
            });
        }
        if self.norm.channels() != self.in_dim {
            return Err(NetworkError::BadShape {
                layer: index,
                what: "norm stats",
            });
        }
        if let Some(v) = &self.recurrent {
            if v.len() != self.out_dim * self.out_dim {
                return Err(NetworkError::BadShape {
                    layer: index,
                    what: "recurrent weights",
                });
            }
        }
        Ok(())
    }

    fn validate(&self, index: usize) -> Result<()> {
        self.validate_shapes(index)?;
        if let Some(v) = &self.recurrent {
            for j in 0..self.out_dim {
                if v[j * self.out_dim + j] != 0.0 {
                    return Err(NetworkError::NonZeroDiagonal(index));
                }
            }
        }
        Ok(())
    }
}

/// Non-spiking linear readout applied to time-averaged last-layer spikes.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    /// `classes x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub classes: usize,
}

/// Provenance carried with a model file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelMeta {
    /// Timestep duration the model currently expects.
    pub dt_ms: f64,
    /// Bin size of the data the model was trained on.
    pub bin_size: u32,
    /// Seed used for initialization/training.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<SpikingLayer>,
    pub readout: Readout,
    pub meta: ModelMeta,
}

impl NetworkModel {
    /// Shape consistency only; tolerates a nonzero recurrent diagonal so
    /// perturbed parameter vectors (finite differences) stay representable.
    pub(crate) fn validate_shapes(&self) -> Result<()> {
        self.validate_common(false)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_common(true)
    }

    fn validate_common(&self, strict: bool) -> Result<()> {
        let mut prev = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if strict {
                layer.validate(i)?;
            } else {
                layer.validate_shapes(i)?;
            }
            if let Some(prev_out) = prev {
                if layer.in_dim != prev_out {
                    return Err(NetworkError::BadShape {
                        layer: i,
                        what: "layer chaining",
                    });
                }
            }
            prev = Some(layer.out_dim);
        }
        if let Some(last) = self.layers.last() {
            if self.readout.in_dim != last.out_dim {
                return Err(NetworkError::BadShape {
                    layer: self.layers.len(),
                    what: "readout input",
                });
            }
        }
        if self.readout.weights.len() != self.readout.classes * self.readout.in_dim
            || self.readout.bias.len() != self.readout.classes
        {
            return Err(NetworkError::BadShape {
                layer: self.layers.len(),
                what: "readout",
            });
        }
        Ok(())
    }
}

/// Architecture description for a fresh model.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Adds zero-diagonal intra-layer recurrent weights (RadLIF).
    pub recurrent: bool,
}

/// Uniform weight-init half-width, `WEIGHT_INIT_GAIN / sqrt(fan_in)`. The
/// gain is chosen so that normalized unit-variance inputs drive initial
/// membranes into the threshold region; smaller gains leave the network
/// silent and the box surrogate passes no gradient at all.
const WEIGHT_INIT_GAIN: f64 = 3.0;

/// Initialization ranges for the neuron parameters: `alpha` uniform in
/// `[exp(-1/5), exp(-1/25)]`, `beta` in `[exp(-1/30), exp(-1/120)]`,
/// `a` in `[0, 1)`, `b` in `[0, 2]`; weights uniform
/// `+-WEIGHT_INIT_GAIN/sqrt(fan_in)`.
pub fn init_model(cfg: &ModelConfig, meta: ModelMeta) -> NetworkModel {
    let mut rng = Xoshiro256pp::from_seed(meta.seed);
    let alpha_range = ((-1.0f64 / 5.0).exp(), (-1.0f64 / 25.0).exp());
    let beta_range = ((-1.0f64 / 30.0).exp(), (-1.0f64 / 120.0).exp());
    let mut layers = Vec::with_capacity(cfg.hidden.len());
    let mut in_dim = cfg.input_channels;
    for &out_dim in &cfg.hidden {
        let bound = WEIGHT_INIT_GAIN / (in_dim as f64).sqrt();
        let weights: Vec<f64> = (0..out_dim * in_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        let recurrent = cfg.recurrent.then(|| {
            let bound = WEIGHT_INIT_GAIN / (out_dim as f64).sqrt();
            let mut v: Vec<f64> = (0..out_dim * out_dim)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            for j in 0..out_dim {
                v[j * out_dim + j] = 0.0;
            }
            v
        });
        let neurons = (0..out_dim)
            .map(|_| {
                let p = AdLifParams::new(
                    rng.uniform(alpha_range.0, alpha_range.1),
                    rng.uniform(beta_range.0, beta_range.1),
                    rng.uniform(0.0, 1.0 - 1e-9),
                    rng.uniform(0.0, 2.0),
                )
                .expect("init ranges are valid");
                NeuronForm::AdLif(p)
            })
            .collect();
        layers.push(SpikingLayer {
            norm: NormStats::unit(in_dim),
            weights,
            recurrent,
            neurons,
            in_dim,
            out_dim,
        });
        in_dim = out_dim;
    }
    let bound = 1.0 / (in_dim as f64).sqrt();
    // The readout sees time-averaged spike rates; the plain fan-in scale is
    // appropriate there.
    let readout = Readout {
        weights: (0..cfg.classes * in_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect(),
        bias: vec![0.0; cfg.classes],
        in_dim,
        classes: cfg.classes,
    };
    NetworkModel {
        layers,
        readout,
        meta,
    }
}

/// Per-layer activity recorded by [`forward`]: time-major spike trains and
/// membrane traces.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub scores: Vec<f64>,
    /// `layer_spikes[l][t * out_dim + j]`.
    pub layer_spikes: Vec<Vec<u8>>,
    /// `layer_membranes[l][t * out_dim + j]`, the pre-update membrane at
    /// each step (the potential that decided the spike).
    pub layer_membranes: Vec<Vec<f64>>,
}

/// Per-neuron simulation state used by the inference loop.
enum CellState {
    AdLif { u: f64, w: f64, p: AdLifParams<f64> },
    General { v: Vec<f64> },
}

/// Inference pass over one sample using stored normalization statistics.
/// Deterministic and independent of any batch context.
pub fn forward(model: &NetworkModel, x: &SpikeTensor) -> Result<ForwardOutput> {
    model.validate()?;
    let first = model.layers.first().ok_or(NetworkError::BadShape {
        layer: 0,
        what: "no layers",
    })?;
    if x.channels() != first.in_dim {
        return Err(NetworkError::ChannelMismatch {
            expected: first.in_dim,
            got: x.channels(),
        });
    }
    let t_len = x.timesteps();
    // Time-major activations flowing between layers.
    let mut current: Vec<f64> = (0..t_len)
        .flat_map(|t| (0..x.channels()).map(move |c| x.at(c, t) as f64))
        .collect();
    let mut layer_spikes = Vec::with_capacity(model.layers.len());
    let mut layer_membranes = Vec::with_capacity(model.layers.len());

    for layer in &model.layers {
        let c_in = layer.in_dim;
        let c_out = layer.out_dim;
        // Normalize with stored statistics.
        let inv_sigma: Vec<f64> = layer
            .norm
            .var
            .iter()
            .map(|v| 1.0 / (v + layer.norm.eps).sqrt())
            .collect();
        for t in 0..t_len {
            for c in 0..c_in {
                let idx = t * c_in + c;
                current[idx] =
                    layer.norm.gain[c] * (current[idx] - layer.norm.mu[c]) * inv_sigma[c]
                        + layer.norm.bias[c];
            }
        }

        let mut cells: Vec<CellState> = layer
            .neurons
            .iter()
            .map(|form| match form {
                NeuronForm::AdLif(p) => CellState::AdLif {
                    u: 0.0,
                    w: 0.0,
                    p: *p,
                },
                NeuronForm::General(g) => CellState::General {
                    v: vec![0.0; g.dim()],
                },
            })
            .collect();

        let mut spikes = vec![0u8; t_len * c_out];
        let mut membranes = vec![0.0; t_len * c_out];
        let mut spike_row = vec![0.0f64; c_out];
        for t in 0..t_len {
            // Spikes are decided by the pre-update state of this step and
            // feed both the recurrent drive and the reset.
            for (j, cell) in cells.iter().enumerate() {
                let (u, threshold) = match cell {
                    CellState::AdLif { u, p, .. } => (*u, p.threshold),
                    CellState::General { v } => {
                        let g = match &layer.neurons[j] {
                            NeuronForm::General(g) => g,
                            NeuronForm::AdLif(_) => unreachable!(),
                        };
                        (v[0], g.threshold())
                    }
                };
                let fired = u >= threshold;
                spike_row[j] = f64::from(fired);
                spikes[t * c_out + j] = u8::from(fired);
                membranes[t * c_out + j] = u;
            }
            for (j, cell) in cells.iter_mut().enumerate() {
                let row = &layer.weights[j * c_in..(j + 1) * c_in];
                let mut ff = 0.0;
                for c in 0..c_in {
                    ff += row[c] * current[t * c_in + c];
                }
                let mut rec = 0.0;
                if let Some(v) = &layer.recurrent {
                    let vrow = &v[j * c_out..(j + 1) * c_out];
                    for (k, s) in spike_row.iter().enumerate() {
                        rec += vrow[k] * s;
                    }
                }
                let s = spike_row[j];
                match cell {
                    CellState::AdLif { u, w, p } => {
                        let drive = ff + rec;
                        let u_next =
                            p.alpha * (*u - p.threshold * s) + (1.0 - p.alpha) * (drive - *w);
                        let w_next = p.a * *u + p.beta * *w + p.b * s;
                        *u = u_next;
                        *w = w_next;
                    }
                    CellState::General { v } => {
                        let g = match &layer.neurons[j] {
                            NeuronForm::General(g) => g,
                            NeuronForm::AdLif(_) => unreachable!(),
                        };
                        let n = g.dim();
                        let mut next = vec![0.0; n];
                        for i in 0..n {
                            let mut acc = 0.0;
                            for k in 0..n {
                                acc += g.transition()[(i, k)] * v[k];
                            }
                            acc += g.feedback()[(i, 0)] * s;
                            acc += g.input()[(i, 0)] * ff;
                            acc += g.recurrence()[(i, 0)] * rec;
                            next[i] = acc;
                        }
                        *v = next;
                    }
                }
            }
        }
        current = spikes.iter().map(|&s| f64::from(s)).collect();
        layer_spikes.push(spikes);
        layer_membranes.push(membranes);
    }

    // Readout: mean over time of the linear map of last-layer spikes.
    let last = model.layers.last().expect("validated nonempty");
    let c_out = last.out_dim;
    let mut mean_spikes = vec![0.0f64; c_out];
    if t_len > 0 {
        for t in 0..t_len {
            for j in 0..c_out {
                mean_spikes[j] += current[t * c_out + j];
            }
        }
        for m in &mut mean_spikes {
            *m /= t_len as f64;
        }
    }
    let mut scores = model.readout.bias.clone();
    for (k, score) in scores.iter_mut().enumerate() {
        let row = &model.readout.weights[k * c_out..(k + 1) * c_out];
        for j in 0..c_out {
            *score += row[j] * mean_spikes[j];
        }
    }
    Ok(ForwardOutput {
        scores,
        layer_spikes,
        layer_membranes,
    })
}

/// Classification accuracy; argmax ties break toward the lowest class index.
pub fn evaluate(model: &NetworkModel, dataset: &[Sample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let mut correct = 0usize;
    for sample in dataset {
        let out = forward(model, &sample.tensor)?;
        let pred = argmax_lowest(&out.scores);
        if pred == sample.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Mean cross-entropy of the inference scores over a dataset.
pub fn model_loss(model: &NetworkModel, dataset: &[Sample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    check_labels(dataset, model.readout.classes)?;
    let mut total = 0.0;
    for sample in dataset {
        let out = forward(model, &sample.tensor)?;
        total += cross_entropy(&out.scores, sample.label);
    }
    Ok(total / dataset.len() as f64)
}

pub(crate) fn check_labels(dataset: &[Sample], classes: usize) -> Result<()> {
    for s in dataset {
        if s.label >= classes {
            return Err(NetworkError::LabelOutOfRange {
                label: s.label,
                classes,
            });
        }
    }
    Ok(())
}

pub(crate) fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn cross_entropy(scores: &[f64], label: usize) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = scores.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    -(scores[label] - max - log_sum)
}

/// Adapts every neuron of the model for a resolution change and rewrites the
/// first normalization layer's statistics; weights, recurrent weights and
/// the readout are untouched. The stored timestep duration is rescaled.
pub fn adapt_model(
    model: &NetworkModel,
    method: AdaptMethod,
    r: &ResolutionRatio,
    rule: &StatAdaptRule,
) -> Result<NetworkModel> {
    let mut out = model.clone();
    for layer in &mut out.layers {
        for neuron in &mut layer.neurons {
            *neuron = adapt_neuron(neuron, method, r)?;
        }
    }
    let mut stats: Vec<&mut NormStats<f64>> = out.layers.iter_mut().map(|l| &mut l.norm).collect();
    adapt_model_norms(&mut stats, rule, r.rho::<f64>())?;
    out.meta.dt_ms *= r.rho::<f64>();
    Ok(out)
}
