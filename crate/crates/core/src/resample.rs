//! Temporal transforms on spike-count sequences.
//!
//! Down-transforms coarsen the time axis by an integer factor per channel:
//! sum-binning (non-overlapping window sums), its binarized variant, and
//! max-pooling. Up-transforms stretch it: zero-padding before each element
//! and element repetition. Counts stay integers throughout; the timestep
//! duration is rescaled to match.

use thiserror::Error;

use crate::Real;

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("resample factor must be at least 1")]
    ZeroFactor,
    #[error("spike count overflow while summing bin")]
    CountOverflow,
    #[error("dataset channel counts differ: {0} vs {1}")]
    MixedChannels(usize, usize),
    #[error("counts length {len} does not match {channels} channels x {timesteps} timesteps")]
    ShapeMismatch {
        len: usize,
        channels: usize,
        timesteps: usize,
    },
    #[error("timestep duration must be positive")]
    NonPositiveDt,
}

pub type Result<T> = std::result::Result<T, ResampleError>;

/// Integer spike counts on a regular time grid, channel-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor {
    channels: usize,
    timesteps: usize,
    counts: Vec<u32>,
    dt_ms: f64,
}

impl SpikeTensor {
    pub fn new(channels: usize, timesteps: usize, counts: Vec<u32>, dt_ms: f64) -> Result<Self> {
        if counts.len() != channels * timesteps {
            return Err(ResampleError::ShapeMismatch {
                len: counts.len(),
                channels,
                timesteps,
            });
        }
        if dt_ms <= 0.0 || dt_ms.is_nan() {
            return Err(ResampleError::NonPositiveDt);
        }
        Ok(Self {
            channels,
            timesteps,
            counts,
            dt_ms,
        })
    }

    pub fn zeros(channels: usize, timesteps: usize, dt_ms: f64) -> Result<Self> {
        Self::new(channels, timesteps, vec![0; channels * timesteps], dt_ms)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn channel(&self, c: usize) -> &[u32] {
        &self.counts[c * self.timesteps..(c + 1) * self.timesteps]
    }

    pub fn at(&self, c: usize, t: usize) -> u32 {
        self.counts[c * self.timesteps + t]
    }

    pub fn set(&mut self, c: usize, t: usize, v: u32) {
        self.counts[c * self.timesteps + t] = v;
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// The temporal transform to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResampleKind {
    /// Non-overlapping window sums; coarsens by `factor`.
    SumBin,
    /// Indicator of the window sum; coarsens by `factor`, outputs are 0/1.
    BinarySumBin,
    /// Window maxima; coarsens by `factor`.
    MaxPool,
    /// `factor - 1` zeros before each element; refines by `factor`.
    PadZeros,
    /// Each element repeated `factor` times; refines by `factor`.
    RepeatElems,
}

impl ResampleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ResampleKind::SumBin => "sumbin",
            ResampleKind::BinarySumBin => "binary-sumbin",
            ResampleKind::MaxPool => "maxpool",
            ResampleKind::PadZeros => "padzeros",
            ResampleKind::RepeatElems => "repeat",
        }
    }
}

impl std::str::FromStr for ResampleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sumbin" | "sum-bin" => Ok(ResampleKind::SumBin),
            "binary-sumbin" | "binarysumbin" => Ok(ResampleKind::BinarySumBin),
            "maxpool" | "max-pool" => Ok(ResampleKind::MaxPool),
            "padzeros" | "pad-zeros" => Ok(ResampleKind::PadZeros),
            "repeat" | "repeat-elems" => Ok(ResampleKind::RepeatElems),
            other => Err(format!("unknown resample kind '{other}'")),
        }
    }
}

/// Applies a temporal transform per channel.
///
/// Down-transforms drop a trailing remainder when the length is not a
/// multiple of `factor` (floor semantics); up-transforms multiply the length
/// by `factor`. The timestep duration scales by `factor` or `1/factor`
/// accordingly.
pub fn resample(x: &SpikeTensor, kind: ResampleKind, factor: usize) -> Result<SpikeTensor> {
    if factor == 0 {
        return Err(ResampleError::ZeroFactor);
    }
    let down = matches!(
        kind,
        ResampleKind::SumBin | ResampleKind::BinarySumBin | ResampleKind::MaxPool
    );
    let (out_len, new_dt) = if down {
        (x.timesteps / factor, x.dt_ms * factor as f64)
    } else {
        (x.timesteps * factor, x.dt_ms / factor as f64)
    };
    let mut out = SpikeTensor::zeros(x.channels, out_len, new_dt)?;
    for c in 0..x.channels {
        let src = x.channel(c);
        match kind {
            ResampleKind::SumBin => {
                for (m, window) in src.chunks_exact(factor).enumerate() {
                    let mut acc: u32 = 0;
                    for &v in window {
                        acc = acc.checked_add(v).ok_or(ResampleError::CountOverflow)?;
                    }
                    out.set(c, m, acc);
                }
            }
            ResampleKind::BinarySumBin => {
                for (m, window) in src.chunks_exact(factor).enumerate() {
                    let any = window.iter().any(|&v| v > 0);
                    out.set(c, m, u32::from(any));
                }
            }
            ResampleKind::MaxPool => {
                for (m, window) in src.chunks_exact(factor).enumerate() {
                    out.set(c, m, window.iter().copied().max().unwrap_or(0));
                }
            }
            ResampleKind::PadZeros => {
                for (t, &v) in src.iter().enumerate() {
                    out.set(c, t * factor + factor - 1, v);
                }
            }
            ResampleKind::RepeatElems => {
                for (t, &v) in src.iter().enumerate() {
                    for k in 0..factor {
                        out.set(c, t * factor + k, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A labelled spike tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tensor: SpikeTensor,
    pub label: usize,
}

/// Applies [`resample`] to every sample, preserving order and labels.
/// Requires a uniform channel count across the dataset.
pub fn resample_dataset(
    dataset: &[Sample],
    kind: ResampleKind,
    factor: usize,
) -> Result<Vec<Sample>> {
    if let Some(first) = dataset.first() {
        let channels = first.tensor.channels();
        for s in dataset {
            if s.tensor.channels() != channels {
                return Err(ResampleError::MixedChannels(channels, s.tensor.channels()));
            }
        }
    }
    dataset
        .iter()
        .map(|s| {
            Ok(Sample {
                tensor: resample(&s.tensor, kind, factor)?,
                label: s.label,
            })
        })
        .collect()
}

/// Non-overlapping window sums over a real-valued sequence (the sum-binning
/// transform applied to an analog signal); trailing remainder dropped.
pub fn sum_bin_real<T: Real>(xs: &[T], factor: usize) -> Vec<T> {
    assert!(factor >= 1, "factor must be at least 1");
    xs.chunks_exact(factor)
        .map(|w| w.iter().fold(T::zero(), |acc, &v| acc + v))
        .collect()
}
