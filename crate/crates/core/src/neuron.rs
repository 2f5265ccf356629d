//! Spiking neuron models.
//!
//! Two equivalent views of the same neuron:
//!
//! * [`AdLifParams`] — the adaptive leaky integrate-and-fire neuron with
//!   membrane decay `alpha`, adaptation decay `beta`, coupling `a`,
//!   spike-triggered adaptation `b` and firing threshold;
//! * [`GeneralNeuron`] — the n-dimensional linear-state form
//!   `v[t+1] = T v[t] + F s[t] + I ff[t] + R rec[t]`, `s[t] = 1` iff the
//!   first state component is at or above the threshold.
//!
//! [`adlif_to_general`] embeds the former into the latter losslessly; the
//! adaptation methods operate on the general form.

use thiserror::Error;

use crate::linalg::Mat;
use crate::Real;

#[derive(Debug, Error)]
pub enum NeuronError {
    #[error("parameter {name} = {value} outside {range}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("threshold must not be NaN")]
    ThresholdNan,
    #[error("state/matrix dimensions inconsistent: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("drive must be finite")]
    NonFiniteDrive,
}

pub type Result<T> = std::result::Result<T, NeuronError>;

/// Adaptive LIF parameters. Ranges are enforced on construction:
/// `alpha, beta` in (0, 1), `a` in [0, 1), `b` in [0, 2].
///
/// A threshold of `+inf` disables spiking, which turns the neuron into a
/// plain linear system (useful for linearity checks and gradient probes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdLifParams<T> {
    pub alpha: T,
    pub beta: T,
    pub a: T,
    pub b: T,
    pub threshold: T,
}

impl<T: Real> AdLifParams<T> {
    /// Builds a parameter set with the default threshold of 1.
    pub fn new(alpha: T, beta: T, a: T, b: T) -> Result<Self> {
        Self::with_threshold(alpha, beta, a, b, T::one())
    }

    pub fn with_threshold(alpha: T, beta: T, a: T, b: T, threshold: T) -> Result<Self> {
        let check = |name: &'static str, value: T, ok: bool, range: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(NeuronError::ParamOutOfRange {
                    name,
                    value: value.to_f64().unwrap_or(f64::NAN),
                    range,
                })
            }
        };
        check(
            "alpha",
            alpha,
            alpha > T::zero() && alpha < T::one(),
            "(0, 1)",
        )?;
        check("beta", beta, beta > T::zero() && beta < T::one(), "(0, 1)")?;
        check("a", a, a >= T::zero() && a < T::one(), "[0, 1)")?;
        check("b", b, b >= T::zero() && b <= T::of(2.0), "[0, 2]")?;
        if threshold.is_nan() {
            return Err(NeuronError::ThresholdNan);
        }
        Ok(Self {
            alpha,
            beta,
            a,
            b,
            threshold,
        })
    }
}

/// General n-dimensional linear-state spiking neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralNeuron<T> {
    /// n x n state-transition matrix.
    transition: Mat<T>,
    /// n x 1 self-feedback column applied to the neuron's own spike
    /// (carries the reset for the adLIF case).
    feedback: Mat<T>,
    /// n x 1 column applied to the feedforward drive.
    input: Mat<T>,
    /// n x 1 column applied to the recurrent (same-layer) drive.
    recurrence: Mat<T>,
    threshold: T,
}

impl<T: Real> GeneralNeuron<T> {
    pub fn new(
        transition: Mat<T>,
        feedback: Mat<T>,
        input: Mat<T>,
        recurrence: Mat<T>,
        threshold: T,
    ) -> Result<Self> {
        let n = transition.rows();
        if !transition.is_square() {
            return Err(NeuronError::DimMismatch {
                expected: n,
                got: transition.cols(),
            });
        }
        for col in [&feedback, &input, &recurrence] {
            if col.rows() != n || col.cols() != 1 {
                return Err(NeuronError::DimMismatch {
                    expected: n,
                    got: col.rows(),
                });
            }
        }
        if threshold.is_nan() {
            return Err(NeuronError::ThresholdNan);
        }
        Ok(Self {
            transition,
            feedback,
            input,
            recurrence,
            threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.transition.rows()
    }

    pub fn transition(&self) -> &Mat<T> {
        &self.transition
    }

    pub fn feedback(&self) -> &Mat<T> {
        &self.feedback
    }

    pub fn input(&self) -> &Mat<T> {
        &self.input
    }

    pub fn recurrence(&self) -> &Mat<T> {
        &self.recurrence
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    /// One update. The spike is decided by the pre-update state (first
    /// component at or above threshold) and then feeds the update itself:
    /// `v' = T v + F s + I ff + R rec`.
    pub fn step(&self, state: &NeuronState<T>, ff: T, rec: T) -> Result<(NeuronState<T>, bool)> {
        let n = self.dim();
        if state.dim() != n {
            return Err(NeuronError::DimMismatch {
                expected: n,
                got: state.dim(),
            });
        }
        if !ff.is_finite() || !rec.is_finite() {
            return Err(NeuronError::NonFiniteDrive);
        }
        let spike = state.values[0] >= self.threshold;
        let s = if spike { T::one() } else { T::zero() };
        let mut next = vec![T::zero(); n];
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..n {
                acc += self.transition[(i, j)] * state.values[j];
            }
            acc += self.feedback[(i, 0)] * s;
            acc += self.input[(i, 0)] * ff;
            acc += self.recurrence[(i, 0)] * rec;
            next[i] = acc;
        }
        Ok((NeuronState { values: next }, spike))
    }

    /// Runs the neuron over a drive sequence with zero recurrent drive,
    /// starting from `v0` (zero state when `None`). Returns one state and
    /// one spike per input sample: `states[t]` is the post-update state and
    /// `spikes[t]` the spike emitted from the pre-update state at step `t`.
    pub fn simulate(&self, input: &[T], v0: Option<NeuronState<T>>) -> Result<SimOutput<T>> {
        let mut state = match v0 {
            Some(s) => {
                if s.dim() != self.dim() {
                    return Err(NeuronError::DimMismatch {
                        expected: self.dim(),
                        got: s.dim(),
                    });
                }
                s
            }
            None => NeuronState::zeros(self.dim()),
        };
        let mut states = Vec::with_capacity(input.len());
        let mut spikes = Vec::with_capacity(input.len());
        for &drive in input {
            let (next, fired) = self.step(&state, drive, T::zero())?;
            spikes.push(u8::from(fired));
            states.push(next.clone());
            state = next;
        }
        Ok(SimOutput { states, spikes })
    }
}

/// Neuron state vector; for the adLIF case `[membrane, adaptation]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronState<T> {
    values: Vec<T>,
}

impl<T: Real> NeuronState<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(NeuronError::NonFiniteDrive);
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![T::zero(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// First state component (the membrane potential for adLIF).
    pub fn membrane(&self) -> T {
        self.values[0]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Simulation record: per-step post-update states and emitted spikes.
#[derive(Clone, Debug)]
pub struct SimOutput<T> {
    pub states: Vec<NeuronState<T>>,
    pub spikes: Vec<u8>,
}

impl<T: Real> SimOutput<T> {
    /// Membrane trace: first component of every state.
    pub fn membrane_trace(&self) -> Vec<T> {
        self.states.iter().map(|s| s.membrane()).collect()
    }
}

/// Lossless embedding of the adLIF neuron into the general form:
///
/// ```text
/// T = [alpha, -(1-alpha); a, beta]   F = [-alpha*theta; b]
/// I = R = [1-alpha; 0]
/// ```
pub fn adlif_to_general<T: Real>(p: &AdLifParams<T>) -> GeneralNeuron<T> {
    let one = T::one();
    let transition = Mat::from_vec(2, 2, vec![p.alpha, -(one - p.alpha), p.a, p.beta])
        .expect("finite by construction");
    // The reset column stays finite even with spiking disabled: the spike
    // indicator is identically zero then, so the product never occurs.
    let reset = if p.threshold.is_finite() {
        -p.alpha * p.threshold
    } else {
        T::zero()
    };
    let feedback = Mat::column(&[reset, p.b]).expect("finite");
    let drive_col = Mat::column(&[one - p.alpha, T::zero()]).expect("finite");
    GeneralNeuron {
        transition,
        feedback,
        input: drive_col.clone(),
        recurrence: drive_col,
        threshold: p.threshold,
    }
}
