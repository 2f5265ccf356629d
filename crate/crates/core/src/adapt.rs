//! Temporal-resolution adaptation of neuron parameters.
//!
//! Given a neuron trained at a source timestep duration and the ratio
//! `rho = dt_target / dt_source`, these methods rewrite the neuron's
//! dynamics matrices so that the state trajectory on target-resolution data
//! tracks the source trajectory, with no retraining:
//!
//! * **Integral** — treats the discrete dynamics as a zero-order-hold
//!   discretization of an underlying continuous system and re-discretizes:
//!   `T' = T^rho`, `K' = (T' - I)(T - I)^{-1} K` for each drive column `K`.
//!   Exact when the input is constant within coarse steps.
//! * **Euler** — first-order version: `T' = I + rho (T - I)`, `K' = rho K`.
//! * **Expectation** — matches expected state values at integer ratios:
//!   `T' = T^rho` with `K' = (sum_{j=1..rho} T^{rho-j}) K` for `rho >= 1`,
//!   and `K' = (sum_{j=1..1/rho} T'^{1/rho-j})^{-1} K` for `rho < 1`.
//! * **Time-constant** — the classical benchmark: rescales only the
//!   exponential-decay parameters, `alpha' = alpha^rho`, `beta' = beta^rho`;
//!   defined on the adLIF parameterization, where the timestep dependence is
//!   explicit.
//!
//! A ratio of exactly 1 is the identity for every method.

use thiserror::Error;

use crate::linalg::{LinalgError, Mat};
use crate::neuron::{adlif_to_general, AdLifParams, GeneralNeuron};
use crate::Real;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("(transition - I) is singular; the integral method does not apply: {0}")]
    ShiftedTransitionSingular(LinalgError),
    #[error("transition matrix has no real principal power: {0}")]
    NoRealPower(LinalgError),
    #[error("expectation requires integer ratio (rho or 1/rho integral), got {num}/{den}")]
    NonIntegerRatio { num: u64, den: u64 },
    #[error("geometric power sum is singular; the expectation method does not apply: {0}")]
    SingularGeomSum(LinalgError),
    #[error("time-constant requires explicit timestep dependence (adLIF parameter form)")]
    TimeConstantNeedsAdLif,
    #[error("ratio must be a positive rational")]
    InvalidRatio,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, AdaptError>;

/// The adaptation method to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdaptMethod {
    /// Keep parameters unchanged.
    None,
    Integral,
    Euler,
    Expectation,
    TimeConstant,
}

impl AdaptMethod {
    pub const ALL: [AdaptMethod; 5] = [
        AdaptMethod::None,
        AdaptMethod::Integral,
        AdaptMethod::Expectation,
        AdaptMethod::Euler,
        AdaptMethod::TimeConstant,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AdaptMethod::None => "none",
            AdaptMethod::Integral => "integral",
            AdaptMethod::Euler => "euler",
            AdaptMethod::Expectation => "expectation",
            AdaptMethod::TimeConstant => "time-const",
        }
    }
}

impl std::str::FromStr for AdaptMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AdaptMethod::None),
            "integral" => Ok(AdaptMethod::Integral),
            "euler" => Ok(AdaptMethod::Euler),
            "expectation" => Ok(AdaptMethod::Expectation),
            "timeconst" | "time-const" | "time-constant" => Ok(AdaptMethod::TimeConstant),
            other => Err(format!("unknown adaptation method '{other}'")),
        }
    }
}

/// Ratio of target to source timestep durations, kept as an exact reduced
/// rational so integrality checks and inverses are unambiguous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ResolutionRatio {
    num: u64,
    den: u64,
}

impl ResolutionRatio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(AdaptError::InvalidRatio);
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Ratio of two bin sizes: `dt_target / dt_source`.
    pub fn from_bins(bin_source: u64, bin_target: u64) -> Result<Self> {
        Self::new(bin_target, bin_source)
    }

    /// Parses `"P/Q"`, an integer, or a plain decimal such as `0.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some((p, q)) = text.split_once('/') {
            let num: u64 = p.trim().parse().map_err(|_| AdaptError::InvalidRatio)?;
            let den: u64 = q.trim().parse().map_err(|_| AdaptError::InvalidRatio)?;
            return Self::new(num, den);
        }
        if let Some((int_part, frac_part)) = text.split_once('.') {
            if frac_part.len() > 12 || frac_part.chars().any(|c| !c.is_ascii_digit()) {
                return Err(AdaptError::InvalidRatio);
            }
            let scale = 10u64.pow(frac_part.len() as u32);
            let int: u64 = if int_part.is_empty() {
                0
            } else {
                int_part.parse().map_err(|_| AdaptError::InvalidRatio)?
            };
            let frac: u64 = if frac_part.is_empty() {
                0
            } else {
                frac_part.parse().map_err(|_| AdaptError::InvalidRatio)?
            };
            let num = int
                .checked_mul(scale)
                .and_then(|v| v.checked_add(frac))
                .ok_or(AdaptError::InvalidRatio)?;
            return Self::new(num, scale);
        }
        let num: u64 = text.parse().map_err(|_| AdaptError::InvalidRatio)?;
        Self::new(num, 1)
    }

    pub fn rho<T: Real>(&self) -> T {
        T::of(self.num as f64) / T::of(self.den as f64)
    }

    pub fn rho_bar<T: Real>(&self) -> T {
        T::of(self.den as f64) / T::of(self.num as f64)
    }

    pub fn inverse(&self) -> Self {
        Self {
            num: self.den,
            den: self.num,
        }
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// `Some(rho)` when the ratio is a positive integer.
    pub fn as_integer(&self) -> Option<u64> {
        (self.den == 1).then_some(self.num)
    }

    /// `Some(1/rho)` when the reciprocal is a positive integer.
    pub fn reciprocal_integer(&self) -> Option<u64> {
        (self.num == 1).then_some(self.den)
    }

    /// Exact product of two ratios.
    pub fn times(&self, other: &Self) -> Result<Self> {
        let num = (self.num as u128) * (other.num as u128);
        let den = (self.den as u128) * (other.den as u128);
        let g = gcd128(num, den);
        let (num, den) = (num / g, den / g);
        if num > u64::MAX as u128 || den > u64::MAX as u128 {
            return Err(AdaptError::InvalidRatio);
        }
        Self::new(num as u64, den as u64)
    }
}

impl std::fmt::Display for ResolutionRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

fn gcd128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Neuron parameters in whichever form they are carried: the adLIF
/// parameterization keeps the explicit timestep dependence needed by the
/// time-constant method; the general matrix form is what the other methods
/// produce.
#[derive(Clone, Debug, PartialEq)]
pub enum NeuronForm<T> {
    AdLif(AdLifParams<T>),
    General(GeneralNeuron<T>),
}

impl<T: Real> NeuronForm<T> {
    /// View in the general matrix form (mapping the adLIF case).
    pub fn to_general(&self) -> GeneralNeuron<T> {
        match self {
            NeuronForm::AdLif(p) => adlif_to_general(p),
            NeuronForm::General(g) => g.clone(),
        }
    }
}

/// Rebuilds the three drive columns with the shared left factor applied:
/// `K' = M K` for `K` in feedback, input, recurrence.
fn map_columns<T: Real>(
    nrn: &GeneralNeuron<T>,
    transition: Mat<T>,
    left: &Mat<T>,
) -> GeneralNeuron<T> {
    GeneralNeuron::new(
        transition,
        left.matmul(nrn.feedback()),
        left.matmul(nrn.input()),
        left.matmul(nrn.recurrence()),
        nrn.threshold(),
    )
    .expect("dimensions preserved")
}

/// Integral adaptation: `T' = T^rho`, `K' = (T' - I)(T - I)^{-1} K`.
pub fn adapt_integral<T: Real>(
    nrn: &GeneralNeuron<T>,
    r: &ResolutionRatio,
) -> Result<GeneralNeuron<T>> {
    if r.is_one() {
        return Ok(nrn.clone());
    }
    let n = nrn.dim();
    let identity = Mat::identity(n);
    let transition = nrn
        .transition()
        .pow_frac(r.rho())
        .map_err(AdaptError::NoRealPower)?;
    let shifted_inv = nrn
        .transition()
        .sub(&identity)
        .inv()
        .map_err(AdaptError::ShiftedTransitionSingular)?;
    let left = transition.sub(&identity).matmul(&shifted_inv);
    Ok(map_columns(nrn, transition, &left))
}

/// Euler adaptation: `T' = I + rho (T - I)`, `K' = rho K`. Entries may leave
/// the stable range for large ratios; they are intentionally not clamped.
pub fn adapt_euler<T: Real>(nrn: &GeneralNeuron<T>, r: &ResolutionRatio) -> GeneralNeuron<T> {
    if r.is_one() {
        return nrn.clone();
    }
    let n = nrn.dim();
    let rho: T = r.rho();
    let identity = Mat::identity(n);
    let transition = identity.add(&nrn.transition().sub(&identity).scale(rho));
    GeneralNeuron::new(
        transition,
        nrn.feedback().scale(rho),
        nrn.input().scale(rho),
        nrn.recurrence().scale(rho),
        nrn.threshold(),
    )
    .expect("dimensions preserved")
}

/// Expectation adaptation for integer `rho` or integer `1/rho`.
pub fn adapt_expectation<T: Real>(
    nrn: &GeneralNeuron<T>,
    r: &ResolutionRatio,
) -> Result<GeneralNeuron<T>> {
    if r.is_one() {
        return Ok(nrn.clone());
    }
    if let Some(m) = r.as_integer() {
        let transition = nrn.transition().pow_int(m)?;
        let left = nrn.transition().geom_sum(m)?;
        Ok(map_columns(nrn, transition, &left))
    } else if let Some(m) = r.reciprocal_integer() {
        let transition = nrn
            .transition()
            .pow_frac(r.rho())
            .map_err(AdaptError::NoRealPower)?;
        let left = transition
            .geom_sum(m)?
            .inv()
            .map_err(AdaptError::SingularGeomSum)?;
        Ok(map_columns(nrn, transition, &left))
    } else {
        Err(AdaptError::NonIntegerRatio {
            num: r.num,
            den: r.den,
        })
    }
}

/// Time-constant benchmark: `alpha' = alpha^rho`, `beta' = beta^rho`;
/// `a`, `b` and the threshold stay as they are. Entries of the derived
/// matrix form that are linear in `alpha` follow automatically when the
/// general form is rebuilt from the adapted parameters.
pub fn adapt_time_constant<T: Real>(p: &AdLifParams<T>, r: &ResolutionRatio) -> AdLifParams<T> {
    if r.is_one() {
        return *p;
    }
    let rho: T = r.rho();
    AdLifParams {
        alpha: p.alpha.powf(rho),
        beta: p.beta.powf(rho),
        a: p.a,
        b: p.b,
        threshold: p.threshold,
    }
}

/// Dispatches a neuron in either form to the requested method.
///
/// The time-constant method needs the adLIF form (its rule is defined on
/// parameters with explicit timestep dependence) and fails on a raw general
/// neuron. The matrix methods accept both forms and return the general form;
/// `None` returns the input unchanged.
pub fn adapt_neuron<T: Real>(
    nrn: &NeuronForm<T>,
    method: AdaptMethod,
    r: &ResolutionRatio,
) -> Result<NeuronForm<T>> {
    match method {
        AdaptMethod::None => Ok(nrn.clone()),
        AdaptMethod::Integral => Ok(NeuronForm::General(adapt_integral(&nrn.to_general(), r)?)),
        AdaptMethod::Euler => Ok(NeuronForm::General(adapt_euler(&nrn.to_general(), r))),
        AdaptMethod::Expectation => Ok(NeuronForm::General(adapt_expectation(
            &nrn.to_general(),
            r,
        )?)),
        AdaptMethod::TimeConstant => match nrn {
            NeuronForm::AdLif(p) => Ok(NeuronForm::AdLif(adapt_time_constant(p, r))),
            NeuronForm::General(_) => Err(AdaptError::TimeConstantNeedsAdLif),
        },
    }
}
