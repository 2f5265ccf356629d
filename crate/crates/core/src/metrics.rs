//! Trace-matching quality metrics.
//!
//! Compares a reference membrane trace against a candidate produced at a
//! different resolution. [`subsample`] aligns lengths by taking the last
//! element of each bin of the finer trace; [`q_metrics`] then reports
//!
//! * `Q1 = 1 - mse / var(reference)` — normalized relative square error,
//!   population variance (1/N) to pair with the 1/N mean square error;
//! * `Q2` — the Pearson correlation coefficient, sample-normalized (1/(N-1))
//!   so it is the textbook quantity.
//!
//! Both equal 1 on a perfect match; `Q1 <= 1` always, `|Q2| <= 1`.

use thiserror::Error;

use crate::Real;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace length {len} is not divisible by the subsample factor {factor}")]
    NotDivisible { len: usize, factor: usize },
    #[error("subsample factor must be at least 1")]
    ZeroFactor,
    #[error("traces have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooShort(usize),
    #[error("degenerate reference: variance is zero")]
    DegenerateReference,
    #[error("degenerate candidate: correlation undefined (Q1 = {q1})")]
    DegenerateCandidate { q1: f64 },
    #[error("trace pair lengths {fine} and {coarse} do not satisfy fine = factor * coarse")]
    InconsistentPair { fine: usize, coarse: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Every `factor`-th element, one-based — the last element of each
/// non-overlapping bin. Requires the length to be a multiple of `factor`.
pub fn subsample<T: Real>(fine: &[T], factor: usize) -> Result<Vec<T>> {
    if factor == 0 {
        return Err(MetricsError::ZeroFactor);
    }
    if fine.len() % factor != 0 {
        return Err(MetricsError::NotDivisible {
            len: fine.len(),
            factor,
        });
    }
    Ok(fine
        .iter()
        .skip(factor - 1)
        .step_by(factor)
        .copied()
        .collect())
}

/// The two quality scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QScores<T> {
    pub q1: T,
    pub q2: T,
}

/// Computes `(Q1, Q2)` between equal-length traces.
///
/// A zero-variance reference is an error outright; a zero-variance candidate
/// leaves Q2 undefined and reports the error with the still-valid Q1 inside.
pub fn q_metrics<T: Real>(reference: &[T], candidate: &[T]) -> Result<QScores<T>> {
    if reference.len() != candidate.len() {
        return Err(MetricsError::LengthMismatch(
            reference.len(),
            candidate.len(),
        ));
    }
    let n = reference.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    let nf = T::of(n as f64);
    let mean = |xs: &[T]| xs.iter().fold(T::zero(), |acc, &x| acc + x) / nf;
    let ref_mean = mean(reference);
    let cand_mean = mean(candidate);

    let mut mse = T::zero();
    let mut ref_ss = T::zero();
    let mut cand_ss = T::zero();
    let mut cross = T::zero();
    for (&r, &c) in reference.iter().zip(candidate) {
        let d = r - c;
        mse += d * d;
        let dr = r - ref_mean;
        let dc = c - cand_mean;
        ref_ss += dr * dr;
        cand_ss += dc * dc;
        cross += dr * dc;
    }
    mse /= nf;
    let ref_var_pop = ref_ss / nf;
    if ref_var_pop <= T::zero() {
        return Err(MetricsError::DegenerateReference);
    }
    let q1 = T::one() - mse / ref_var_pop;
    if cand_ss <= T::zero() {
        return Err(MetricsError::DegenerateCandidate {
            q1: q1.to_f64().unwrap_or(f64::NAN),
        });
    }
    // Sample normalization (1/(N-1)) cancels between covariance and the two
    // standard deviations.
    let q2 = cross / (ref_ss * cand_ss).sqrt();
    Ok(QScores { q1, q2 })
}

/// A fine/coarse trace pair with a consistent integer length ratio.
#[derive(Clone, Debug)]
pub struct TracePair<T> {
    fine: Vec<T>,
    coarse: Vec<T>,
    factor: usize,
}

impl<T: Real> TracePair<T> {
    pub fn new(fine: Vec<T>, coarse: Vec<T>, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(MetricsError::ZeroFactor);
        }
        if fine.len() != coarse.len() * factor {
            return Err(MetricsError::InconsistentPair {
                fine: fine.len(),
                coarse: coarse.len(),
            });
        }
        Ok(Self {
            fine,
            coarse,
            factor,
        })
    }

    /// Scores the coarse trace against the subsampled fine reference.
    pub fn score_against_fine_reference(&self) -> Result<QScores<T>> {
        let reference = subsample(&self.fine, self.factor)?;
        q_metrics(&reference, &self.coarse)
    }

    /// Scores the subsampled fine trace against the coarse reference.
    pub fn score_against_coarse_reference(&self) -> Result<QScores<T>> {
        let candidate = subsample(&self.fine, self.factor)?;
        q_metrics(&self.coarse, &candidate)
    }
}
