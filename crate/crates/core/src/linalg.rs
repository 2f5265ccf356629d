//! Dense real-matrix algebra for small square matrices (n up to ~8).
//!
//! Provides exactly what the adaptation methods need: integer powers,
//! inverses, real fractional powers and the geometric power sum
//! `I + A + … + A^{m-1}`. Fractional powers use a complex eigenvalue
//! decomposition with the principal branch and real-part extraction; this is
//! adequate for the neuron state matrices in scope (eigenvalues away from
//! the closed negative real axis) and deliberately does not attempt the
//! general dense case that a Schur–Padé implementation would cover.

use num_complex::Complex;
use thiserror::Error;

use crate::Real;

/// Errors from the matrix operations.
#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimMismatch(usize, usize, usize, usize),
    #[error("singular matrix: pivot {pivot:.3e} below tolerance {tol:.3e}")]
    Singular { pivot: f64, tol: f64 },
    #[error(
        "no real principal power: eigenvalue {re:.6e}{im:+.6e}i on the closed negative real axis"
    )]
    NoRealPrincipalPower { re: f64, im: f64 },
    #[error(
        "ill-conditioned eigenbasis: condition estimate {cond:.3e}, imaginary residue {residue:.3e}"
    )]
    IllConditionedEigenbasis { cond: f64, residue: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,
    #[error("fractional power exponent must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("geometric power sum needs at least one term")]
    EmptyGeomSum,
    #[error("matrix entries must be finite")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    /// Builds a matrix from row-major data. Fails on a size mismatch or
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimMismatch(rows, cols, data.len(), 1));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::DimMismatch(r, c, r, 0));
        }
        let data = rows.iter().flat_map(|row| row.iter().copied()).collect();
        Self::from_vec(r, c, data)
    }

    /// Single-column matrix from a slice.
    pub fn column(entries: &[T]) -> Result<Self> {
        Self::from_vec(entries.len(), 1, entries.to_vec())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Largest absolute entry; zero for an empty matrix.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += aik * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, k: T) -> Self {
        let mut out = self.clone();
        for x in &mut out.data {
            *x *= k;
        }
        out
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Self {
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Nonnegative integer power by repeated multiplication; `k = 0` yields
    /// the identity.
    pub fn pow_int(&self, k: u64) -> Result<Self> {
        let n = self.require_square()?;
        let mut out = Self::identity(n);
        for _ in 0..k {
            out = out.matmul(self);
        }
        Ok(out)
    }

    /// Inverse by Gauss–Jordan elimination with partial pivoting.
    ///
    /// A pivot below `1e-12` relative to the largest input entry reports the
    /// matrix as singular.
    pub fn inv(&self) -> Result<Self> {
        let n = self.require_square()?;
        let scale = self.max_abs().max(T::min_positive_value());
        let tol = scale * singular_tol::<T>();
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let (pivot_row, pivot_val) =
                (col..n)
                    .map(|r| (r, a[(r, col)].abs()))
                    .fold(
                        (col, T::zero()),
                        |best, cur| {
                            if cur.1 > best.1 {
                                cur
                            } else {
                                best
                            }
                        },
                    );
            if pivot_val < tol {
                return Err(LinalgError::Singular {
                    pivot: pivot_val.to_f64().unwrap_or(0.0),
                    tol: tol.to_f64().unwrap_or(0.0),
                });
            }
            if pivot_row != col {
                for j in 0..n {
                    a.data.swap(pivot_row * n + j, col * n + j);
                    inv.data.swap(pivot_row * n + j, col * n + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let ac = a[(col, j)];
                    let ic = inv[(col, j)];
                    a[(r, j)] -= factor * ac;
                    inv[(r, j)] -= factor * ic;
                }
            }
        }
        Ok(inv)
    }

    /// Geometric power sum `sum_{j=1..m} A^{m-j} = A^{m-1} + … + A + I`.
    pub fn geom_sum(&self, m: u64) -> Result<Self> {
        let n = self.require_square()?;
        if m == 0 {
            return Err(LinalgError::EmptyGeomSum);
        }
        let mut out = Self::identity(n);
        for _ in 1..m {
            out = out.matmul(self).add(&Self::identity(n));
        }
        Ok(out)
    }

    /// Principal real fractional power `A^p` for `p > 0`.
    ///
    /// Computed through the complex eigenvalue decomposition with the
    /// principal branch of the logarithm; the result is reconstructed in
    /// complex arithmetic and the real part is returned after checking that
    /// the imaginary residue is negligible. Any eigenvalue on the closed
    /// negative real axis means no real principal power exists and is
    /// reported as an error, as is an eigenvector basis too ill-conditioned
    /// to trust.
    pub fn pow_frac(&self, p: T) -> Result<Self> {
        let n = self.require_square()?;
        if p <= T::zero() || !p.is_finite() {
            return Err(LinalgError::NonPositivePower(
                p.to_f64().unwrap_or(f64::NAN),
            ));
        }
        if n == 0 {
            return Ok(self.clone());
        }
        let scale = self.max_abs().max(T::min_positive_value());
        match n {
            1 => {
                let lambda = self[(0, 0)];
                check_negative_axis(Complex::new(lambda, T::zero()), scale)?;
                Self::from_vec(1, 1, vec![lambda.powf(p)])
            }
            2 => self.pow_frac_2x2(p, scale),
            _ => self.pow_frac_eigen(p, scale),
        }
    }

    /// 2x2 analytic-function evaluation `f(A) = f(l1) I + f[l1,l2] (A - l1 I)`
    /// using the Newton divided difference of the scalar power. Valid for
    /// repeated eigenvalues too and avoids an explicit eigenvector basis.
    fn pow_frac_2x2(&self, p: T, scale: T) -> Result<Self> {
        let (l1, l2) = eig2(self[(0, 0)], self[(0, 1)], self[(1, 0)], self[(1, 1)]);
        check_negative_axis(l1, scale)?;
        check_negative_axis(l2, scale)?;
        let f1 = cpow(l1, p);
        let f2 = cpow(l2, p);
        let gap = (l1 - l2).norm();
        let dd = if gap <= T::of(1e-5) * scale {
            // Near-confluent pair: divided difference by the derivative at
            // the midpoint, accurate to O(gap^2).
            let mid = (l1 + l2) * half::<T>();
            cpow(mid, p - T::one()) * p
        } else {
            (f1 - f2) / (l1 - l2)
        };
        let mut out = [[Complex::new(T::zero(), T::zero()); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let aij = Complex::new(self[(i, j)], T::zero());
                let shifted = if i == j { aij - l1 } else { aij };
                out[i][j] = dd * shifted;
                if i == j {
                    out[i][j] += f1;
                }
            }
        }
        let cond = ((l1.norm() + l2.norm()) / gap.max(T::min_positive_value()))
            .to_f64()
            .unwrap_or(f64::INFINITY);
        realize(2, &[out[0][0], out[0][1], out[1][0], out[1][1]], cond)
    }

    /// General small-n path: complex Schur form, eigenvectors by triangular
    /// back-substitution, reconstruction `V diag(l^p) V^{-1}`.
    fn pow_frac_eigen(&self, p: T, scale: T) -> Result<Self> {
        let n = self.rows;
        let (t, q) = schur_complex(self)?;
        let mut eigvals = Vec::with_capacity(n);
        for i in 0..n {
            let lambda = t.at(i, i);
            check_negative_axis(lambda, scale)?;
            eigvals.push(lambda);
        }
        // Eigenvectors of the triangular factor, mapped back through Q.
        let mut v = CMat::zeros(n, n);
        let tiny = T::epsilon() * scale;
        for (i, &lambda) in eigvals.iter().enumerate() {
            let mut x = vec![Complex::new(T::zero(), T::zero()); n];
            x[i] = Complex::new(T::one(), T::zero());
            for j in (0..i).rev() {
                let mut sum = Complex::new(T::zero(), T::zero());
                for k in j + 1..=i {
                    sum += t.at(j, k) * x[k];
                }
                let mut d = t.at(j, j) - lambda;
                if d.norm() < tiny {
                    d = Complex::new(tiny, T::zero());
                }
                x[j] = -sum / d;
            }
            let norm = x.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr()).sqrt();
            for (r, xr) in x.iter().enumerate() {
                v.set(r, i, *xr / norm);
            }
        }
        let v = q.matmul(&v);
        let v_inv = v.inv(tiny).ok_or(LinalgError::IllConditionedEigenbasis {
            cond: f64::INFINITY,
            residue: f64::NAN,
        })?;
        let cond = (v.frobenius() * v_inv.frobenius())
            .to_f64()
            .unwrap_or(f64::INFINITY);
        let mut mid = CMat::zeros(n, n);
        for (i, &lambda) in eigvals.iter().enumerate() {
            let f = cpow(lambda, p);
            for j in 0..n {
                mid.set(i, j, v_inv.at(i, j) * f);
            }
        }
        let rec = v.matmul(&mid);
        realize(n, &rec.data, cond)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Largest entrywise absolute difference between two equal-shape matrices.
pub fn max_abs_diff<T: Real>(a: &Mat<T>, b: &Mat<T>) -> T {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    a.data
        .iter()
        .zip(&b.data)
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

fn half<T: Real>() -> T {
    T::of(0.5)
}

/// Relative singularity tolerance; the `f64` value is 1e-12, wider types of
/// lower precision fall back to a machine-epsilon multiple.
fn singular_tol<T: Real>() -> T {
    T::of(1e-12).max(T::epsilon() * T::of(64.0))
}

/// Threshold for treating a computed eigenvalue as lying on the real axis.
fn axis_tol<T: Real>(scale: T) -> T {
    scale * T::of(1e-10).max(T::epsilon() * T::of(256.0))
}

/// Relative bound on the imaginary residue of a reconstructed real matrix
/// function.
fn residue_tol<T: Real>() -> T {
    T::of(1e-9).max(T::epsilon().sqrt())
}

fn check_negative_axis<T: Real>(lambda: Complex<T>, scale: T) -> Result<()> {
    let tol = axis_tol(scale);
    if lambda.im.abs() <= tol && lambda.re <= tol {
        return Err(LinalgError::NoRealPrincipalPower {
            re: lambda.re.to_f64().unwrap_or(f64::NAN),
            im: lambda.im.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Principal power of a complex scalar.
fn cpow<T: Real>(z: Complex<T>, p: T) -> Complex<T> {
    (z.ln() * p).exp()
}

/// Eigenvalues of a real 2x2 matrix via the stabilized quadratic formula.
fn eig2<T: Real>(a: T, b: T, c: T, d: T) -> (Complex<T>, Complex<T>) {
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr - T::of(4.0) * det;
    if disc >= T::zero() {
        let root = disc.sqrt();
        // Avoid cancellation: compute the larger-magnitude root first.
        let q = if tr >= T::zero() {
            tr + root
        } else {
            tr - root
        };
        if q == T::zero() {
            return (
                Complex::new(T::zero(), T::zero()),
                Complex::new(T::zero(), T::zero()),
            );
        }
        let l1 = q * half::<T>();
        let l2 = det / l1;
        (Complex::new(l1, T::zero()), Complex::new(l2, T::zero()))
    } else {
        let re = tr * half::<T>();
        let im = (-disc).sqrt() * half::<T>();
        (Complex::new(re, im), Complex::new(re, -im))
    }
}

/// Extracts the real part of a reconstructed matrix, checking the imaginary
/// residue against the relative tolerance.
fn realize<T: Real>(n: usize, data: &[Complex<T>], cond: f64) -> Result<Mat<T>> {
    let mut re_max = T::zero();
    let mut im_max = T::zero();
    for z in data {
        re_max = re_max.max(z.re.abs());
        im_max = im_max.max(z.im.abs());
    }
    let residue = im_max / re_max.max(T::one());
    if residue > residue_tol::<T>() {
        return Err(LinalgError::IllConditionedEigenbasis {
            cond,
            residue: residue.to_f64().unwrap_or(f64::NAN),
        });
    }
    let out: Vec<T> = data.iter().map(|z| z.re).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::IllConditionedEigenbasis {
            cond,
            residue: residue.to_f64().unwrap_or(f64::NAN),
        });
    }
    Mat::from_vec(n, n, out)
}

// ---------------------------------------------------------------------------
// Complex working matrices for the Schur path (internal only).

#[derive(Clone)]
struct CMat<T> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMat<T> {
    fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![Complex::new(T::zero(), T::zero()); n_rows * n_cols],
        }
    }

    fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex::new(T::one(), T::zero()));
        }
        m
    }

    fn from_real(a: &Mat<T>) -> Self {
        let data = a.data.iter().map(|&x| Complex::new(x, T::zero())).collect();
        Self {
            n_rows: a.rows,
            n_cols: a.cols,
            data,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.n_cols + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: Complex<T>) {
        self.data[r * self.n_cols + c] = v;
    }

    fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n_cols, rhs.n_rows);
        let mut out = Self::zeros(self.n_rows, rhs.n_cols);
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let aik = self.at(i, k);
                for j in 0..rhs.n_cols {
                    let cur = out.at(i, j);
                    out.set(i, j, cur + aik * rhs.at(k, j));
                }
            }
        }
        out
    }

    fn frobenius(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, z| acc + z.norm_sqr())
            .sqrt()
    }

    /// Inverse by Gauss–Jordan with partial pivoting on the modulus.
    /// Returns `None` when a pivot falls below `tiny`.
    fn inv(&self, tiny: T) -> Option<Self> {
        assert_eq!(self.n_rows, self.n_cols);
        let n = self.n_rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = T::zero();
            for r in col..n {
                let v = a.at(r, col).norm();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = r;
                }
            }
            if pivot_val <= tiny {
                return None;
            }
            if pivot_row != col {
                for j in 0..n {
                    let tmp = a.at(pivot_row, j);
                    a.set(pivot_row, j, a.at(col, j));
                    a.set(col, j, tmp);
                    let tmp = inv.at(pivot_row, j);
                    inv.set(pivot_row, j, inv.at(col, j));
                    inv.set(col, j, tmp);
                }
            }
            let p = a.at(col, col);
            for j in 0..n {
                a.set(col, j, a.at(col, j) / p);
                inv.set(col, j, inv.at(col, j) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.at(r, col);
                if factor.norm() == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let av = a.at(r, j) - factor * a.at(col, j);
                    a.set(r, j, av);
                    let iv = inv.at(r, j) - factor * inv.at(col, j);
                    inv.set(r, j, iv);
                }
            }
        }
        Some(inv)
    }
}

/// Complex Schur decomposition `A = Q T Q*` for a real input, via Householder
/// reduction to Hessenberg form followed by the explicitly shifted QR
/// iteration with Wilkinson shifts.
fn schur_complex<T: Real>(a: &Mat<T>) -> Result<(CMat<T>, CMat<T>)> {
    let n = a.rows();
    let mut h = CMat::from_real(a);
    let mut q = CMat::identity(n);
    hessenberg(&mut h, &mut q);

    let eps = T::epsilon();
    let max_iters = 60 * n.max(1);
    let mut hi = n.saturating_sub(1);
    let mut iters_at_hi = 0usize;
    let mut total_iters = 0usize;
    while hi > 0 {
        // Deflate converged subdiagonal entries.
        let mut lo = hi;
        while lo > 0 {
            let off = h.at(lo, lo - 1).norm();
            let local = h.at(lo, lo).norm() + h.at(lo - 1, lo - 1).norm();
            if off <= eps * local.max(T::min_positive_value()) {
                h.set(lo, lo - 1, Complex::new(T::zero(), T::zero()));
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            iters_at_hi = 0;
            continue;
        }
        total_iters += 1;
        iters_at_hi += 1;
        if total_iters > max_iters * n.max(1) {
            return Err(LinalgError::EigenNoConvergence);
        }
        let shift = if iters_at_hi % 12 == 0 {
            // Exceptional shift to break rare oscillation.
            h.at(hi, hi) + Complex::new(h.at(hi, hi - 1).norm() * T::of(0.75), T::zero())
        } else {
            wilkinson_shift(&h, hi)
        };
        qr_step(&mut h, &mut q, lo, hi, shift);
    }
    Ok((h, q))
}

/// Householder reduction of a complex matrix to upper Hessenberg form,
/// accumulating the unitary transform in `q`.
fn hessenberg<T: Real>(h: &mut CMat<T>, q: &mut CMat<T>) {
    let n = h.n_rows;
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        // Householder vector for column k below the subdiagonal.
        let mut norm_sq = T::zero();
        for r in k + 1..n {
            norm_sq += h.at(r, k).norm_sqr();
        }
        let norm = norm_sq.sqrt();
        if norm <= T::epsilon() {
            continue;
        }
        let x0 = h.at(k + 1, k);
        let phase = if x0.norm() == T::zero() {
            Complex::new(T::one(), T::zero())
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;
        let mut v: Vec<Complex<T>> = (k + 1..n).map(|r| h.at(r, k)).collect();
        v[0] -= alpha;
        let vnorm_sq = v.iter().fold(T::zero(), |acc, z| acc + z.norm_sqr());
        if vnorm_sq <= T::epsilon() * T::epsilon() {
            continue;
        }
        let two = T::of(2.0);
        // H := (I - 2 v v* / |v|^2) H  and  H := H (I - 2 v v* / |v|^2),
        // restricted to the affected rows/columns.
        for j in 0..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for (idx, r) in (k + 1..n).enumerate() {
                dot += v[idx].conj() * h.at(r, j);
            }
            let f = dot * (two / vnorm_sq);
            for (idx, r) in (k + 1..n).enumerate() {
                let cur = h.at(r, j);
                h.set(r, j, cur - v[idx] * f);
            }
        }
        for i in 0..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for (idx, c) in (k + 1..n).enumerate() {
                dot += h.at(i, c) * v[idx];
            }
            let f = dot * (two / vnorm_sq);
            for (idx, c) in (k + 1..n).enumerate() {
                let cur = h.at(i, c);
                h.set(i, c, cur - f * v[idx].conj());
            }
        }
        for i in 0..n {
            let mut dot = Complex::new(T::zero(), T::zero());
            for (idx, c) in (k + 1..n).enumerate() {
                dot += q.at(i, c) * v[idx];
            }
            let f = dot * (two / vnorm_sq);
            for (idx, c) in (k + 1..n).enumerate() {
                let cur = q.at(i, c);
                q.set(i, c, cur - f * v[idx].conj());
            }
        }
        for r in k + 2..n {
            h.set(r, k, Complex::new(T::zero(), T::zero()));
        }
        h.set(k + 1, k, alpha);
    }
}

/// Wilkinson shift from the trailing 2x2 block ending at `hi`.
fn wilkinson_shift<T: Real>(h: &CMat<T>, hi: usize) -> Complex<T> {
    let a = h.at(hi - 1, hi - 1);
    let b = h.at(hi - 1, hi);
    let c = h.at(hi, hi - 1);
    let d = h.at(hi, hi);
    let delta = (a - d) * Complex::new(T::of(0.5), T::zero());
    let bc = b * c;
    let root = (delta * delta + bc).sqrt();
    let den_plus = delta + root;
    let den_minus = delta - root;
    let den = if den_plus.norm() >= den_minus.norm() {
        den_plus
    } else {
        den_minus
    };
    if den.norm() == T::zero() {
        d
    } else {
        d - bc / den
    }
}

/// One explicit shifted QR step on the active Hessenberg block `[lo, hi]`,
/// implemented with Givens rotations; Q accumulates the column rotations.
fn qr_step<T: Real>(h: &mut CMat<T>, q: &mut CMat<T>, lo: usize, hi: usize, shift: Complex<T>) {
    let n = h.n_rows;
    let mut rotations: Vec<(usize, Complex<T>, Complex<T>)> = Vec::with_capacity(hi - lo);
    for i in lo..=hi {
        let d = h.at(i, i) - shift;
        h.set(i, i, d);
    }
    // Left: zero the subdiagonal of the shifted block.
    for i in lo..hi {
        let f = h.at(i, i);
        let g = h.at(i + 1, i);
        let (c, s) = givens(f, g);
        for j in i..n {
            let top = h.at(i, j);
            let bot = h.at(i + 1, j);
            h.set(i, j, top * c.conj() + bot * s.conj());
            h.set(i + 1, j, bot * c - top * s);
        }
        rotations.push((i, c, s));
    }
    // Right: apply the adjoint rotations, restoring Hessenberg form. Rows
    // above the block carry coupling entries, so the rotation spans rows
    // 0..=i+1 (row i+1 receives the restored subdiagonal fill).
    for &(i, c, s) in &rotations {
        for r in 0..(i + 2).min(n) {
            let left = h.at(r, i);
            let right = h.at(r, i + 1);
            h.set(r, i, left * c + right * s);
            h.set(r, i + 1, right * c.conj() - left * s.conj());
        }
        for r in 0..n {
            let left = q.at(r, i);
            let right = q.at(r, i + 1);
            q.set(r, i, left * c + right * s);
            q.set(r, i + 1, right * c.conj() - left * s.conj());
        }
    }
    for i in lo..=hi {
        let d = h.at(i, i) + shift;
        h.set(i, i, d);
    }
}

/// Complex Givens rotation zeroing `g` against `f`:
/// `[c.conj  s.conj; -s  c] [f; g] = [r; 0]` with `|c|^2 + |s|^2 = 1`.
fn givens<T: Real>(f: Complex<T>, g: Complex<T>) -> (Complex<T>, Complex<T>) {
    let fg_norm = (f.norm_sqr() + g.norm_sqr()).sqrt();
    if fg_norm == T::zero() {
        return (
            Complex::new(T::one(), T::zero()),
            Complex::new(T::zero(), T::zero()),
        );
    }
    let c = f / fg_norm;
    let s = g / fg_norm;
    (c, s)
}
