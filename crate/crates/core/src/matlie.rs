//! Dense real matrix kernel and Lie-algebra operations on `gl(n)`, `so(n)`
//! and `SO(n)`.
//!
//! Three value types cover everything the rest of the crate needs:
//!
//! * [`Matrix`]: a square real matrix (element of `gl(n)`),
//! * [`SkewMatrix`]: an element of `so(n)`, stored by its strict upper
//!   triangle so that `A + Aᵀ = 0` holds exactly,
//! * [`Rotation`]: an element of `SO(n)`.
//!
//! The pairing on `so(n)` is the Killing-type form `⟨ξ, η⟩ = −½ tr(ξη)`,
//! which for `n = 3` agrees with the dot product under the hat map
//! `û·v = u × v`. Gradients of functions of general matrices are taken with
//! respect to the Frobenius pairing `tr(AᵀB)`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 12;

/// Default distance kept from the boundary `‖u‖_op = 1` of the `sinh⁻¹` domain.
pub const ASINH_MARGIN: f64 = 1e-6;

/// Checks that `n` lies in the supported range `2..=MAX_DIM`.
pub fn check_dimension(n: usize) -> Result<()> {
    if (2..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(n))
    }
}

fn check_same(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Square real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix(DMatrix<f64>);

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Matrix(DMatrix::identity(n, n))
    }

    /// Builds an `n × n` matrix from row-major data.
    ///
    /// Panics if `data.len() != n * n`; see [`Matrix::try_from_row_slice`].
    pub fn from_row_slice(n: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), n * n, "row-major data has wrong length");
        Matrix(DMatrix::from_row_slice(n, n, data))
    }

    pub fn try_from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        check_dimension(n)?;
        check_same(n * n, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self::from_row_slice(n, data))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Matrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Matrix(DMatrix::from_fn(n, n, f))
    }

    /// Wraps a square `nalgebra` matrix.
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        check_same(m.nrows(), m.ncols())?;
        Ok(Matrix(m))
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.0[(i, j)] = value;
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        self.0
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Frobenius pairing `tr(AᵀB)`.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix(&self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn determinant(&self) -> f64 {
        self.0.clone().lu().determinant()
    }

    pub fn inverse(&self) -> Result<Matrix> {
        self.0.clone().try_inverse().map(Matrix).ok_or(Error::Singular {
            what: "matrix inverse",
            condition: f64::INFINITY,
        })
    }

    /// Skew part `½(A − Aᵀ)`.
    pub fn skew_part(&self) -> SkewMatrix {
        SkewMatrix::from_matrix(self)
    }

    /// Symmetric part `½(A + Aᵀ)`.
    pub fn sym_part(&self) -> Matrix {
        Matrix((&self.0 + self.0.transpose()) * 0.5)
    }

    /// `Aᵀ + A` measured in Frobenius norm.
    pub fn skewness_defect(&self) -> f64 {
        (&self.0 + self.0.transpose()).norm()
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $body:expr) => {
        impl $tr<&Matrix> for &Matrix {
            type Output = Matrix;
            fn $method(self, rhs: &Matrix) -> Matrix {
                let f: fn(&Matrix, &Matrix) -> Matrix = $body;
                f(self, rhs)
            }
        }
        impl $tr<Matrix> for Matrix {
            type Output = Matrix;
            fn $method(self, rhs: Matrix) -> Matrix {
                (&self).$method(&rhs)
            }
        }
        impl $tr<&Matrix> for Matrix {
            type Output = Matrix;
            fn $method(self, rhs: &Matrix) -> Matrix {
                (&self).$method(rhs)
            }
        }
        impl $tr<Matrix> for &Matrix {
            type Output = Matrix;
            fn $method(self, rhs: Matrix) -> Matrix {
                self.$method(&rhs)
            }
        }
    };
}

forward_binop!(Add, add, |a, b| Matrix(&a.0 + &b.0));
forward_binop!(Sub, sub, |a, b| Matrix(&a.0 - &b.0));
forward_binop!(Mul, mul, |a, b| Matrix(&a.0 * &b.0));

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, s: f64) -> Matrix {
        self.scale(s)
    }
}

impl Mul<f64> for Matrix {
    type Output = Matrix;
    fn mul(self, s: f64) -> Matrix {
        Matrix(self.0 * s)
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        Matrix(-&self.0)
    }
}

impl Neg for Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        Matrix(-self.0)
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        self.0 += &rhs.0;
    }
}

/// Text form: the dimension `n` followed by the `n²` entries in row-major
/// order, all whitespace separated.
impl fmt::Display for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.dim())?;
        for v in self.to_row_major() {
            write!(f, " {v}")?;
        }
        Ok(())
    }
}

impl FromStr for Matrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split_whitespace();
        let n: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("empty input".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("dimension: {e}")))?;
        let data = tokens
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("entry {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if data.len() != n * n {
            return Err(Error::Parse(format!(
                "expected {} entries for n = {n}, found {}",
                n * n,
                data.len()
            )));
        }
        Matrix::try_from_row_slice(n, &data)
    }
}

// ---------------------------------------------------------------------------
// SkewMatrix
// ---------------------------------------------------------------------------

/// Element of `so(n)`, stored as the strict upper triangle in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewMatrix {
    n: usize,
    upper: Vec<f64>,
}

#[inline]
fn upper_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl SkewMatrix {
    /// Number of independent coordinates, `n(n−1)/2`.
    pub fn coord_len(n: usize) -> usize {
        n * (n - 1) / 2
    }

    pub fn zeros(n: usize) -> Self {
        SkewMatrix {
            n,
            upper: vec![0.0; Self::coord_len(n)],
        }
    }

    /// Builds from strict-upper-triangle coordinates `(0,1), (0,2), …, (n−2,n−1)`.
    pub fn from_coords(n: usize, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), Self::coord_len(n), "wrong coordinate count");
        SkewMatrix { n, upper: coords }
    }

    pub fn try_from_coords(n: usize, coords: Vec<f64>) -> Result<Self> {
        check_dimension(n)?;
        check_same(Self::coord_len(n), coords.len())?;
        Ok(SkewMatrix { n, upper: coords })
    }

    /// Basis element `e_i e_jᵀ − e_j e_iᵀ` for `i < j`.
    pub fn basis(n: usize, i: usize, j: usize) -> Self {
        let mut s = Self::zeros(n);
        s.upper[upper_index(n, i, j)] = 1.0;
        s
    }

    /// `so(3)` hat map: `hat(v)·w = v × w`.
    pub fn hat(v: [f64; 3]) -> Self {
        SkewMatrix {
            n: 3,
            upper: vec![-v[2], v[1], -v[0]],
        }
    }

    /// Inverse of [`SkewMatrix::hat`]; only meaningful for `n = 3`.
    pub fn vee(&self) -> [f64; 3] {
        assert_eq!(self.n, 3, "vee is defined on so(3) only");
        [-self.upper[2], self.upper[1], -self.upper[0]]
    }

    /// Skew part `½(A − Aᵀ)` of a square matrix.
    pub fn from_matrix(a: &Matrix) -> Self {
        let n = a.dim();
        let mut upper = Vec::with_capacity(Self::coord_len(n));
        for i in 0..n {
            for j in i + 1..n {
                upper.push(0.5 * (a.get(i, j) - a.get(j, i)));
            }
        }
        SkewMatrix { n, upper }
    }

    /// Accepts `a` only if `‖A + Aᵀ‖_F ≤ tol`.
    pub fn try_from_matrix(a: &Matrix, tol: f64) -> Result<Self> {
        let defect = a.skewness_defect();
        if defect > tol {
            return Err(Error::Precondition(format!(
                "matrix is not skew (‖A + Aᵀ‖_F = {defect:.3e} > {tol:.3e})"
            )));
        }
        Ok(Self::from_matrix(a))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn coords(&self) -> &[f64] {
        &self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.upper[upper_index(self.n, i, j)],
            std::cmp::Ordering::Greater => -self.upper[upper_index(self.n, j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, |i, j| self.get(i, j))
    }

    /// Lie bracket `[A, B] = AB − BA`.
    pub fn bracket(&self, other: &SkewMatrix) -> SkewMatrix {
        assert_eq!(self.n, other.n, "bracket of mismatched dimensions");
        let a = self.to_matrix();
        let b = other.to_matrix();
        SkewMatrix::from_matrix(&(&a * &b - &b * &a))
    }

    /// `⟨ξ, η⟩ = −½ tr(ξη)`, which equals the sum of products of upper entries.
    pub fn killing(&self, other: &SkewMatrix) -> f64 {
        assert_eq!(self.n, other.n, "pairing of mismatched dimensions");
        self.upper.iter().zip(&other.upper).map(|(a, b)| a * b).sum()
    }

    /// Norm induced by the Killing pairing.
    pub fn norm(&self) -> f64 {
        self.killing(self).sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.norm()
    }

    pub fn scale(&self, s: f64) -> SkewMatrix {
        SkewMatrix {
            n: self.n,
            upper: self.upper.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &SkewMatrix) -> SkewMatrix {
        assert_eq!(self.n, other.n);
        SkewMatrix {
            n: self.n,
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a + s * b).collect(),
        }
    }

    /// Conjugation `R X Rᵀ`.
    pub fn conjugate(&self, r: &Matrix) -> SkewMatrix {
        SkewMatrix::from_matrix(&(r * &self.to_matrix() * r.transpose()))
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }
}

impl Add for &SkewMatrix {
    type Output = SkewMatrix;
    fn add(self, rhs: &SkewMatrix) -> SkewMatrix {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &SkewMatrix {
    type Output = SkewMatrix;
    fn sub(self, rhs: &SkewMatrix) -> SkewMatrix {
        self.axpy(-1.0, rhs)
    }
}

impl Neg for &SkewMatrix {
    type Output = SkewMatrix;
    fn neg(self) -> SkewMatrix {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SkewMatrix {
    type Output = SkewMatrix;
    fn mul(self, s: f64) -> SkewMatrix {
        self.scale(s)
    }
}

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

/// Element of `SO(n)`.
///
/// Products of rotations stay orthogonal up to rounding. Ambient-space
/// integrators may carry a rotation slightly off the group; the drift is
/// measured by [`Rotation::orthogonality_defect`] and removed with
/// [`Rotation::reorthonormalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation(Matrix);

impl Rotation {
    /// Tolerance on `‖RᵀR − I‖_F` accepted by [`Rotation::try_from_matrix`].
    pub const ORTHOGONALITY_TOL: f64 = 1e-10;

    pub fn identity(n: usize) -> Self {
        Rotation(Matrix::identity(n))
    }

    /// `exp(ξ)` for skew `ξ`.
    pub fn exp(xi: &SkewMatrix) -> Self {
        Rotation(mat_exp(&xi.to_matrix()))
    }

    pub fn try_from_matrix(m: Matrix) -> Result<Self> {
        let r = Rotation(m);
        let defect = r.orthogonality_defect();
        if defect > Self::ORTHOGONALITY_TOL {
            return Err(Error::Precondition(format!(
                "matrix is not orthogonal (‖RᵀR − I‖_F = {defect:.3e})"
            )));
        }
        let det = r.0.determinant();
        if det <= 0.0 {
            return Err(Error::NegativeDeterminant(det));
        }
        Ok(r)
    }

    /// Wraps `m` without checking orthogonality.
    pub fn from_matrix_unchecked(m: Matrix) -> Self {
        Rotation(m)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Inverse, `Rᵀ`.
    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(&self.0 * &other.0)
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.0.transpose() * &self.0 - Matrix::identity(self.dim())).frobenius_norm()
    }

    pub fn reorthonormalize(&self) -> Result<Rotation> {
        project_so(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

impl Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        self.compose(rhs)
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// `[A, B] = AB − BA`.
pub fn commutator(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same(a.dim(), b.dim())?;
    Ok(a * b - b * a)
}

/// `⟨ξ, η⟩ = −½ tr(ξη)` on `so(n)`.
pub fn killing_pair(xi: &SkewMatrix, eta: &SkewMatrix) -> Result<f64> {
    check_same(xi.dim(), eta.dim())?;
    Ok(xi.killing(eta))
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled by `2^-s` until its 1-norm is at most ½, and the
/// series is summed until the tail bound drops below the unit roundoff
/// relative to the partial sum.
pub fn mat_exp(a: &Matrix) -> Matrix {
    let n = a.dim();
    let norm = a.one_norm();
    if norm == 0.0 {
        return Matrix::identity(n);
    }
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = a.scale(0.5f64.powi(s));
    let b_norm = b.one_norm();

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=40 {
        term = (&term * &b).scale(1.0 / k as f64);
        sum += &term;
        // Geometric tail bound for the remaining terms.
        let tail = term.one_norm() * b_norm / ((k + 1) as f64 - b_norm);
        if tail <= f64::EPSILON * 0.5 * sum.one_norm() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `sinh(ξ) = (e^ξ − e^−ξ)/2`, skew for skew `ξ`.
pub fn mat_sinh(xi: &SkewMatrix) -> SkewMatrix {
    let m = xi.to_matrix();
    SkewMatrix::from_matrix(&(mat_exp(&m) - mat_exp(&(-&m))).scale(0.5))
}

/// `cosh(ξ) = (e^ξ + e^−ξ)/2`, symmetric for skew `ξ`.
pub fn mat_cosh(xi: &SkewMatrix) -> Matrix {
    let m = xi.to_matrix();
    (mat_exp(&m) + mat_exp(&(-&m))).scale(0.5).sym_part()
}

/// Inverse hyperbolic sine on `{u ∈ so(n) : ‖u‖_op < 1 − ASINH_MARGIN}`.
pub fn mat_asinh(u: &SkewMatrix) -> Result<SkewMatrix> {
    mat_asinh_with_margin(u, ASINH_MARGIN)
}

/// [`mat_asinh`] with an explicit margin from the unit operator-norm ball.
///
/// The power series of `sinh⁻¹` (the term-by-term integral of
/// `(1 + u²)^{-1/2}`) gives the starting point; Newton's method on
/// `sinh(ξ) − u` polishes it. All iterates are functions of `u` and hence
/// commute with it, so the Newton derivative reduces to `cosh(ξ)`.
pub fn mat_asinh_with_margin(u: &SkewMatrix, margin: f64) -> Result<SkewMatrix> {
    let n = u.dim();
    let radius = op_norm(&u.to_matrix());
    let limit = 1.0 - margin;
    if radius >= limit {
        return Err(Error::Domain {
            what: "sinh⁻¹ requires ‖u‖_op < 1",
            value: radius,
            limit,
        });
    }
    if radius == 0.0 {
        return Ok(SkewMatrix::zeros(n));
    }

    let um = u.to_matrix();
    let u2 = &um * &um;
    let mut power = um.clone();
    let mut binom = 1.0; // coefficients of (1 + x²)^{-1/2}
    let mut sum = Matrix::zeros(n);
    for k in 0..600usize {
        if k > 0 {
            binom *= -((2 * k - 1) as f64) / ((2 * k) as f64);
        }
        let coeff = binom / (2 * k + 1) as f64;
        sum += &power.scale(coeff);
        let bound = coeff.abs() * radius.powi(2 * k as i32 + 1);
        if bound <= 1e-17 * radius {
            break;
        }
        power = &power * &u2;
    }
    let mut xi = SkewMatrix::from_matrix(&sum);

    let scale = u.frobenius_norm().max(1.0);
    let mut residual = (&mat_sinh(&xi) - u).frobenius_norm();
    for _ in 0..60 {
        if residual <= 1e-15 * scale {
            break;
        }
        let r = (&mat_sinh(&xi) - u).to_matrix();
        let delta = mat_cosh(&xi)
            .into_dmatrix()
            .lu()
            .solve(r.as_dmatrix())
            .ok_or(Error::Singular {
                what: "cosh(ξ) in sinh⁻¹ Newton step",
                condition: f64::INFINITY,
            })?;
        let candidate = xi.axpy(-1.0, &SkewMatrix::from_matrix(&Matrix(delta)));
        let new_residual = (&mat_sinh(&candidate) - u).frobenius_norm();
        if new_residual >= residual {
            break;
        }
        xi = candidate;
        residual = new_residual;
    }
    if residual > 1e-12 * scale {
        return Err(Error::NoConvergence {
            solver: "sinh⁻¹ Newton polish",
            iterations: 60,
            residual,
        });
    }
    Ok(xi)
}

/// Operator (spectral) norm: the largest singular value.
pub fn op_norm(a: &Matrix) -> f64 {
    if !a.is_finite() {
        return f64::NAN;
    }
    a.as_dmatrix().singular_values().iter().fold(0.0, |m: f64, s| m.max(*s))
}

/// Nearest rotation via the Newton polar iteration `X ← ½(X + X⁻ᵀ)`.
pub fn project_so(a: &Matrix) -> Result<Rotation> {
    let det = a.determinant();
    if det.is_nan() || det <= 0.0 {
        return Err(Error::NegativeDeterminant(det));
    }
    let n = a.dim();
    let mut x = a.clone();
    let mut converged = false;
    let mut change = f64::INFINITY;
    for _ in 0..50 {
        let next = (&x + x.inverse()?.transpose()).scale(0.5);
        change = (&next - &x).frobenius_norm();
        x = next;
        if change <= 1e-14 * (n as f64).sqrt() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            solver: "polar projection",
            iterations: 50,
            residual: change,
        });
    }
    // One more sweep clears the last rounding-level defect.
    let x = (&x + x.inverse()?.transpose()).scale(0.5);
    Ok(Rotation(x))
}

/// Coefficients `[c₀, …, c_n]` of `det(λI − A) = Σ c_k λ^k` (so `c_n = 1`),
/// by the Faddeev–LeVerrier recursion.
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.dim();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut m = Matrix::zeros(n);
    let id = Matrix::identity(n);
    for k in 1..=n {
        m = a * &m + id.scale(coeffs[n - k + 1]);
        coeffs[n - k] = -(a * &m).trace() / k as f64;
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn x_hat() -> SkewMatrix {
        SkewMatrix::hat([1.0, 0.0, 0.0])
    }
    fn y_hat() -> SkewMatrix {
        SkewMatrix::hat([0.0, 1.0, 0.0])
    }
    fn z_hat() -> SkewMatrix {
        SkewMatrix::hat([0.0, 0.0, 1.0])
    }

    fn skew_strategy(n: usize, bound: f64) -> impl Strategy<Value = SkewMatrix> {
        proptest::collection::vec(-bound..bound, SkewMatrix::coord_len(n))
            .prop_map(move |c| SkewMatrix::from_coords(n, c))
    }

    #[test]
    fn hat_matches_cross_product() {
        let u = [0.3, -1.2, 2.0];
        let v = [1.5, 0.4, -0.7];
        let uh = SkewMatrix::hat(u).to_matrix();
        let w = uh.as_dmatrix() * DVector::from_column_slice(&v);
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        for i in 0..3 {
            assert!((w[i] - cross[i]).abs() < 1e-15);
        }
        assert_eq!(SkewMatrix::hat(u).vee(), u);
    }

    #[test]
    fn commutator_examples() {
        let c = commutator(&x_hat().to_matrix(), &y_hat().to_matrix()).unwrap();
        assert!((c - z_hat().to_matrix()).frobenius_norm() < 1e-15);

        let a = Matrix::from_row_slice(3, &[1., 2., 3., 4., 5., 6., 7., 8., 10.]);
        assert_eq!(commutator(&a, &a).unwrap(), Matrix::zeros(3));

        let d = Matrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let c = commutator(&d, &z_hat().to_matrix()).unwrap();
        let expected = Matrix::from_row_slice(3, &[0., 1., 0., 1., 0., 0., 0., 0., 0.]);
        assert!((c - expected).frobenius_norm() < 1e-15);

        assert!(matches!(
            commutator(&Matrix::zeros(3), &Matrix::zeros(4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn killing_pair_examples() {
        assert!((killing_pair(&z_hat(), &z_hat()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(killing_pair(&z_hat(), &x_hat()).unwrap(), 0.0);
        assert_eq!(killing_pair(&SkewMatrix::zeros(3), &y_hat()).unwrap(), 0.0);
        // Agrees with the literal trace formula.
        let a = SkewMatrix::hat([0.2, -0.4, 1.1]);
        let b = SkewMatrix::hat([1.0, 0.5, -0.3]);
        let trace = -0.5 * (a.to_matrix() * b.to_matrix()).trace();
        assert!((killing_pair(&a, &b).unwrap() - trace).abs() < 1e-15);
        assert!((trace - (0.2 * 1.0 - 0.4 * 0.5 - 1.1 * 0.3)).abs() < 1e-15);
        assert!(killing_pair(&SkewMatrix::zeros(3), &SkewMatrix::zeros(4)).is_err());
    }

    #[test]
    fn exp_examples() {
        assert_eq!(mat_exp(&Matrix::zeros(4)), Matrix::identity(4));
        let r = mat_exp(&z_hat().to_matrix().scale(FRAC_PI_2));
        let expected = Matrix::from_row_slice(3, &[0., -1., 0., 1., 0., 0., 0., 0., 1.]);
        assert!((r - expected).frobenius_norm() < 1e-15);
    }

    #[test]
    fn exp_matches_rodrigues() {
        let v: [f64; 3] = [0.7, -1.3, 2.1];
        let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let k = SkewMatrix::hat([v[0] / theta, v[1] / theta, v[2] / theta]).to_matrix();
        let rodrigues = Matrix::identity(3) + k.scale(theta.sin()) + (&k * &k).scale(1.0 - theta.cos());
        let r = mat_exp(&SkewMatrix::hat(v).to_matrix());
        assert!((r - rodrigues).frobenius_norm() < 1e-14);
    }

    #[test]
    fn asinh_examples() {
        assert_eq!(mat_asinh(&SkewMatrix::zeros(3)).unwrap(), SkewMatrix::zeros(3));
        let xi = mat_asinh(&z_hat().scale(0.5)).unwrap();
        assert!((&xi - &z_hat().scale(0.5f64.asin())).norm() < 1e-14);
        assert!((xi.vee()[2] - std::f64::consts::FRAC_PI_6).abs() < 1e-14);
    }

    #[test]
    fn asinh_domain_error() {
        let u = z_hat().scale(1.0 - 1e-7);
        assert!(matches!(mat_asinh(&u), Err(Error::Domain { .. })));
        assert!(matches!(mat_asinh(&z_hat().scale(3.0)), Err(Error::Domain { .. })));
    }

    #[test]
    fn asinh_near_boundary_still_inverts() {
        let u = SkewMatrix::hat([0.6, -0.5, 0.61]);
        let u = u.scale(0.999 / op_norm(&u.to_matrix()));
        let xi = mat_asinh(&u).unwrap();
        assert!((&mat_sinh(&xi) - &u).frobenius_norm() < 1e-12);
    }

    #[test]
    fn op_norm_examples() {
        assert!((op_norm(&Matrix::identity(3)) - 1.0).abs() < 1e-15);
        let u = SkewMatrix::hat([3.0, 4.0, 0.0]).to_matrix();
        assert!((op_norm(&u) - 5.0).abs() < 1e-13);
        assert_eq!(op_norm(&Matrix::zeros(5)), 0.0);
    }

    #[test]
    fn op_norm_with_clustered_singular_values() {
        // Singular values 1, 1, 0.999999, 0.999999 in a rotated frame.
        let d = SkewMatrix::from_coords(4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.999999]);
        let q = Rotation::exp(&SkewMatrix::from_coords(4, vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4]));
        let a = d.conjugate(q.as_matrix());
        assert!((op_norm(&a.to_matrix()) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn project_so_examples() {
        let r = Rotation::exp(&SkewMatrix::hat([0.3, 0.2, -1.0]));
        let p = project_so(r.as_matrix()).unwrap();
        assert!((p.as_matrix() - r.as_matrix()).frobenius_norm() < 1e-14);

        let p = project_so(&Matrix::identity(4).scale(1.01)).unwrap();
        assert!((p.as_matrix() - Matrix::identity(4)).frobenius_norm() < 1e-15);

        let mut e = Matrix::from_fn(3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        e = e.scale(1e-4 / e.frobenius_norm());
        let p = project_so(&(r.as_matrix() + &e)).unwrap();
        assert!((p.as_matrix() - r.as_matrix()).frobenius_norm() <= 1e-4);
        assert!(p.orthogonality_defect() <= 1e-14);

        let reflect = Matrix::from_diagonal(&[1.0, 1.0, -1.0]);
        assert!(matches!(project_so(&reflect), Err(Error::NegativeDeterminant(_))));
    }

    #[test]
    fn char_poly_of_rotation_generator() {
        // so(3) element with |v| = 2: λ³ + 4λ.
        let c = char_poly(&SkewMatrix::hat([0.0, 1.2, 1.6]).to_matrix());
        let expected = [0.0, 4.0, 0.0, 1.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn text_format_round_trip() {
        let m = Matrix::from_row_slice(2, &[1.0, -0.1, 1e-20, 3.25]);
        let s = m.to_string();
        assert!(s.starts_with("2 "));
        assert_eq!(s.parse::<Matrix>().unwrap(), m);
        assert!("2 1 2 3".parse::<Matrix>().is_err());
        assert!("".parse::<Matrix>().is_err());
    }

    #[test]
    fn rotation_constructor_checks() {
        assert!(Rotation::try_from_matrix(Matrix::identity(3).scale(1.1)).is_err());
        assert!(Rotation::try_from_matrix(Matrix::from_diagonal(&[1.0, -1.0, -1.0])).is_ok());
        assert!(matches!(
            Rotation::try_from_matrix(Matrix::from_diagonal(&[1.0, 1.0, -1.0])),
            Err(Error::NegativeDeterminant(_))
        ));
    }

    proptest! {
        #[test]
        fn bracket_is_skew_and_ad_invariant(
            a in skew_strategy(4, 2.0),
            b in skew_strategy(4, 2.0),
            c in skew_strategy(4, 2.0),
        ) {
            let ab = commutator(&a.to_matrix(), &b.to_matrix()).unwrap();
            prop_assert!(ab.skewness_defect() < 1e-13);
            let lhs = a.bracket(&b).killing(&c);
            let rhs = a.killing(&b.bracket(&c));
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn exp_of_skew_is_orthogonal(x in skew_strategy(5, 3.0)) {
            let x = x.scale(10.0 / x.frobenius_norm().max(1e-12));
            let r = Rotation::exp(&x);
            prop_assert!(r.orthogonality_defect() <= 1e-12);
            prop_assert!(r.as_matrix().determinant() > 0.0);
        }

        #[test]
        fn exp_inverse_identity(a in skew_strategy(4, 2.0)) {
            let a = a.to_matrix();
            let a = a.scale(5.0_f64.min(a.frobenius_norm()) / a.frobenius_norm().max(1e-12));
            let prod = mat_exp(&a) * mat_exp(&(-&a));
            prop_assert!((prod - Matrix::identity(4)).frobenius_norm() <= 1e-12);
        }

        #[test]
        fn asinh_inverts_sinh(x in skew_strategy(4, 1.0)) {
            let r = op_norm(&x.to_matrix());
            let x = if r > 0.8 { x.scale(0.8 / r) } else { x };
            let back = mat_asinh(&mat_sinh(&x)).unwrap();
            prop_assert!((&back - &x).frobenius_norm() <= 1e-10);
        }

        #[test]
        fn sinh_of_asinh_round_trip(u in skew_strategy(4, 1.0)) {
            let r = op_norm(&u.to_matrix());
            prop_assume!(r > 1e-3);
            let u = u.scale(0.9 / r);
            let xi = mat_asinh(&u).unwrap();
            prop_assert!((&mat_sinh(&xi) - &u).frobenius_norm() <= 1e-12);
        }

        #[test]
        fn op_norm_is_conjugation_invariant(
            a in skew_strategy(5, 2.0),
            g in skew_strategy(5, 3.0),
        ) {
            let q = Rotation::exp(&g);
            let conj = q.as_matrix() * a.to_matrix() * q.as_matrix().transpose();
            let base = op_norm(&a.to_matrix());
            prop_assert!((op_norm(&conj) - base).abs() <= 1e-10 * base.max(1.0));
        }

        #[test]
        fn text_round_trip(data in proptest::collection::vec(-1e3f64..1e3, 9)) {
            let m = Matrix::from_row_slice(3, &data);
            prop_assert_eq!(m.to_string().parse::<Matrix>().unwrap(), m);
        }
    }
}
