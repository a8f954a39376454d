//! Smooth n-dimensional rigid body.
//!
//! Classical left-invariant equations on `SO(n) × so(n)`:
//!
//! ```text
//! Q̇ = QΩ,   Ṁ = [M, Ω],   M = J(Ω) = ΛΩ + ΩΛ
//! ```
//!
//! and the symmetric representation on `SO(n) × SO(n)`:
//!
//! ```text
//! Q̇ = QU,   Ṗ = PU,   U = J⁻¹(QᵀP − PᵀQ)
//! ```
//!
//! The two are related by `M = QᵀP − PᵀQ` in one direction and by
//! `P = Q exp(sinh⁻¹(M/2))` in the other, the latter valid while
//! `‖M‖_op < 2`.

use crate::error::{Error, Result};
use crate::matlie::{check_dimension, mat_asinh_with_margin, op_norm, Matrix, Rotation, SkewMatrix, ASINH_MARGIN};
use crate::ode::{Linear, OdeState};

pub use crate::ode::{rk4_integrate, Rk4Options, Trajectory};

/// Diagonal `Λ` defining the inertia operator `J(Ω) = ΛΩ + ΩΛ`.
#[derive(Clone, Debug, PartialEq)]
pub struct InertiaSpec {
    lambda: Vec<f64>,
}

impl InertiaSpec {
    /// Requires `λᵢ + λⱼ > 0` for all `i ≠ j`.
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        check_dimension(lambda.len())?;
        for i in 0..lambda.len() {
            if !lambda[i].is_finite() {
                return Err(Error::NonFinite(format!("lambda[{i}]")));
            }
            for j in i + 1..lambda.len() {
                let sum = lambda[i] + lambda[j];
                if sum.is_nan() || sum <= 0.0 {
                    return Err(Error::InvalidInertia { i, j, sum });
                }
            }
        }
        Ok(InertiaSpec { lambda })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `Λ` as a diagonal matrix.
    pub fn diag(&self) -> Matrix {
        Matrix::from_diagonal(&self.lambda)
    }

    /// `J(Ω)`; `J(e_ij) = (λᵢ + λⱼ) e_ij` on the basis of `so(n)`.
    pub fn j(&self, omega: &SkewMatrix) -> SkewMatrix {
        self.entrywise(omega, |v, s| v * s)
    }

    /// `J⁻¹(M)`.
    pub fn j_inv(&self, m: &SkewMatrix) -> SkewMatrix {
        self.entrywise(m, |v, s| v / s)
    }

    fn entrywise(&self, a: &SkewMatrix, op: impl Fn(f64, f64) -> f64) -> SkewMatrix {
        let n = self.dim();
        assert_eq!(a.dim(), n, "inertia and argument dimensions differ");
        let mut coords = Vec::with_capacity(a.coords().len());
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                coords.push(op(a.coords()[idx], self.lambda[i] + self.lambda[j]));
                idx += 1;
            }
        }
        SkewMatrix::from_coords(n, coords)
    }
}

fn check_inertia_dim(inertia: &InertiaSpec, n: usize) -> Result<()> {
    if inertia.dim() == n {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: inertia.dim(),
            found: n,
        })
    }
}

/// `J(Ω) = ΛΩ + ΩΛ`.
pub fn inertia_apply(inertia: &InertiaSpec, omega: &SkewMatrix) -> Result<SkewMatrix> {
    check_inertia_dim(inertia, omega.dim())?;
    Ok(inertia.j(omega))
}

/// `J⁻¹(M)`, entrywise `Mᵢⱼ / (λᵢ + λⱼ)`.
pub fn inertia_solve(inertia: &InertiaSpec, m: &SkewMatrix) -> Result<SkewMatrix> {
    check_inertia_dim(inertia, m.dim())?;
    Ok(inertia.j_inv(m))
}

/// `QᵀP − PᵀQ`, exactly skew for any square `Q`, `P`.
pub fn symmetric_momentum(q: &Matrix, p: &Matrix) -> SkewMatrix {
    SkewMatrix::from_matrix(&(q.transpose() * p)).scale(2.0)
}

// ---------------------------------------------------------------------------
// States and tangents
// ---------------------------------------------------------------------------

/// Attitude and body angular momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct RBState {
    pub q: Rotation,
    pub m: SkewMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbTangent {
    pub q_dot: Matrix,
    pub m_dot: SkewMatrix,
}

/// Pair `(Q, P)` of the symmetric representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SRBState {
    pub q: Rotation,
    pub p: Rotation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrbTangent {
    pub q_dot: Matrix,
    pub p_dot: Matrix,
}

/// McLachlan–Scovel state: attitude `Q` and costate `B` with `QᵀB` skew.
#[derive(Clone, Debug, PartialEq)]
pub struct MclsState {
    pub q: Rotation,
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MclsTangent {
    pub q_dot: Matrix,
    pub b_dot: Matrix,
}

impl Linear for RbTangent {
    fn axpy(&self, s: f64, o: &Self) -> Self {
        RbTangent {
            q_dot: self.q_dot.axpy(s, &o.q_dot),
            m_dot: self.m_dot.axpy(s, &o.m_dot),
        }
    }
}

impl Linear for SrbTangent {
    fn axpy(&self, s: f64, o: &Self) -> Self {
        SrbTangent {
            q_dot: self.q_dot.axpy(s, &o.q_dot),
            p_dot: self.p_dot.axpy(s, &o.p_dot),
        }
    }
}

impl Linear for MclsTangent {
    fn axpy(&self, s: f64, o: &Self) -> Self {
        MclsTangent {
            q_dot: self.q_dot.axpy(s, &o.q_dot),
            b_dot: self.b_dot.axpy(s, &o.b_dot),
        }
    }
}

fn advance_rotation(r: &Rotation, h: f64, dir: &Matrix) -> Rotation {
    Rotation::from_matrix_unchecked(r.as_matrix() + &dir.scale(h))
}

impl OdeState for RBState {
    type Tangent = RbTangent;

    fn advance(&self, h: f64, d: &RbTangent) -> Self {
        RBState {
            q: advance_rotation(&self.q, h, &d.q_dot),
            m: self.m.axpy(h, &d.m_dot),
        }
    }

    fn is_finite(&self) -> bool {
        self.q.is_finite() && self.m.is_finite()
    }

    fn project(&self) -> Result<Self> {
        Ok(RBState {
            q: self.q.reorthonormalize()?,
            m: self.m.clone(),
        })
    }
}

impl OdeState for SRBState {
    type Tangent = SrbTangent;

    fn advance(&self, h: f64, d: &SrbTangent) -> Self {
        SRBState {
            q: advance_rotation(&self.q, h, &d.q_dot),
            p: advance_rotation(&self.p, h, &d.p_dot),
        }
    }

    fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }

    fn project(&self) -> Result<Self> {
        Ok(SRBState {
            q: self.q.reorthonormalize()?,
            p: self.p.reorthonormalize()?,
        })
    }
}

impl OdeState for MclsState {
    type Tangent = MclsTangent;

    fn advance(&self, h: f64, d: &MclsTangent) -> Self {
        MclsState {
            q: advance_rotation(&self.q, h, &d.q_dot),
            b: self.b.axpy(h, &d.b_dot),
        }
    }

    fn is_finite(&self) -> bool {
        self.q.is_finite() && self.b.is_finite()
    }

    fn project(&self) -> Result<Self> {
        Ok(MclsState {
            q: self.q.reorthonormalize()?,
            b: self.b.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Vector fields
// ---------------------------------------------------------------------------

/// `(QΩ, [M, Ω])` with `Ω = J⁻¹(M)`.
pub fn rb_field(s: &RBState, inertia: &InertiaSpec) -> RbTangent {
    let omega = inertia.j_inv(&s.m);
    RbTangent {
        q_dot: s.q.as_matrix() * &omega.to_matrix(),
        m_dot: s.m.bracket(&omega),
    }
}

/// `(QU, PU)` with `U = J⁻¹(QᵀP − PᵀQ)`.
pub fn srb_field(s: &SRBState, inertia: &InertiaSpec) -> SrbTangent {
    let u = inertia
        .j_inv(&symmetric_momentum(s.q.as_matrix(), s.p.as_matrix()))
        .to_matrix();
    SrbTangent {
        q_dot: s.q.as_matrix() * &u,
        p_dot: s.p.as_matrix() * &u,
    }
}

/// McLachlan–Scovel right-hand side `(Q J⁻¹(QᵀB), B J⁻¹(QᵀB))`, using the
/// skew part of `QᵀB`.
pub fn mcls_rhs(s: &MclsState, inertia: &InertiaSpec) -> MclsTangent {
    let u = inertia
        .j_inv(&SkewMatrix::from_matrix(&(s.q.as_matrix().transpose() * &s.b)))
        .to_matrix();
    MclsTangent {
        q_dot: s.q.as_matrix() * &u,
        b_dot: &s.b * &u,
    }
}

/// [`mcls_rhs`] after checking that `QᵀB` is skew to `10⁻⁸` (relative).
pub fn mcls_field(s: &MclsState, inertia: &InertiaSpec) -> Result<MclsTangent> {
    check_inertia_dim(inertia, s.q.dim())?;
    let qb = s.q.as_matrix().transpose() * &s.b;
    let defect = qb.skewness_defect();
    if defect > 1e-8 * qb.frobenius_norm().max(1.0) {
        return Err(Error::Precondition(format!(
            "QᵀB is not skew (‖QᵀB + BᵀQ‖_F = {defect:.3e})"
        )));
    }
    Ok(mcls_rhs(s, inertia))
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

/// `(Q, P) ↦ (Q, QᵀP − PᵀQ)`.
pub fn srb_to_rb(s: &SRBState) -> RBState {
    RBState {
        q: s.q.clone(),
        m: symmetric_momentum(s.q.as_matrix(), s.p.as_matrix()),
    }
}

/// `(Q, M) ↦ (Q, Q exp(sinh⁻¹(M/2)))`, defined for `‖M‖_op < 2`.
pub fn rb_to_srb(s: &RBState) -> Result<SRBState> {
    let norm = op_norm(&s.m.to_matrix());
    let limit = 2.0 * (1.0 - ASINH_MARGIN);
    if norm >= limit {
        return Err(Error::Domain {
            what: "reconstruction of P requires ‖M‖_op < 2",
            value: norm,
            limit,
        });
    }
    let xi = mat_asinh_with_margin(&s.m.scale(0.5), ASINH_MARGIN)?;
    Ok(SRBState {
        q: s.q.clone(),
        p: s.q.compose(&Rotation::exp(&xi)),
    })
}

// ---------------------------------------------------------------------------
// Conserved quantities
// ---------------------------------------------------------------------------

/// `(k, j)` labels of the entries returned by [`manakov_integrals`]:
/// the coefficient of `λʲ` in `tr((M + λΛ²)ᵏ)`, for `k = 2..=n`, keeping only
/// terms with an even, non-zero number `k − j` of `M` factors (odd counts
/// vanish identically on `so(n)`, and `j = k` does not involve `M`).
pub fn manakov_labels(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for k in 2..=n {
        for j in 0..k {
            if (k - j) % 2 == 0 {
                out.push((k, j));
            }
        }
    }
    out
}

/// Coefficients of the Lax pencil traces `tr((M + λΛ²)ᵏ)`, ordered as in
/// [`manakov_labels`]. The non-commuting binomial expansion is carried out
/// numerically: `C_{k,j} = C_{k−1,j} M + C_{k−1,j−1} Λ²`.
pub fn manakov_integrals(m: &SkewMatrix, inertia: &InertiaSpec) -> Vec<f64> {
    let n = m.dim();
    assert_eq!(n, inertia.dim());
    let mm = m.to_matrix();
    let lambda_sq: Vec<f64> = inertia.lambda().iter().map(|l| l * l).collect();
    let d = Matrix::from_diagonal(&lambda_sq);

    let mut coeffs = vec![mm.clone(), d.clone()];
    let mut out = Vec::new();
    for k in 2..=n {
        let mut next = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let mut c = Matrix::zeros(n);
            if j < k {
                c += &(&coeffs[j] * &mm);
            }
            if j > 0 {
                c += &(&coeffs[j - 1] * &d);
            }
            next.push(c);
        }
        coeffs = next;
        for (j, c) in coeffs.iter().enumerate().take(k) {
            if (k - j) % 2 == 0 {
                out.push(c.trace());
            }
        }
    }
    out
}

/// Largest relative change `|I(m) − I(m₀)| / |I(m₀)|` of the Manakov
/// integrals. Integrals that vanish at `m₀` are compared absolutely.
pub fn manakov_drift(m0: &SkewMatrix, m: &SkewMatrix, inertia: &InertiaSpec) -> f64 {
    manakov_integrals(m0, inertia)
        .iter()
        .zip(manakov_integrals(m, inertia))
        .map(|(a, b)| (a - b).abs() / if *a == 0.0 { 1.0 } else { a.abs() })
        .fold(0.0, f64::max)
}

/// `‖M‖_op`, a Casimir of the rigid-body flow.
pub fn casimir_opnorm(m: &SkewMatrix) -> f64 {
    op_norm(&m.to_matrix())
}

/// Kinetic energy `¼⟨J⁻¹M, M⟩`.
pub fn energy(m: &SkewMatrix, inertia: &InertiaSpec) -> f64 {
    0.25 * inertia.j_inv(m).killing(m)
}

/// Hamiltonian on `gl(n) × gl(n)`:
/// `H(ξ, η) = −⅛ tr[J⁻¹(ξᵀη − ηᵀξ)(ξᵀη − ηᵀξ)]`.
pub fn gln_hamiltonian(xi: &Matrix, eta: &Matrix, inertia: &InertiaSpec) -> f64 {
    let m = symmetric_momentum(xi, eta);
    let omega = inertia.j_inv(&m);
    -0.125 * (omega.to_matrix() * m.to_matrix()).trace()
}

/// The symplectic form `½ tr(η₂ᵀξ₁ − η₁ᵀξ₂)` on `gl(n) × gl(n)`.
pub fn gln_symplectic_form(a: (&Matrix, &Matrix), b: (&Matrix, &Matrix)) -> f64 {
    let (xi1, eta1) = a;
    let (xi2, eta2) = b;
    0.5 * (eta2.frobenius_dot(xi1) - eta1.frobenius_dot(xi2))
}
