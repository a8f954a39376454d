//! Discrete rigid body.
//!
//! The symmetric discrete rigid body (SDRB) updates a pair of rotations by a
//! common right factor,
//!
//! ```text
//! U_k Λ − Λ U_kᵀ = Q_kᵀP_k − P_kᵀQ_k,   Q_{k+1} = Q_k U_k,   P_{k+1} = P_k U_k
//! ```
//!
//! and is equivalent to the Moser–Veselov (MV) equations
//!
//! ```text
//! Ω_k = Q_kᵀQ_{k−1},   M_k = Ω_kᵀΛ − ΛΩ_k,   M_{k+1} = Ω_k M_k Ω_kᵀ
//! ```
//!
//! through `Q_{k+1} = Q_k U_k`, `M_{k+1} = Q_kᵀP_k − P_kᵀQ_k`, `Ω_{k+1} = U_kᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matlie::{Matrix, Rotation, SkewMatrix};
use crate::rb_smooth::{symmetric_momentum, InertiaSpec};

pub const JD_MAX_ITERATIONS: usize = 100;
pub const JD_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteRBState {
    pub q: Rotation,
    pub p: Rotation,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MVState {
    pub q: Rotation,
    pub m: SkewMatrix,
    pub k: usize,
}

/// Which form of the discrete inertia equation to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JdConvention {
    /// `UΛ − ΛUᵀ = M`, the SDRB form.
    Standard,
    /// `ΩᵀΛ − ΛΩ = M`, the MV form; the solution is the transpose of the
    /// standard one.
    Transposed,
}

/// `J_D U = UΛ − ΛUᵀ`.
pub fn jd_apply(u: &Rotation, inertia: &InertiaSpec) -> SkewMatrix {
    let l = inertia.diag();
    let ul = u.as_matrix() * &l;
    // UΛ − ΛUᵀ = A − Aᵀ with A = UΛ.
    SkewMatrix::from_matrix(&ul).scale(2.0)
}

fn jd_residual(u: &Rotation, m: &SkewMatrix, inertia: &InertiaSpec) -> (SkewMatrix, f64) {
    let r = &jd_apply(u, inertia) - m;
    let norm = r.frobenius_norm();
    (r, norm)
}

/// Matrix of `δ ↦ UδΛ + ΛδUᵀ` on skew coordinates: the derivative of
/// `J_D(U exp(δ))` at `δ = 0`.
fn jd_jacobian(u: &Rotation, inertia: &InertiaSpec) -> DMatrix<f64> {
    let n = u.dim();
    let d = SkewMatrix::coord_len(n);
    let l = inertia.diag();
    let um = u.as_matrix();
    let mut jac = DMatrix::zeros(d, d);
    let mut col = 0;
    for i in 0..n {
        for j in i + 1..n {
            let e = SkewMatrix::basis(n, i, j).to_matrix();
            let a = um * &e * &l;
            let img = SkewMatrix::from_matrix(&a).scale(2.0);
            for (row, v) in img.coords().iter().enumerate() {
                jac[(row, col)] = *v;
            }
            col += 1;
        }
    }
    jac
}

/// Solves `J_D U = M` for `U ∈ SO(n)` near the identity.
///
/// Newton iteration in the chart `U ← U exp(δ)` started from `exp(J⁻¹M)`.
/// Stops once `‖J_D U − M‖_F ≤ 10⁻¹² max(1, ‖M‖_F)`, after one extra
/// polishing step.
pub fn jd_solve(m: &SkewMatrix, inertia: &InertiaSpec) -> Result<Rotation> {
    let n = m.dim();
    if inertia.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: inertia.dim(),
            found: n,
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("jd_solve input".into()));
    }
    let tol = JD_TOLERANCE * m.frobenius_norm().max(1.0);
    let mut u = Rotation::exp(&inertia.j_inv(m));
    let (mut r, mut res) = jd_residual(&u, m, inertia);
    let mut polished = false;
    for _ in 0..JD_MAX_ITERATIONS {
        if res <= tol {
            if polished || res == 0.0 {
                return Ok(u);
            }
            polished = true;
        }
        let jac = jd_jacobian(&u, inertia);
        let rhs = DVector::from_iterator(r.coords().len(), r.coords().iter().map(|v| -v));
        let delta = jac.lu().solve(&rhs).ok_or(Error::Singular {
            what: "discrete inertia Jacobian",
            condition: f64::INFINITY,
        })?;
        let cand = u.compose(&Rotation::exp(&SkewMatrix::from_coords(n, delta.as_slice().to_vec())));
        let (cr, cres) = jd_residual(&cand, m, inertia);
        if !cres.is_finite() {
            return Err(Error::NonFinite("jd_solve iterate".into()));
        }
        if polished && cres > res {
            return Ok(u);
        }
        u = cand;
        r = cr;
        res = cres;
    }
    if res <= tol {
        return Ok(u);
    }
    Err(Error::NoConvergence {
        solver: "jd_solve",
        iterations: JD_MAX_ITERATIONS,
        residual: res,
    })
}

/// [`jd_solve`] in either convention.
pub fn jd_solve_with(m: &SkewMatrix, inertia: &InertiaSpec, convention: JdConvention) -> Result<Rotation> {
    let u = jd_solve(m, inertia)?;
    Ok(match convention {
        JdConvention::Standard => u,
        JdConvention::Transposed => u.transpose(),
    })
}

/// One SDRB step, also returning the generator `U_k`.
pub fn sdrb_step_with_generator(s: &DiscreteRBState, inertia: &InertiaSpec) -> Result<(DiscreteRBState, Rotation)> {
    let m = symmetric_momentum(s.q.as_matrix(), s.p.as_matrix());
    let u = jd_solve(&m, inertia)?;
    let next = DiscreteRBState {
        q: s.q.compose(&u),
        p: s.p.compose(&u),
        k: s.k + 1,
    };
    Ok((next, u))
}

pub fn sdrb_step(s: &DiscreteRBState, inertia: &InertiaSpec) -> Result<DiscreteRBState> {
    sdrb_step_with_generator(s, inertia).map(|(next, _)| next)
}

/// `steps` SDRB steps; the result holds `steps + 1` states.
pub fn sdrb_trajectory(s0: DiscreteRBState, inertia: &InertiaSpec, steps: usize) -> Result<Vec<DiscreteRBState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s0);
    for _ in 0..steps {
        let next = sdrb_step(out.last().unwrap(), inertia)?;
        out.push(next);
    }
    Ok(out)
}

/// MV algorithm 1: `(Q_k, Q_{k+1}) ↦ (Q_{k+1}, Q_{k+2})`.
pub fn mv_step_alg1(pair: (&Rotation, &Rotation), inertia: &InertiaSpec) -> Result<(Rotation, Rotation)> {
    let (q0, q1) = pair;
    let omega1 = q1.transpose().compose(q0);
    let m1 = jd_apply(&omega1.transpose(), inertia);
    let m2 = m1.conjugate(omega1.as_matrix());
    let omega2 = jd_solve_with(&m2, inertia, JdConvention::Transposed)?;
    let q2 = q1.compose(&omega2.transpose());
    Ok((q1.clone(), q2))
}

/// MV algorithm 2: `(Q_k, M_k) ↦ (Q_{k+1}, M_{k+1})`.
pub fn mv_step_alg2(s: &MVState, inertia: &InertiaSpec) -> Result<MVState> {
    let omega = jd_solve_with(&s.m, inertia, JdConvention::Transposed)?;
    let m_next = s.m.conjugate(omega.as_matrix());
    let omega_next = jd_solve_with(&m_next, inertia, JdConvention::Transposed)?;
    Ok(MVState {
        q: s.q.compose(&omega_next.transpose()),
        m: m_next,
        k: s.k + 1,
    })
}

pub fn mv_trajectory(s0: MVState, inertia: &InertiaSpec, steps: usize) -> Result<Vec<MVState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s0);
    for _ in 0..steps {
        let next = mv_step_alg2(out.last().unwrap(), inertia)?;
        out.push(next);
    }
    Ok(out)
}

/// SDRB state at step `k` to the MV state at step `k + 1`:
/// `(Q_k U_k, Q_kᵀP_k − P_kᵀQ_k)`.
pub fn sdrb_to_mv(s: &DiscreteRBState, inertia: &InertiaSpec) -> Result<MVState> {
    let m = symmetric_momentum(s.q.as_matrix(), s.p.as_matrix());
    let u = jd_solve(&m, inertia)?;
    Ok(MVState {
        q: s.q.compose(&u),
        m,
        k: s.k + 1,
    })
}

/// Largest residuals of the MV equations along a sequence of consecutive
/// states, with `Ω_k = Q_kᵀQ_{k−1}`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MvResiduals {
    /// `‖M_k − (Ω_kᵀΛ − ΛΩ_k)‖_F`.
    pub inertia: f64,
    /// `‖M_{k+1} − Ω_k M_k Ω_kᵀ‖_F`.
    pub transport: f64,
}

pub fn mv_residuals(seq: &[MVState], inertia: &InertiaSpec) -> MvResiduals {
    let mut out = MvResiduals::default();
    for w in seq.windows(2) {
        let omega = w[1].q.transpose().compose(&w[0].q);
        let r2 = (&w[1].m - &jd_apply(&omega.transpose(), inertia)).frobenius_norm();
        out.inertia = out.inertia.max(r2);
    }
    for w in seq.windows(3) {
        let omega = w[1].q.transpose().compose(&w[0].q);
        let r3 = (&w[2].m - &w[1].m.conjugate(omega.as_matrix())).frobenius_norm();
        out.transport = out.transport.max(r3);
    }
    out
}

/// `Ŝ = Σ_k tr(Q_k Λ Q_{k+1}ᵀ)`.
///
/// Panics if fewer than two rotations are given.
pub fn discrete_action(qs: &[Rotation], inertia: &InertiaSpec) -> f64 {
    assert!(qs.len() >= 2, "discrete action needs at least two rotations");
    let l = inertia.diag();
    qs.windows(2)
        .map(|w| (w[0].as_matrix() * &l * w[1].as_matrix().transpose()).trace())
        .sum()
}

/// Largest first variation of [`discrete_action`] over interior rotations,
/// computed by central differences along `Q_j exp(εe)` for each basis
/// direction `e`.
pub fn action_variation(qs: &[Rotation], inertia: &InertiaSpec, eps: f64) -> f64 {
    let n = qs[0].dim();
    let mut worst: f64 = 0.0;
    for j in 1..qs.len().saturating_sub(1) {
        for i in 0..n {
            for jj in i + 1..n {
                let e = SkewMatrix::basis(n, i, jj);
                let window = &qs[j - 1..=j + 1];
                let mut local = window.to_vec();
                local[1] = qs[j].compose(&Rotation::exp(&e.scale(eps)));
                let plus = discrete_action(&local, inertia);
                local[1] = qs[j].compose(&Rotation::exp(&e.scale(-eps)));
                let minus = discrete_action(&local, inertia);
                worst = worst.max(((plus - minus) / (2.0 * eps)).abs());
            }
        }
    }
    worst
}

/// Stack of `Q` from a list of MV states.
pub fn attitudes(seq: &[MVState]) -> Vec<Rotation> {
    seq.iter().map(|s| s.q.clone()).collect()
}

/// `J_D` evaluated on a raw matrix, used where the argument need not be
/// orthogonal.
pub fn jd_apply_matrix(u: &Matrix, inertia: &InertiaSpec) -> SkewMatrix {
    SkewMatrix::from_matrix(&(u * &inertia.diag())).scale(2.0)
}
