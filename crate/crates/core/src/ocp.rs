//! Discrete optimal control with the discrete maximum principle.
//!
//! For dynamics `x_{k+1} = f(x_k, u_k)`, running cost `g` and control
//! constraint `h(u) = 0`, extremals satisfy
//!
//! ```text
//! p_k = f_xᵀ p_{k+1} − g_x,   x_{k+1} = f(x_k, u_k),
//! f_uᵀ p_{k+1} − g_u + h_uᵀ σ = 0,   h(u_k) = 0
//! ```
//!
//! with `H(p, x, u) = ⟨p, f(x, u)⟩ − g(x, u)` and `Ĥ = H + ⟨σ, h(u)⟩`.
//! Read as an implicit map `(x_k, p_k) ↦ (x_{k+1}, p_{k+1})` this is the
//! symplectic step map.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlie::{Matrix, Rotation, SkewMatrix};
use crate::rb_discrete::jd_solve;
use crate::rb_smooth::{symmetric_momentum, InertiaSpec};

pub type Vector = DVector<f64>;

/// Relative finite-difference step used for Jacobians.
pub const FD_STEP: f64 = 1e-6;
/// Cross-Hessians with a larger condition number are treated as singular.
pub const MAX_CROSS_HESSIAN_CONDITION: f64 = 1e12;

const NEWTON_MAX_ITERATIONS: usize = 50;
const NEWTON_TOLERANCE: f64 = 1e-12;

/// Central differences of a vector map; divides by the realized step so
/// that affine maps are differentiated exactly.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector + Sync, z: &Vector, rel_step: f64) -> DMatrix<f64> {
    let cols: Vec<Vector> = (0..z.len())
        .into_par_iter()
        .map(|i| {
            let h = rel_step * z[i].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let width = zp[i] - zm[i];
            (f(&zp) - f(&zm)) / width
        })
        .collect();
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, z.len(), |r, c| cols[c][r])
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Minimum-norm least-squares solve, discarding singular values below
/// `rcond · σ_max`.
pub fn lstsq(a: &DMatrix<f64>, b: &Vector, rcond: f64) -> Vector {
    if a.ncols() == 0 {
        return Vector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let eps = rcond * svd.singular_values.max();
    svd.solve(b, eps).unwrap_or_else(|_| Vector::zeros(a.ncols()))
}

/// One step of the maximum-principle recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSolution {
    pub x_next: Vector,
    pub p_next: Vector,
    pub u: Vector,
    pub sigma: Vector,
    /// Condition number of `∂²H/∂p∂x = f_x`.
    pub cross_hessian_condition: f64,
}

/// Dynamics, cost and control constraint of a time-invariant problem on
/// flat coordinates.
pub trait ControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn constraint_dim(&self) -> usize {
        0
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector;
    fn running_cost(&self, x: &Vector, u: &Vector) -> f64;

    fn constraint(&self, _u: &Vector) -> Vector {
        Vector::zeros(0)
    }

    /// `(f_x, f_u)`; central differences unless overridden.
    fn dynamics_jacobians(&self, x: &Vector, u: &Vector) -> (DMatrix<f64>, DMatrix<f64>) {
        let fx = fd_jacobian(|x| self.dynamics(x, u), x, FD_STEP);
        let fu = fd_jacobian(|u| self.dynamics(x, u), u, FD_STEP);
        (fx, fu)
    }

    /// `(g_x, g_u)`; central differences unless overridden.
    fn cost_gradients(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        let gx = fd_jacobian(|x| Vector::from_element(1, self.running_cost(x, u)), x, FD_STEP);
        let gu = fd_jacobian(|u| Vector::from_element(1, self.running_cost(x, u)), u, FD_STEP);
        (gx.row(0).transpose(), gu.row(0).transpose())
    }

    /// `h_u`, an `l × m` matrix.
    fn constraint_jacobian(&self, u: &Vector) -> DMatrix<f64> {
        if self.constraint_dim() == 0 {
            return DMatrix::zeros(0, self.control_dim());
        }
        fd_jacobian(|u| self.constraint(u), u, FD_STEP)
    }

    /// Starting point `(p_{k+1}, u, σ)` for the generic Newton solve.
    fn initial_guess(&self, _x: &Vector, p: &Vector) -> (Vector, Vector, Vector) {
        (
            p.clone(),
            Vector::zeros(self.control_dim()),
            Vector::zeros(self.constraint_dim()),
        )
    }

    /// Solves one step of the extremal recursion.
    fn solve_step(&self, x: &Vector, p: &Vector) -> Result<StepSolution> {
        let z0 = self.initial_guess(x, p);
        newton_step(self, x, p, z0)
    }
}

fn stack(parts: &[&Vector]) -> Vector {
    let len = parts.iter().map(|v| v.len()).sum();
    let mut out = Vector::zeros(len);
    let mut off = 0;
    for v in parts {
        out.rows_mut(off, v.len()).copy_from(v);
        off += v.len();
    }
    out
}

/// `(R1, R2, R3)` of the extremal system at unknowns `(y, u, σ)`.
fn step_residual<S: ControlSystem + ?Sized>(
    sys: &S,
    x: &Vector,
    p: &Vector,
    y: &Vector,
    u: &Vector,
    sigma: &Vector,
) -> Vector {
    let (fx, fu) = sys.dynamics_jacobians(x, u);
    let (gx, gu) = sys.cost_gradients(x, u);
    let r1 = fx.transpose() * y - gx - p;
    let mut r2 = fu.transpose() * y - gu;
    if sys.constraint_dim() > 0 {
        r2 += sys.constraint_jacobian(u).transpose() * sigma;
    }
    let r3 = sys.constraint(u);
    stack(&[&r1, &r2, &r3])
}

/// Generic Newton solve of the extremal system for `(p_{k+1}, u, σ)` from
/// the starting point `z0`, with a finite-difference Jacobian.
pub fn newton_step<S: ControlSystem + ?Sized>(
    sys: &S,
    x: &Vector,
    p: &Vector,
    z0: (Vector, Vector, Vector),
) -> Result<StepSolution> {
    let n = sys.state_dim();
    let m = sys.control_dim();
    let l = sys.constraint_dim();
    let split = |z: &Vector| {
        (
            z.rows(0, n).into_owned(),
            z.rows(n, m).into_owned(),
            z.rows(n + m, l).into_owned(),
        )
    };
    let residual = |z: &Vector| {
        let (y, u, s) = split(z);
        step_residual(sys, x, p, &y, &u, &s)
    };
    let mut z = stack(&[&z0.0, &z0.1, &z0.2]);
    let mut r = residual(&z);
    let tol = NEWTON_TOLERANCE * (1.0 + x.norm() + p.norm());
    let mut polished = false;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let res = r.norm();
        if !res.is_finite() {
            return Err(Error::NonFinite("extremal step residual".into()));
        }
        if res == 0.0 || (res <= tol && polished) {
            converged = true;
            break;
        }
        if res <= tol {
            polished = true;
        }
        let jac = fd_jacobian(residual, &z, 1e-7);
        let delta = jac.lu().solve(&(-&r)).ok_or(Error::Singular {
            what: "extremal step Jacobian",
            condition: f64::INFINITY,
        })?;
        let cand = &z + delta;
        let cr = residual(&cand);
        if polished && cr.norm() > res {
            converged = true;
            break;
        }
        z = cand;
        r = cr;
    }
    if !converged && r.norm() > tol {
        return Err(Error::NoConvergence {
            solver: "extremal step",
            iterations: NEWTON_MAX_ITERATIONS,
            residual: r.norm(),
        });
    }
    let (y, u, sigma) = split(&z);
    let (fx, _) = sys.dynamics_jacobians(x, &u);
    let cond = condition_number(&fx);
    if cond > MAX_CROSS_HESSIAN_CONDITION {
        return Err(Error::Singular {
            what: "cross-Hessian ∂²H/∂p∂x",
            condition: cond,
        });
    }
    Ok(StepSolution {
        x_next: sys.dynamics(x, &u),
        p_next: y,
        u,
        sigma,
        cross_hessian_condition: cond,
    })
}

/// `H(p_{k+1}, x_k, u_k) = ⟨p_{k+1}, f(x_k, u_k)⟩ − g(x_k, u_k)`.
pub fn hamiltonian<S: ControlSystem + ?Sized>(sys: &S, p_next: &Vector, x: &Vector, u: &Vector) -> f64 {
    p_next.dot(&sys.dynamics(x, u)) - sys.running_cost(x, u)
}

/// `Ĥ = H + ⟨σ, h(u)⟩`.
pub fn augmented_hamiltonian<S: ControlSystem + ?Sized>(
    sys: &S,
    p_next: &Vector,
    x: &Vector,
    u: &Vector,
    sigma: &Vector,
) -> f64 {
    let h = sys.constraint(u);
    hamiltonian(sys, p_next, x, u) + sigma.dot(&h)
}

/// Two-point boundary problem on a horizon of `N` steps.
#[derive(Clone, Debug)]
pub struct DiscreteOCP<S> {
    pub system: S,
    pub horizon: usize,
    pub x0: Vector,
    pub xn: Vector,
}

impl<S: ControlSystem> DiscreteOCP<S> {
    pub fn new(system: S, horizon: usize, x0: Vector, xn: Vector) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Precondition("horizon must be at least 1".into()));
        }
        let n = system.state_dim();
        for v in [&x0, &xn] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
        }
        Ok(DiscreteOCP {
            system,
            horizon,
            x0,
            xn,
        })
    }
}

/// States `x_0..x_N`, costates `p_0..p_N`, controls and multipliers for
/// `k = 0..N−1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalTrajectory {
    pub x: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl ExtremalTrajectory {
    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn x_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.x[k])
    }

    pub fn p_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.p[k])
    }

    pub fn u_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.u[k])
    }
}

/// `(x_{k+1}, p_{k+1})` from `(x_k, p_k)`.
pub fn step_map<S: ControlSystem + ?Sized>(sys: &S, x: &Vector, p: &Vector) -> Result<(Vector, Vector)> {
    let s = sys.solve_step(x, p)?;
    Ok((s.x_next, s.p_next))
}

/// Runs the extremal recursion for `steps` steps from `(x0, p0)`.
pub fn forward_extremal<S: ControlSystem + ?Sized>(
    sys: &S,
    x0: &Vector,
    p0: &Vector,
    steps: usize,
) -> Result<ExtremalTrajectory> {
    let mut traj = ExtremalTrajectory {
        x: vec![x0.as_slice().to_vec()],
        p: vec![p0.as_slice().to_vec()],
        u: Vec::with_capacity(steps),
        sigma: Vec::with_capacity(steps),
    };
    let mut x = x0.clone();
    let mut p = p0.clone();
    for _ in 0..steps {
        let s = sys.solve_step(&x, &p)?;
        traj.u.push(s.u.as_slice().to_vec());
        traj.sigma.push(s.sigma.as_slice().to_vec());
        traj.x.push(s.x_next.as_slice().to_vec());
        traj.p.push(s.p_next.as_slice().to_vec());
        x = s.x_next;
        p = s.p_next;
    }
    Ok(traj)
}

/// Per-step residuals of the extremal equations; `σ` is refitted by least
/// squares from the stationarity condition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtremalResiduals {
    pub dynamics: Vec<f64>,
    pub costate: Vec<f64>,
    pub stationarity: Vec<f64>,
    pub constraint: Vec<f64>,
    /// `‖x_0 − x0‖` and `‖x_N − xN‖`.
    pub initial: f64,
    pub terminal: f64,
}

impl ExtremalResiduals {
    /// Largest interior residual (excluding the boundary terms).
    pub fn max_interior(&self) -> f64 {
        self.dynamics
            .iter()
            .chain(&self.costate)
            .chain(&self.stationarity)
            .chain(&self.constraint)
            .fold(0.0, |a, b| a.max(*b))
    }

    pub fn max(&self) -> f64 {
        self.max_interior().max(self.initial).max(self.terminal)
    }
}

pub fn extremal_residuals<S: ControlSystem>(traj: &ExtremalTrajectory, prob: &DiscreteOCP<S>) -> ExtremalResiduals {
    let sys = &prob.system;
    let mut out = ExtremalResiduals::default();
    for k in 0..traj.horizon() {
        let x = traj.x_at(k);
        let u = traj.u_at(k);
        let y = traj.p_at(k + 1);
        let (fx, fu) = sys.dynamics_jacobians(&x, &u);
        let (gx, gu) = sys.cost_gradients(&x, &u);
        out.dynamics.push((sys.dynamics(&x, &u) - traj.x_at(k + 1)).norm());
        out.costate.push((fx.transpose() * &y - gx - traj.p_at(k)).norm());
        let base = fu.transpose() * &y - gu;
        let stat = if sys.constraint_dim() > 0 {
            let hut = sys.constraint_jacobian(&u).transpose();
            let sigma = lstsq(&hut, &(-&base), 1e-12);
            base + hut * sigma
        } else {
            base
        };
        out.stationarity.push(stat.norm());
        out.constraint.push(sys.constraint(&u).norm());
    }
    out.initial = (traj.x_at(0) - &prob.x0).norm();
    out.terminal = (traj.x_at(traj.horizon()) - &prob.xn).norm();
    out
}

/// Total running cost `Σ g(x_k, u_k)`.
pub fn total_cost<S: ControlSystem + ?Sized>(sys: &S, traj: &ExtremalTrajectory) -> f64 {
    (0..traj.horizon())
        .map(|k| sys.running_cost(&traj.x_at(k), &traj.u_at(k)))
        .sum()
}

/// `‖DΦᵀ 𝕁 DΦ − 𝕁‖_F` for the step map `Φ`, with `DΦ` from central
/// differences.
pub fn symplectic_check<S: ControlSystem + ?Sized>(sys: &S, x: &Vector, p: &Vector) -> Result<f64> {
    let n = sys.state_dim();
    let z = stack(&[x, p]);
    let cols: Vec<Result<Vector>> = (0..2 * n)
        .into_par_iter()
        .map(|i| {
            let h = FD_STEP * z[i].abs().max(1.0);
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let width = zp[i] - zm[i];
            let eval = |w: &Vector| -> Result<Vector> {
                let (xn, pn) = step_map(sys, &w.rows(0, n).into_owned(), &w.rows(n, n).into_owned())?;
                Ok(stack(&[&xn, &pn]))
            };
            Ok((eval(&zp)? - eval(&zm)?) / width)
        })
        .collect();
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for (c, col) in cols.into_iter().enumerate() {
        d.set_column(c, &col?);
    }
    let mut jj = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        jj[(i, n + i)] = 1.0;
        jj[(n + i, i)] = -1.0;
    }
    Ok((d.transpose() * &jj * &d - jj).norm())
}

/// Outcome of [`shoot`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShootResult {
    pub trajectory: ExtremalTrajectory,
    pub iterations: usize,
    pub endpoint_error: f64,
}

pub const SHOOT_MAX_ITERATIONS: usize = 40;
pub const SHOOT_TOLERANCE: f64 = 1e-8;

/// Damped Gauss–Newton on `p_0 ↦ x_N(p_0) − xN`.
///
/// The Jacobian is formed by central differences and inverted in the
/// least-squares sense, since for manifold-valued states the endpoint only
/// depends on some directions of `p_0`. Steps are halved until the endpoint
/// error decreases.
pub fn shoot<S: ControlSystem>(prob: &DiscreteOCP<S>, p0_guess: &Vector) -> Result<ShootResult> {
    let sys = &prob.system;
    let endpoint = |p0: &Vector| -> Result<(ExtremalTrajectory, Vector)> {
        let traj = forward_extremal(sys, &prob.x0, p0, prob.horizon)?;
        let err = traj.x_at(prob.horizon) - &prob.xn;
        Ok((traj, err))
    };
    let mut p0 = p0_guess.clone();
    let (mut traj, mut err) = endpoint(&p0)?;
    let mut iterations = 0;
    while err.norm() > SHOOT_TOLERANCE {
        if iterations == SHOOT_MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                solver: "shooting",
                iterations,
                residual: err.norm(),
            });
        }
        iterations += 1;
        let cols: Vec<Result<Vector>> = (0..p0.len())
            .into_par_iter()
            .map(|i| {
                let h = 1e-7 * p0[i].abs().max(1.0);
                let mut pp = p0.clone();
                let mut pm = p0.clone();
                pp[i] += h;
                pm[i] -= h;
                let width = pp[i] - pm[i];
                Ok((endpoint(&pp)?.1 - endpoint(&pm)?.1) / width)
            })
            .collect();
        let mut jac = DMatrix::zeros(err.len(), p0.len());
        for (c, col) in cols.into_iter().enumerate() {
            jac.set_column(c, &col?);
        }
        let step = lstsq(&jac, &(-&err), 1e-8);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let cand = &p0 + &step * alpha;
            if let Ok((t, e)) = endpoint(&cand) {
                if e.norm() < err.norm() {
                    p0 = cand;
                    traj = t;
                    err = e;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                solver: "shooting",
                iterations,
                residual: err.norm(),
            });
        }
    }
    Ok(ShootResult {
        trajectory: traj,
        iterations,
        endpoint_error: err.norm(),
    })
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// `f(x, u) = Ax + Bu`, `g(x, u) = ½xᵀCx + ½uᵀRu`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQuadratic {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ControlSystem for LinearQuadratic {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
    fn running_cost(&self, x: &Vector, u: &Vector) -> f64 {
        0.5 * x.dot(&(&self.c * x)) + 0.5 * u.dot(&(&self.r * u))
    }
    fn dynamics_jacobians(&self, _x: &Vector, _u: &Vector) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
    fn cost_gradients(&self, x: &Vector, u: &Vector) -> (Vector, Vector) {
        (&self.c * x, &self.r * u)
    }
}

/// `f(x) = x` with no control and no cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentitySystem {
    pub n: usize,
}

impl ControlSystem for IdentitySystem {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        0
    }
    fn dynamics(&self, x: &Vector, _u: &Vector) -> Vector {
        x.clone()
    }
    fn running_cost(&self, _x: &Vector, _u: &Vector) -> f64 {
        0.0
    }
    fn dynamics_jacobians(&self, _x: &Vector, _u: &Vector) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::identity(self.n, self.n), DMatrix::zeros(self.n, 0))
    }
    fn cost_gradients(&self, _x: &Vector, _u: &Vector) -> (Vector, Vector) {
        (Vector::zeros(self.n), Vector::zeros(0))
    }
}

/// Rigid body as a control system: `x = vec(Q)`, `u = vec(U)` (row-major),
/// `f = QU`, `g = tr(ΛU)`, `h(U)` the upper triangle (with diagonal) of
/// `UᵀU − I`.
///
/// The generic costate is the negative of the `P` of the symmetric
/// discrete rigid body: extremals are `Q_{k+1} = Q_k U_k`,
/// `p_{k+1} = p_k U_k` with `U_kΛ − ΛU_kᵀ = p_kᵀQ_k − Q_kᵀp_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidBodySystem {
    pub inertia: InertiaSpec,
}

impl RigidBodySystem {
    pub fn n(&self) -> usize {
        self.inertia.dim()
    }

    fn mat(&self, v: &Vector) -> Matrix {
        Matrix::from_row_slice(self.n(), v.as_slice())
    }

    fn vec(m: &Matrix) -> Vector {
        Vector::from_vec(m.to_row_major())
    }
}

impl ControlSystem for RigidBodySystem {
    fn state_dim(&self) -> usize {
        self.n() * self.n()
    }
    fn control_dim(&self) -> usize {
        self.n() * self.n()
    }
    fn constraint_dim(&self) -> usize {
        self.n() * (self.n() + 1) / 2
    }

    fn dynamics(&self, x: &Vector, u: &Vector) -> Vector {
        Self::vec(&(self.mat(x) * self.mat(u)))
    }

    fn running_cost(&self, _x: &Vector, u: &Vector) -> f64 {
        let u = self.mat(u);
        self.inertia
            .lambda()
            .iter()
            .enumerate()
            .map(|(i, l)| l * u.get(i, i))
            .sum()
    }

    fn constraint(&self, u: &Vector) -> Vector {
        let n = self.n();
        let u = self.mat(u);
        let utu = u.transpose() * &u;
        let mut out = Vec::with_capacity(self.constraint_dim());
        for i in 0..n {
            for j in i..n {
                out.push(utu.get(i, j) - if i == j { 1.0 } else { 0.0 });
            }
        }
        Vector::from_vec(out)
    }

    fn dynamics_jacobians(&self, x: &Vector, u: &Vector) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n();
        let q = self.mat(x);
        let um = self.mat(u);
        let nn = n * n;
        let mut fx = DMatrix::zeros(nn, nn);
        let mut fu = DMatrix::zeros(nn, nn);
        // (QU)_ij = Σ_a Q_ia U_aj.
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    fx[(i * n + j, i * n + a)] = um.get(a, j);
                    fu[(i * n + j, a * n + j)] = q.get(i, a);
                }
            }
        }
        (fx, fu)
    }

    fn cost_gradients(&self, _x: &Vector, _u: &Vector) -> (Vector, Vector) {
        let n = self.n();
        (Vector::zeros(n * n), Self::vec(&self.inertia.diag()))
    }

    fn constraint_jacobian(&self, u: &Vector) -> DMatrix<f64> {
        let n = self.n();
        let um = self.mat(u);
        let mut jac = DMatrix::zeros(self.constraint_dim(), n * n);
        let mut row = 0;
        // ∂(UᵀU)_ij / ∂U_ab = δ_bi U_aj + U_ai δ_bj.
        for i in 0..n {
            for j in i..n {
                for a in 0..n {
                    jac[(row, a * n + i)] += um.get(a, j);
                    jac[(row, a * n + j)] += um.get(a, i);
                }
                row += 1;
            }
        }
        jac
    }

    fn initial_guess(&self, x: &Vector, p: &Vector) -> (Vector, Vector, Vector) {
        let u = self.inertia.j_inv(&symmetric_momentum(&self.mat(p), &self.mat(x)));
        let u = Rotation::exp(&u);
        let y = self.mat(p) * u.as_matrix();
        (
            Self::vec(&y),
            Self::vec(u.as_matrix()),
            Vector::zeros(self.constraint_dim()),
        )
    }

    fn solve_step(&self, x: &Vector, p: &Vector) -> Result<StepSolution> {
        let q = self.mat(x);
        let pm = self.mat(p);
        let u = jd_solve(&symmetric_momentum(&pm, &q), &self.inertia)?;
        let uv = Self::vec(u.as_matrix());
        let y = &pm * u.as_matrix();
        let yv = Self::vec(&y);
        // σ from the stationarity condition in the least-squares sense.
        let (_, fu) = self.dynamics_jacobians(x, &uv);
        let (_, gu) = self.cost_gradients(x, &uv);
        let hut = self.constraint_jacobian(&uv).transpose();
        let sigma = lstsq(&hut, &(gu - fu.transpose() * &yv), 1e-12);
        Ok(StepSolution {
            x_next: Self::vec(&(&q * u.as_matrix())),
            p_next: yv,
            u: uv,
            sigma,
            // f_x is right multiplication by an orthogonal U.
            cross_hessian_condition: 1.0,
        })
    }
}

/// Optimal control form of the discrete rigid body between two attitudes.
pub fn rigid_ocp(
    inertia: &InertiaSpec,
    q0: &Rotation,
    qn: &Rotation,
    horizon: usize,
) -> Result<DiscreteOCP<RigidBodySystem>> {
    let n = inertia.dim();
    for q in [q0, qn] {
        if q.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: q.dim(),
            });
        }
    }
    DiscreteOCP::new(
        RigidBodySystem {
            inertia: inertia.clone(),
        },
        horizon,
        Vector::from_vec(q0.as_matrix().to_row_major()),
        Vector::from_vec(qn.as_matrix().to_row_major()),
    )
}

/// Generic costate for a symmetric discrete rigid body momentum `P`.
pub fn rigid_costate(p_sdrb: &Rotation) -> Vector {
    Vector::from_vec(p_sdrb.as_matrix().scale(-1.0).to_row_major())
}

/// Attitude `Q` from a flat rigid-body state.
pub fn rigid_attitude(x: &[f64]) -> Result<Rotation> {
    let n = (x.len() as f64).sqrt().round() as usize;
    Rotation::try_from_matrix(Matrix::try_from_row_slice(n, x)?)
}

/// Body momentum `Q_kᵀP_k − P_kᵀQ_k` (with `P = −p`) at step `k`.
pub fn rigid_momentum(traj: &ExtremalTrajectory, k: usize) -> SkewMatrix {
    let n = (traj.x[k].len() as f64).sqrt().round() as usize;
    let q = Matrix::from_row_slice(n, &traj.x[k]);
    let p = Matrix::from_row_slice(n, &traj.p[k]);
    symmetric_momentum(&p, &q)
}

/// JSON record of a solved instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpRecord {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub x0: Vec<f64>,
    #[serde(rename = "xN")]
    pub xn: Vec<f64>,
    pub trajectory: ExtremalTrajectory,
    pub residuals: ExtremalResiduals,
}

impl OcpRecord {
    pub fn new<S: ControlSystem>(prob: &DiscreteOCP<S>, traj: ExtremalTrajectory) -> Self {
        let residuals = extremal_residuals(&traj, prob);
        OcpRecord {
            n: prob.system.state_dim(),
            m: prob.system.control_dim(),
            l: prob.system.constraint_dim(),
            horizon: prob.horizon,
            x0: prob.x0.as_slice().to_vec(),
            xn: prob.xn.as_slice().to_vec(),
            trajectory: traj,
            residuals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rb_discrete::{discrete_action, sdrb_step_with_generator, sdrb_to_mv, sdrb_trajectory, DiscreteRBState};
    use proptest::prelude::*;

    fn lq() -> LinearQuadratic {
        LinearQuadratic {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.2, 0.9]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
            c: DMatrix::zeros(2, 2),
            r: DMatrix::from_row_slice(1, 1, &[2.0]),
        }
    }

    fn lq_full() -> LinearQuadratic {
        LinearQuadratic {
            a: DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, -0.1, 0.8, 0.3, 0.05, 0.0, 1.1]),
            b: DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.5, 0.0, 0.2, -0.3]),
            c: DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 2.0, 0.0, 0.0, 0.0, 0.5]),
            r: DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.0]),
        }
    }

    fn inertia123() -> InertiaSpec {
        InertiaSpec::new(vec![1.0, 2.0, 3.0]).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn flat(m: &Matrix) -> Vector {
        Vector::from_vec(m.to_row_major())
    }

    #[test]
    fn hamiltonian_examples() {
        let id = IdentitySystem { n: 3 };
        let p = v(&[1.0, 2.0, 3.0]);
        let x = v(&[0.5, -1.0, 2.0]);
        assert_eq!(hamiltonian(&id, &p, &x, &Vector::zeros(0)), p.dot(&x));

        let sys = lq_full();
        let x = v(&[0.3, -0.2, 0.7]);
        let u = v(&[1.0, -0.5]);
        let p = v(&[0.4, 0.1, -0.6]);
        let ax = &sys.a * &x + &sys.b * &u;
        let hand = p[0] * ax[0] + p[1] * ax[1] + p[2] * ax[2]
            - 0.5 * (x.transpose() * &sys.c * &x)[0]
            - 0.5 * (u.transpose() * &sys.r * &u)[0];
        assert!((hamiltonian(&sys, &p, &x, &u) - hand).abs() < 1e-15);

        let l = inertia123();
        let rb = RigidBodySystem { inertia: l.clone() };
        let q = Rotation::exp(&SkewMatrix::hat([0.1, 0.4, -0.2]));
        let um = Rotation::exp(&SkewMatrix::hat([0.3, -0.1, 0.2]));
        let pm = Matrix::from_fn(3, |i, j| (i as f64 - 0.5 * j as f64).sin());
        let expected = ((pm.transpose() * q.as_matrix() - l.diag()) * um.as_matrix()).trace();
        let h = hamiltonian(&rb, &flat(&pm), &flat(q.as_matrix()), &flat(um.as_matrix()));
        assert!((h - expected).abs() < 1e-14);
        // Constraint is satisfied on SO(n), so Ĥ = H.
        let sigma = Vector::from_element(6, 0.7);
        let ha = augmented_hamiltonian(&rb, &flat(&pm), &flat(q.as_matrix()), &flat(um.as_matrix()), &sigma);
        assert!((ha - h).abs() < 1e-14);
    }

    #[test]
    fn identity_step_is_fixed() {
        let id = IdentitySystem { n: 2 };
        let x = v(&[0.3, 1.0]);
        let p = v(&[-2.0, 0.5]);
        let (xn, pn) = step_map(&id, &x, &p).unwrap();
        assert_eq!(xn, x);
        assert_eq!(pn, p);
        assert_eq!(symplectic_check(&id, &x, &p).unwrap(), 0.0);
    }

    #[test]
    fn lq_single_step_matches_hand_solution() {
        // C = 0: p_{k+1} = A⁻ᵀ p_k, u = R⁻¹Bᵀp_{k+1}.
        let sys = lq();
        let x = v(&[1.0, -0.5]);
        let p = v(&[0.3, 0.8]);
        let s = sys.solve_step(&x, &p).unwrap();
        let y = sys.a.transpose().lu().solve(&p).unwrap();
        let u = sys.r.clone().lu().solve(&(sys.b.transpose() * &y)).unwrap();
        assert!((&s.p_next - &y).norm() < 1e-12);
        assert!((&s.u - &u).norm() < 1e-12);
        assert!((&s.x_next - (&sys.a * &x + &sys.b * &u)).norm() < 1e-12);
        assert!(s.cross_hessian_condition >= 1.0);
    }

    #[test]
    fn lq_step_is_symplectic() {
        let sys = lq_full();
        let d = symplectic_check(&sys, &v(&[0.2, -0.4, 1.0]), &v(&[1.0, 0.3, -0.5])).unwrap();
        assert!(d <= 1e-6, "{d}");
    }

    #[test]
    fn non_symplectic_map_is_detected() {
        // A system whose "step" scales x and leaves p: not symplectic.
        struct Dilation;
        impl ControlSystem for Dilation {
            fn state_dim(&self) -> usize {
                1
            }
            fn control_dim(&self) -> usize {
                0
            }
            fn dynamics(&self, x: &Vector, _u: &Vector) -> Vector {
                x * 2.0
            }
            fn running_cost(&self, _x: &Vector, _u: &Vector) -> f64 {
                0.0
            }
            fn solve_step(&self, x: &Vector, p: &Vector) -> Result<StepSolution> {
                Ok(StepSolution {
                    x_next: x * 2.0,
                    p_next: p.clone(),
                    u: Vector::zeros(0),
                    sigma: Vector::zeros(0),
                    cross_hessian_condition: 1.0,
                })
            }
        }
        let d = symplectic_check(&Dilation, &v(&[1.0]), &v(&[1.0])).unwrap();
        assert!((d - 2.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn singular_cross_hessian_is_reported() {
        let sys = LinearQuadratic {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            c: DMatrix::zeros(2, 2),
            r: DMatrix::from_row_slice(1, 1, &[1.0]),
        };
        assert!(matches!(
            sys.solve_step(&v(&[1.0, 1.0]), &v(&[0.0, 1.0])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn lq_shooting_matches_direct_solve() {
        let sys = lq();
        let horizon = 4;
        let x0 = v(&[1.0, 0.0]);
        let xn = v(&[0.0, 0.5]);
        // x_N = A^N x0 + G p0 with G = Σ A^{N−1−k} B R⁻¹ Bᵀ A^{−ᵀ(k+1)}.
        let a_inv_t = sys.a.transpose().try_inverse().unwrap();
        let r_inv = sys.r.clone().try_inverse().unwrap();
        let mut g = DMatrix::zeros(2, 2);
        for k in 0..horizon {
            g +=
                sys.a.pow((horizon - 1 - k) as u32) * &sys.b * &r_inv * sys.b.transpose() * a_inv_t.pow((k + 1) as u32);
        }
        let p0 = g.lu().solve(&(&xn - sys.a.pow(horizon as u32) * &x0)).unwrap();

        let prob = DiscreteOCP::new(sys, horizon, x0, xn).unwrap();
        let res = shoot(&prob, &Vector::zeros(2)).unwrap();
        assert!(res.endpoint_error <= 1e-8);
        assert!((res.trajectory.p_at(0) - p0).norm() < 1e-6);
        let r = extremal_residuals(&res.trajectory, &prob);
        assert!(r.max() <= 1e-8, "{r:?}");
    }

    #[test]
    fn shooting_from_exact_guess_needs_no_iterations() {
        let sys = lq_full();
        let x0 = v(&[0.1, 0.2, 0.3]);
        let p0 = v(&[0.5, -0.2, 0.1]);
        let fwd = forward_extremal(&sys, &x0, &p0, 3).unwrap();
        let prob = DiscreteOCP::new(sys, 3, x0, fwd.x_at(3)).unwrap();
        let res = shoot(&prob, &p0).unwrap();
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn residuals_detect_perturbed_control() {
        let sys = lq_full();
        let x0 = v(&[0.1, 0.2, 0.3]);
        let traj = forward_extremal(&sys, &x0, &v(&[0.5, -0.2, 0.1]), 3).unwrap();
        let prob = DiscreteOCP::new(sys, 3, x0, traj.x_at(3)).unwrap();
        let r = extremal_residuals(&traj, &prob);
        assert!(r.costate.iter().all(|c| *c < 1e-12));
        assert!(r.max() < 1e-10);

        let mut bent = traj.clone();
        let eps = 1e-3;
        bent.u[1][0] += eps;
        let r1 = extremal_residuals(&bent, &prob).stationarity[1];
        bent.u[1][0] += eps;
        let r2 = extremal_residuals(&bent, &prob).stationarity[1];
        assert!(r1 > 1e-5);
        assert!((r2 / r1 - 2.0).abs() < 1e-6, "not linear in ε: {r1} {r2}");
    }

    #[test]
    fn generic_newton_agrees_with_rigid_solver() {
        let l = inertia123();
        let sys = RigidBodySystem { inertia: l };
        let q = Rotation::exp(&SkewMatrix::hat([0.2, -0.3, 0.1]));
        let p = Rotation::exp(&SkewMatrix::hat([0.4, 0.1, 0.2]));
        let x = flat(q.as_matrix());
        let pc = rigid_costate(&p);
        let fast = sys.solve_step(&x, &pc).unwrap();
        let generic = newton_step(&sys, &x, &pc, sys.initial_guess(&x, &pc)).unwrap();
        assert!((&fast.u - &generic.u).norm() < 1e-10);
        assert!((&fast.p_next - &generic.p_next).norm() < 1e-10);
        assert!((&fast.sigma - &generic.sigma).norm() < 1e-8);
    }

    #[test]
    fn rigid_extremals_are_sdrb() {
        let l = inertia123();
        let s0 = DiscreteRBState {
            q: Rotation::exp(&SkewMatrix::hat([0.2, -0.3, 0.1])),
            p: Rotation::exp(&SkewMatrix::hat([0.4, 0.1, 0.2])),
            k: 0,
        };
        let sdrb = sdrb_trajectory(s0.clone(), &l, 6).unwrap();
        let prob = rigid_ocp(&l, &s0.q, &sdrb[6].q, 6).unwrap();
        let traj = forward_extremal(&prob.system, &prob.x0, &rigid_costate(&s0.p), 6).unwrap();
        for (k, s) in sdrb.iter().enumerate() {
            assert!((traj.x_at(k) - flat(s.q.as_matrix())).norm() < 1e-12);
            assert!((traj.p_at(k) - rigid_costate(&s.p)).norm() < 1e-12);
            let mv = sdrb_to_mv(s, &l).unwrap();
            assert!((&rigid_momentum(&traj, k) - &mv.m).frobenius_norm() < 1e-12);
        }
        let r = extremal_residuals(&traj, &prob);
        assert!(r.max() <= 1e-10, "{r:?}");

        let qs: Vec<Rotation> = sdrb.iter().map(|s| s.q.clone()).collect();
        assert!((total_cost(&prob.system, &traj) - discrete_action(&qs, &l)).abs() < 1e-12);
    }

    #[test]
    fn rigid_one_step_recovers_generator() {
        let l = inertia123();
        let q0 = Rotation::exp(&SkewMatrix::hat([0.1, 0.2, 0.3]));
        let u = Rotation::exp(&SkewMatrix::hat([0.2, -0.1, 0.15]));
        let prob = rigid_ocp(&l, &q0, &q0.compose(&u), 1).unwrap();
        // Guess: costate of the identity step.
        let res = shoot(&prob, &rigid_costate(&q0)).unwrap();
        let found = Matrix::from_row_slice(3, &res.trajectory.u[0]);
        assert!((found - u.as_matrix()).frobenius_norm() < 1e-8);
    }

    #[test]
    fn rigid_step_is_symplectic() {
        let l = inertia123();
        let sys = RigidBodySystem { inertia: l };
        let q = Rotation::exp(&SkewMatrix::hat([0.5, -0.2, 0.3]));
        let p = Rotation::exp(&SkewMatrix::hat([0.1, 0.6, -0.4]));
        let d = symplectic_check(&sys, &flat(q.as_matrix()), &rigid_costate(&p)).unwrap();
        assert!(d <= 1e-5, "{d}");
    }

    #[test]
    fn rigid_shooting_from_perturbed_guess() {
        let l = inertia123();
        let s0 = DiscreteRBState {
            q: Rotation::exp(&SkewMatrix::hat([0.2, -0.3, 0.1])),
            p: Rotation::exp(&SkewMatrix::hat([0.3, 0.25, -0.1])),
            k: 0,
        };
        let (_, _) = sdrb_step_with_generator(&s0, &l).unwrap();
        let sdrb = sdrb_trajectory(s0.clone(), &l, 10).unwrap();
        let prob = rigid_ocp(&l, &s0.q, &sdrb[10].q, 10).unwrap();
        let guess = rigid_costate(&s0.p) * 1.1;
        let res = shoot(&prob, &guess).unwrap();
        assert!(res.endpoint_error <= 1e-8);
        assert!(res.iterations <= 40);
        let r = extremal_residuals(&res.trajectory, &prob);
        assert!(r.max() <= 1e-8, "{r:?}");
    }

    #[test]
    fn record_serializes_with_expected_keys() {
        let sys = lq();
        let x0 = v(&[1.0, 0.0]);
        let traj = forward_extremal(&sys, &x0, &v(&[0.1, 0.2]), 2).unwrap();
        let prob = DiscreteOCP::new(sys, 2, x0, traj.x_at(2)).unwrap();
        let rec = OcpRecord::new(&prob, traj);
        let json = serde_json::to_value(&rec).unwrap();
        for key in ["n", "m", "l", "N", "x0", "xN", "trajectory", "residuals"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        for key in ["x", "p", "u", "sigma"] {
            assert!(json["trajectory"].get(key).is_some(), "missing trajectory.{key}");
        }
        let back: OcpRecord = serde_json::from_value(json).unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lq_symplectic_everywhere(x in proptest::collection::vec(-2.0f64..2.0, 3), p in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let d = symplectic_check(&lq_full(), &v(&x), &v(&p)).unwrap();
            prop_assert!(d <= 1e-6);
        }

        #[test]
        fn rigid_symplectic_everywhere(a in proptest::collection::vec(-0.5f64..0.5, 3), b in proptest::collection::vec(-0.5f64..0.5, 3)) {
            let sys = RigidBodySystem { inertia: inertia123() };
            let q = Rotation::exp(&SkewMatrix::hat([a[0], a[1], a[2]]));
            let p = Rotation::exp(&SkewMatrix::hat([b[0], b[1], b[2]]));
            let d = symplectic_check(&sys, &flat(q.as_matrix()), &rigid_costate(&p)).unwrap();
            prop_assert!(d <= 1e-5);
        }
    }
}
