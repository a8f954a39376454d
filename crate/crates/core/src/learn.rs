//! Multi-sample terminal-cost control, i.e. training a network whose layers
//! are the time steps.
//!
//! Every sample `a` is pushed through the same controls,
//! `xᵃ_{k+1} = f(xᵃ_k, u_k)`, and the objective is
//!
//! ```text
//! J(u) = Σ_a Σ_k g(xᵃ_k, u_k) + Σ_k c(u_k) + Σ_a φ_a(xᵃ_N)
//! ```
//!
//! where `c` is a per-layer control cost. Back-propagation is the backward
//! costate sweep
//!
//! ```text
//! pᵃ_N = ∇φ_a(xᵃ_N),   pᵃ_k = f_xᵀ pᵃ_{k+1} + g_x,
//! ∇_{u_k} J = Σ_a (f_uᵀ pᵃ_{k+1} + g_u) + ∇c(u_k)
//! ```
//!
//! so `p` is the gradient of the cost-to-go (the negative of the
//! maximum-principle costate when the running cost is non-zero).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matlie::{Matrix, Rotation, SkewMatrix};
use crate::ocp::Vector;
use crate::rb_discrete::jd_apply;
use crate::rb_smooth::{symmetric_momentum, InertiaSpec};

/// One layer map `x ↦ f(x, u)` shared by all layers and samples.
pub trait Layer: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    fn forward(&self, x: &Vector, u: &Vector) -> Vector;
    /// `f_xᵀ p`.
    fn vjp_x(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector;
    /// `f_uᵀ p`.
    fn vjp_u(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector;

    /// Per-sample running cost `g(x, u)`.
    fn running_cost(&self, _x: &Vector, _u: &Vector) -> f64 {
        0.0
    }
    /// `(g_x, g_u)`.
    fn running_cost_gradient(&self, _x: &Vector, _u: &Vector) -> (Vector, Vector) {
        (Vector::zeros(self.state_dim()), Vector::zeros(self.control_dim()))
    }

    /// Per-layer control cost `c(u)`, counted once regardless of `M`.
    fn control_cost(&self, _u: &Vector) -> f64 {
        0.0
    }
    fn control_cost_gradient(&self, _u: &Vector) -> Vector {
        Vector::zeros(self.control_dim())
    }

    /// Dimension of the space the gradient lives in.
    fn tangent_dim(&self) -> usize {
        self.control_dim()
    }
    /// Converts a Euclidean gradient at `u` into tangent coordinates.
    fn project_gradient(&self, _u: &Vector, euclidean: Vector) -> Vector {
        euclidean
    }
    /// Limits a tangent step before retraction.
    fn clip_step(&self, step: Vector) -> Vector {
        step
    }
    /// Moves `u` along a tangent step.
    fn retract(&self, u: &Vector, step: &Vector) -> Vector {
        u + step
    }
}

/// Terminal cost `φ` of one sample.
pub trait TerminalCost: Send + Sync {
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
}

/// `φ(x) = ½‖x − x*‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTarget {
    pub target: Vector,
}

impl TerminalCost for QuadraticTarget {
    fn value(&self, x: &Vector) -> f64 {
        0.5 * (x - &self.target).norm_squared()
    }
    fn gradient(&self, x: &Vector) -> Vector {
        x - &self.target
    }
}

/// `φ(Q) = −tr(Q̄ᵀQ)` on row-major flattened matrices; gradient `−Q̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceTarget {
    pub target: Vector,
}

impl TraceTarget {
    pub fn new(target: &Rotation) -> Self {
        TraceTarget {
            target: Vector::from_vec(target.as_matrix().to_row_major()),
        }
    }
}

impl TerminalCost for TraceTarget {
    fn value(&self, x: &Vector) -> f64 {
        -self.target.dot(x)
    }
    fn gradient(&self, _x: &Vector) -> Vector {
        -&self.target
    }
}

/// `φ ≡ 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroCost;

impl TerminalCost for ZeroCost {
    fn value(&self, _x: &Vector) -> f64 {
        0.0
    }
    fn gradient(&self, x: &Vector) -> Vector {
        Vector::zeros(x.len())
    }
}

/// `M` samples pushed through `N` layers.
#[derive(Clone, Debug)]
pub struct LearningProblem<L, T> {
    pub layer: L,
    pub layers: usize,
    pub samples: Vec<Vector>,
    /// One terminal cost per sample.
    pub terminal: Vec<T>,
}

impl<L: Layer, T: TerminalCost> LearningProblem<L, T> {
    pub fn new(layer: L, layers: usize, samples: Vec<Vector>, terminal: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Precondition("at least one sample is required".into()));
        }
        if terminal.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                found: terminal.len(),
            });
        }
        for s in &samples {
            if s.len() != layer.state_dim() {
                return Err(Error::DimensionMismatch {
                    expected: layer.state_dim(),
                    found: s.len(),
                });
            }
        }
        Ok(LearningProblem {
            layer,
            layers,
            samples,
            terminal,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    fn check_controls(&self, controls: &[Vector]) -> Result<()> {
        if controls.len() != self.layers {
            return Err(Error::DimensionMismatch {
                expected: self.layers,
                found: controls.len(),
            });
        }
        for u in controls {
            if u.len() != self.layer.control_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.layer.control_dim(),
                    found: u.len(),
                });
            }
        }
        Ok(())
    }
}

/// States `[a][k]` for `k = 0..=N`, costates likewise (empty until the
/// backward sweep), shared controls and the objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepBundle {
    pub states: Vec<Vec<Vector>>,
    pub costates: Vec<Vec<Vector>>,
    pub controls: Vec<Vector>,
    pub cost: f64,
}

impl SweepBundle {
    /// `Σ_a φ_a(xᵃ_N)` part of the cost is not stored separately; this
    /// recomputes it.
    pub fn terminal_cost<L: Layer, T: TerminalCost>(&self, prob: &LearningProblem<L, T>) -> f64 {
        self.states
            .iter()
            .zip(&prob.terminal)
            .map(|(xs, phi)| phi.value(xs.last().unwrap()))
            .sum()
    }
}

/// Pushes every sample through the layers.
pub fn forward_sweep<L: Layer, T: TerminalCost>(
    prob: &LearningProblem<L, T>,
    controls: &[Vector],
) -> Result<SweepBundle> {
    prob.check_controls(controls)?;
    let per_sample: Vec<Result<(Vec<Vector>, f64)>> = prob
        .samples
        .par_iter()
        .zip(prob.terminal.par_iter())
        .enumerate()
        .map(|(a, (x0, phi))| {
            let mut xs = Vec::with_capacity(prob.layers + 1);
            xs.push(x0.clone());
            let mut cost = 0.0;
            for (k, u) in controls.iter().enumerate() {
                let x = xs.last().unwrap();
                cost += prob.layer.running_cost(x, u);
                let next = prob.layer.forward(x, u);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("sample {a}, layer {}", k + 1)));
                }
                xs.push(next);
            }
            cost += phi.value(xs.last().unwrap());
            Ok((xs, cost))
        })
        .collect();
    let mut states = Vec::with_capacity(prob.samples.len());
    let mut cost = 0.0;
    for r in per_sample {
        let (xs, c) = r?;
        states.push(xs);
        cost += c;
    }
    for u in controls {
        cost += prob.layer.control_cost(u);
    }
    Ok(SweepBundle {
        states,
        costates: Vec::new(),
        controls: controls.to_vec(),
        cost,
    })
}

/// Fills the costates, starting from `pᵃ_N = ∇φ_a(xᵃ_N)`.
pub fn backward_sweep<L: Layer, T: TerminalCost>(prob: &LearningProblem<L, T>, bundle: &SweepBundle) -> SweepBundle {
    let n_layers = bundle.controls.len();
    let costates: Vec<Vec<Vector>> = bundle
        .states
        .par_iter()
        .zip(prob.terminal.par_iter())
        .map(|(xs, phi)| {
            let mut ps = vec![Vector::zeros(0); n_layers + 1];
            ps[n_layers] = phi.gradient(&xs[n_layers]);
            for k in (0..n_layers).rev() {
                let u = &bundle.controls[k];
                let (gx, _) = prob.layer.running_cost_gradient(&xs[k], u);
                ps[k] = prob.layer.vjp_x(&xs[k], u, &ps[k + 1]) + gx;
            }
            ps
        })
        .collect();
    SweepBundle {
        costates,
        ..bundle.clone()
    }
}

/// Euclidean `∇_{u_k} J` for every layer.
pub fn euclidean_gradient<L: Layer, T: TerminalCost>(
    prob: &LearningProblem<L, T>,
    bundle: &SweepBundle,
) -> Vec<Vector> {
    (0..bundle.controls.len())
        .into_par_iter()
        .map(|k| {
            let u = &bundle.controls[k];
            let mut g = prob.layer.control_cost_gradient(u);
            for (xs, ps) in bundle.states.iter().zip(&bundle.costates) {
                let (_, gu) = prob.layer.running_cost_gradient(&xs[k], u);
                g += prob.layer.vjp_u(&xs[k], u, &ps[k + 1]) + gu;
            }
            g
        })
        .collect()
}

/// Gradient of the objective in each layer's tangent coordinates.
pub fn control_gradient<L: Layer, T: TerminalCost>(prob: &LearningProblem<L, T>, bundle: &SweepBundle) -> Vec<Vector> {
    euclidean_gradient(prob, bundle)
        .into_iter()
        .zip(&bundle.controls)
        .map(|(g, u)| prob.layer.project_gradient(u, g))
        .collect()
}

/// `sqrt(Σ_k ‖g_k‖²)`.
pub fn gradient_norm(grad: &[Vector]) -> f64 {
    grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
}

/// Objective value, running both sweeps.
pub fn evaluate<L: Layer, T: TerminalCost>(
    prob: &LearningProblem<L, T>,
    controls: &[Vector],
) -> Result<(SweepBundle, Vec<Vector>)> {
    let fwd = forward_sweep(prob, controls)?;
    let bundle = backward_sweep(prob, &fwd);
    let grad = control_gradient(prob, &bundle);
    Ok((bundle, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    /// Initial trial step of every line search.
    pub step: f64,
    /// Stop once the gradient norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

pub const ARMIJO_C: f64 = 1e-4;
pub const ARMIJO_FACTOR: f64 = 0.5;
const MIN_STEP: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step_size: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Training {
    pub bundle: SweepBundle,
    pub gradient: Vec<Vector>,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
}

impl Training {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

/// Gradient descent with Armijo backtracking.
pub fn train<L: Layer, T: TerminalCost>(
    prob: &LearningProblem<L, T>,
    u_init: &[Vector],
    schedule: Schedule,
) -> Result<Training> {
    let (mut bundle, mut grad) = evaluate(prob, u_init)?;
    let mut gnorm = gradient_norm(&grad);
    let mut history = vec![HistoryRow {
        iteration: 0,
        cost: bundle.cost,
        grad_norm: gnorm,
        step_size: 0.0,
    }];
    let mut iteration = 0;
    while gnorm > schedule.tol && iteration < schedule.max_iter {
        iteration += 1;
        let mut alpha = schedule.step;
        let accepted = loop {
            if alpha < MIN_STEP {
                return Err(Error::LineSearch {
                    smallest_step: alpha / ARMIJO_FACTOR,
                });
            }
            let steps: Vec<Vector> = grad.iter().map(|g| prob.layer.clip_step(g * -alpha)).collect();
            let slope: f64 = grad.iter().zip(&steps).map(|(g, s)| g.dot(s)).sum();
            let trial: Vec<Vector> = bundle
                .controls
                .iter()
                .zip(&steps)
                .map(|(u, s)| prob.layer.retract(u, s))
                .collect();
            if let Ok(fwd) = forward_sweep(prob, &trial) {
                if fwd.cost <= bundle.cost + ARMIJO_C * slope {
                    break fwd;
                }
            }
            alpha *= ARMIJO_FACTOR;
        };
        bundle = backward_sweep(prob, &accepted);
        grad = control_gradient(prob, &bundle);
        gnorm = gradient_norm(&grad);
        history.push(HistoryRow {
            iteration,
            cost: bundle.cost,
            grad_norm: gnorm,
            step_size: alpha,
        });
    }
    Ok(Training {
        converged: gnorm <= schedule.tol,
        bundle,
        gradient: grad,
        history,
    })
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `1 / (1 + e^{−z})`, with `σ(0) = ½`.
    Logistic,
    /// `tanh z`, with `σ(0) = 0`.
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Logistic => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Logistic => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `f(x, u) = σ(Kx + β)` with `u = (K row-major, β)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResnetLayer {
    pub n: usize,
    pub activation: Activation,
}

/// Logistic ResNet layer on `ℝⁿ`.
pub fn resnet_layer(n: usize) -> ResnetLayer {
    ResnetLayer {
        n,
        activation: Activation::Logistic,
    }
}

/// Packs `(K, β)` into a control vector.
pub fn resnet_control(k: &Matrix, beta: &[f64]) -> Vector {
    let mut v = k.to_row_major();
    v.extend_from_slice(beta);
    Vector::from_vec(v)
}

impl ResnetLayer {
    fn pre_activation(&self, x: &Vector, u: &Vector) -> Vector {
        let n = self.n;
        Vector::from_fn(n, |i, _| {
            let row = &u.as_slice()[i * n..(i + 1) * n];
            row.iter().zip(x.iter()).map(|(k, x)| k * x).sum::<f64>() + u[n * n + i]
        })
    }

    fn delta(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector {
        let z = self.pre_activation(x, u);
        Vector::from_fn(self.n, |i, _| self.activation.derivative(z[i]) * p[i])
    }

    /// `f_x = diag(σ'(z)) K`.
    pub fn jacobian_x(&self, x: &Vector, u: &Vector) -> nalgebra::DMatrix<f64> {
        let n = self.n;
        let z = self.pre_activation(x, u);
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.activation.derivative(z[i]) * u[i * n + j])
    }
}

impl Layer for ResnetLayer {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.n * self.n + self.n
    }

    fn forward(&self, x: &Vector, u: &Vector) -> Vector {
        self.pre_activation(x, u).map(|z| self.activation.apply(z))
    }

    fn vjp_x(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector {
        let n = self.n;
        let d = self.delta(x, u, p);
        Vector::from_fn(n, |j, _| (0..n).map(|i| u[i * n + j] * d[i]).sum())
    }

    fn vjp_u(&self, x: &Vector, u: &Vector, p: &Vector) -> Vector {
        let n = self.n;
        let d = self.delta(x, u, p);
        let mut g = Vector::zeros(n * n + n);
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = d[i] * x[j];
            }
            g[n * n + i] = d[i];
        }
        g
    }
}

/// `f(x, u) = Ax + Bu`, control cost `½uᵀRu` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub a: nalgebra::DMatrix<f64>,
    pub b: nalgebra::DMatrix<f64>,
    pub r: nalgebra::DMatrix<f64>,
}

impl Layer for LinearLayer {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn forward(&self, x: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u
    }
    fn vjp_x(&self, _x: &Vector, _u: &Vector, p: &Vector) -> Vector {
        self.a.transpose() * p
    }
    fn vjp_u(&self, _x: &Vector, _u: &Vector, p: &Vector) -> Vector {
        self.b.transpose() * p
    }
    fn control_cost(&self, u: &Vector) -> f64 {
        0.5 * u.dot(&(&self.r * u))
    }
    fn control_cost_gradient(&self, u: &Vector) -> Vector {
        &self.r * u
    }
}

/// Rigid-body layer `Q ↦ QU` on row-major flattened `n × n` matrices, with
/// control cost `w·tr(ΛU)`. Controls stay on `SO(n)`: gradients are
/// `so(n)` coordinates and steps are applied as `U exp(ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidLayer {
    pub inertia: InertiaSpec,
    pub weight: f64,
}

/// Largest Killing norm of a single retraction step.
pub const MAX_CHART_STEP: f64 = std::f64::consts::FRAC_PI_2;

impl RigidLayer {
    pub fn n(&self) -> usize {
        self.inertia.dim()
    }

    fn mat(&self, v: &Vector) -> Matrix {
        Matrix::from_row_slice(self.n(), v.as_slice())
    }

    fn flat(m: &Matrix) -> Vector {
        Vector::from_vec(m.to_row_major())
    }
}

impl Layer for RigidLayer {
    fn state_dim(&self) -> usize {
        self.n() * self.n()
    }
    fn control_dim(&self) -> usize {
        self.n() * self.n()
    }

    fn forward(&self, x: &Vector, u: &Vector) -> Vector {
        Self::flat(&(self.mat(x) * self.mat(u)))
    }

    fn vjp_x(&self, _x: &Vector, u: &Vector, p: &Vector) -> Vector {
        Self::flat(&(self.mat(p) * self.mat(u).transpose()))
    }

    fn vjp_u(&self, x: &Vector, _u: &Vector, p: &Vector) -> Vector {
        Self::flat(&(self.mat(x).transpose() * self.mat(p)))
    }

    fn control_cost(&self, u: &Vector) -> f64 {
        let u = self.mat(u);
        self.weight
            * self
                .inertia
                .lambda()
                .iter()
                .enumerate()
                .map(|(i, l)| l * u.get(i, i))
                .sum::<f64>()
    }

    fn control_cost_gradient(&self, _u: &Vector) -> Vector {
        Self::flat(&self.inertia.diag().scale(self.weight))
    }

    fn tangent_dim(&self) -> usize {
        SkewMatrix::coord_len(self.n())
    }

    /// `ξ ↦ ⟨G, Uξ⟩_F` has Killing gradient `UᵀG − GᵀU`.
    fn project_gradient(&self, u: &Vector, euclidean: Vector) -> Vector {
        let m = symmetric_momentum(&self.mat(u), &self.mat(&euclidean));
        Vector::from_column_slice(m.coords())
    }

    fn clip_step(&self, step: Vector) -> Vector {
        let norm = step.norm();
        if norm > MAX_CHART_STEP {
            step * (MAX_CHART_STEP / norm)
        } else {
            step
        }
    }

    fn retract(&self, u: &Vector, step: &Vector) -> Vector {
        let xi = SkewMatrix::from_coords(self.n(), step.as_slice().to_vec());
        Self::flat(&(self.mat(u) * Rotation::exp(&xi).as_matrix()))
    }
}

/// Rigid-body network: samples `Q₀ᵃ`, terminal costs `φ_a`, `N` layers and
/// weight `w` on the control cost `tr(ΛU_k)`.
pub fn rigid_learning_problem<T: TerminalCost>(
    inertia: &InertiaSpec,
    samples: &[Rotation],
    terminal: Vec<T>,
    layers: usize,
    weight: f64,
) -> Result<LearningProblem<RigidLayer, T>> {
    for q in samples {
        if q.dim() != inertia.dim() {
            return Err(Error::DimensionMismatch {
                expected: inertia.dim(),
                found: q.dim(),
            });
        }
    }
    LearningProblem::new(
        RigidLayer {
            inertia: inertia.clone(),
            weight,
        },
        layers,
        samples
            .iter()
            .map(|q| Vector::from_vec(q.as_matrix().to_row_major()))
            .collect(),
        terminal,
    )
}

/// Identity controls for a rigid network.
pub fn rigid_identity_controls(n: usize, layers: usize) -> Vec<Vector> {
    vec![Vector::from_vec(Matrix::identity(n).to_row_major()); layers]
}

/// Largest `‖w·(U_kΛ − ΛU_kᵀ) − Σ_a (Qᵃ_kᵀPᵃ_k − Pᵃ_kᵀQᵃ_k)‖_F` over the
/// layers of a swept bundle.
pub fn ukdef2_residual<T: TerminalCost>(prob: &LearningProblem<RigidLayer, T>, bundle: &SweepBundle) -> f64 {
    let layer = &prob.layer;
    let n = layer.n();
    let mut worst: f64 = 0.0;
    for (k, u) in bundle.controls.iter().enumerate() {
        let um = Rotation::from_matrix_unchecked(layer.mat(u));
        let mut sum = SkewMatrix::zeros(n);
        for (xs, ps) in bundle.states.iter().zip(&bundle.costates) {
            sum = &sum + &symmetric_momentum(&layer.mat(&xs[k]), &layer.mat(&ps[k]));
        }
        let lhs = jd_apply(&um, &layer.inertia).scale(layer.weight);
        worst = worst.max((&lhs - &sum).frobenius_norm());
    }
    worst
}

/// Largest `‖U_kᵀU_k − I‖_F` over the layers.
pub fn rigid_orthogonality_defect(layer: &RigidLayer, controls: &[Vector]) -> f64 {
    controls
        .iter()
        .map(|u| Rotation::from_matrix_unchecked(layer.mat(u)).orthogonality_defect())
        .fold(0.0, f64::max)
}
