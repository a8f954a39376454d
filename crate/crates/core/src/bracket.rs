//! Extremal flows on adjoint orbits of `SO(n)`.
//!
//! For the drift-free system `ẋ = [x, u]` with cost `∫ ½‖u‖² − V(x) dt`, the
//! maximum principle gives `u* = [p, x]` and
//!
//! ```text
//! ẋ = [x, [p, x]],   ṗ = [p, [p, x]] − V_x
//! ```
//!
//! with reduced Hamiltonian `H*(p, x) = −½⟨x, [p, [p, x]]⟩ + V(x)`. All
//! gradients are taken with respect to the Killing pairing on `so(n)`.
//! Brockett's potential `V(x) = −½‖[x, n]‖²` has `V_x = [n, [n, x]]`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matlie::{char_poly, SkewMatrix};
use crate::ocp::{lstsq, Vector};
use crate::ode::{rk4_final, rk4_integrate, Linear, OdeState, Rk4Options, Trajectory};

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitState {
    pub x: SkewMatrix,
    pub p: SkewMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitTangent {
    pub x_dot: SkewMatrix,
    pub p_dot: SkewMatrix,
}

impl Linear for OrbitTangent {
    fn axpy(&self, s: f64, o: &Self) -> Self {
        OrbitTangent {
            x_dot: self.x_dot.axpy(s, &o.x_dot),
            p_dot: self.p_dot.axpy(s, &o.p_dot),
        }
    }
}

impl OdeState for OrbitState {
    type Tangent = OrbitTangent;

    fn advance(&self, h: f64, d: &OrbitTangent) -> Self {
        OrbitState {
            x: self.x.axpy(h, &d.x_dot),
            p: self.p.axpy(h, &d.p_dot),
        }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.p.is_finite()
    }
}

/// Potential `V` on the orbit.
#[derive(Clone, Debug, PartialEq)]
pub enum Potential {
    Zero,
    /// `V(x) = −½‖[x, n]‖²`.
    Brockett(SkewMatrix),
}

impl Potential {
    pub fn value(&self, x: &SkewMatrix) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Brockett(n) => {
                let c = x.bracket(n);
                -0.5 * c.killing(&c)
            }
        }
    }

    /// Killing gradient `V_x`.
    pub fn gradient(&self, x: &SkewMatrix) -> SkewMatrix {
        match self {
            Potential::Zero => SkewMatrix::zeros(x.dim()),
            Potential::Brockett(n) => n.bracket(&n.bracket(x)),
        }
    }
}

/// Terminal cost `φ` of one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum OrbitTerminal {
    Zero,
    /// `φ(x) = ⟨x, n⟩`, with gradient `n`.
    Pairing(SkewMatrix),
}

impl OrbitTerminal {
    pub fn value(&self, x: &SkewMatrix) -> f64 {
        match self {
            OrbitTerminal::Zero => 0.0,
            OrbitTerminal::Pairing(n) => x.killing(n),
        }
    }

    pub fn gradient(&self, x: &SkewMatrix) -> SkewMatrix {
        match self {
            OrbitTerminal::Zero => SkewMatrix::zeros(x.dim()),
            OrbitTerminal::Pairing(n) => n.clone(),
        }
    }
}

/// `u* = [p, x]`.
pub fn optimal_control(s: &OrbitState) -> SkewMatrix {
    s.p.bracket(&s.x)
}

/// `(ẋ, ṗ) = ([x, [p, x]], [p, [p, x]] − V_x)`.
pub fn extremal_field(s: &OrbitState, potential: &Potential) -> OrbitTangent {
    let u = optimal_control(s);
    OrbitTangent {
        x_dot: s.x.bracket(&u),
        p_dot: &s.p.bracket(&u) - &potential.gradient(&s.x),
    }
}

/// Extremal field for Brockett's potential, written out directly.
pub fn brockett_field(s: &OrbitState, n_mat: &SkewMatrix) -> OrbitTangent {
    let px = s.p.bracket(&s.x);
    OrbitTangent {
        x_dot: s.x.bracket(&px),
        p_dot: &s.p.bracket(&px) - &n_mat.bracket(&n_mat.bracket(&s.x)),
    }
}

/// `H*(p, x) = −½⟨x, [p, [p, x]]⟩ + V(x)`.
pub fn reduced_hamiltonian(s: &OrbitState, potential: &Potential) -> f64 {
    -0.5 * s.x.killing(&s.p.bracket(&s.p.bracket(&s.x))) + potential.value(&s.x)
}

/// Coefficients of the characteristic polynomial of `x`.
pub fn spectrum_invariants(x: &SkewMatrix) -> Vec<f64> {
    char_poly(&x.to_matrix())
}

/// Largest coefficient change of the characteristic polynomial.
pub fn spectrum_drift(x0: &SkewMatrix, x: &SkewMatrix) -> f64 {
    spectrum_invariants(x0)
        .iter()
        .zip(spectrum_invariants(x))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `ẋ = [x, [x, n]]`.
pub fn double_bracket_field(x: &SkewMatrix, n_mat: &SkewMatrix) -> SkewMatrix {
    x.bracket(&x.bracket(n_mat))
}

/// `tr(xn)`, which is nondecreasing along the double bracket flow:
/// `d/dt tr(xn) = ‖[x, n]‖_F²`.
pub fn alignment(x: &SkewMatrix, n_mat: &SkewMatrix) -> f64 {
    (x.to_matrix() * n_mat.to_matrix()).trace()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoubleBracketTrajectory {
    pub trajectory: Trajectory<SkewMatrix>,
    /// `tr(x(t) n)`.
    pub alignment: Vec<f64>,
    /// `‖[x(t), n]‖_F`.
    pub commutator_norm: Vec<f64>,
}

pub fn double_bracket_flow(
    x0: &SkewMatrix,
    n_mat: &SkewMatrix,
    horizon: f64,
    h: f64,
) -> Result<DoubleBracketTrajectory> {
    if x0.dim() != n_mat.dim() {
        return Err(Error::DimensionMismatch {
            expected: n_mat.dim(),
            found: x0.dim(),
        });
    }
    let trajectory = rk4_integrate(
        |x| double_bracket_field(x, n_mat),
        x0.clone(),
        h,
        horizon,
        Rk4Options::default(),
    )?;
    let alignment = trajectory.states.iter().map(|x| alignment(x, n_mat)).collect();
    let commutator_norm = trajectory
        .states
        .iter()
        .map(|x| x.bracket(n_mat).frobenius_norm())
        .collect();
    Ok(DoubleBracketTrajectory {
        trajectory,
        alignment,
        commutator_norm,
    })
}

/// Multi-sample orbit problem: samples evolve independently under the
/// extremal field and are coupled to the terminal cost only.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitProblem {
    pub potential: Potential,
    pub terminal: OrbitTerminal,
    pub horizon: f64,
    pub step: f64,
    pub samples: Vec<SkewMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSolution {
    pub trajectory: Trajectory<OrbitState>,
    /// `‖p(T) − ∇φ(x(T))‖`.
    pub terminal_residual: f64,
    pub iterations: usize,
}

pub const ORBIT_SHOOT_MAX_ITERATIONS: usize = 40;
pub const ORBIT_SHOOT_TOLERANCE: f64 = 1e-10;

fn terminal_mismatch(prob: &OrbitProblem, x0: &SkewMatrix, p0: &SkewMatrix) -> Result<Vector> {
    let end = rk4_final(
        |s| extremal_field(s, &prob.potential),
        OrbitState {
            x: x0.clone(),
            p: p0.clone(),
        },
        prob.step,
        prob.horizon,
    )?;
    let r = &end.p - &prob.terminal.gradient(&end.x);
    Ok(Vector::from_column_slice(r.coords()))
}

/// Shooting on `p(0)` for a single sample, starting from `p0_guess`.
pub fn orbit_shoot(prob: &OrbitProblem, x0: &SkewMatrix, p0_guess: &SkewMatrix) -> Result<OrbitSolution> {
    let n = x0.dim();
    let to_skew = |v: &Vector| SkewMatrix::from_coords(n, v.as_slice().to_vec());
    let mut p0 = Vector::from_column_slice(p0_guess.coords());
    let mut r = terminal_mismatch(prob, x0, &to_skew(&p0))?;
    let mut iterations = 0;
    while r.norm() > ORBIT_SHOOT_TOLERANCE {
        if iterations == ORBIT_SHOOT_MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                solver: "orbit shooting",
                iterations,
                residual: r.norm(),
            });
        }
        iterations += 1;
        let mut jac = nalgebra::DMatrix::zeros(r.len(), p0.len());
        for i in 0..p0.len() {
            let h = 1e-6 * p0[i].abs().max(1.0);
            let mut pp = p0.clone();
            let mut pm = p0.clone();
            pp[i] += h;
            pm[i] -= h;
            let width = pp[i] - pm[i];
            let col =
                (terminal_mismatch(prob, x0, &to_skew(&pp))? - terminal_mismatch(prob, x0, &to_skew(&pm))?) / width;
            jac.set_column(i, &col);
        }
        let step = lstsq(&jac, &(-&r), 1e-12);
        let mut alpha = 1.0;
        loop {
            if alpha < 1e-10 {
                return Err(Error::NoConvergence {
                    solver: "orbit shooting",
                    iterations,
                    residual: r.norm(),
                });
            }
            let cand = &p0 + &step * alpha;
            if let Ok(cr) = terminal_mismatch(prob, x0, &to_skew(&cand)) {
                if cr.norm() < r.norm() {
                    p0 = cand;
                    r = cr;
                    break;
                }
            }
            alpha *= 0.5;
        }
    }
    let trajectory = rk4_integrate(
        |s| extremal_field(s, &prob.potential),
        OrbitState {
            x: x0.clone(),
            p: to_skew(&p0),
        },
        prob.step,
        prob.horizon,
        Rk4Options::default(),
    )?;
    let end = trajectory.last();
    let terminal_residual = (&end.p - &prob.terminal.gradient(&end.x)).norm();
    Ok(OrbitSolution {
        trajectory,
        terminal_residual,
        iterations,
    })
}

/// Solves every sample's two-point problem, starting each shooting from
/// `p(0) = ∇φ(x₀)`.
pub fn orbit_learning_solve(prob: &OrbitProblem) -> Result<Vec<OrbitSolution>> {
    prob.samples
        .par_iter()
        .map(|x0| orbit_shoot(prob, x0, &prob.terminal.gradient(x0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn skew(n: usize, c: &[f64]) -> SkewMatrix {
        SkewMatrix::from_coords(n, c.to_vec())
    }

    fn z_hat() -> SkewMatrix {
        SkewMatrix::hat([0.0, 0.0, 1.0])
    }

    fn skew_strategy(n: usize) -> impl Strategy<Value = SkewMatrix> {
        proptest::collection::vec(-1.0f64..1.0, SkewMatrix::coord_len(n))
            .prop_map(move |c| SkewMatrix::from_coords(n, c))
    }

    #[test]
    fn extremal_field_trivial_cases() {
        let x = skew(4, &[0.3, -0.2, 0.5, 0.1, 0.7, -0.4]);
        let s = OrbitState {
            x: x.clone(),
            p: SkewMatrix::zeros(4),
        };
        let d = extremal_field(&s, &Potential::Zero);
        assert_eq!(d.x_dot, SkewMatrix::zeros(4));
        assert_eq!(d.p_dot, SkewMatrix::zeros(4));

        let s = OrbitState {
            x: x.clone(),
            p: x.scale(2.0),
        };
        assert_eq!(optimal_control(&s), SkewMatrix::zeros(4));
        assert_eq!(extremal_field(&s, &Potential::Zero).x_dot, SkewMatrix::zeros(4));
    }

    #[test]
    fn brockett_equilibrium() {
        let n = skew(4, &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let x = skew(4, &[0.5, 0.0, 0.0, 0.0, 0.0, -0.3]);
        let s = OrbitState {
            x,
            p: SkewMatrix::zeros(4),
        };
        let d = brockett_field(&s, &n);
        assert!(d.x_dot.norm() < 1e-15 && d.p_dot.norm() < 1e-15);
    }

    #[test]
    fn brockett_gradient_matches_finite_differences() {
        let n = skew(4, &[0.2, -0.7, 0.4, 1.0, 0.3, -0.5]);
        let x = skew(4, &[0.6, 0.1, -0.3, 0.2, -0.8, 0.4]);
        let pot = Potential::Brockett(n.clone());
        let g = pot.gradient(&x);
        let h = 1e-6;
        for i in 0..6 {
            let mut e = vec![0.0; 6];
            e[i] = h;
            let e = SkewMatrix::from_coords(4, e);
            let fd = (pot.value(&(&x + &e)) - pot.value(&(&x - &e))) / (2.0 * h);
            // Killing coordinates are orthonormal, so the i-th coordinate is
            // the directional derivative along the i-th basis element.
            assert!((fd - g.coords()[i]).abs() <= 1e-7, "{i}: {fd} vs {}", g.coords()[i]);
        }
        // The alternative expression ½⟨x, [n, [n, x]]⟩.
        assert!((pot.value(&x) - 0.5 * x.killing(&n.bracket(&n.bracket(&x)))).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_is_conserved() {
        let n = skew(3, &[0.0, 0.0, 1.0]);
        let pot = Potential::Brockett(n);
        let s0 = OrbitState {
            x: SkewMatrix::hat([0.4, -0.3, 0.8]),
            p: SkewMatrix::hat([0.2, 0.5, -0.1]),
        };
        let h0 = reduced_hamiltonian(&s0, &pot);
        let traj = rk4_integrate(
            |s| extremal_field(s, &pot),
            s0.clone(),
            1e-3,
            5.0,
            Rk4Options::default(),
        )
        .unwrap();
        let drift = traj
            .states
            .iter()
            .map(|s| (reduced_hamiltonian(s, &pot) - h0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8, "{drift}");
        // H* = ½‖[p, x]‖² + V.
        let u = optimal_control(&s0);
        assert!((h0 - (0.5 * u.killing(&u) + pot.value(&s0.x))).abs() < 1e-14);
        let spec = traj
            .states
            .iter()
            .map(|s| spectrum_drift(&s0.x, &s.x))
            .fold(0.0, f64::max);
        assert!(spec <= 1e-8, "{spec}");
    }

    #[test]
    fn double_bracket_constant_when_commuting() {
        let n = skew(4, &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let x0 = skew(4, &[-0.5, 0.0, 0.0, 0.0, 0.0, 0.3]);
        let db = double_bracket_flow(&x0, &n, 1.0, 0.1).unwrap();
        assert!(db.trajectory.states.iter().all(|x| *x == x0));
    }

    #[test]
    fn alignment_rate_identity() {
        let n = skew(4, &[0.2, -0.7, 0.4, 1.0, 0.3, -0.5]);
        let x = skew(4, &[0.6, 0.1, -0.3, 0.2, -0.8, 0.4]);
        let h = 1e-5;
        let d = double_bracket_field(&x, &n);
        let fd = (alignment(&x.axpy(h, &d), &n) - alignment(&x.axpy(-h, &d), &n)) / (2.0 * h);
        let c = x.bracket(&n).frobenius_norm();
        assert!((fd - c * c).abs() < 1e-8);
        assert!(fd > 0.0);
        // The Killing pairing moves the other way.
        let fdk = (x.axpy(h, &d).killing(&n) - x.axpy(-h, &d).killing(&n)) / (2.0 * h);
        assert!((fdk + 0.5 * c * c).abs() < 1e-8);
    }

    #[test]
    fn double_bracket_converges_in_so3() {
        let x0 = SkewMatrix::hat([0.6, -0.5, 0.3]);
        let db = double_bracket_flow(&x0, &z_hat(), 50.0, 1e-2).unwrap();
        assert!(*db.commutator_norm.last().unwrap() <= 1e-6);
        assert!(db.alignment.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        // Increments equal ∫‖[x, n]‖² (trapezoid rule on the recorded grid).
        let h = 1e-2;
        for k in (0..db.alignment.len() - 1).step_by(500) {
            let inc = db.alignment[k + 1] - db.alignment[k];
            let quad = 0.5 * h * (db.commutator_norm[k].powi(2) + db.commutator_norm[k + 1].powi(2));
            assert!((inc - quad).abs() <= 1e-6);
        }
    }

    #[test]
    fn double_bracket_isospectral() {
        let n = skew(4, &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let x0 = skew(4, &[0.3, -0.2, 0.5, 0.1, 0.7, -0.4]);
        let db = double_bracket_flow(&x0, &n, 10.0, 1e-3).unwrap();
        let drift = db
            .trajectory
            .states
            .iter()
            .map(|x| spectrum_drift(&x0, x))
            .fold(0.0, f64::max);
        assert!(drift <= 1e-8, "{drift}");
    }

    #[test]
    fn zero_terminal_cost_freezes_samples() {
        let prob = OrbitProblem {
            potential: Potential::Zero,
            terminal: OrbitTerminal::Zero,
            horizon: 1.0,
            step: 1e-2,
            samples: vec![SkewMatrix::hat([0.3, 0.1, -0.2]), SkewMatrix::hat([0.0, 1.0, 0.5])],
        };
        let sols = orbit_learning_solve(&prob).unwrap();
        for (sol, x0) in sols.iter().zip(&prob.samples) {
            assert_eq!(sol.iterations, 0);
            assert!(sol.trajectory.states.iter().all(|s| s.x == *x0 && s.p.norm() == 0.0));
        }
    }

    #[test]
    fn brockett_pairing_extremal_is_double_bracket() {
        // With V = −½‖[x, n]‖² and φ = ⟨x, n⟩, p ≡ n solves the costate
        // equation and x follows ẋ = −[x, [x, n]].
        let n = z_hat();
        let prob = OrbitProblem {
            potential: Potential::Brockett(n.clone()),
            terminal: OrbitTerminal::Pairing(n.clone()),
            horizon: 2.0,
            step: 1e-2,
            samples: vec![SkewMatrix::hat([0.6, -0.5, 0.3])],
        };
        let sol = &orbit_learning_solve(&prob).unwrap()[0];
        assert_eq!(sol.iterations, 0);
        let neg = rk4_final(
            |x| double_bracket_field(x, &n).scale(-1.0),
            prob.samples[0].clone(),
            1e-2,
            2.0,
        )
        .unwrap();
        let end = sol.trajectory.last();
        assert!((&end.x - &neg).norm() < 1e-14);
        assert!(sol.trajectory.states.iter().all(|s| s.p == n));
    }

    #[test]
    fn pairing_terminal_cost_is_met() {
        let n = z_hat();
        let prob = OrbitProblem {
            potential: Potential::Zero,
            terminal: OrbitTerminal::Pairing(n.clone()),
            horizon: 1.0,
            step: 1e-2,
            samples: vec![SkewMatrix::hat([0.6, -0.5, 0.3]), SkewMatrix::hat([0.2, 0.4, 0.1])],
        };
        let sols = orbit_learning_solve(&prob).unwrap();
        for sol in &sols {
            assert!(sol.iterations > 0);
            assert!(sol.terminal_residual <= 1e-8, "{}", sol.terminal_residual);
            let end = sol.trajectory.last();
            assert!((&end.p - &n).norm() <= 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn brockett_is_extremal_specialization(x in skew_strategy(4), p in skew_strategy(4), n in skew_strategy(4)) {
            let s = OrbitState { x, p };
            let a = brockett_field(&s, &n);
            let b = extremal_field(&s, &Potential::Brockett(n.clone()));
            prop_assert!((&a.x_dot - &b.x_dot).norm() <= 1e-15);
            prop_assert!((&a.p_dot - &b.p_dot).norm() <= 1e-15);
        }

        #[test]
        fn extremal_flow_is_isospectral(x in skew_strategy(4), p in skew_strategy(4)) {
            let n = skew(4, &[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
            let pot = Potential::Brockett(n);
            let s0 = OrbitState { x: x.clone(), p };
            let end = rk4_final(|s| extremal_field(s, &pot), s0, 2e-3, 1.0).unwrap();
            let d = spectrum_drift(&x, &end.x);
            prop_assert!(d <= 1e-8, "{d}");
        }
    }
}
