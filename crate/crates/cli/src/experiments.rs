//! One function per experiment kind. Each returns the files to write and the
//! filled-in checker; nothing touches the filesystem here.

use geomoc::bracket::{
    double_bracket_flow, orbit_learning_solve, reduced_hamiltonian, spectrum_drift, OrbitProblem, OrbitTerminal,
    Potential,
};
use geomoc::io::{double_bracket_table, history_table, mv_table, orbit_table, rb_table, sdrb_table, srb_table, Table};
use geomoc::learn::{
    rigid_learning_problem, rigid_orthogonality_defect, train, ukdef2_residual, Activation, LearningProblem,
    QuadraticTarget, ResnetLayer, Schedule, TraceTarget, Training,
};
use geomoc::matlie::{Rotation, SkewMatrix};
use geomoc::ocp::{extremal_residuals, rigid_costate, rigid_ocp, shoot, OcpRecord, Vector};
use geomoc::rb_discrete::{mv_residuals, mv_trajectory, sdrb_to_mv, sdrb_trajectory, DiscreteRBState, MVState};
use geomoc::rb_smooth::{
    casimir_opnorm, energy, manakov_drift, rb_field, rb_to_srb, rk4_integrate, srb_field, srb_to_rb, RBState,
    Rk4Options, SRBState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    inertia, positive, rotation, skew, ActivationName, BracketConfig, DoubleBracketConfig, Experiment, MvConfig,
    PotentialName, ResnetDynamics, RigidDynamics, SdrbConfig, ShootConfig, SmoothConfig, TerminalName, TrainConfig,
};
use crate::report::Checker;
use crate::Failure;

pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
}

fn csv(name: &str, table: &Table) -> (String, Vec<u8>) {
    (name.to_string(), table.to_csv().into_bytes())
}

fn json<T: serde::Serialize>(name: &str, value: &T) -> Result<(String, Vec<u8>), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Solver(e.to_string()))?;
    bytes.push(b'\n');
    Ok((name.to_string(), bytes))
}

fn solver<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Solver(e.to_string())
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

pub fn run(exp: &Experiment, seed: u64, checks: &mut Checker) -> Result<Outcome, Failure> {
    match exp {
        Experiment::Sdrb(c) => run_sdrb(c, checks),
        Experiment::Mv(c) => run_mv(c, checks),
        Experiment::SmoothRb(c) => run_smooth(c, checks),
        Experiment::Srb(c) => run_srb(c, checks),
        Experiment::OcpShoot(c) => run_shoot(c, seed, checks),
        Experiment::TrainResnet(c) => run_resnet(c, seed, checks),
        Experiment::TrainRigid(c) => run_rigid(c, seed, checks),
        Experiment::Bracket(c) => run_bracket(c, checks),
        Experiment::DoubleBracket(c) => run_double_bracket(c, checks),
    }
}

fn run_sdrb(c: &SdrbConfig, checks: &mut Checker) -> Result<Outcome, Failure> {
    let l = inertia(&c.lambda)?;
    let n = l.dim();
    let s0 = DiscreteRBState {
        q: rotation("q0_generator", n, c.q0_generator.as_deref())?,
        p: rotation("p0_generator", n, Some(&c.p0_generator))?,
        k: 0,
    };
    let seq = sdrb_trajectory(s0, &l, c.steps).map_err(solver)?;
    let mv: Vec<MVState> = seq
        .iter()
        .map(|s| sdrb_to_mv(s, &l))
        .collect::<Result<_, _>>()
        .map_err(solver)?;

    let orth = max_of(
        seq.iter()
            .map(|s| s.q.orthogonality_defect().max(s.p.orthogonality_defect())),
    );
    let c0 = casimir_opnorm(&mv[0].m);
    let casimir = max_of(mv.iter().map(|s| (casimir_opnorm(&s.m) - c0).abs()));
    let r = mv_residuals(&mv, &l);
    checks.at_most("orthogonality_drift", orth, 1e-9);
    checks.at_most("casimir_drift", casimir, 1e-10);
    checks.at_most("mv_inertia_residual", r.inertia, 1e-10);
    checks.at_most("mv_transport_residual", r.transport, 1e-10);
    Ok(Outcome {
        files: vec![csv("sdrb.csv", &sdrb_table(&seq)), csv("sdrb_mv.csv", &mv_table(&mv))],
    })
}

fn run_mv(c: &MvConfig, checks: &mut Checker) -> Result<Outcome, Failure> {
    let l = inertia(&c.lambda)?;
    let n = l.dim();
    let q0 = rotation("q0_generator", n, c.q0_generator.as_deref())?;
    let s0 = match (&c.m0, &c.p0_generator) {
        (Some(m0), None) => MVState {
            q: q0,
            m: skew("m0", n, m0)?,
            k: 0,
        },
        (None, Some(g)) => sdrb_to_mv(
            &DiscreteRBState {
                q: q0,
                p: rotation("p0_generator", n, Some(g))?,
                k: 0,
            },
            &l,
        )
        .map_err(solver)?,
        _ => return Err(Failure::Config("mv: give exactly one of m0 and p0_generator".into())),
    };
    let seq = mv_trajectory(s0, &l, c.steps).map_err(solver)?;
    let orth = max_of(seq.iter().map(|s| s.q.orthogonality_defect()));
    let c0 = casimir_opnorm(&seq[0].m);
    let casimir = max_of(seq.iter().map(|s| (casimir_opnorm(&s.m) - c0).abs()));
    let r = mv_residuals(&seq, &l);
    checks.at_most("orthogonality_drift", orth, 1e-9);
    checks.at_most("casimir_drift", casimir, 1e-10);
    checks.at_most("mv_inertia_residual", r.inertia, 1e-10);
    checks.at_most("mv_transport_residual", r.transport, 1e-10);
    Ok(Outcome {
        files: vec![csv("mv.csv", &mv_table(&seq))],
    })
}

fn rb_initial(c: &SmoothConfig) -> Result<(geomoc::rb_smooth::InertiaSpec, RBState), Failure> {
    let l = inertia(&c.lambda)?;
    let n = l.dim();
    positive("h", c.h)?;
    let s0 = RBState {
        q: rotation("q0_generator", n, c.q0_generator.as_deref())?,
        m: skew("m0", n, &c.m0)?,
    };
    Ok((l, s0))
}

fn run_smooth(c: &SmoothConfig, checks: &mut Checker) -> Result<Outcome, Failure> {
    let (l, s0) = rb_initial(c)?;
    let traj = rk4_integrate(|s| rb_field(s, &l), s0.clone(), c.h, c.horizon, Rk4Options::default()).map_err(solver)?;
    let c0 = casimir_opnorm(&s0.m);
    let e0 = energy(&s0.m, &l);
    checks.at_most(
        "manakov_drift",
        max_of(traj.states.iter().map(|s| manakov_drift(&s0.m, &s.m, &l))),
        1e-8,
    );
    checks.at_most(
        "casimir_drift",
        max_of(traj.states.iter().map(|s| (casimir_opnorm(&s.m) - c0).abs())),
        1e-8,
    );
    checks.at_most(
        "energy_drift",
        max_of(traj.states.iter().map(|s| (energy(&s.m, &l) - e0).abs())),
        1e-8,
    );
    checks.at_most(
        "orthogonality_drift",
        max_of(traj.states.iter().map(|s| s.q.orthogonality_defect())),
        1e-8,
    );
    Ok(Outcome {
        files: vec![csv("rb.csv", &rb_table(&traj))],
    })
}

fn run_srb(c: &SmoothConfig, checks: &mut Checker) -> Result<Outcome, Failure> {
    let (l, s0) = rb_initial(c)?;
    let p0: SRBState = rb_to_srb(&s0).map_err(|e| Failure::Config(format!("m0: {e}")))?;
    let srb = rk4_integrate(|s| srb_field(s, &l), p0, c.h, c.horizon, Rk4Options::default()).map_err(solver)?;
    let rb = rk4_integrate(|s| rb_field(s, &l), s0, c.h, c.horizon, Rk4Options::default()).map_err(solver)?;
    let gap = max_of(srb.states.iter().zip(&rb.states).map(|(a, b)| {
        let m = srb_to_rb(a);
        (m.q.as_matrix() - b.q.as_matrix())
            .frobenius_norm()
            .max((&m.m - &b.m).frobenius_norm())
    }));
    checks.at_most("srb_rb_agreement", gap, 1e-8);
    checks.at_most(
        "orthogonality_drift",
        max_of(
            srb.states
                .iter()
                .map(|s| s.q.orthogonality_defect().max(s.p.orthogonality_defect())),
        ),
        1e-8,
    );
    Ok(Outcome {
        files: vec![csv("srb.csv", &srb_table(&srb))],
    })
}

fn run_shoot(c: &ShootConfig, seed: u64, checks: &mut Checker) -> Result<Outcome, Failure> {
    let l = inertia(&c.lambda)?;
    let n = l.dim();
    if c.horizon == 0 {
        return Err(Failure::Config("N must be at least 1".into()));
    }
    let s0 = DiscreteRBState {
        q: rotation("q0_generator", n, c.q0_generator.as_deref())?,
        p: rotation("p0_generator", n, Some(&c.p0_generator))?,
        k: 0,
    };
    let seq = sdrb_trajectory(s0.clone(), &l, c.horizon).map_err(solver)?;
    let prob = rigid_ocp(&l, &s0.q, &seq[c.horizon].q, c.horizon).map_err(solver)?;
    let exact = rigid_costate(&s0.p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = Vector::from_fn(exact.len(), |_, _| rng.gen_range(-1.0..1.0));
    let scale = c.perturbation * exact.norm() / dir.norm().max(f64::MIN_POSITIVE);
    let guess = &exact + dir * scale;
    let res = shoot(&prob, &guess).map_err(solver)?;
    let residuals = extremal_residuals(&res.trajectory, &prob);
    checks.at_most("endpoint_error", res.endpoint_error, 1e-8);
    checks.at_most("iterations", res.iterations as f64, 40.0);
    checks.at_most("extremal_residual", residuals.max(), 1e-8);
    Ok(Outcome {
        files: vec![json("ocp.json", &OcpRecord::new(&prob, res.trajectory))?],
    })
}

fn schedule<D>(c: &TrainConfig<D>) -> Result<Schedule, Failure> {
    Ok(Schedule {
        step: positive("step", c.step)?,
        tol: c.tol,
        max_iter: c.max_iter,
    })
}

fn history_checks(t: &Training, checks: &mut Checker) {
    let rise = max_of(t.history.windows(2).map(|w| w[1].cost - w[0].cost));
    checks.at_most("history_increase", rise, 0.0);
}

fn run_resnet(c: &TrainConfig<ResnetDynamics>, seed: u64, checks: &mut Checker) -> Result<Outcome, Failure> {
    let n = c.dynamics.n;
    if n == 0 || c.samples == 0 {
        return Err(Failure::Config("train-resnet: n and samples must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = ResnetLayer {
        n,
        activation: match c.dynamics.activation {
            ActivationName::Logistic => Activation::Logistic,
            ActivationName::Tanh => Activation::Tanh,
        },
    };
    let xs: Vec<Vector> = (0..c.samples)
        .map(|_| Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let targets = (0..c.samples)
        .map(|_| QuadraticTarget {
            target: Vector::from_fn(n, |_, _| rng.gen_range(0.2..0.8)),
        })
        .collect();
    let controls: Vec<Vector> = (0..c.layers)
        .map(|_| Vector::from_fn(n * n + n, |_, _| rng.gen_range(-0.8..0.8)))
        .collect();
    let prob = LearningProblem::new(layer, c.layers, xs, targets).map_err(|e| Failure::Config(e.to_string()))?;
    let t = train(&prob, &controls, schedule(c)?).map_err(solver)?;
    history_checks(&t, checks);
    Ok(Outcome {
        files: vec![csv("history.csv", &history_table(&t.history))],
    })
}

fn run_rigid(c: &TrainConfig<RigidDynamics>, seed: u64, checks: &mut Checker) -> Result<Outcome, Failure> {
    let l = inertia(&c.dynamics.lambda)?;
    let n = l.dim();
    if c.samples == 0 {
        return Err(Failure::Config("train-rigid: samples must be positive".into()));
    }
    let u = rotation("target_generator", n, Some(&c.dynamics.target_generator))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = SkewMatrix::coord_len(n);
    let qs: Vec<Rotation> = (0..c.samples)
        .map(|_| {
            Rotation::exp(&SkewMatrix::from_coords(
                n,
                (0..coords).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ))
        })
        .collect();
    let targets = qs
        .iter()
        .map(|q| {
            let mut t = q.clone();
            for _ in 0..c.layers {
                t = t.compose(&u);
            }
            TraceTarget::new(&t)
        })
        .collect();
    let prob = rigid_learning_problem(&l, &qs, targets, c.layers, c.dynamics.weight)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let init = geomoc::learn::rigid_identity_controls(n, c.layers);
    let t = train(&prob, &init, schedule(c)?).map_err(solver)?;
    history_checks(&t, checks);
    checks.at_most("ukdef2_residual", ukdef2_residual(&prob, &t.bundle), 1e-6);
    checks.at_most(
        "orthogonality_drift",
        rigid_orthogonality_defect(&prob.layer, &t.bundle.controls),
        1e-10,
    );
    if c.dynamics.weight == 0.0 {
        let optimum = -((n * c.samples) as f64);
        checks.at_most("optimum_gap", (t.bundle.cost - optimum).abs(), 1e-6);
    }
    Ok(Outcome {
        files: vec![csv("history.csv", &history_table(&t.history))],
    })
}

fn run_bracket(c: &BracketConfig, checks: &mut Checker) -> Result<Outcome, Failure> {
    let n_mat = skew("n_generator", c.n, &c.n_generator)?;
    let samples = c
        .samples
        .iter()
        .enumerate()
        .map(|(a, x)| skew(&format!("samples[{a}]"), c.n, x))
        .collect::<Result<Vec<_>, _>>()?;
    let prob = OrbitProblem {
        potential: match c.potential {
            PotentialName::Zero => Potential::Zero,
            PotentialName::Brockett => Potential::Brockett(n_mat.clone()),
        },
        terminal: match c.terminal {
            TerminalName::Zero => OrbitTerminal::Zero,
            TerminalName::Pairing => OrbitTerminal::Pairing(n_mat.clone()),
        },
        horizon: c.horizon,
        step: positive("h", c.h)?,
        samples,
    };
    let sols = orbit_learning_solve(&prob).map_err(solver)?;
    let mut files = Vec::new();
    let (mut terminal, mut ham, mut spec) = (0.0f64, 0.0f64, 0.0f64);
    for (a, sol) in sols.iter().enumerate() {
        let states = &sol.trajectory.states;
        let h0 = reduced_hamiltonian(&states[0], &prob.potential);
        terminal = terminal.max(sol.terminal_residual);
        ham = ham.max(max_of(
            states
                .iter()
                .map(|s| (reduced_hamiltonian(s, &prob.potential) - h0).abs()),
        ));
        spec = spec.max(max_of(states.iter().map(|s| spectrum_drift(&states[0].x, &s.x))));
        files.push(csv(&format!("bracket_{a}.csv"), &orbit_table(&sol.trajectory, &n_mat)));
    }
    checks.at_most("terminal_residual", terminal, 1e-8);
    checks.at_most("hamiltonian_drift", ham, 1e-8);
    checks.at_most("spectrum_drift", spec, 1e-8);
    Ok(Outcome { files })
}

fn run_double_bracket(c: &DoubleBracketConfig, checks: &mut Checker) -> Result<Outcome, Failure> {
    let n_mat = skew("n_generator", c.n, &c.n_generator)?;
    let x0 = skew("x0", c.n, &c.x0)?;
    let db = double_bracket_flow(&x0, &n_mat, c.horizon, positive("h", c.h)?).map_err(solver)?;
    let decrease = max_of(db.alignment.windows(2).map(|w| w[0] - w[1]));
    checks.at_most("alignment_decrease", decrease, 1e-12);
    checks.at_most(
        "spectrum_drift",
        max_of(db.trajectory.states.iter().map(|x| spectrum_drift(&x0, x))),
        1e-8,
    );
    if c.expect_equilibrium {
        checks.at_most("final_commutator", *db.commutator_norm.last().unwrap_or(&0.0), 1e-6);
    }
    Ok(Outcome {
        files: vec![csv("double_bracket.csv", &double_bracket_table(&db, &n_mat))],
    })
}
