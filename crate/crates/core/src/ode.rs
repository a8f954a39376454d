//! Classical fixed-step RK4 over matrix-valued phase spaces.

use crate::error::{Error, Result};
use crate::matlie::{Matrix, SkewMatrix};

/// Tangent vectors: closed under `a + s·b`.
pub trait Linear: Clone {
    fn axpy(&self, s: f64, other: &Self) -> Self;
}

impl Linear for Matrix {
    fn axpy(&self, s: f64, other: &Self) -> Self {
        self + &other.scale(s)
    }
}

impl Linear for SkewMatrix {
    fn axpy(&self, s: f64, other: &Self) -> Self {
        SkewMatrix::axpy(self, s, other)
    }
}

/// A state that can be moved along a tangent in its ambient vector space.
pub trait OdeState: Clone {
    type Tangent: Linear;

    /// Ambient update `self + h·dir`.
    fn advance(&self, h: f64, dir: &Self::Tangent) -> Self;

    fn is_finite(&self) -> bool;

    /// Pulls group-valued components back onto their manifold.
    fn project(&self) -> Result<Self> {
        Ok(self.clone())
    }
}

impl OdeState for SkewMatrix {
    type Tangent = SkewMatrix;

    fn advance(&self, h: f64, dir: &SkewMatrix) -> Self {
        self.axpy(h, dir)
    }

    fn is_finite(&self) -> bool {
        SkewMatrix::is_finite(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rk4Options {
    /// Re-project group components after every step. Off by default so that
    /// drift can be measured.
    pub project: bool,
}

/// Sampled trajectory; `times[i]` is the time of `states[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

impl<S> Trajectory<S> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &S {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// One RK4 step of size `h`.
pub fn rk4_step<S, F>(field: &F, s: &S, h: f64) -> S
where
    S: OdeState,
    F: Fn(&S) -> S::Tangent,
{
    let k1 = field(s);
    let k2 = field(&s.advance(0.5 * h, &k1));
    let k3 = field(&s.advance(0.5 * h, &k2));
    let k4 = field(&s.advance(h, &k3));
    let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
    s.advance(h / 6.0, &incr)
}

fn step_count(h: f64, horizon: f64) -> Result<usize> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::Precondition(format!("step must be positive, got {h}")));
    }
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::Precondition(format!(
            "horizon must be non-negative, got {horizon}"
        )));
    }
    Ok((horizon / h - 1e-9).ceil().max(0.0) as usize)
}

/// Integrates `ṡ = field(s)` on `[0, horizon]` with step `h`, recording every
/// step. The last step is shortened if `horizon` is not a multiple of `h`.
pub fn rk4_integrate<S, F>(field: F, init: S, h: f64, horizon: f64, opts: Rk4Options) -> Result<Trajectory<S>>
where
    S: OdeState,
    F: Fn(&S) -> S::Tangent,
{
    let steps = step_count(h, horizon)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    if !init.is_finite() {
        return Err(Error::NonFinite("t = 0".into()));
    }
    times.push(0.0);
    states.push(init);
    for i in 0..steps {
        let t = i as f64 * h;
        let dt = if i + 1 == steps { horizon - t } else { h };
        let mut next = rk4_step(&field, states.last().unwrap(), dt);
        if opts.project {
            next = next.project()?;
        }
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("t = {}", t + dt)));
        }
        times.push(t + dt);
        states.push(next);
    }
    Ok(Trajectory { times, states })
}

/// Like [`rk4_integrate`] but keeps only the final state.
pub fn rk4_final<S, F>(field: F, init: S, h: f64, horizon: f64) -> Result<S>
where
    S: OdeState,
    F: Fn(&S) -> S::Tangent,
{
    let steps = step_count(h, horizon)?;
    let mut s = init;
    for i in 0..steps {
        let t = i as f64 * h;
        let dt = if i + 1 == steps { horizon - t } else { h };
        s = rk4_step(&field, &s, dt);
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("t = {}", t + dt)));
        }
    }
    Ok(s)
}
