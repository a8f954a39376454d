//! Experiment configuration files.
//!
//! Skew-symmetric generators are given by their strict upper triangle in
//! row-major order, so for `n = 3` the coordinates are `(x₀₁, x₀₂, x₁₂)`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use geomoc::matlie::{Rotation, SkewMatrix};
use geomoc::rb_smooth::InertiaSpec;
use serde::Deserialize;

use crate::Failure;

#[derive(Clone, Debug, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Default output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Per-check tolerance overrides, keyed by check name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Sdrb(SdrbConfig),
    Mv(MvConfig),
    SmoothRb(SmoothConfig),
    Srb(SmoothConfig),
    OcpShoot(ShootConfig),
    TrainResnet(TrainConfig<ResnetDynamics>),
    TrainRigid(TrainConfig<RigidDynamics>),
    Bracket(BracketConfig),
    DoubleBracket(DoubleBracketConfig),
}

impl Experiment {
    /// Seed given inside a training block, which takes precedence over the
    /// top-level one.
    pub fn block_seed(&self) -> Option<u64> {
        match self {
            Experiment::TrainResnet(c) => c.seed,
            Experiment::TrainRigid(c) => c.seed,
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Sdrb(_) => "sdrb",
            Experiment::Mv(_) => "mv",
            Experiment::SmoothRb(_) => "smooth-rb",
            Experiment::Srb(_) => "srb",
            Experiment::OcpShoot(_) => "ocp-shoot",
            Experiment::TrainResnet(_) => "train-resnet",
            Experiment::TrainRigid(_) => "train-rigid",
            Experiment::Bracket(_) => "bracket",
            Experiment::DoubleBracket(_) => "double-bracket",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
pub struct SdrbConfig {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub q0_generator: Option<Vec<f64>>,
    pub p0_generator: Vec<f64>,
    pub steps: usize,
}

/// Either `m0` or `p0_generator` must be given; the latter starts from the
/// image of the symmetric state `(Q₀, exp(p0_generator))`.
#[derive(Clone, Debug, Deserialize)]
pub struct MvConfig {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub q0_generator: Option<Vec<f64>>,
    #[serde(default)]
    pub m0: Option<Vec<f64>>,
    #[serde(default)]
    pub p0_generator: Option<Vec<f64>>,
    pub steps: usize,
}

#[derive(Clone, Debug, Deserialize)]
pub struct SmoothConfig {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub q0_generator: Option<Vec<f64>>,
    pub m0: Vec<f64>,
    pub h: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ShootConfig {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub q0_generator: Option<Vec<f64>>,
    /// Symmetric momentum generator used to produce the endpoint.
    pub p0_generator: Vec<f64>,
    #[serde(rename = "N")]
    pub horizon: usize,
    /// Relative size of the random perturbation applied to the exact costate.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

fn default_perturbation() -> f64 {
    0.1
}

#[derive(Clone, Debug, Deserialize)]
pub struct TrainConfig<D> {
    pub layers: usize,
    pub samples: usize,
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub dynamics: D,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Logistic,
    Tanh,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ResnetDynamics {
    pub n: usize,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
}

fn default_activation() -> ActivationName {
    ActivationName::Logistic
}

/// Targets are `Q₀ᵃ U^N` with `U = exp(target_generator)`, so the optimum of
/// the unweighted problem is `−n·M`.
#[derive(Clone, Debug, Deserialize)]
pub struct RigidDynamics {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub weight: f64,
    pub target_generator: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum PotentialName {
    Zero,
    Brockett,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum TerminalName {
    Zero,
    Pairing,
}

#[derive(Clone, Debug, Deserialize)]
pub struct BracketConfig {
    pub n: usize,
    pub n_generator: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    #[serde(default = "default_potential")]
    pub potential: PotentialName,
    #[serde(default = "default_terminal")]
    pub terminal: TerminalName,
    pub h: f64,
    pub horizon: f64,
}

fn default_potential() -> PotentialName {
    PotentialName::Brockett
}

fn default_terminal() -> TerminalName {
    TerminalName::Pairing
}

#[derive(Clone, Debug, Deserialize)]
pub struct DoubleBracketConfig {
    pub n: usize,
    pub n_generator: Vec<f64>,
    pub x0: Vec<f64>,
    pub h: f64,
    pub horizon: f64,
    /// Also require `‖[x(T), n]‖_F` to vanish.
    #[serde(default)]
    pub expect_equilibrium: bool,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Config(format!("invalid config: {e}")))
}

pub fn inertia(lambda: &[f64]) -> Result<InertiaSpec, Failure> {
    InertiaSpec::new(lambda.to_vec()).map_err(|e| Failure::Config(format!("lambda: {e}")))
}

pub fn skew(field: &str, n: usize, coords: &[f64]) -> Result<SkewMatrix, Failure> {
    SkewMatrix::try_from_coords(n, coords.to_vec()).map_err(|e| {
        Failure::Config(format!(
            "{field}: expected {} coordinates for n = {n} ({e})",
            SkewMatrix::coord_len(n)
        ))
    })
}

pub fn rotation(field: &str, n: usize, coords: Option<&[f64]>) -> Result<Rotation, Failure> {
    match coords {
        None => Ok(Rotation::identity(n)),
        Some(c) => Ok(Rotation::exp(&skew(field, n, c)?)),
    }
}

pub fn positive(field: &str, v: f64) -> Result<f64, Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Failure::Config(format!("{field} must be positive, got {v}")))
    }
}
