//! Experiment configuration: a TOML file with flat key-value sections.
//! The grammar is documented in the repository README.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use trajopt::dynamics::fixtures::{
    CorruptedJacobian, MassSpringChain, Pendulum, PointMass2d, WithoutSecondDerivatives,
};
use trajopt::dynamics::DynamicalSystem;
use trajopt::objectives::{QuadraticTrackingObjective, TrackingMode};
use trajopt::optimizer::{HessianMode, OptimizerConfig};
use trajopt::simulate::{ControlSequence, InitialConditions};

/// A configuration problem: parse error or failed validation. Reported with
/// the file location when the TOML parser provides one.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Reserved for randomized fixtures; the built-in systems are
    /// deterministic and ignore it.
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSection,
    pub dims: DimsSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Gravity-torque coefficient of the pendulum's sin term.
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Spring scale of the chain's tridiagonal stiffness.
    #[serde(default = "default_stiffness")]
    pub stiffness: f64,
    /// Diagonal control-map scale of the chain.
    #[serde(default = "default_control_gain")]
    pub control_gain: f64,
    /// Number of chain nodes.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_mass() -> f64 {
    1.0
}
fn default_damping() -> f64 {
    0.1
}
fn default_gravity() -> f64 {
    9.81
}
fn default_stiffness() -> f64 {
    20.0
}
fn default_control_gain() -> f64 {
    1.0
}
fn default_nodes() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    #[serde(alias = "T")]
    pub steps: usize,
    pub h: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// x_0; defaults to the origin.
    pub x0: Option<Vec<f64>>,
    /// x_{-1}; defaults to x_0 (start at rest). Mutually exclusive with v0.
    pub x_neg1: Option<Vec<f64>>,
    /// Initial velocity; converted to x_{-1} = x_0 - h * v0.
    pub v0: Option<Vec<f64>>,
    /// Constant per-step initial control; defaults to zero.
    pub u_init: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub target: Vec<f64>,
    pub q_diag: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub mode: ObjectiveMode,
}

fn default_rho() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    #[default]
    Terminal,
    FullTrajectory,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    #[serde(alias = "hessian")]
    pub hessian_mode: HessianName,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub ls_alpha0: f64,
    pub ls_shrink: f64,
    pub ls_c1: f64,
    pub ls_max_backtracks: usize,
    pub reg_lambda0: f64,
    pub reg_growth: f64,
    pub threads: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            hessian_mode: HessianName::GaussNewton,
            grad_tol: d.grad_tol,
            max_iters: d.max_iters,
            ls_alpha0: d.ls_alpha0,
            ls_shrink: d.ls_shrink,
            ls_c1: d.ls_c1,
            ls_max_backtracks: d.ls_max_backtracks,
            reg_lambda0: d.reg_lambda0,
            reg_growth: d.reg_growth,
            threads: d.threads,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum HessianName {
    #[serde(alias = "gn")]
    GaussNewton,
    Full,
    #[serde(alias = "gd")]
    GradientDescent,
}

impl HessianName {
    pub fn to_mode(self) -> HessianMode {
        match self {
            HessianName::GaussNewton => HessianMode::GaussNewton,
            HessianName::Full => HessianMode::Full,
            HessianName::GradientDescent => HessianMode::GradientDescent,
        }
    }

    pub fn parse_flag(s: &str) -> Result<Self, String> {
        match s {
            "gn" | "gauss_newton" => Ok(HessianName::GaussNewton),
            "full" => Ok(HessianName::Full),
            "gd" | "gradient_descent" => Ok(HessianName::GradientDescent),
            other => Err(format!(
                "unknown hessian mode '{other}' (expected gn, full, or gd)"
            )),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// When true, report.csv records real per-iteration wall time. Off by
    /// default so reruns produce byte-identical CSV files.
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            timing: false,
        }
    }
}

/// Everything `run` and `check` need, validated and constructed.
pub struct Experiment {
    pub system: Box<dyn DynamicalSystem>,
    pub system_name: String,
    pub objective: QuadraticTrackingObjective,
    pub initial_conditions: InitialConditions,
    pub initial_controls: ControlSequence,
    pub optimizer: OptimizerConfig,
    pub output_dir: PathBuf,
    pub timing_in_csv: bool,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let (steps, h) = (self.dims.steps, self.dims.h);
        let sys = &self.system;
        let system: Box<dyn DynamicalSystem> = match sys.name.as_str() {
            "pendulum" => {
                Box::new(Pendulum::with_params(sys.mass, sys.damping, sys.gravity, steps, h)
                    .map_err(|e| err(e.to_string()))?)
            }
            "mass_spring_chain" => Box::new(
                MassSpringChain::with_params(
                    sys.mass,
                    sys.damping,
                    sys.stiffness,
                    sys.control_gain,
                    sys.nodes,
                    steps,
                    h,
                )
                .map_err(|e| err(e.to_string()))?,
            ),
            "point_mass_2d" => Box::new(
                PointMass2d::with_params(sys.mass, steps, h).map_err(|e| err(e.to_string()))?,
            ),
            // Diagnostic fixtures for `check`: a deliberately wrong Jacobian
            // and a first-order-only variant.
            "corrupted_pendulum" => Box::new(CorruptedJacobian::new(
                Pendulum::with_params(sys.mass, sys.damping, sys.gravity, steps, h)
                    .map_err(|e| err(e.to_string()))?,
            )),
            "pendulum_first_order" => Box::new(WithoutSecondDerivatives(
                Pendulum::with_params(sys.mass, sys.damping, sys.gravity, steps, h)
                    .map_err(|e| err(e.to_string()))?,
            )),
            other => {
                return Err(err(format!(
                    "unknown system '{other}' (expected pendulum, mass_spring_chain, or point_mass_2d)"
                )))
            }
        };
        let dims = system.dims();

        let expect_len = |what: &str, v: &[f64], n: usize| -> Result<DVector<f64>, ConfigError> {
            if v.len() != n {
                return Err(err(format!(
                    "{what} must have {n} entries for this system, got {}",
                    v.len()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(err(format!("{what} must be finite")));
            }
            Ok(DVector::from_column_slice(v))
        };

        let x0 = match &self.initial.x0 {
            Some(v) => expect_len("initial.x0", v, dims.n)?,
            None => DVector::zeros(dims.n),
        };
        let initial_conditions = match (&self.initial.x_neg1, &self.initial.v0) {
            (Some(_), Some(_)) => {
                return Err(err("initial.x_neg1 and initial.v0 are mutually exclusive"))
            }
            (Some(v), None) => InitialConditions::new(x0, expect_len("initial.x_neg1", v, dims.n)?),
            (None, Some(v)) => {
                InitialConditions::with_velocity(x0, &expect_len("initial.v0", v, dims.n)?, h)
            }
            (None, None) => InitialConditions::at_rest(x0),
        };

        let initial_controls = match &self.initial.u_init {
            Some(v) => {
                let per_step = expect_len("initial.u_init", v, dims.m)?;
                ControlSequence::new(vec![per_step; steps])
            }
            None => ControlSequence::zeros(dims.m, steps),
        };

        let target = expect_len("objective.target", &self.objective.target, dims.n)?;
        let q_diag = expect_len("objective.q_diag", &self.objective.q_diag, dims.n)?;
        let mode = match self.objective.mode {
            ObjectiveMode::Terminal => TrackingMode::Terminal,
            ObjectiveMode::FullTrajectory => TrackingMode::FullTrajectory,
        };
        let objective = QuadraticTrackingObjective::new(
            target,
            DMatrix::from_diagonal(&q_diag),
            self.objective.rho,
            mode,
        )
        .map_err(|e| err(format!("objective: {e}")))?;

        let opt = &self.optimizer;
        let optimizer = OptimizerConfig {
            hessian_mode: opt.hessian_mode.to_mode(),
            grad_tol: opt.grad_tol,
            max_iters: opt.max_iters,
            ls_alpha0: opt.ls_alpha0,
            ls_shrink: opt.ls_shrink,
            ls_c1: opt.ls_c1,
            ls_max_backtracks: opt.ls_max_backtracks,
            reg_lambda0: opt.reg_lambda0,
            reg_growth: opt.reg_growth,
            threads: opt.threads,
        };
        optimizer
            .validate()
            .map_err(|e| err(format!("optimizer: {e}")))?;

        Ok(Experiment {
            system,
            system_name: sys.name.clone(),
            objective,
            initial_conditions,
            initial_controls,
            optimizer,
            output_dir: self.output.dir.clone(),
            timing_in_csv: self.output.timing,
            seed: self.seed,
        })
    }
}
