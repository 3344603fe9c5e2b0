use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adaptive_learner::{
    make_lambda_schedule, strong_convexity_transfer, validate_schedule, RegularizationCase,
    LambdaSchedule, MIN_PRESET_HORIZON,
};
use crate::adversary::{LossDims, LossFamily};
use crate::error::{DrcError, Result};
use crate::lti_system::{BoundedNoiseSpec, NoiseKind, SystemModel};

/// Plant matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum PlantSpec {
    /// One-dimensional `x_{t+1} = a x_t + b u_t + w_t`, `y_t = c x_t + e_t`.
    Scalar { a: f64, b: f64, c: f64 },
    /// Gaussian matrices with `A` rescaled to spectral radius `rho`.
    RandomStable {
        dx: usize,
        du: usize,
        dy: usize,
        rho: f64,
        seed: u64,
    },
    /// Row-major matrices.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Radius (uniform ball) or per-coordinate sigma (truncated Gaussian) of `w`.
    pub w_scale: f64,
    /// Same for `e`.
    pub e_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub plant: PlantSpec,
    pub noise: NoiseConfig,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(DrcError::Config(format!(
            "matrix `{name}` must be a non-empty rectangular list of rows"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl SystemConfig {
    pub fn scalar(a: f64, noise: NoiseConfig) -> Self {
        Self {
            plant: PlantSpec::Scalar { a, b: 1.0, c: 1.0 },
            noise,
        }
    }

    fn noise_specs(&self, dx: usize, dy: usize) -> Result<(BoundedNoiseSpec, BoundedNoiseSpec)> {
        let make = |dim, scale: f64| {
            if scale == 0.0 {
                Ok(BoundedNoiseSpec::zero(dim))
            } else {
                BoundedNoiseSpec::new(self.noise.kind, dim, scale)
            }
        };
        Ok((make(dx, self.noise.w_scale)?, make(dy, self.noise.e_scale)?))
    }

    pub fn build(&self) -> Result<SystemModel> {
        match &self.plant {
            PlantSpec::Scalar { a, b, c } => {
                let (nw, ne) = self.noise_specs(1, 1)?;
                SystemModel::new(
                    DMatrix::from_element(1, 1, *a),
                    DMatrix::from_element(1, 1, *b),
                    DMatrix::from_element(1, 1, *c),
                    nw,
                    ne,
                )
            }
            PlantSpec::RandomStable {
                dx,
                du,
                dy,
                rho,
                seed,
            } => {
                let (nw, ne) = self.noise_specs(*dx, *dy)?;
                SystemModel::random_stable(*dx, *du, *dy, *rho, *seed, nw, ne)
            }
            PlantSpec::Explicit { a, b, c } => {
                let a = matrix(a, "a")?;
                let b = matrix(b, "b")?;
                let c = matrix(c, "c")?;
                let (nw, ne) = self.noise_specs(a.nrows(), c.nrows())?;
                SystemModel::new(a, b, c, nw, ne)
            }
        }
    }
}

/// Regularization schedule selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    Preset { case: RegularizationCase },
    /// Explicit `lambda_1, lambda_2, ...`; zero after the list ends.
    Custom { lambdas: Vec<f64> },
}

/// How the memory lengths `(m, h)` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MemoryChoice {
    /// Smallest `(m, h)` meeting the tail conditions at `reference_horizon`
    /// (the episode horizon when absent).
    Auto { reference_horizon: Option<usize> },
    Fixed { m: usize, h: usize },
}

/// Which gradient of the memory-less loss drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GradientMode {
    /// Gradient of `f_t` on the observed natural outputs.
    Realized,
    /// Average over `samples` freshly simulated natural-output windows, each
    /// started from rest and run for `burn_in` extra steps.
    MonteCarlo { samples: usize, burn_in: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub system: SystemConfig,
    pub losses: LossFamily,
    pub horizon: usize,
    pub schedule: ScheduleSpec,
    pub r_m: f64,
    pub memory: MemoryChoice,
    pub gradient: GradientMode,
    /// Seeds averaged for expectation estimates.
    pub seeds: usize,
    /// Random stable linear dynamic controllers sampled for the policy gap.
    pub ldc_samples: usize,
}

/// Everything derived from a config before the episode starts.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: SystemModel,
    pub m: usize,
    pub h: usize,
    pub schedule: LambdaSchedule,
    pub h_tilde: f64,
}

impl EpisodeConfig {
    pub fn dims(&self, model: &SystemModel) -> LossDims {
        LossDims {
            dy: model.dy(),
            du: model.du(),
        }
    }

    /// `H~`: the loss curvature scale pushed through the strong-convexity transfer.
    pub fn h_tilde(&self, model: &SystemModel) -> f64 {
        transfer(self.losses.curvature_scale(), model)
    }

    pub fn memory_lengths(&self, model: &SystemModel) -> Result<(usize, usize)> {
        match self.memory {
            MemoryChoice::Fixed { m, h } => {
                if m == 0 {
                    return Err(DrcError::Config("memory.m must be at least 1".into()));
                }
                Ok((m, h))
            }
            MemoryChoice::Auto { reference_horizon } => {
                let t = reference_horizon.unwrap_or(self.horizon);
                model.select_memory(self.r_m, t)
            }
        }
    }

    pub fn lambda_schedule(&self, h_tilde: f64) -> Result<LambdaSchedule> {
        match &self.schedule {
            ScheduleSpec::Preset { case } => {
                let alpha = self.losses.alpha().unwrap_or(0.0);
                make_lambda_schedule(*case, self.horizon, h_tilde, alpha)
            }
            ScheduleSpec::Custom { lambdas } => LambdaSchedule::custom(lambdas.clone()),
        }
    }

    /// Check every invariant that can be checked without simulating.
    pub fn resolve(&self) -> Result<Resolved> {
        if self.horizon == 0 {
            return Err(DrcError::Config("horizon must be positive".into()));
        }
        if let ScheduleSpec::Preset { .. } = self.schedule {
            if self.horizon < MIN_PRESET_HORIZON {
                return Err(DrcError::Config(format!(
                    "preset schedules need T >= {MIN_PRESET_HORIZON}, got T = {}",
                    self.horizon
                )));
            }
        }
        if let ScheduleSpec::Custom { lambdas } = &self.schedule {
            validate_schedule(lambdas)?;
        }
        if !(self.r_m > 0.0 && self.r_m.is_finite()) {
            return Err(DrcError::Config(format!("r_m must be positive, got {}", self.r_m)));
        }
        if self.seeds == 0 {
            return Err(DrcError::Config("seeds must be at least 1".into()));
        }
        if let GradientMode::MonteCarlo { samples, .. } = self.gradient {
            if samples == 0 {
                return Err(DrcError::Config("monte-carlo samples must be at least 1".into()));
            }
        }
        self.losses.validate()?;
        let model = self.system.build()?;
        let (m, h) = self.memory_lengths(&model)?;
        let h_tilde = self.h_tilde(&model);
        let schedule = self.lambda_schedule(h_tilde)?;
        // The first step rate needs lambda_1 > 0 or a curvature floor at t = 1.
        if schedule.at(1) + h_tilde <= 0.0 {
            return Err(DrcError::ZeroStepDenominator { t: 1 });
        }
        Ok(Resolved {
            model,
            m,
            h,
            schedule,
            h_tilde,
        })
    }
}

/// Strong-convexity transfer for a given loss curvature on `model`.
pub fn transfer(h_l: f64, model: &SystemModel) -> f64 {
    strong_convexity_transfer(
        h_l,
        model.noise_w().variance_floor(),
        model.noise_e().variance_floor(),
        model.c(),
        model.a(),
    )
}

/// Reference scalar setting: `A = 0.25`, uniform disturbances of radius 1 on
/// the state and 0.5 on the output, `R_M = 1`.
pub fn scalar_preset(case: RegularizationCase, horizon: usize) -> EpisodeConfig {
    let losses = match case {
        RegularizationCase::Convex => LossFamily::ConvexOnly { target_radius: 0.5 },
        RegularizationCase::StronglyConvex => LossFamily::DecayingCurvature {
            alpha: 0.0,
            scale: 1.0,
            target_radius: 0.5,
        },
        RegularizationCase::DecayingSlow => LossFamily::DecayingCurvature {
            alpha: 0.25,
            scale: 1.0,
            target_radius: 0.5,
        },
        RegularizationCase::DecayingFast => LossFamily::DecayingCurvature {
            alpha: 0.75,
            scale: 1.0,
            target_radius: 0.5,
        },
    };
    EpisodeConfig {
        system: SystemConfig::scalar(
            0.25,
            NoiseConfig {
                kind: NoiseKind::UniformBall,
                w_scale: 1.0,
                e_scale: 0.5,
            },
        ),
        losses,
        horizon,
        schedule: ScheduleSpec::Preset { case },
        r_m: 1.0,
        memory: MemoryChoice::Auto {
            reference_horizon: None,
        },
        gradient: GradientMode::Realized,
        seeds: 20,
        ldc_samples: 0,
    }
}
