use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{transfer, EpisodeConfig, GradientMode, Resolved};
use crate::adaptive_learner::{
    drc_agd_update_with_gradient, BoundConstants, StepState,
};
use crate::adversary::LossSpec;
use crate::drc_policy::{control_input_raw, ConvexSet, DrcConstraintSet, DrcParams};
use crate::error::Result;
use crate::lti_system::{InputResponse, NoiseLog, SimState, SystemModel};
use crate::truncated_loss::{
    memory_loss, memoryless_f, memoryless_gradient, monte_carlo_gradient, LossContext,
};

/// Independent 64-bit seed for sub-stream `tag` of `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

const NOISE_STREAM: u64 = 1;
const LOSS_STREAM: u64 = 2;
const MONTE_CARLO_STREAM: u64 = 3;

/// One row of the per-step log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub t: usize,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub ynat: DVector<f64>,
    /// `l_t(y_t, u_t)`.
    pub loss: f64,
    /// `F_t` on the parameters actually played.
    pub memory_loss: f64,
    /// `f_t(P_t)`.
    pub memoryless_loss: f64,
    /// `eta_{t+1}`.
    pub eta: f64,
    pub curvature: f64,
    pub lambda: f64,
    pub grad_norm: f64,
    /// Feasibility slack of `P_t`.
    pub slack: f64,
    /// `||P_{t+1} - P_t||`.
    pub drift: f64,
    /// `eta_{t+1} (G_f + lambda_t D)`.
    pub drift_bound: f64,
}

/// Everything needed to replay and analyse an episode.
#[derive(Debug, Clone)]
pub struct Trace {
    pub seed: u64,
    pub m: usize,
    pub h: usize,
    pub du: usize,
    pub dy: usize,
    pub r_m: f64,
    pub steps: Vec<TraceStep>,
    /// `P_1 ..= P_{T+1}`.
    pub params: Vec<DVector<f64>>,
    pub noise: NoiseLog,
    pub losses: Vec<LossSpec>,
    pub constants: BoundConstants,
}

impl Trace {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn final_params(&self) -> DrcParams {
        let p = self.params.last().cloned().expect("trace holds P_1");
        DrcParams::from_vector(self.m, self.du, self.dy, p).expect("consistent shapes")
    }

    pub fn realized_costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.loss).sum()
    }

    pub fn natural_outputs(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.ynat.clone()).collect()
    }

    pub fn curvatures(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.curvature).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.lambda).collect()
    }

    /// Largest `drift - drift_bound` over the episode.
    pub fn worst_drift_excess(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.drift - s.drift_bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Bound constants for an episode, with `L` the largest loss constant.
pub fn bound_constants(model: &SystemModel, losses: &[LossSpec], r_m: f64, m: usize, h: usize) -> BoundConstants {
    let l = losses.iter().map(LossSpec::lipschitz).fold(0.0, f64::max);
    BoundConstants {
        l,
        r_m,
        r_g_star: model.r_g_star(),
        r_nat: model.r_nat(),
        m,
        h,
        du: model.du(),
        dy: model.dy(),
    }
}

/// Run the online protocol with a loss sequence fixed before the episode.
pub fn run_episode(config: &EpisodeConfig, seed: u64) -> Result<Trace> {
    let resolved = config.resolve()?;
    let dims = config.dims(&resolved.model);
    let losses = config
        .losses
        .sequence(dims, derive_seed(seed, LOSS_STREAM), config.horizon)?;
    run_with_losses(config, &resolved, seed, losses)
}

/// As [`run_episode`] with an explicit loss sequence of length `T`.
pub fn run_with_losses(
    config: &EpisodeConfig,
    resolved: &Resolved,
    seed: u64,
    losses: Vec<LossSpec>,
) -> Result<Trace> {
    let model = &resolved.model;
    let (m, h) = (resolved.m, resolved.h);
    let (du, dy) = (model.du(), model.dy());
    crate::error::check_dim("loss sequence", config.horizon, losses.len())?;
    let ops = model.markov_operators(h);
    let set = DrcConstraintSet::new(m, du, dy, config.r_m)?;
    let constants = bound_constants(model, &losses, config.r_m, m, h);
    let (g_f, diameter) = (constants.g_f(), constants.diameter());

    let mut sim = SimState::new(model, derive_seed(seed, NOISE_STREAM));
    let mut response = InputResponse::new(model);
    let mut state = StepState::new();
    let mut ynat_hist: Vec<DVector<f64>> = Vec::with_capacity(config.horizon);
    let mut params = vec![DVector::zeros(set.dim())];
    let mut steps = Vec::with_capacity(config.horizon);

    for (idx, loss) in losses.iter().enumerate() {
        let t = idx + 1;
        let y = sim.observe(model);
        let ynat = response.natural_output(model, &y);
        ynat_hist.push(ynat.clone());
        let p = params[idx].clone();
        let u = control_input_raw(&p, m, du, dy, &ynat_hist)?;

        // The loss is revealed only after u_t has been committed.
        let value = loss.value(&y, &u)?;
        let ctx = LossContext::new(&ynat_hist, m, h, &ops, loss.clone())?;
        let window: Vec<_> = (0..=h)
            .map(|k| params[(idx + k).saturating_sub(h)].clone())
            .collect();
        let big_f = memory_loss(&window, &ctx)?;
        let small_f = memoryless_f(&p, &ctx)?;
        let curvature = transfer(loss.curvature(), model);
        let lambda = resolved.schedule.at(t);
        let gradient = match config.gradient {
            GradientMode::Realized => memoryless_gradient(&p, &ctx)?,
            GradientMode::MonteCarlo { samples, burn_in } => {
                let windows = sample_natural_windows(model, m + h, burn_in, samples, seed, t);
                monte_carlo_gradient(&p, &ctx, &windows)?
            }
        };
        let grad_norm = gradient.norm();
        let step = drc_agd_update_with_gradient(&p, gradient, curvature, lambda, &mut state, &set)?;

        sim.apply(model, &u)?;
        response.push(model, &u);

        steps.push(TraceStep {
            t,
            y,
            u,
            ynat,
            loss: value,
            memory_loss: big_f,
            memoryless_loss: small_f,
            eta: step.eta,
            curvature,
            lambda,
            grad_norm,
            slack: set.slack(&p),
            drift: (&step.params - &p).norm(),
            drift_bound: step.eta * (g_f + lambda * diameter),
        });
        params.push(step.params);
    }

    Ok(Trace {
        seed,
        m,
        h,
        du,
        dy,
        r_m: config.r_m,
        steps,
        params,
        noise: sim.noise_log().clone(),
        losses,
        constants,
    })
}

/// Natural-output windows of length `len` simulated from rest with fresh
/// noise after `burn_in` warm-up steps.
fn sample_natural_windows(
    model: &SystemModel,
    len: usize,
    burn_in: usize,
    samples: usize,
    seed: u64,
    t: usize,
) -> Vec<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, MONTE_CARLO_STREAM));
    rng.set_stream(t as u64);
    (0..samples)
        .map(|_| {
            let mut x = DVector::zeros(model.dx());
            let mut out = Vec::with_capacity(len);
            for k in 0..burn_in + len {
                let e = model.noise_e().sample(&mut rng);
                let w = model.noise_w().sample(&mut rng);
                if k >= burn_in {
                    out.push(model.c() * &x + e);
                }
                x = model.a() * &x + w;
            }
            out
        })
        .collect()
}
