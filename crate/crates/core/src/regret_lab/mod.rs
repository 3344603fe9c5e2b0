//! Episodes, hindsight comparators, regret decomposition and rate fits.

mod comparator;
mod config;
mod decomposition;
mod episode;
mod ldc;
mod oco;
mod rate;

pub use comparator::{
    best_fixed_drc, fixed_policy_cost, minimize, replay_terms, AffineTerm, Comparator, Objective,
    SolveReport, SolverOptions,
};
pub use config::{
    scalar_preset, transfer, EpisodeConfig, GradientMode, MemoryChoice, NoiseConfig, PlantSpec,
    Resolved, ScheduleSpec, SystemConfig,
};
pub use decomposition::{decompose_regret, Decomposition};
pub use episode::{bound_constants, derive_seed, run_episode, run_with_losses, Trace, TraceStep};
pub use ldc::{best_sampled_ldc, ldc_rollout, sample_stabilizing_ldc, Ldc};
pub use oco::{random_schedule, run_adaptive_oco, OcoMemoryInstance, OcoOutcome};
pub use rate::{fit_rate, RateFit};

use rayon::prelude::*;
use serde::Serialize;

use crate::adaptive_learner::regret_bound_control;
use crate::error::Result;

const LDC_STREAM: u64 = 4;

/// Headline numbers of one evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub horizon: usize,
    pub case: Option<u32>,
    pub m: usize,
    pub h: usize,
    pub regret: f64,
    pub bound: f64,
    pub realized: f64,
    pub comparator: f64,
    pub burn_in: f64,
    pub algorithm_truncation: f64,
    pub f_policy: f64,
    pub comparator_truncation: f64,
    pub policy_gap: Option<f64>,
    /// `max_t (||P_{t+1} - P_t|| - eta_{t+1}(G_f + lambda_t D))`.
    pub worst_drift_excess: f64,
    pub solver_converged: bool,
    pub restart_spread: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: Trace,
    pub comparator: Comparator,
    pub decomposition: Decomposition,
    pub summary: EpisodeSummary,
}

/// Run an episode, solve its hindsight problem and split the regret.
pub fn evaluate_episode(config: &EpisodeConfig, seed: u64, opts: &SolverOptions) -> Result<EpisodeOutcome> {
    let model = config.resolve()?.model;
    let trace = run_episode(config, seed)?;
    let comparator = best_fixed_drc(&trace, &model, opts)?;
    let policy_gap = if config.ldc_samples > 0 {
        let (_, ldc_cost) = best_sampled_ldc(
            &model,
            &trace.noise,
            &trace.losses,
            config.ldc_samples,
            derive_seed(seed, LDC_STREAM),
        )?;
        Some(comparator.cost - ldc_cost)
    } else {
        None
    };
    let decomposition = decompose_regret(&trace, &model, &comparator, policy_gap, opts)?;
    let bound = regret_bound_control(&trace.constants, &trace.curvatures(), &trace.lambdas())?;
    let case = match config.schedule {
        ScheduleSpec::Preset { case } => Some(case.id()),
        ScheduleSpec::Custom { .. } => None,
    };
    let summary = EpisodeSummary {
        seed,
        horizon: config.horizon,
        case,
        m: trace.m,
        h: trace.h,
        regret: decomposition.regret(),
        bound,
        realized: decomposition.realized,
        comparator: decomposition.comparator,
        burn_in: decomposition.burn_in,
        algorithm_truncation: decomposition.algorithm_truncation,
        f_policy: decomposition.f_policy,
        comparator_truncation: decomposition.comparator_truncation,
        policy_gap,
        worst_drift_excess: trace.worst_drift_excess(),
        solver_converged: comparator.report.converged,
        restart_spread: comparator.report.restart_spread(),
    };
    Ok(EpisodeOutcome {
        trace,
        comparator,
        decomposition,
        summary,
    })
}

/// Mean regret per horizon and the fitted exponent.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Ordered by horizon, then by seed.
    pub summaries: Vec<EpisodeSummary>,
    /// Traces kept by the `keep_trace` predicate, in the same order.
    pub traces: Vec<Trace>,
    pub mean_regret: Vec<(usize, f64)>,
    pub fit: Option<RateFit>,
}

/// Run `base` at every horizon for every seed in parallel. Memory lengths
/// chosen automatically are fixed at the largest horizon so that every
/// horizon plays the same controller class.
pub fn sweep(
    base: &EpisodeConfig,
    horizons: &[usize],
    seeds: &[u64],
    opts: &SolverOptions,
    keep_trace: &(dyn Fn(u64, usize) -> bool + Sync),
) -> Result<SweepResult> {
    let t_max = horizons.iter().copied().max().unwrap_or(base.horizon);
    let mut shared = base.clone();
    if let MemoryChoice::Auto { reference_horizon: None } = shared.memory {
        shared.memory = MemoryChoice::Auto {
            reference_horizon: Some(t_max),
        };
    }
    let jobs: Vec<(usize, u64)> = horizons
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let results: Vec<Result<(EpisodeSummary, Option<Trace>)>> = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let mut cfg = shared.clone();
            cfg.horizon = t;
            let out = evaluate_episode(&cfg, seed, opts)?;
            let trace = keep_trace(seed, t).then_some(out.trace);
            Ok((out.summary, trace))
        })
        .collect();
    let mut summaries = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for r in results {
        let (s, tr) = r?;
        summaries.push(s);
        traces.extend(tr);
    }
    let mean_regret: Vec<(usize, f64)> = horizons
        .iter()
        .map(|&t| {
            let rs: Vec<f64> = summaries.iter().filter(|s| s.horizon == t).map(|s| s.regret).collect();
            (t, rs.iter().sum::<f64>() / rs.len().max(1) as f64)
        })
        .collect();
    let fit = if mean_regret.len() >= 2 {
        let (ts, rs): (Vec<usize>, Vec<f64>) = mean_regret.iter().copied().unzip();
        fit_rate(&ts, &rs).ok()
    } else {
        None
    };
    Ok(SweepResult {
        summaries,
        traces,
        mean_regret,
        fit,
    })
}
