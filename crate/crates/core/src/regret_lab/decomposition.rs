use serde::Serialize;

use super::comparator::{minimize, AffineTerm, Comparator, Objective, SolverOptions};
use super::episode::Trace;
use crate::drc_policy::DrcConstraintSet;
use crate::error::Result;
use crate::lti_system::SystemModel;
use crate::truncated_loss::LossContext;

/// Regret split into burn-in, truncation and policy terms.
///
/// The first four terms telescope to `realized - comparator`; the comparator
/// truncation term is measured against the full-horizon hindsight cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub burn_in: f64,
    pub algorithm_truncation: f64,
    pub f_policy: f64,
    pub comparator_truncation: f64,
    /// Hindsight DRC cost minus the best sampled linear dynamic controller.
    pub policy_gap: Option<f64>,
    /// `inf_P sum_{t > m+h} f_t(P)`.
    pub f_comparator: f64,
    pub realized: f64,
    pub comparator: f64,
}

impl Decomposition {
    /// Realized cost minus hindsight DRC cost.
    pub fn regret(&self) -> f64 {
        self.realized - self.comparator
    }

    pub fn sum_of_terms(&self) -> f64 {
        self.burn_in + self.algorithm_truncation + self.f_policy + self.comparator_truncation
    }
}

/// Affine maps of `f_t` for `t > m + h`.
fn memoryless_terms(trace: &Trace, model: &SystemModel) -> Result<Vec<AffineTerm>> {
    let ynat = trace.natural_outputs();
    let ops = model.markov_operators(trace.h);
    let start = trace.m + trace.h;
    (start..trace.horizon())
        .map(|idx| {
            let ctx = LossContext::new(&ynat[..=idx], trace.m, trace.h, &ops, trace.losses[idx].clone())?;
            let (offset, jac) = ctx.affine_map();
            Ok(AffineTerm {
                offset,
                jac,
                loss_index: idx,
            })
        })
        .collect()
}

pub fn decompose_regret(
    trace: &Trace,
    model: &SystemModel,
    comparator: &Comparator,
    policy_gap: Option<f64>,
    opts: &SolverOptions,
) -> Result<Decomposition> {
    let burn = (trace.m + trace.h).min(trace.horizon());
    let steps = &trace.steps;
    let burn_in: f64 = steps[..burn].iter().map(|s| s.loss).sum();
    let algorithm_truncation: f64 = steps[burn..].iter().map(|s| s.loss - s.memory_loss).sum();
    let played_memory: f64 = steps[burn..].iter().map(|s| s.memory_loss).sum();

    let set = DrcConstraintSet::new(trace.m, trace.du, trace.dy, trace.r_m)?;
    let terms = memoryless_terms(trace, model)?;
    let f_comparator = if terms.is_empty() {
        0.0
    } else {
        let obj = Objective::from_terms(trace.m * trace.du * trace.dy, terms, &trace.losses);
        minimize(&obj, &set, opts).value
    };
    Ok(Decomposition {
        burn_in,
        algorithm_truncation,
        f_policy: played_memory - f_comparator,
        comparator_truncation: f_comparator - comparator.cost,
        policy_gap,
        f_comparator,
        realized: trace.total_cost(),
        comparator: comparator.cost,
    })
}
