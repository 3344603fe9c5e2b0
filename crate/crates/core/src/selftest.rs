//! Randomized invariant checks shared by the command-line self-test and the
//! acceptance harness. Every check is seeded and returns a pass/fail line.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::adaptive_learner::{validate_schedule, RegularizationCase};
use crate::adversary::LossSpec;
use crate::drc_policy::{control_input, project_group_ball, ConvexSet, DrcConstraintSet, DrcParams};
use crate::error::Result;
use crate::lti_system::{natural_output, natural_outputs_from_noise, BoundedNoiseSpec, SimState, SystemModel};
use crate::regret_lab::{
    evaluate_episode, random_schedule, run_adaptive_oco, run_episode, run_with_losses, scalar_preset,
    EpisodeConfig, MemoryChoice, OcoMemoryInstance, PlantSpec, SolverOptions,
};
use crate::truncated_loss::{memoryless_f, memoryless_gradient, truncated_output, LossContext};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: Result<CheckResult>) -> Self {
        r.unwrap_or_else(|e| CheckResult::new(name, false, format!("error: {e}")))
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn gauss_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn gauss_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_model(rng: &mut ChaCha8Rng, max_dim: usize) -> Result<SystemModel> {
    let dx = rng.random_range(1..=max_dim);
    let du = rng.random_range(1..=max_dim);
    let dy = rng.random_range(1..=max_dim);
    let rho = rng.random_range(0.1..0.9);
    SystemModel::random_stable(
        dx,
        du,
        dy,
        rho,
        rng.random(),
        BoundedNoiseSpec::uniform_ball(dx, 1.0)?,
        BoundedNoiseSpec::uniform_ball(dy, 0.5)?,
    )
}

/// Outcome of the online-with-memory bound check.
#[derive(Debug, Clone)]
pub struct OcoCheck {
    pub bound: CheckResult,
    /// Largest `||u_{t+1} - u_t|| - eta_{t+1}(G_f + lambda_t D)` seen.
    pub worst_drift_excess: f64,
}

/// Regret of the adaptive learner against its bound on random quadratic
/// games. `with_memory = false` fixes `h = 0`.
pub fn oco_bound_dominance(instances: usize, horizon: usize, with_memory: bool, seed: u64) -> OcoCheck {
    let name = if with_memory {
        "memory game regret <= memory bound"
    } else {
        "memoryless regret <= adaptive bound"
    };
    let opts = SolverOptions::default();
    let outcomes: Vec<Result<(f64, f64, f64)>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let dim = 1 + i % 4;
            let h = if with_memory { 1 + (i / 4) % 3 } else { 0 };
            let inst = OcoMemoryInstance::random(s, dim, h, horizon, i % 2 == 0);
            let lambdas = random_schedule(&inst, s ^ 0x5eed);
            let out = run_adaptive_oco(&inst, &lambdas, &opts)?;
            let drift = out.drifts.iter().map(|(d, b)| d - b).fold(f64::NEG_INFINITY, f64::max);
            Ok((out.regret, out.bound, drift))
        })
        .collect();
    let mut passed = 0;
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_drift = f64::NEG_INFINITY;
    let mut errors = 0;
    for o in outcomes {
        match o {
            Ok((regret, bound, drift)) => {
                if regret <= bound + 1e-6 {
                    passed += 1;
                }
                worst_ratio = worst_ratio.max(regret / bound);
                worst_drift = worst_drift.max(drift);
            }
            Err(_) => errors += 1,
        }
    }
    OcoCheck {
        bound: CheckResult::new(
            name,
            passed == instances && errors == 0,
            format!("{passed}/{instances} instances, worst regret/bound {worst_ratio:.3e}, errors {errors}"),
        ),
        worst_drift_excess: worst_drift,
    }
}

fn random_quadratic(rng: &mut ChaCha8Rng, dy: usize, du: usize) -> Result<LossSpec> {
    let dz = dy + du;
    let rank = rng.random_range(1..=dz);
    let f = gauss_mat(rng, dz, rank, 1.0);
    let target = gauss_vec(rng, dz, 1.0);
    LossSpec::quadratic(&f * f.transpose(), target, dy, du)
}

fn random_context(rng: &mut ChaCha8Rng) -> Result<LossContext> {
    let (m, h) = (rng.random_range(1..=4), rng.random_range(0..=4));
    let (du, dy) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let ops: Vec<_> = (0..h).map(|_| gauss_mat(rng, dy, du, 0.7)).collect();
    let len = rng.random_range(1..=m + h + 2);
    let ynat: Vec<_> = (0..len).map(|_| gauss_vec(rng, dy, 1.0)).collect();
    let loss = random_quadratic(rng, dy, du)?;
    LossContext::new(&ynat, m, h, &ops, loss)
}

/// Analytic gradient of the memory-less loss against central differences.
pub fn gradient_check(instances: usize, seed: u64) -> CheckResult {
    let name = "memoryless gradient matches central differences";
    let run = || -> Result<CheckResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let ctx = random_context(&mut rng)?;
            let p = gauss_vec(&mut rng, ctx.param_dim(), 0.5);
            let g = memoryless_gradient(&p, &ctx)?;
            let step = 1e-4;
            let mut fd = DVector::zeros(p.len());
            for i in 0..p.len() {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[i] += step;
                lo[i] -= step;
                fd[i] = (memoryless_f(&hi, &ctx)? - memoryless_f(&lo, &ctx)?) / (2.0 * step);
            }
            let rel = (&g - &fd).norm() / g.norm().max(1e-6);
            worst = worst.max(rel);
        }
        Ok(CheckResult::new(
            name,
            worst <= 1e-5,
            format!("{instances} instances, worst relative error {worst:.2e}"),
        ))
    };
    CheckResult::from_result(name, run())
}

/// Exact minimizer of `||x - p||` over the l1 ball by enumerating every face
/// (support set and sign pattern).
fn l1_ball_oracle(p: &DVector<f64>, radius: f64) -> DVector<f64> {
    if p.iter().map(|v| v.abs()).sum::<f64>() <= radius {
        return p.clone();
    }
    let n = p.len();
    let mut best = DVector::zeros(n);
    let mut best_dist = (p - &best).norm();
    for support in 1u32..(1 << n) {
        for signs in 0u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| support & (1 << i) != 0).collect();
            let sign = |i: usize| if signs & (1 << i) != 0 { -1.0 } else { 1.0 };
            let theta = (idx.iter().map(|&i| sign(i) * p[i]).sum::<f64>() - radius) / idx.len() as f64;
            let mut x = DVector::zeros(n);
            for &i in &idx {
                x[i] = p[i] - theta * sign(i);
            }
            if idx.iter().any(|&i| sign(i) * x[i] < 0.0) {
                continue;
            }
            let dist = (p - &x).norm();
            if dist < best_dist {
                best_dist = dist;
                best = x;
            }
        }
    }
    best
}

/// Group-ball projection against a face-enumeration oracle, plus idempotence
/// and non-expansiveness on random pairs.
pub fn projection_check(oracle_instances: usize, pairs: usize, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_oracle = 0.0f64;
    for _ in 0..oracle_instances {
        let m = rng.random_range(1..=3);
        let radius = rng.random_range(0.1..2.0);
        let p = gauss_vec(&mut rng, m, 1.5);
        let got = project_group_ball(&p, 1, radius);
        worst_oracle = worst_oracle.max((got - l1_ball_oracle(&p, radius)).norm());
    }
    let mut worst_idem = 0.0f64;
    let mut worst_expansion = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let (m, du, dy) = (rng.random_range(1..=4), rng.random_range(1..=3), rng.random_range(1..=3));
        let set = DrcConstraintSet {
            m,
            du,
            dy,
            radius: rng.random_range(0.1..2.0),
        };
        let a = gauss_vec(&mut rng, set.dim(), 1.5);
        let b = gauss_vec(&mut rng, set.dim(), 1.5);
        let pa = set.project(&a);
        let pb = set.project(&b);
        worst_idem = worst_idem.max((set.project(&pa) - &pa).norm());
        worst_expansion = worst_expansion.max((&pa - &pb).norm() - (&a - &b).norm());
    }
    vec![
        CheckResult::new(
            "group-ball projection matches face-enumeration oracle",
            worst_oracle <= 1e-5,
            format!("{oracle_instances} instances, worst distance {worst_oracle:.2e}"),
        ),
        CheckResult::new(
            "projection is idempotent",
            worst_idem <= 1e-9,
            format!("{pairs} points, worst change {worst_idem:.2e}"),
        ),
        CheckResult::new(
            "projection is non-expansive",
            worst_expansion <= 1e-9,
            format!("{pairs} pairs, worst excess {worst_expansion:.2e}"),
        ),
    ]
}

/// On random closed-loop trajectories: the output splits into its natural
/// part plus the Markov convolution of the inputs, and the truncated output
/// with full memory equals the true output.
pub fn natural_output_check(trajectories: usize, horizon: usize, seed: u64) -> Vec<CheckResult> {
    let names = [
        "output = natural output + input convolution",
        "full-memory truncated output equals output",
    ];
    let run = || -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_split = 0.0f64;
        let mut worst_trunc = 0.0f64;
        for _ in 0..trajectories {
            let model = random_model(&mut rng, 3)?;
            let (du, dy) = (model.du(), model.dy());
            let m = rng.random_range(1..=3);
            let ops = model.markov_operators(horizon);
            let mut st = SimState::new(&model, rng.random());
            let mut ynat = Vec::with_capacity(horizon);
            let mut params = Vec::with_capacity(horizon);
            let mut ys = Vec::with_capacity(horizon);
            for t in 1..=horizon {
                let y = st.observe(&model);
                ynat.push(natural_output(&y, st.input_history(), &model)?);
                let p = gauss_vec(&mut rng, m * du * dy, 0.5);
                let u = control_input(&DrcParams::from_vector(m, du, dy, p.clone())?, &ynat)?;
                params.push(p);
                let h = t - 1;
                let loss = LossSpec::quadratic(DMatrix::identity(dy + du, dy + du), DVector::zeros(dy + du), dy, du)?;
                let ctx = LossContext::new(&ynat, m, h, &ops, loss)?;
                let window: Vec<_> = params[t - 1 - h..].to_vec();
                worst_trunc = worst_trunc.max((truncated_output(&window, &ctx)? - &y).norm());
                ys.push(y);
                st.apply(&model, &u)?;
            }
            let reference = natural_outputs_from_noise(&model, st.initial_state(), st.noise_log());
            let inputs = st.input_history();
            for t in 0..horizon {
                let mut r = &ys[t] - &reference[t];
                for s in 1..=t {
                    r -= &ops[s - 1] * &inputs[t - s];
                }
                worst_split = worst_split.max(r.norm());
            }
        }
        Ok((worst_split, worst_trunc))
    };
    match run() {
        Ok((split, trunc)) => vec![
            CheckResult::new(
                names[0],
                split <= 1e-9,
                format!("{trajectories} trajectories, worst residual {split:.2e}"),
            ),
            CheckResult::new(
                names[1],
                trunc <= 1e-9,
                format!("{trajectories} trajectories, worst residual {trunc:.2e}"),
            ),
        ],
        Err(e) => names
            .iter()
            .map(|n| CheckResult::new(*n, false, format!("error: {e}")))
            .collect(),
    }
}

/// Checks over seeded control episodes.
#[derive(Debug, Clone)]
pub struct ControlCheck {
    pub bound: CheckResult,
    pub decomposition: CheckResult,
    pub worst_drift_excess: f64,
}

/// Episode configuration on a random plant with `d_x <= 3`.
pub fn random_plant_config(case: RegularizationCase, horizon: usize, seed: u64) -> EpisodeConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = scalar_preset(case, horizon);
    cfg.system.plant = PlantSpec::RandomStable {
        dx: rng.random_range(1..=3),
        du: 1,
        dy: rng.random_range(1..=2),
        rho: 0.4,
        seed: rng.random(),
    };
    cfg
}

/// Mean regret against the control bound for each case, and decomposition
/// consistency on every episode.
pub fn control_bound_check(cases: &[RegularizationCase], episodes: usize, horizon: usize, seed: u64) -> ControlCheck {
    let opts = SolverOptions::default();
    let jobs: Vec<(RegularizationCase, usize)> = cases
        .iter()
        .flat_map(|&c| (0..episodes).map(move |k| (c, k)))
        .collect();
    let results: Vec<Result<_>> = jobs
        .par_iter()
        .map(|&(case, k)| {
            let s = seed.wrapping_add(k as u64);
            let cfg = random_plant_config(case, horizon, s);
            let out = evaluate_episode(&cfg, s, &opts)?;
            let d = out.decomposition;
            Ok((case, out.summary.regret, out.summary.bound, (d.sum_of_terms() - d.regret()).abs(), out.summary.worst_drift_excess))
        })
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let mut bound_ok = errors.is_empty();
    let mut details = Vec::new();
    for &case in cases {
        let sel: Vec<_> = rows.iter().filter(|r| r.0 == case).collect();
        let n = sel.len().max(1) as f64;
        let mean_regret = sel.iter().map(|r| r.1).sum::<f64>() / n;
        let mean_bound = sel.iter().map(|r| r.2).sum::<f64>() / n;
        let each = sel.iter().all(|r| r.1 <= r.2 + 1e-6);
        bound_ok &= mean_regret <= mean_bound + 1e-6 && each;
        details.push(format!(
            "case {}: mean regret {mean_regret:.3} vs mean bound {mean_bound:.3e}",
            case.id()
        ));
    }
    let worst_gap = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let worst_drift = rows.iter().map(|r| r.4).fold(f64::NEG_INFINITY, f64::max);
    let err_note = if errors.is_empty() {
        String::new()
    } else {
        format!(", errors: {}", errors.join("; "))
    };
    ControlCheck {
        bound: CheckResult::new(
            "control regret <= control bound",
            bound_ok,
            format!("{} ({} episodes{err_note})", details.join(", "), rows.len()),
        ),
        decomposition: CheckResult::new(
            "regret decomposition telescopes",
            errors.is_empty() && worst_gap <= 1e-6,
            format!("{} episodes, worst |terms - regret| {worst_gap:.2e}", rows.len()),
        ),
        worst_drift_excess: worst_drift,
    }
}

/// Drift inequality verdict from the worst excess over a set of runs.
pub fn drift_result(worst_excess: f64, runs: &str) -> CheckResult {
    CheckResult::new(
        "step drift <= eta (G_f + lambda D)",
        worst_excess <= 1e-9,
        format!("{runs}, worst excess {worst_excess:.2e}"),
    )
}

/// Replacing every loss after step `t` leaves `u_1, .., u_{t+1}` unchanged.
pub fn causality_check(seed: u64) -> CheckResult {
    let name = "inputs do not depend on future losses";
    let run = || -> Result<CheckResult> {
        let mut cfg = random_plant_config(RegularizationCase::DecayingSlow, 64, seed);
        cfg.memory = MemoryChoice::Fixed { m: 3, h: 4 };
        let resolved = cfg.resolve()?;
        let dims = cfg.dims(&resolved.model);
        let base = cfg.losses.sequence(dims, seed, cfg.horizon)?;
        let other = cfg.losses.sequence(dims, seed ^ 0xfeed, cfg.horizon)?;
        let full = run_with_losses(&cfg, &resolved, seed, base.clone())?;
        let mut worst = 0.0f64;
        let mut tail_moved = false;
        for cut in [1usize, 7, 30] {
            let mut mixed = base[..cut].to_vec();
            mixed.extend_from_slice(&other[cut..]);
            let part = run_with_losses(&cfg, &resolved, seed, mixed)?;
            for (a, b) in part.steps.iter().zip(&full.steps).take(cut + 1) {
                worst = worst.max((&a.u - &b.u).norm());
            }
            tail_moved |= part.steps.last().map(|s| &s.u) != full.steps.last().map(|s| &s.u);
        }
        Ok(CheckResult::new(
            name,
            worst == 0.0 && tail_moved,
            format!("worst change before the cut {worst:.2e}, later inputs react: {tail_moved}"),
        ))
    };
    CheckResult::from_result(name, run())
}

/// Two runs with the same seed give identical traces.
pub fn determinism_check(seed: u64) -> CheckResult {
    let name = "episodes are reproducible from their seed";
    let run = || -> Result<CheckResult> {
        let cfg = random_plant_config(RegularizationCase::Convex, 48, seed);
        let a = run_episode(&cfg, seed)?;
        let b = run_episode(&cfg, seed)?;
        let same = a.steps == b.steps && a.params == b.params;
        Ok(CheckResult::new(name, same, "two runs compared step by step"))
    };
    CheckResult::from_result(name, run())
}

/// Increasing schedules and short preset horizons are rejected.
pub fn validation_check() -> CheckResult {
    let increasing = validate_schedule(&[1.0, 2.0]).is_err();
    let short = scalar_preset(RegularizationCase::Convex, 3).resolve().is_err();
    let ok_cfg = scalar_preset(RegularizationCase::Convex, 4).resolve().is_ok();
    CheckResult::new(
        "schedule and horizon preconditions are enforced",
        increasing && short && ok_cfg,
        format!("increasing rejected: {increasing}, T = 3 rejected: {short}, T = 4 accepted: {ok_cfg}"),
    )
}

/// Every check at reduced size; finishes in a few seconds.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let memory = oco_bound_dominance(12, 60, true, seed);
    let plain = oco_bound_dominance(12, 60, false, seed);
    out.push(memory.bound);
    out.push(plain.bound);
    let control = control_bound_check(&[RegularizationCase::Convex, RegularizationCase::StronglyConvex], 2, 64, seed);
    out.push(control.bound);
    out.push(control.decomposition);
    out.push(drift_result(
        memory
            .worst_drift_excess
            .max(plain.worst_drift_excess)
            .max(control.worst_drift_excess),
        "all self-test runs",
    ));
    out.push(gradient_check(100, seed));
    out.extend(projection_check(50, 1000, seed));
    out.extend(natural_output_check(10, 30, seed));
    out.push(causality_check(seed));
    out.push(determinism_check(seed));
    out.push(validation_check());
    out
}
