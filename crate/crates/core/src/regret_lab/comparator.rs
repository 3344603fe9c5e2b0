//! Best fixed controller in hindsight.
//!
//! Under a fixed `P` every quantity the loss sees is affine in `P`, so the
//! hindsight objective is `sum_t l_t(c_t + J_t P)`: convex, and an explicit
//! quadratic form whenever all losses are quadratic.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::episode::Trace;
use crate::adversary::LossSpec;
use crate::drc_policy::{input_jacobian, ConvexSet, DrcConstraintSet};
use crate::error::{check_dim, Result};
use crate::linalg::{max_eigenvalue_sym, vstack};
use crate::lti_system::SystemModel;

/// `z = offset + jac * P` feeding loss `loss_index`.
#[derive(Debug, Clone)]
pub struct AffineTerm {
    pub offset: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub loss_index: usize,
}

/// Smooth convex objective over `P`.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `constant + linear^T P + 1/2 P^T hessian P`.
    Quadratic {
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constant: f64,
    },
    /// Sum of losses composed with affine maps.
    Composite {
        terms: Vec<AffineTerm>,
        losses: Vec<LossSpec>,
    },
}

impl Objective {
    /// Assemble `sum_k losses[term.loss_index](term.offset + term.jac P)`.
    pub fn from_terms(n: usize, terms: Vec<AffineTerm>, losses: &[LossSpec]) -> Self {
        let used = |t: &AffineTerm| &losses[t.loss_index];
        if terms.iter().all(|t| used(t).hessian_z().is_some()) {
            let mut hessian = DMatrix::zeros(n, n);
            let mut linear = DVector::zeros(n);
            let mut constant = 0.0;
            for term in &terms {
                let loss = used(term);
                let hz = loss.hessian_z().expect("quadratic kind");
                let jt = term.jac.transpose();
                hessian += &jt * hz * &term.jac;
                linear += &jt * loss.grad_z(&term.offset);
                constant += loss.value_z(&term.offset);
            }
            hessian = (&hessian + hessian.transpose()) * 0.5;
            Objective::Quadratic {
                hessian,
                linear,
                constant,
            }
        } else {
            Objective::Composite {
                terms,
                losses: losses.to_vec(),
            }
        }
    }

    pub fn value(&self, p: &DVector<f64>) -> f64 {
        match self {
            Objective::Quadratic {
                hessian,
                linear,
                constant,
            } => constant + linear.dot(p) + 0.5 * p.dot(&(hessian * p)),
            Objective::Composite { terms, losses } => terms
                .iter()
                .map(|t| losses[t.loss_index].value_z(&(&t.offset + &t.jac * p)))
                .sum(),
        }
    }

    pub fn gradient(&self, p: &DVector<f64>) -> DVector<f64> {
        match self {
            Objective::Quadratic { hessian, linear, .. } => linear + hessian * p,
            Objective::Composite { terms, losses } => {
                let mut g = DVector::zeros(p.len());
                for t in terms {
                    let z = &t.offset + &t.jac * p;
                    g += t.jac.transpose() * losses[t.loss_index].grad_z(&z);
                }
                g
            }
        }
    }

    /// Initial smoothness estimate for the line search.
    fn smoothness_hint(&self) -> f64 {
        match self {
            Objective::Quadratic { hessian, .. } => max_eigenvalue_sym(hessian).max(1e-12),
            Objective::Composite { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Starting points: the origin plus `restarts - 1` random feasible points.
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the certified gap `||G|| * D` falls below
    /// `rel_tol * max(1, |f|)`, where `G` is the gradient mapping.
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 100_000,
            rel_tol: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub p: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    /// False when some restart hit `max_iter`; the best iterate is returned.
    pub converged: bool,
    /// Final objective of every restart, in start order.
    pub restart_values: Vec<f64>,
}

impl SolveReport {
    /// Largest disagreement between restarts.
    pub fn restart_spread(&self) -> f64 {
        let lo = self.restart_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.restart_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

fn random_feasible<S: ConvexSet + ?Sized>(set: &S, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = set.dim();
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale = set.diameter() * rng.random::<f64>();
    set.project(&(v.normalize() * scale))
}

/// Accelerated projected gradient with backtracking and function-value restarts.
fn solve_from<S: ConvexSet + ?Sized>(
    obj: &Objective,
    set: &S,
    start: DVector<f64>,
    opts: &SolverOptions,
) -> (DVector<f64>, f64, usize, bool) {
    let diameter = set.diameter().max(1e-12);
    let mut lip = obj.smoothness_hint();
    let mut x = set.project(&start);
    let mut fx = obj.value(&x);
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    // True while `y == x`; a plain projected step is always accepted.
    let mut plain = true;
    for iter in 1..=opts.max_iter {
        let fy = obj.value(&y);
        let gy = obj.gradient(&y);
        let (x_new, f_new) = loop {
            let cand = set.project(&(&y - &gy * (1.0 / lip)));
            let d = &cand - &y;
            let fc = obj.value(&cand);
            if fc <= fy + gy.dot(&d) + 0.5 * lip * d.norm_squared() + 1e-12 * fy.abs().max(1.0) {
                break (cand, fc);
            }
            lip *= 2.0;
        };
        let mapping = (&x_new - &y).norm() * lip;
        if f_new > fx && !plain {
            // Restart momentum from the last accepted point.
            momentum = 1.0;
            y = x.clone();
            plain = true;
            continue;
        }
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        y = &x_new + (&x_new - &x) * ((momentum - 1.0) / next_momentum);
        plain = momentum == 1.0;
        momentum = next_momentum;
        x = x_new;
        fx = f_new;
        if mapping * diameter <= opts.rel_tol * fx.abs().max(1.0) {
            return (x, fx, iter, true);
        }
    }
    (x, fx, opts.max_iter, false)
}

/// Minimize `obj` over `set` from several starts and keep the best.
pub fn minimize<S: ConvexSet + ?Sized>(obj: &Objective, set: &S, opts: &SolverOptions) -> SolveReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut iterations = 0;
    let mut converged = true;
    let mut restart_values = Vec::with_capacity(opts.restarts.max(1));
    for k in 0..opts.restarts.max(1) {
        let start = if k == 0 {
            DVector::zeros(set.dim())
        } else {
            random_feasible(set, &mut rng)
        };
        let (p, v, it, ok) = solve_from(obj, set, start, opts);
        iterations += it;
        converged &= ok;
        restart_values.push(v);
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((p, v));
        }
    }
    if !converged {
        log::warn!("hindsight solver hit {} iterations without meeting its tolerance", opts.max_iter);
    }
    let (p, value) = best.expect("at least one restart");
    SolveReport {
        p,
        value,
        iterations,
        converged,
        restart_values,
    }
}

/// Affine maps `z_t(P)` of the closed loop under a fixed `P` for `t = 1..=T`,
/// built from the logged natural outputs and zero initial state.
pub fn replay_terms(
    model: &SystemModel,
    ynat: &[DVector<f64>],
    m: usize,
) -> Vec<AffineTerm> {
    let (du, dy) = (model.du(), model.dy());
    let n = m * du * dy;
    let mut sens = DMatrix::zeros(model.dx(), n);
    let mut terms = Vec::with_capacity(ynat.len());
    for t in 0..ynat.len() {
        let yj = input_jacobian(m, du, dy, &ynat[..=t]);
        let mut jac = DMatrix::zeros(dy + du, n);
        jac.rows_mut(0, dy).copy_from(&(model.c() * &sens));
        jac.rows_mut(dy, du).copy_from(&yj);
        terms.push(AffineTerm {
            offset: vstack(&ynat[t], &DVector::zeros(du)),
            jac,
            loss_index: t,
        });
        sens = model.a() * &sens + model.b() * &yj;
    }
    terms
}

/// Replayed total cost of a fixed controller.
pub fn fixed_policy_cost(
    model: &SystemModel,
    ynat: &[DVector<f64>],
    losses: &[LossSpec],
    m: usize,
    p: &DVector<f64>,
) -> Result<f64> {
    check_dim("loss sequence", ynat.len(), losses.len())?;
    check_dim("DRC parameter vector", m * model.du() * model.dy(), p.len())?;
    Ok(replay_terms(model, ynat, m)
        .iter()
        .map(|t| losses[t.loss_index].value_z(&(&t.offset + &t.jac * p)))
        .sum())
}

/// Hindsight comparator of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub params: DVector<f64>,
    /// Replayed total cost of `params` over the whole horizon.
    pub cost: f64,
    pub report: SolveReport,
}

/// Best fixed DRC parameters for the logged noise and losses.
pub fn best_fixed_drc(trace: &Trace, model: &SystemModel, opts: &SolverOptions) -> Result<Comparator> {
    let ynat = trace.natural_outputs();
    let set = DrcConstraintSet::new(trace.m, trace.du, trace.dy, trace.r_m)?;
    let terms = replay_terms(model, &ynat, trace.m);
    let obj = Objective::from_terms(set.dim(), terms, &trace.losses);
    let report = minimize(&obj, &set, opts);
    let cost = fixed_policy_cost(model, &ynat, &trace.losses, trace.m, &report.p)?;
    Ok(Comparator {
        params: report.p.clone(),
        cost,
        report,
    })
}
