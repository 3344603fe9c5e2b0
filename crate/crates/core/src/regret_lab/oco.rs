//! Random online-with-memory quadratic games and the adaptive learner on them.
//!
//! `F_t(x_0, .., x_h) = 1/2 ||sum_k A_{t,k} x_k - b_t||^2` with `x_k = u_{t-k}`,
//! so `f_t(u) = 1/2 ||S_t u - b_t||^2` with `S_t = sum_k A_{t,k}`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::comparator::{minimize, Objective, SolverOptions};
use crate::adaptive_learner::{
    oco_update, regret_bound_oco, regret_bound_ocom, validate_schedule, MemoryConstants, StepState,
};
use crate::drc_policy::{ConvexSet, EuclideanBall};
use crate::error::{check_dim, Result};
use crate::linalg::{min_eigenvalue_sym, spectral_norm};

#[derive(Debug, Clone)]
pub struct OcoMemoryInstance {
    pub dim: usize,
    pub h: usize,
    pub set: EuclideanBall,
    /// `blocks[t][k] = A_{t,k}`.
    pub blocks: Vec<Vec<DMatrix<f64>>>,
    pub targets: Vec<DVector<f64>>,
}

impl OcoMemoryInstance {
    /// Random instance; with `rank_one` every `S_t` has rank one, so `f_t`
    /// has no curvature floor when `dim > 1`.
    pub fn random(seed: u64, dim: usize, h: usize, horizon: usize, rank_one: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |r: usize, c: usize, s: f64| {
            DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
        };
        let mut blocks = Vec::with_capacity(horizon);
        let mut targets = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let lead = if rank_one {
                gauss(dim, 1, 1.0) * gauss(1, dim, 1.0 / (dim as f64).sqrt())
            } else {
                DMatrix::identity(dim, dim) + gauss(dim, dim, 0.3 / (dim as f64).sqrt())
            };
            let mut row = vec![lead];
            for k in 1..=h {
                row.push(gauss(dim, dim, 0.3f64.powi(k as i32) / (dim as f64).sqrt()));
            }
            blocks.push(row);
            targets.push(gauss(dim, 1, 1.0).column(0).into_owned());
        }
        Self {
            dim,
            h,
            set: EuclideanBall { dim, radius: 1.0 },
            blocks,
            targets,
        }
    }

    pub fn horizon(&self) -> usize {
        self.targets.len()
    }

    /// `S_t` for 1-based `t`.
    pub fn collapsed(&self, t: usize) -> DMatrix<f64> {
        self.blocks[t - 1]
            .iter()
            .fold(DMatrix::zeros(self.dim, self.dim), |acc, a| acc + a)
    }

    /// `F_t` at `(u_t, u_{t-1}, .., u_{t-h})`, newest first.
    pub fn memory_value(&self, t: usize, newest_first: &[DVector<f64>]) -> Result<f64> {
        check_dim("decision window", self.h + 1, newest_first.len())?;
        let mut r = -self.targets[t - 1].clone();
        for (a, u) in self.blocks[t - 1].iter().zip(newest_first) {
            r += a * u;
        }
        Ok(0.5 * r.norm_squared())
    }

    pub fn f_value(&self, t: usize, u: &DVector<f64>) -> f64 {
        0.5 * (self.collapsed(t) * u - &self.targets[t - 1]).norm_squared()
    }

    pub fn f_gradient(&self, t: usize, u: &DVector<f64>) -> DVector<f64> {
        let s = self.collapsed(t);
        s.transpose() * (&s * u - &self.targets[t - 1])
    }

    /// Strong-convexity modulus of `f_t`.
    pub fn curvature(&self, t: usize) -> f64 {
        let s = self.collapsed(t);
        min_eigenvalue_sym(&(s.transpose() * s)).max(0.0)
    }

    /// Gradient bound of `f_t` over the feasible ball.
    pub fn g_f(&self, t: usize) -> f64 {
        let sn = spectral_norm(&self.collapsed(t));
        sn * (sn * self.set.radius + self.targets[t - 1].norm())
    }

    /// Lipschitz constant of `F_t` in the stacked window over the feasible ball.
    pub fn g_c(&self, t: usize) -> f64 {
        let norms: Vec<f64> = self.blocks[t - 1].iter().map(spectral_norm).collect();
        let stacked = norms.iter().map(|n| n * n).sum::<f64>().sqrt();
        let reach: f64 = norms.iter().sum::<f64>() * self.set.radius;
        stacked * (reach + self.targets[t - 1].norm())
    }

    /// `min_u sum_{t > h} f_t(u)` over the ball.
    pub fn comparator(&self, opts: &SolverOptions) -> f64 {
        let n = self.dim;
        let mut hessian = DMatrix::zeros(n, n);
        let mut linear = DVector::zeros(n);
        let mut constant = 0.0;
        for t in self.h + 1..=self.horizon() {
            let s = self.collapsed(t);
            let b = &self.targets[t - 1];
            hessian += s.transpose() * &s;
            linear -= s.transpose() * b;
            constant += 0.5 * b.norm_squared();
        }
        let obj = Objective::Quadratic {
            hessian,
            linear,
            constant,
        };
        minimize(&obj, &self.set, opts).value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcoOutcome {
    /// `sum_{t > h} F_t(u_t, .., u_{t-h}) - min_u sum_{t > h} f_t(u)`.
    pub regret: f64,
    pub bound: f64,
    pub iterates: Vec<DVector<f64>>,
    /// `(||u_{t+1} - u_t||, eta_{t+1} (G_f + lambda_t D))` per step.
    pub drifts: Vec<(f64, f64)>,
}

/// Play the adaptive learner from `u_1 = 0` with the given schedule.
pub fn run_adaptive_oco(
    instance: &OcoMemoryInstance,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<OcoOutcome> {
    let horizon = instance.horizon();
    check_dim("regularization schedule", horizon, lambdas.len())?;
    validate_schedule(lambdas)?;
    let set = &instance.set;
    let d = set.diameter();
    let hs: Vec<f64> = (1..=horizon).map(|t| instance.curvature(t)).collect();
    let gfs: Vec<f64> = (1..=horizon).map(|t| instance.g_f(t)).collect();
    let g_f = gfs.iter().cloned().fold(0.0, f64::max);
    let g_c = (1..=horizon).map(|t| instance.g_c(t)).fold(0.0, f64::max);

    let mut state = StepState::new();
    let mut u = DVector::zeros(instance.dim);
    let mut iterates = vec![u.clone()];
    let mut drifts = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let grad = instance.f_gradient(t, &u);
        let next = oco_update(&u, &grad, hs[t - 1], lambdas[t - 1], &mut state, set)?;
        let eta = 1.0 / (state.sum_h + state.sum_lambda);
        drifts.push(((&next - &u).norm(), eta * (g_f + lambdas[t - 1] * d)));
        u = next;
        iterates.push(u.clone());
    }

    let h = instance.h;
    let mut played = 0.0;
    for t in h + 1..=horizon {
        let window: Vec<_> = (0..=h).map(|k| iterates[t - 1 - k].clone()).collect();
        played += instance.memory_value(t, &window)?;
    }
    let regret = played - instance.comparator(opts);
    let bound = if h == 0 {
        regret_bound_oco(d, &gfs, &hs, lambdas)?
    } else {
        let constants = MemoryConstants {
            g_f,
            g_c,
            diameter: d,
            h,
        };
        regret_bound_ocom(&constants, &hs, lambdas)?
    };
    Ok(OcoOutcome {
        regret,
        bound,
        iterates,
        drifts,
    })
}

/// Schedule used for a random instance: `sqrt(T)` then zero when the losses
/// lack curvature, otherwise a random non-increasing schedule.
pub fn random_schedule(instance: &OcoMemoryInstance, seed: u64) -> Vec<f64> {
    let horizon = instance.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambdas = vec![0.0; horizon];
    if instance.curvature(1) <= 1e-12 || rng.random::<bool>() {
        lambdas[0] = (horizon as f64).sqrt();
    } else {
        let mut level = rng.random::<f64>() * 2.0;
        for l in lambdas.iter_mut() {
            *l = level;
            level *= rng.random::<f64>().max(0.9);
        }
    }
    lambdas
}
