//! Truncated output, the `h`-memory loss `F_t` and the memory-less loss `f_t`.
//!
//! With `u_k = u[P_k | y_nat]` the truncated output is
//! `y~_t = y_nat_t + sum_{s=1}^{h} G[s] u_{t-s}`, and
//! `F_t(P_{t-h..t}) = l_t(y~_t, u_t)`, `f_t(P) = F_t(P, .., P)`.
//! For a fixed `P` the map `P -> (y~_t, u_t)` is affine, which gives exact
//! gradients for quadratic losses.

use nalgebra::{DMatrix, DVector};

use crate::adversary::LossSpec;
use crate::drc_policy::{control_input_raw, input_jacobian};
use crate::error::{check_dim, DrcError, Result};
use crate::linalg::vstack;

/// Everything `F_t` / `f_t` need at time `t`.
#[derive(Debug, Clone)]
pub struct LossContext {
    pub t: usize,
    pub m: usize,
    pub h: usize,
    pub du: usize,
    pub dy: usize,
    /// `y_nat_{t-m-h+1..=t}`, chronological, zero before `t = 1`.
    pub ynat_window: Vec<DVector<f64>>,
    /// `G[1..=h]`.
    pub markov_ops: Vec<DMatrix<f64>>,
    pub loss: LossSpec,
}

impl LossContext {
    /// Build the context from the full natural-output record `y_nat_{1..=t}`.
    pub fn new(
        ynat_history: &[DVector<f64>],
        m: usize,
        h: usize,
        markov_ops: &[DMatrix<f64>],
        loss: LossSpec,
    ) -> Result<Self> {
        let t = ynat_history.len();
        if t == 0 {
            return Err(DrcError::InvalidArgument(
                "natural-output history must contain y_nat_t".into(),
            ));
        }
        let len = m + h;
        let start = t.saturating_sub(len);
        let window = window_from(&ynat_history[start..], len, loss.dy());
        Self::from_window(t, m, h, window, markov_ops, loss)
    }

    pub fn from_window(
        t: usize,
        m: usize,
        h: usize,
        ynat_window: Vec<DVector<f64>>,
        markov_ops: &[DMatrix<f64>],
        loss: LossSpec,
    ) -> Result<Self> {
        if m == 0 {
            return Err(DrcError::InvalidArgument("memory length m must be >= 1".into()));
        }
        check_dim("natural-output window", m + h, ynat_window.len())?;
        if markov_ops.len() < h {
            return Err(DrcError::DimensionMismatch {
                what: "Markov operators",
                expected: h,
                got: markov_ops.len(),
            });
        }
        let (du, dy) = (loss.du(), loss.dy());
        for y in &ynat_window {
            check_dim("natural output", dy, y.len())?;
        }
        for g in &markov_ops[..h] {
            check_dim("Markov operator rows", dy, g.nrows())?;
            check_dim("Markov operator columns", du, g.ncols())?;
        }
        Ok(Self {
            t,
            m,
            h,
            du,
            dy,
            ynat_window,
            markov_ops: markov_ops[..h].to_vec(),
            loss,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.m * self.du * self.dy
    }

    pub fn ynat_t(&self) -> &DVector<f64> {
        self.ynat_window.last().expect("window is non-empty")
    }

    /// Natural outputs visible to the controller at time `t - s`.
    fn history_at_lag(&self, s: usize) -> &[DVector<f64>] {
        let end = self.m + self.h - s;
        &self.ynat_window[end - self.m..end]
    }

    fn input_at_lag(&self, p: &DVector<f64>, s: usize) -> Result<DVector<f64>> {
        check_dim("DRC parameter vector", self.param_dim(), p.len())?;
        control_input_raw(p, self.m, self.du, self.dy, self.history_at_lag(s))
    }

    /// `z(P) = offset + jacobian * P` for the memory-less argument of `l_t`.
    pub fn affine_map(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.param_dim();
        let mut jy = DMatrix::zeros(self.dy, n);
        for s in 1..=self.h {
            let ys = input_jacobian(self.m, self.du, self.dy, self.history_at_lag(s));
            jy += &self.markov_ops[s - 1] * ys;
        }
        let ju = input_jacobian(self.m, self.du, self.dy, self.history_at_lag(0));
        let mut jac = DMatrix::zeros(self.dy + self.du, n);
        jac.rows_mut(0, self.dy).copy_from(&jy);
        jac.rows_mut(self.dy, self.du).copy_from(&ju);
        let offset = vstack(self.ynat_t(), &DVector::zeros(self.du));
        (offset, jac)
    }
}

fn window_from(tail: &[DVector<f64>], len: usize, dy: usize) -> Vec<DVector<f64>> {
    let pad = len - tail.len();
    std::iter::repeat_n(DVector::zeros(dy), pad)
        .chain(tail.iter().cloned())
        .collect()
}

fn check_window(params_window: &[DVector<f64>], ctx: &LossContext) -> Result<()> {
    check_dim("parameter window", ctx.h + 1, params_window.len())
}

/// `y~_t = y_nat_t + sum_{s=1}^h G[s] u[P_{t-s}]`, `params_window` oldest first.
pub fn truncated_output(params_window: &[DVector<f64>], ctx: &LossContext) -> Result<DVector<f64>> {
    check_window(params_window, ctx)?;
    let mut y = ctx.ynat_t().clone();
    for s in 1..=ctx.h {
        let u = ctx.input_at_lag(&params_window[ctx.h - s], s)?;
        y += &ctx.markov_ops[s - 1] * u;
    }
    Ok(y)
}

/// `F_t(P_{t-h..t}) = l_t(y~_t, u[P_t])`.
pub fn memory_loss(params_window: &[DVector<f64>], ctx: &LossContext) -> Result<f64> {
    let y = truncated_output(params_window, ctx)?;
    let u = ctx.input_at_lag(&params_window[ctx.h], 0)?;
    ctx.loss.value(&y, &u)
}

/// `f_t(P) = F_t(P, .., P)`.
pub fn memoryless_f(p: &DVector<f64>, ctx: &LossContext) -> Result<f64> {
    let window = vec![p.clone(); ctx.h + 1];
    memory_loss(&window, ctx)
}

/// Gradient of `f_t` at `P`: exact chain rule for quadratic losses, central
/// differences with step `1e-5 * max(1, ||P||)` otherwise.
pub fn memoryless_gradient(p: &DVector<f64>, ctx: &LossContext) -> Result<DVector<f64>> {
    check_dim("DRC parameter vector", ctx.param_dim(), p.len())?;
    if ctx.loss.is_quadratic() {
        let (offset, jac) = ctx.affine_map();
        let z = offset + &jac * p;
        Ok(jac.transpose() * ctx.loss.grad_z(&z))
    } else {
        finite_difference_gradient(p, ctx)
    }
}

fn finite_difference_gradient(p: &DVector<f64>, ctx: &LossContext) -> Result<DVector<f64>> {
    let step = 1e-5 * p.norm().max(1.0);
    let mut grad = DVector::zeros(p.len());
    let mut probe = p.clone();
    for i in 0..p.len() {
        probe[i] = p[i] + step;
        let fp = memoryless_f(&probe, ctx)?;
        probe[i] = p[i] - step;
        let fm = memoryless_f(&probe, ctx)?;
        probe[i] = p[i];
        grad[i] = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

/// Average of `memoryless_gradient` over alternative natural-output windows
/// (the Monte-Carlo estimate of the expected memory-less gradient).
pub fn monte_carlo_gradient(
    p: &DVector<f64>,
    ctx: &LossContext,
    windows: &[Vec<DVector<f64>>],
) -> Result<DVector<f64>> {
    if windows.is_empty() {
        return memoryless_gradient(p, ctx);
    }
    let mut acc = DVector::zeros(p.len());
    for w in windows {
        let alt = LossContext::from_window(
            ctx.t,
            ctx.m,
            ctx.h,
            w.clone(),
            &ctx.markov_ops,
            ctx.loss.clone(),
        )?;
        acc += memoryless_gradient(p, &alt)?;
    }
    Ok(acc / windows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{LossDims, LossFamily};
    use crate::drc_policy::{ConvexSet, DrcConstraintSet};
    use crate::lti_system::{BoundedNoiseSpec, SystemModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| s * (2.0 * rng.random::<f64>() - 1.0))
    }

    fn sq_loss(dy: usize, du: usize) -> LossSpec {
        LossSpec::quadratic(DMatrix::identity(dy + du, dy + du), DVector::zeros(dy + du), dy, du)
            .unwrap()
    }

    fn random_ctx(seed: u64, m: usize, h: usize, dy: usize, du: usize) -> LossContext {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let window: Vec<_> = (0..m + h).map(|_| rvec(&mut rng, dy, 1.0)).collect();
        let ops: Vec<_> = (0..h)
            .map(|s| DMatrix::from_fn(dy, du, |_, _| 0.6f64.powi(s as i32) * (rng.random::<f64>() - 0.5)))
            .collect();
        let loss = LossFamily::DecayingCurvature {
            alpha: 0.0,
            scale: 0.5,
            target_radius: 0.5,
        }
        .loss_at(LossDims { dy, du }, seed, 1)
        .unwrap();
        LossContext::from_window(m + h + 5, m, h, window, &ops, loss).unwrap()
    }

    /// Direct nested-loop evaluation of y~_t.
    fn naive_truncated(window: &[DVector<f64>], ctx: &LossContext) -> DVector<f64> {
        let (m, h, du, dy) = (ctx.m, ctx.h, ctx.du, ctx.dy);
        let n = m + h;
        let mut y: Vec<f64> = ctx.ynat_window[n - 1].iter().copied().collect();
        for s in 1..=h {
            let p = &window[h - s];
            let mut u = vec![0.0; du];
            for j in 0..du {
                for k in 0..m {
                    let yv = &ctx.ynat_window[n - 1 - s - k];
                    for i in 0..dy {
                        u[j] += p[k * du * dy + j * dy + i] * yv[i];
                    }
                }
            }
            for r in 0..dy {
                for j in 0..du {
                    y[r] += ctx.markov_ops[s - 1][(r, j)] * u[j];
                }
            }
        }
        DVector::from_vec(y)
    }

    #[test]
    fn zero_params_give_natural_output() {
        let ctx = random_ctx(1, 3, 2, 2, 1);
        let zero = vec![DVector::zeros(ctx.param_dim()); 3];
        assert_eq!(truncated_output(&zero, &ctx).unwrap(), *ctx.ynat_t());
    }

    #[test]
    fn truncated_output_matches_nested_loops() {
        for seed in 0..20 {
            let ctx = random_ctx(seed, 3, 4, 2, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let window: Vec<_> = (0..5).map(|_| rvec(&mut rng, ctx.param_dim(), 0.5)).collect();
            let fast = truncated_output(&window, &ctx).unwrap();
            assert!((fast - naive_truncated(&window, &ctx)).norm() < 1e-12);
            let u = crate::drc_policy::control_input_raw(
                &window[4],
                ctx.m,
                ctx.du,
                ctx.dy,
                &ctx.ynat_window,
            )
            .unwrap();
            let f = ctx.loss.value(&naive_truncated(&window, &ctx), &u).unwrap();
            assert!((memory_loss(&window, &ctx).unwrap() - f).abs() < 1e-12);
        }
    }

    #[test]
    fn full_memory_truncation_recovers_output() {
        let model = SystemModel::random_stable(
            2,
            1,
            2,
            0.7,
            3,
            BoundedNoiseSpec::uniform_ball(2, 1.0).unwrap(),
            BoundedNoiseSpec::uniform_ball(2, 0.5).unwrap(),
        )
        .unwrap();
        let (m, du, dy) = (2, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut st = crate::lti_system::SimState::new(&model, 4);
        let mut ynat = Vec::new();
        let mut params = Vec::new();
        let horizon = 12;
        let ops = model.markov_operators(horizon);
        for t in 1..=horizon {
            let y = st.observe(&model);
            let yn = crate::lti_system::natural_output(&y, st.input_history(), &model).unwrap();
            ynat.push(yn);
            let p = rvec(&mut rng, m * du * dy, 0.7);
            let u = control_input_raw(&p, m, du, dy, &ynat).unwrap();
            params.push(p);
            let h = t - 1;
            let ctx = LossContext::new(&ynat, m, h, &ops, sq_loss(dy, du)).unwrap();
            let window: Vec<_> = (0..=h).map(|k| params[t - 1 - h + k].clone()).collect();
            let yt = truncated_output(&window, &ctx).unwrap();
            assert!((yt - &y).norm() < 1e-9);
            st.apply(&model, &u).unwrap();
        }
    }

    #[test]
    fn memoryless_examples() {
        let ctx = random_ctx(2, 2, 2, 1, 1);
        let ctx = LossContext {
            loss: sq_loss(1, 1),
            ..ctx
        };
        let zero = DVector::zeros(ctx.param_dim());
        assert!((memoryless_f(&zero, &ctx).unwrap() - ctx.ynat_t().norm_squared()).abs() < 1e-15);
        let p = DVector::from_vec(vec![0.3, -0.2]);
        let rep = vec![p.clone(); 3];
        assert_eq!(memoryless_f(&p, &ctx).unwrap(), memory_loss(&rep, &ctx).unwrap());
    }

    #[test]
    fn zero_natural_window_gives_zero_gradient() {
        let ops = vec![DMatrix::from_element(1, 1, 0.5); 2];
        let ctx =
            LossContext::from_window(9, 3, 2, vec![DVector::zeros(1); 5], &ops, sq_loss(1, 1))
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let p = rvec(&mut rng, 3, 2.0);
            assert_eq!(memoryless_gradient(&p, &ctx).unwrap(), DVector::zeros(3));
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..50 {
            let ctx = random_ctx(seed, 3, 2, 2, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rvec(&mut rng, ctx.param_dim(), 0.5);
            let g = memoryless_gradient(&p, &ctx).unwrap();
            let fd = finite_difference_gradient(&p, &ctx).unwrap();
            assert!((&g - &fd).norm() <= 1e-5 * g.norm().max(1e-3));
        }
    }

    #[test]
    fn regularizer_adds_lambda_p() {
        let ctx = random_ctx(5, 2, 1, 1, 1);
        let p = DVector::from_vec(vec![0.4, -0.1]);
        let lam = 0.7;
        let g = memoryless_gradient(&p, &ctx).unwrap();
        let reg = |q: &DVector<f64>| memoryless_f(q, &ctx).unwrap() + 0.5 * lam * q.norm_squared();
        for i in 0..2 {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (reg(&a) - reg(&b)) / 2e-6;
            assert!((fd - (g[i] + lam * p[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn generic_loss_uses_finite_differences() {
        let base = random_ctx(6, 2, 2, 1, 1);
        let loss = LossFamily::SmoothedAbsolute {
            target_radius: 0.3,
            smoothing: 0.5,
        }
        .loss_at(LossDims { dy: 1, du: 1 }, 1, 1)
        .unwrap();
        let ctx = LossContext { loss, ..base };
        let p = DVector::from_vec(vec![0.2, 0.1]);
        let (offset, jac) = ctx.affine_map();
        let exact = jac.transpose() * ctx.loss.grad_z(&(offset + &jac * &p));
        let g = memoryless_gradient(&p, &ctx).unwrap();
        assert!((g - exact).norm() < 1e-6);
    }

    #[test]
    fn memoryless_f_convex_along_segments() {
        let ctx = random_ctx(11, 3, 2, 1, 2);
        let set = DrcConstraintSet::new(3, 2, 1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = set.project(&rvec(&mut rng, 6, 1.0));
            let b = set.project(&rvec(&mut rng, 6, 1.0));
            let lam: f64 = rng.random();
            let mid = &a * lam + &b * (1.0 - lam);
            let lhs = memoryless_f(&mid, &ctx).unwrap();
            let rhs =
                lam * memoryless_f(&a, &ctx).unwrap() + (1.0 - lam) * memoryless_f(&b, &ctx).unwrap();
            assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn context_rejects_bad_shapes() {
        let ops = vec![DMatrix::from_element(1, 1, 0.5)];
        assert!(
            LossContext::from_window(3, 2, 1, vec![DVector::zeros(1); 2], &ops, sq_loss(1, 1))
                .is_err()
        );
        assert!(LossContext::from_window(3, 2, 2, vec![DVector::zeros(1); 4], &ops, sq_loss(1, 1))
            .is_err());
        let ctx =
            LossContext::from_window(3, 2, 1, vec![DVector::zeros(1); 3], &ops, sq_loss(1, 1))
                .unwrap();
        assert!(memoryless_f(&DVector::zeros(3), &ctx).is_err());
        assert!(truncated_output(&[DVector::zeros(2)], &ctx).is_err());
    }

    #[test]
    fn short_history_is_zero_padded() {
        let ops = vec![DMatrix::from_element(1, 1, 0.5); 3];
        let hist = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)];
        let ctx = LossContext::new(&hist, 2, 3, &ops, sq_loss(1, 1)).unwrap();
        assert_eq!(ctx.ynat_window.len(), 5);
        assert_eq!(ctx.ynat_window[0][0], 0.0);
        assert_eq!(ctx.ynat_window[4][0], 2.0);
    }
}
