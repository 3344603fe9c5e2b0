//! Adaptive-rate online gradient learners and their regret bounds.
//!
//! The step rate is `eta_{t+1} = 1 / (sum H_{1:t} + sum lambda_{1:t})` and the
//! regularizer is `g_t(u) = lambda_t / 2 * ||u||^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drc_policy::{ConvexSet, DrcConstraintSet};
use crate::error::{check_dim, DrcError, Result};
use crate::linalg::{min_singular_value, spectral_norm};
use crate::truncated_loss::{memoryless_gradient, LossContext};

/// Running sums that drive the adaptive step rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub sum_h: f64,
    pub sum_lambda: f64,
    pub t: usize,
}

impl StepState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record `(H_t, lambda_t)` for the step just played.
    pub fn advance(&mut self, h_t: f64, lambda_t: f64) -> Result<()> {
        if !(h_t >= 0.0) || !h_t.is_finite() {
            return Err(DrcError::InvalidArgument(format!(
                "curvature H_t must be finite and nonnegative, got {h_t}"
            )));
        }
        if !(lambda_t >= 0.0) || !lambda_t.is_finite() {
            return Err(DrcError::InvalidArgument(format!(
                "regularization lambda_t must be finite and nonnegative, got {lambda_t}"
            )));
        }
        self.sum_h += h_t;
        self.sum_lambda += lambda_t;
        self.t += 1;
        Ok(())
    }
}

/// `eta_{t+1}` for the current running sums.
pub fn step_rate(state: &StepState) -> Result<f64> {
    let denom = state.sum_h + state.sum_lambda;
    if denom > 0.0 {
        Ok(1.0 / denom)
    } else {
        Err(DrcError::ZeroStepDenominator { t: state.t })
    }
}

/// One projected step `Proj(u - eta_{t+1} (grad_f + lambda_t u))`.
pub fn oco_update<S: ConvexSet + ?Sized>(
    u: &DVector<f64>,
    grad_f: &DVector<f64>,
    h_t: f64,
    lambda_t: f64,
    state: &mut StepState,
    set: &S,
) -> Result<DVector<f64>> {
    check_dim("decision vector", set.dim(), u.len())?;
    check_dim("gradient", set.dim(), grad_f.len())?;
    let mut next = *state;
    next.advance(h_t, lambda_t)?;
    let eta = step_rate(&next)?;
    *state = next;
    let step = grad_f + u * lambda_t;
    Ok(set.project(&(u - step * eta)))
}

/// Result of one controller update, kept for the episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DrcStep {
    pub params: DVector<f64>,
    pub eta: f64,
    pub gradient: DVector<f64>,
}

/// DRC update using the realized memory-less gradient of `f_t`.
pub fn drc_agd_update(
    p: &DVector<f64>,
    ctx: &LossContext,
    h_t: f64,
    lambda_t: f64,
    state: &mut StepState,
    set: &DrcConstraintSet,
) -> Result<DrcStep> {
    let gradient = memoryless_gradient(p, ctx)?;
    drc_agd_update_with_gradient(p, gradient, h_t, lambda_t, state, set)
}

/// DRC update with a caller-supplied gradient (used by the Monte-Carlo mode).
pub fn drc_agd_update_with_gradient(
    p: &DVector<f64>,
    gradient: DVector<f64>,
    h_t: f64,
    lambda_t: f64,
    state: &mut StepState,
    set: &DrcConstraintSet,
) -> Result<DrcStep> {
    let params = oco_update(p, &gradient, h_t, lambda_t, state, set)?;
    Ok(DrcStep {
        params,
        eta: step_rate(state)?,
        gradient,
    })
}

/// `H_t = H_l (sigma_e^2 + sigma_w^2 (sigma_min(C) / (1 + ||A||^2))^2)`.
pub fn strong_convexity_transfer(
    h_l: f64,
    sigma_w2: f64,
    sigma_e2: f64,
    c: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> f64 {
    let an = spectral_norm(a);
    let ratio = min_singular_value(c) / (1.0 + an * an);
    h_l * (sigma_e2 + sigma_w2 * ratio * ratio)
}

/// Regime presets for the regularization schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizationCase {
    /// General convex losses: `lambda_1 = sqrt(T)`.
    Convex,
    /// Curvature floor `H`: `lambda == 0`.
    StronglyConvex,
    /// `H_t = H t^{-alpha}`, `alpha <= 1/2`: `lambda_1 = H~ T^alpha`.
    DecayingSlow,
    /// `H_t = H t^{-alpha}`, `alpha > 1/2`: `lambda_1 = H~ sqrt(T)`.
    DecayingFast,
}

impl RegularizationCase {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Self::Convex),
            2 => Ok(Self::StronglyConvex),
            3 => Ok(Self::DecayingSlow),
            4 => Ok(Self::DecayingFast),
            _ => Err(DrcError::InvalidArgument(format!(
                "unknown case id {id}, expected 1..=4"
            ))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Self::Convex => 1,
            Self::StronglyConvex => 2,
            Self::DecayingSlow => 3,
            Self::DecayingFast => 4,
        }
    }
}

/// Smallest horizon accepted by the presets.
pub const MIN_PRESET_HORIZON: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ScheduleKind {
    Preset { case: RegularizationCase },
    Custom,
}

/// Non-increasing, nonnegative weights `lambda_{1..=T}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    kind: ScheduleKind,
    values: Vec<f64>,
}

impl LambdaSchedule {
    pub fn custom(values: Vec<f64>) -> Result<Self> {
        validate_schedule(&values)?;
        Ok(Self {
            kind: ScheduleKind::Custom,
            values,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    /// `lambda_t` for 1-based `t`; zero past the end of the schedule.
    pub fn at(&self, t: usize) -> f64 {
        assert!(t >= 1, "schedule is 1-indexed");
        self.values.get(t - 1).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Check that a schedule is nonnegative and non-increasing.
pub fn validate_schedule(values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(DrcError::ScheduleNotMonotone {
                index: i + 1,
                prev: if i == 0 { v } else { values[i - 1] },
                next: v,
            });
        }
        if i > 0 && v > values[i - 1] {
            return Err(DrcError::ScheduleNotMonotone {
                index: i + 1,
                prev: values[i - 1],
                next: v,
            });
        }
    }
    Ok(())
}

/// Preset schedule for `case` over `horizon` steps with transferred curvature
/// scale `h_tilde` and decay exponent `alpha`.
pub fn make_lambda_schedule(
    case: RegularizationCase,
    horizon: usize,
    h_tilde: f64,
    alpha: f64,
) -> Result<LambdaSchedule> {
    if horizon < MIN_PRESET_HORIZON {
        return Err(DrcError::Config(format!(
            "preset schedules need T >= {MIN_PRESET_HORIZON}, got T = {horizon}"
        )));
    }
    if !(h_tilde >= 0.0) || !h_tilde.is_finite() {
        return Err(DrcError::InvalidArgument(format!(
            "transferred curvature must be finite and nonnegative, got {h_tilde}"
        )));
    }
    let t = horizon as f64;
    let first = match case {
        RegularizationCase::Convex => t.sqrt(),
        RegularizationCase::StronglyConvex => {
            if h_tilde <= 0.0 {
                return Err(DrcError::ZeroStepDenominator { t: 1 });
            }
            0.0
        }
        RegularizationCase::DecayingSlow => {
            if !(alpha > 0.0 && alpha <= 0.5) {
                return Err(DrcError::InvalidArgument(format!(
                    "slow-decay preset needs 0 < alpha <= 1/2, got {alpha}"
                )));
            }
            h_tilde * t.powf(alpha)
        }
        RegularizationCase::DecayingFast => {
            if !(alpha > 0.5) {
                return Err(DrcError::InvalidArgument(format!(
                    "fast-decay preset needs alpha > 1/2, got {alpha}"
                )));
            }
            h_tilde * t.sqrt()
        }
    };
    if matches!(case, RegularizationCase::DecayingSlow | RegularizationCase::DecayingFast) && first <= 0.0 {
        return Err(DrcError::ZeroStepDenominator { t: 1 });
    }
    let mut values = vec![0.0; horizon];
    values[0] = first;
    validate_schedule(&values)?;
    Ok(LambdaSchedule {
        kind: ScheduleKind::Preset { case },
        values,
    })
}

/// Constants of the control regret bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub l: f64,
    pub r_m: f64,
    pub r_g_star: f64,
    pub r_nat: f64,
    pub m: usize,
    pub h: usize,
    pub du: usize,
    pub dy: usize,
}

impl BoundConstants {
    /// `G_f = L sqrt(m) R_M R_{G*} R_nat^2`.
    pub fn g_f(&self) -> f64 {
        self.l * (self.m as f64).sqrt() * self.r_m * self.r_g_star * self.r_nat * self.r_nat
    }

    pub fn g_c(&self) -> f64 {
        self.g_f()
    }

    /// `D = 2 sqrt(min(d_u, d_y)) R_M`.
    pub fn diameter(&self) -> f64 {
        crate::drc_policy::diameter(self.du, self.dy, self.r_m)
    }

    /// `2 G_f^2 + G_c^2 h^3`.
    pub fn g_hat_sq(&self) -> f64 {
        let h3 = (self.h as f64).powi(3);
        2.0 * self.g_f().powi(2) + self.g_c().powi(2) * h3
    }

    /// Burn-in and truncation constant `R_M^2 R_{G*}^2 R_nat^2 (6L + 4(m+h))`.
    pub fn additive_constant(&self) -> f64 {
        let scale = (self.r_m * self.r_g_star * self.r_nat).powi(2);
        scale * (6.0 * self.l + 4.0 * (self.m + self.h) as f64)
    }

    pub fn memory(&self) -> MemoryConstants {
        MemoryConstants {
            g_f: self.g_f(),
            g_c: self.g_c(),
            diameter: self.diameter(),
            h: self.h,
        }
    }
}

/// Constants of the online-with-memory bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConstants {
    pub g_f: f64,
    pub g_c: f64,
    pub diameter: f64,
    pub h: usize,
}

impl MemoryConstants {
    /// `sqrt((G_f + lambda D)(G_f + lambda D + 2 G_c h^{3/2}))`.
    pub fn g_tilde(&self, lambda: f64) -> f64 {
        let a = self.g_f + lambda * self.diameter;
        (a * (a + 2.0 * self.g_c * (self.h as f64).powf(1.5))).sqrt()
    }
}

fn check_streams(hs: &[f64], lambdas: &[f64]) -> Result<()> {
    check_dim("curvature stream", lambdas.len(), hs.len())?;
    if hs.is_empty() {
        return Err(DrcError::InvalidArgument("empty stream".into()));
    }
    Ok(())
}

/// `1/2 D^2 sum lambda + 1/2 sum_t num_t / (sum H_{1:t} + sum lambda_{1:t})`.
fn adaptive_bound(
    diameter: f64,
    hs: &[f64],
    lambdas: &[f64],
    numerator: impl Fn(usize) -> f64,
) -> Result<f64> {
    check_streams(hs, lambdas)?;
    let mut state = StepState::new();
    let mut total = 0.0;
    for (t, (&h, &lam)) in hs.iter().zip(lambdas).enumerate() {
        state.advance(h, lam)?;
        total += numerator(t) * step_rate(&state)?;
    }
    Ok(0.5 * diameter * diameter * state.sum_lambda + 0.5 * total)
}

/// Adaptive-gradient OCO bound with per-step gradient bounds `G_t`.
pub fn regret_bound_oco(diameter: f64, gs: &[f64], hs: &[f64], lambdas: &[f64]) -> Result<f64> {
    check_dim("gradient-bound stream", hs.len(), gs.len())?;
    adaptive_bound(diameter, hs, lambdas, |t| {
        let g = gs[t] + lambdas[t] * diameter;
        g * g
    })
}

/// Online-with-memory bound.
pub fn regret_bound_ocom(constants: &MemoryConstants, hs: &[f64], lambdas: &[f64]) -> Result<f64> {
    adaptive_bound(constants.diameter, hs, lambdas, |t| {
        constants.g_tilde(lambdas[t]).powi(2)
    })
}

/// Full control bound: additive constant plus the memory bound.
pub fn regret_bound_control(constants: &BoundConstants, hs: &[f64], lambdas: &[f64]) -> Result<f64> {
    Ok(constants.additive_constant() + regret_bound_ocom(&constants.memory(), hs, lambdas)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::LossSpec;
    use crate::drc_policy::EuclideanBall;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_rate_examples() {
        let mut st = StepState::new();
        assert_eq!(step_rate(&st), Err(DrcError::ZeroStepDenominator { t: 0 }));
        st.advance(0.0, 32.0).unwrap();
        assert_eq!(step_rate(&st).unwrap(), 1.0 / 32.0);

        let mut st = StepState::new();
        for t in 1..=50 {
            st.advance(0.3, 0.0).unwrap();
            assert!((step_rate(&st).unwrap() - 1.0 / (t as f64 * 0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn step_rate_matches_prefix_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hs: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let ls: Vec<f64> = (0..200).map(|i| if i < 10 { 1.0 / (i + 1) as f64 } else { 0.0 }).collect();
        let mut st = StepState::new();
        for t in 0..200 {
            st.advance(hs[t], ls[t]).unwrap();
            let d: f64 = hs[..=t].iter().sum::<f64>() + ls[..=t].iter().sum::<f64>();
            assert!((step_rate(&st).unwrap() - 1.0 / d).abs() <= 1e-15 * (1.0 / d).max(1.0));
        }
    }

    #[test]
    fn advance_rejects_negative() {
        let mut st = StepState::new();
        assert!(st.advance(-1.0, 0.0).is_err());
        assert!(st.advance(0.0, f64::NAN).is_err());
        assert_eq!(st, StepState::new());
    }

    #[test]
    fn oco_update_examples() {
        let ball = EuclideanBall { dim: 1, radius: 5.0 };
        let u = DVector::from_element(1, 0.7);
        let mut st = StepState::new();
        let same = oco_update(&u, &DVector::zeros(1), 1.0, 0.0, &mut st, &ball).unwrap();
        assert_eq!(same, u);

        // f(u) = (u - 1)^2, H = 2, u_1 = 0.
        let mut st = StepState::new();
        let mut u = DVector::zeros(1);
        let mut scalar = 0.0f64;
        for t in 1..=30 {
            let grad = DVector::from_element(1, 2.0 * (u[0] - 1.0));
            u = oco_update(&u, &grad, 2.0, 0.0, &mut st, &ball).unwrap();
            scalar -= 2.0 * (scalar - 1.0) / (2.0 * t as f64);
            assert!((u[0] - scalar).abs() < 1e-15);
            if t == 1 {
                assert_eq!(u[0], 1.0);
            }
        }
    }

    #[test]
    fn oco_update_stays_feasible() {
        let ball = EuclideanBall { dim: 3, radius: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut st = StepState::new();
        let mut u = DVector::zeros(3);
        for _ in 0..500 {
            let g = DVector::from_fn(3, |_, _| 10.0 * (rng.random::<f64>() - 0.5));
            u = oco_update(&u, &g, 0.0, 0.01, &mut st, &ball).unwrap();
            assert!(ball.contains(&u, 1e-12));
        }
    }

    #[test]
    fn zero_denominator_leaves_state_untouched() {
        let ball = EuclideanBall { dim: 1, radius: 1.0 };
        let mut st = StepState::new();
        let u = DVector::zeros(1);
        let err = oco_update(&u, &u, 0.0, 0.0, &mut st, &ball).unwrap_err();
        assert_eq!(err, DrcError::ZeroStepDenominator { t: 1 });
        assert_eq!(st.t, 0);
    }

    fn scalar_ctx(ynat: &[f64], m: usize, h: usize) -> LossContext {
        let hist: Vec<_> = ynat.iter().map(|&v| DVector::from_element(1, v)).collect();
        let ops: Vec<_> = (1..=h).map(|s| DMatrix::from_element(1, 1, 0.5f64.powi(s as i32 - 1))).collect();
        let loss = LossSpec::quadratic(DMatrix::identity(2, 2), DVector::from_vec(vec![0.2, 0.0]), 1, 1)
            .unwrap();
        LossContext::new(&hist, m, h, &ops, loss).unwrap()
    }

    #[test]
    fn drc_update_composition() {
        let ctx = scalar_ctx(&[0.3, -0.5, 0.8, 0.1], 2, 2);
        let set = DrcConstraintSet::new(2, 1, 1, 1.0).unwrap();
        let p = DVector::from_vec(vec![0.2, -0.1]);
        let mut st = StepState { sum_h: 1.0, sum_lambda: 2.0, t: 3 };
        let out = drc_agd_update(&p, &ctx, 0.5, 0.0, &mut st, &set).unwrap();
        let g = memoryless_gradient(&p, &ctx).unwrap();
        let expected = set.project(&(&p - &g * (1.0 / 3.5)));
        assert_eq!(out.params, expected);
        assert_eq!(out.eta, 1.0 / 3.5);
        assert_eq!(st.t, 4);

        let zero_ctx = scalar_ctx(&[0.0; 4], 2, 2);
        let zero_ctx = LossContext {
            loss: LossSpec::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), 1, 1).unwrap(),
            ..zero_ctx
        };
        let mut st = StepState::new();
        let out = drc_agd_update(&p, &zero_ctx, 1.0, 0.0, &mut st, &set).unwrap();
        assert_eq!(out.params, p);
    }

    #[test]
    fn transfer_examples() {
        let c = DMatrix::identity(2, 2);
        let a = DMatrix::zeros(2, 2);
        assert!((strong_convexity_transfer(1.0, 0.5, 0.5, &c, &a) - 1.0).abs() < 1e-15);
        assert_eq!(strong_convexity_transfer(0.0, 0.5, 0.5, &c, &a), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let c = DMatrix::from_fn(2, 3, |_, _| rng.random::<f64>() - 0.5);
            let a = DMatrix::from_fn(3, 3, |_, _| 0.4 * (rng.random::<f64>() - 0.5));
            let sv_c = c.clone().svd(false, false).singular_values;
            let smin = sv_c.iter().cloned().fold(f64::INFINITY, f64::min);
            let sv_a = a.clone().svd(false, false).singular_values;
            let an = sv_a.iter().cloned().fold(0.0, f64::max);
            let want = 0.7 * (0.2 + 0.3 * (smin / (1.0 + an * an)).powi(2));
            assert!((strong_convexity_transfer(0.7, 0.3, 0.2, &c, &a) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn preset_schedules() {
        let s = make_lambda_schedule(RegularizationCase::Convex, 1024, 0.0, 0.0).unwrap();
        assert_eq!(s.at(1), 32.0);
        assert!(s.values()[1..].iter().all(|&v| v == 0.0));
        let s = make_lambda_schedule(RegularizationCase::DecayingSlow, 256, 1.0, 0.5).unwrap();
        assert_eq!(s.at(1), 16.0);
        let s = make_lambda_schedule(RegularizationCase::StronglyConvex, 64, 0.3, 0.0).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        let s = make_lambda_schedule(RegularizationCase::DecayingFast, 100, 2.0, 0.8).unwrap();
        assert_eq!(s.at(1), 20.0);
        assert_eq!(s.at(500), 0.0);
    }

    #[test]
    fn preset_rejections() {
        assert!(make_lambda_schedule(RegularizationCase::Convex, 3, 0.0, 0.0).is_err());
        assert_eq!(
            make_lambda_schedule(RegularizationCase::StronglyConvex, 16, 0.0, 0.0),
            Err(DrcError::ZeroStepDenominator { t: 1 })
        );
        assert!(make_lambda_schedule(RegularizationCase::DecayingSlow, 16, 1.0, 0.7).is_err());
        assert!(make_lambda_schedule(RegularizationCase::DecayingFast, 16, 1.0, 0.5).is_err());
        assert!(make_lambda_schedule(RegularizationCase::DecayingSlow, 16, 0.0, 0.25).is_err());
        assert!(RegularizationCase::from_id(5).is_err());
        for id in 1..=4 {
            assert_eq!(RegularizationCase::from_id(id).unwrap().id(), id);
        }
    }

    #[test]
    fn custom_schedule_validation() {
        assert!(LambdaSchedule::custom(vec![3.0, 2.0, 2.0, 0.0]).is_ok());
        assert_eq!(
            LambdaSchedule::custom(vec![1.0, 2.0]),
            Err(DrcError::ScheduleNotMonotone { index: 2, prev: 1.0, next: 2.0 })
        );
        assert!(LambdaSchedule::custom(vec![1.0, -0.5]).is_err());
    }

    #[test]
    fn oco_bound_examples() {
        assert_eq!(regret_bound_oco(1.0, &[1.0], &[0.0], &[1.0]).unwrap(), 2.5);
        let (g, h, n) = (2.0, 0.5, 40);
        let b = regret_bound_oco(1.0, &vec![g; n], &vec![h; n], &vec![0.0; n]).unwrap();
        let harmonic: f64 = (1..=n).map(|t| 1.0 / t as f64).sum();
        assert!((b - 0.5 * g * g / h * harmonic).abs() < 1e-12);
        assert!(regret_bound_oco(1.0, &[1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn oco_bound_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = 50;
            let d = 1.0 + rng.random::<f64>();
            let gs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
            let hs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut ls: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            ls.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut want = 0.5 * d * d * ls.iter().sum::<f64>();
            for t in 0..n {
                let denom: f64 = hs[..=t].iter().sum::<f64>() + ls[..=t].iter().sum::<f64>();
                want += 0.5 * (gs[t] + ls[t] * d).powi(2) / denom;
            }
            let got = regret_bound_oco(d, &gs, &hs, &ls).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn ocom_reduces_without_memory() {
        let c = MemoryConstants { g_f: 2.0, g_c: 5.0, diameter: 1.5, h: 0 };
        let hs = vec![0.2; 30];
        let mut ls = vec![0.0; 30];
        ls[0] = 3.0;
        let a = regret_bound_ocom(&c, &hs, &ls).unwrap();
        let b = regret_bound_oco(1.5, &vec![2.0; 30], &hs, &ls).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
        assert_eq!(c.g_tilde(1.0), 2.0 + 1.5);
    }

    #[test]
    fn ocom_harmonic_form_and_monotone_g_tilde() {
        let c = MemoryConstants { g_f: 1.0, g_c: 2.0, diameter: 3.0, h: 2 };
        let (h, n) = (0.4, 64);
        let b = regret_bound_ocom(&c, &vec![h; n], &vec![0.0; n]).unwrap();
        let gt2 = 1.0 * (1.0 + 4.0 * 2f64.powf(1.5));
        let harmonic: f64 = (1..=n).map(|t| 1.0 / t as f64).sum();
        assert!((b - 0.5 * gt2 / h * harmonic).abs() < 1e-12);
        let sched = [4.0, 2.0, 2.0, 1.0, 0.0];
        for w in sched.windows(2) {
            assert!(c.g_tilde(w[1]) <= c.g_tilde(w[0]));
        }
    }

    #[test]
    fn control_bound_examples() {
        let k = BoundConstants { l: 1.0, r_m: 1.0, r_g_star: 1.0, r_nat: 1.0, m: 1, h: 1, du: 1, dy: 1 };
        assert_eq!(k.additive_constant(), 14.0);
        assert_eq!(k.g_f(), 1.0);
        assert_eq!(k.g_hat_sq(), 3.0);
        assert_eq!(k.diameter(), 2.0);

        let k = BoundConstants { l: 2.0, r_m: 1.5, r_g_star: 3.0, r_nat: 2.0, m: 4, h: 5, du: 2, dy: 1 };
        let mut prev = 0.0;
        for n in [4usize, 8, 16, 32] {
            let mut ls = vec![0.0; n];
            ls[0] = (n as f64).sqrt();
            let hs = vec![0.0; n];
            let b = regret_bound_control(&k, &hs, &ls).unwrap();
            let tail = regret_bound_ocom(&k.memory(), &hs, &ls).unwrap();
            assert!((b - (k.additive_constant() + tail)).abs() < 1e-9 * b);
            assert!(b >= prev);
            prev = b;
        }
        let hs = vec![0.5; 10];
        let mut b_prev = 0.0;
        for n in 1..=10 {
            let b = regret_bound_control(&k, &hs[..n], &vec![0.0; n]).unwrap();
            assert!(b >= b_prev);
            b_prev = b;
        }
    }
}
