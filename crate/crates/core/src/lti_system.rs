//! Known, stable, partially observed LTI plant
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t
//! y_t     = C x_t + e_t
//! ```
//!
//! with bounded zero-mean i.i.d. disturbances, plus the impulse-response
//! (Markov) operators `G[s] = C A^{s-1} B`, natural outputs and the tail sums
//! `psi(i) = sum_{j >= i} ||C A^{j-1} B||` that drive the memory lengths.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DrcError, Result};
use crate::linalg::{spectral_norm, spectral_radius};

/// Spectral radius must sit at least this far below one.
pub const STABILITY_MARGIN: f64 = 1e-10;

/// Relative threshold for truncating the geometric tails of `psi` and `R_nat`.
pub const TAIL_RTOL: f64 = 1e-12;

/// Hard cap on the number of series terms summed by `psi`.
const MAX_SERIES_TERMS: usize = 10_000_000;

/// Largest memory length `select_memory` will consider.
pub const MAX_MEMORY: usize = 10_000;

/// Probability mass of a standard normal inside `[-4, 4]`.
const TRUNC4_MASS: f64 = 0.999_936_657_516_333_8;

/// Gaussian components are truncated at this many standard deviations.
const TRUNC_SIGMAS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Uniform on the Euclidean ball of radius `scale`.
    UniformBall,
    /// Independent `N(0, scale^2)` coordinates, each truncated at `4 * scale`.
    TruncatedGaussian,
}

/// A bounded, zero-mean, isotropic i.i.d. noise distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedNoiseSpec {
    pub kind: NoiseKind,
    pub dim: usize,
    pub scale: f64,
}

impl BoundedNoiseSpec {
    pub fn new(kind: NoiseKind, dim: usize, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(DrcError::InvalidArgument(format!(
                "noise scale must be finite and nonnegative, got {scale}"
            )));
        }
        Ok(Self { kind, dim, scale })
    }

    pub fn uniform_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::new(NoiseKind::UniformBall, dim, radius)
    }

    pub fn truncated_gaussian(dim: usize, sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::TruncatedGaussian, dim, sigma)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            kind: NoiseKind::UniformBall,
            dim,
            scale: 0.0,
        }
    }

    /// Maximum Euclidean norm of any sample.
    pub fn bound(&self) -> f64 {
        match self.kind {
            NoiseKind::UniformBall => self.scale,
            NoiseKind::TruncatedGaussian => TRUNC_SIGMAS * self.scale * (self.dim as f64).sqrt(),
        }
    }

    /// Per-coordinate variance of the distribution (a valid lower bound on
    /// `E[w_i^2]` for every coordinate `i`).
    pub fn variance_floor(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.kind {
            NoiseKind::UniformBall => s2 / (self.dim as f64 + 2.0),
            NoiseKind::TruncatedGaussian => {
                let k = TRUNC_SIGMAS;
                let pdf = (-0.5 * k * k).exp() / (2.0 * std::f64::consts::PI).sqrt();
                s2 * (1.0 - 2.0 * k * pdf / TRUNC4_MASS)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        if self.dim == 0 {
            return DVector::zeros(0);
        }
        match self.kind {
            NoiseKind::UniformBall => {
                let mut v: DVector<f64> =
                    DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut n = v.norm();
                while n == 0.0 {
                    v = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                    n = v.norm();
                }
                let r = self.scale * rng.random::<f64>().powf(1.0 / self.dim as f64);
                v * (r / n)
            }
            NoiseKind::TruncatedGaussian => DVector::from_fn(self.dim, |_, _| loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= TRUNC_SIGMAS {
                    break z * self.scale;
                }
            }),
        }
    }
}

#[derive(Debug, Default)]
struct MarkovCache {
    ops: Vec<DMatrix<f64>>,
    norms: Vec<f64>,
    /// `A^{k} B` where `k = ops.len()`.
    next_power_b: Option<DMatrix<f64>>,
}

/// `(c, rho)` with `||A^k|| <= c rho^k` for every `k >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayBound {
    pub c: f64,
    pub rho: f64,
}

impl DecayBound {
    /// Upper bound on `sum_{k >= start} ||A^k||`.
    fn power_tail(&self, start: usize) -> f64 {
        if self.rho >= 1.0 {
            return f64::INFINITY;
        }
        self.c * self.rho.powi(start as i32) / (1.0 - self.rho)
    }
}

/// The plant. Immutable after construction; the Markov-operator cache is
/// shared between clones and safe to use from several threads.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    noise_w: BoundedNoiseSpec,
    noise_e: BoundedNoiseSpec,
    rho: f64,
    decay: DecayBound,
    norm_b: f64,
    norm_c: f64,
    r_nat: f64,
    cache: Arc<Mutex<MarkovCache>>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        noise_w: BoundedNoiseSpec,
        noise_e: BoundedNoiseSpec,
    ) -> Result<Self> {
        let dx = a.nrows();
        if dx == 0 {
            return Err(DrcError::InvalidArgument("state dimension must be positive".into()));
        }
        check_dim("A columns", dx, a.ncols())?;
        check_dim("B rows", dx, b.nrows())?;
        check_dim("C columns", dx, c.ncols())?;
        check_dim("state noise dimension", dx, noise_w.dim)?;
        check_dim("output noise dimension", c.nrows(), noise_e.dim)?;
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(DrcError::InvalidArgument(
                "input and output dimensions must be positive".into(),
            ));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(DrcError::InvalidArgument("system matrices must be finite".into()));
        }
        let rho = spectral_radius(&a);
        if rho >= 1.0 - STABILITY_MARGIN {
            return Err(DrcError::Unstable { rho });
        }
        let decay = power_decay_bound(&a);
        let norm_b = spectral_norm(&b);
        let norm_c = spectral_norm(&c);
        let mut model = Self {
            a,
            b,
            c,
            noise_w,
            noise_e,
            rho,
            decay,
            norm_b,
            norm_c,
            r_nat: 0.0,
            cache: Arc::new(Mutex::new(MarkovCache::default())),
        };
        model.r_nat = model.noise_e.bound() + model.noise_w.bound() * model.output_gain_sum();
        Ok(model)
    }

    /// `A = 0.5, B = 1, C = 1`.
    pub fn scalar_stable(noise_w: BoundedNoiseSpec, noise_e: BoundedNoiseSpec) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            noise_w,
            noise_e,
        )
    }

    /// Gaussian `(A, B, C)` with `A` rescaled to spectral radius `rho_target`.
    pub fn random_stable(
        dx: usize,
        du: usize,
        dy: usize,
        rho_target: f64,
        seed: u64,
        noise_w: BoundedNoiseSpec,
        noise_e: BoundedNoiseSpec,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rho_target) {
            return Err(DrcError::InvalidArgument(format!(
                "target spectral radius must lie in [0, 1), got {rho_target}"
            )));
        }
        if dx == 0 || du == 0 || dy == 0 {
            return Err(DrcError::InvalidArgument("dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |r: usize, c: usize, scale: f64| {
            DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
        };
        let mut a = gauss(dx, dx, 1.0);
        let b = gauss(dx, du, 1.0 / (dx as f64).sqrt());
        let c = gauss(dy, dx, 1.0 / (dx as f64).sqrt());
        let r = spectral_radius(&a);
        if r > 0.0 {
            a *= rho_target / r;
        }
        Self::new(a, b, c, noise_w, noise_e)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn noise_w(&self) -> &BoundedNoiseSpec {
        &self.noise_w
    }
    pub fn noise_e(&self) -> &BoundedNoiseSpec {
        &self.noise_e
    }
    pub fn dx(&self) -> usize {
        self.a.nrows()
    }
    pub fn du(&self) -> usize {
        self.b.ncols()
    }
    pub fn dy(&self) -> usize {
        self.c.nrows()
    }
    pub fn spectral_radius(&self) -> f64 {
        self.rho
    }
    pub fn decay_bound(&self) -> DecayBound {
        self.decay
    }

    /// `G[s] = C A^{s-1} B` for `s >= 1`.
    pub fn markov_operator(&self, s: usize) -> Result<DMatrix<f64>> {
        if s == 0 {
            return Err(DrcError::InvalidArgument(
                "Markov operators are indexed from s = 1".into(),
            ));
        }
        let mut cache = self.cache.lock().expect("markov cache poisoned");
        self.extend_cache(&mut cache, s);
        Ok(cache.ops[s - 1].clone())
    }

    /// `G[1..=h]`, index 0 holding `G[1]`.
    pub fn markov_operators(&self, h: usize) -> Vec<DMatrix<f64>> {
        let mut cache = self.cache.lock().expect("markov cache poisoned");
        self.extend_cache(&mut cache, h);
        cache.ops[..h].to_vec()
    }

    fn extend_cache(&self, cache: &mut MarkovCache, upto: usize) {
        while cache.ops.len() < upto {
            let apb = cache.next_power_b.take().unwrap_or_else(|| self.b.clone());
            let g = &self.c * &apb;
            cache.norms.push(spectral_norm(&g));
            cache.ops.push(g);
            cache.next_power_b = Some(&self.a * apb);
        }
    }

    fn markov_norm(&self, cache: &mut MarkovCache, j: usize) -> f64 {
        self.extend_cache(cache, j);
        cache.norms[j - 1]
    }

    /// Upper bound on `sum_{j >= start} ||C A^{j-1} B||`.
    fn markov_tail_bound(&self, start: usize) -> f64 {
        self.norm_c * self.norm_b * self.decay.power_tail(start - 1)
    }

    /// Tail sum `psi(i) = sum_{j >= i} ||C A^{j-1} B||_2`, truncated once the
    /// geometric tail bound drops below `1e-12` of the partial sum.
    pub fn psi(&self, i: usize) -> f64 {
        let i = i.max(1);
        let mut cache = self.cache.lock().expect("markov cache poisoned");
        let mut partial = 0.0;
        let mut j = i;
        loop {
            partial += self.markov_norm(&mut cache, j);
            let tail = self.markov_tail_bound(j + 1);
            if tail <= TAIL_RTOL * partial || tail == 0.0 || j - i >= MAX_SERIES_TERMS {
                break;
            }
            if partial == 0.0 && tail < f64::MIN_POSITIVE {
                break;
            }
            j += 1;
        }
        partial
    }

    /// `R_{G*} = 1 + psi(1)`.
    pub fn r_g_star(&self) -> f64 {
        1.0 + self.psi(1)
    }

    /// Bound on `||y_nat_t||`: `bound_e + bound_w * sum_{j >= 0} ||C A^j||`.
    pub fn r_nat(&self) -> f64 {
        self.r_nat
    }

    /// Constants `(c, rho)` with `psi(i) <= c rho^i`.
    pub fn psi_decay_constants(&self) -> (f64, f64) {
        let DecayBound { c, rho } = self.decay;
        if rho == 0.0 {
            // A = 0: psi(1) = ||CB|| and psi(i >= 2) = 0.
            return (2.0 * self.norm_c * self.norm_b * c, 0.5);
        }
        (self.norm_c * self.norm_b * c / (rho * (1.0 - rho)), rho)
    }

    fn output_gain_sum(&self) -> f64 {
        let mut ca = self.c.clone();
        let mut partial = 0.0;
        let mut k = 0usize;
        loop {
            partial += spectral_norm(&ca);
            let tail = self.norm_c * self.decay.power_tail(k + 1);
            if tail <= TAIL_RTOL * partial || tail == 0.0 || k >= MAX_SERIES_TERMS {
                break;
            }
            ca = &ca * &self.a;
            k += 1;
        }
        partial
    }

    /// Smallest `(m, h)` with `psi(m) <= R_{G*} / T` and `psi(h) <= R_M / T`.
    pub fn select_memory(&self, r_m: f64, horizon: usize) -> Result<(usize, usize)> {
        if horizon == 0 {
            return Err(DrcError::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(r_m > 0.0) {
            return Err(DrcError::InvalidArgument(format!("R_M must be positive, got {r_m}")));
        }
        let t = horizon as f64;
        let m_threshold = self.r_g_star() / t;
        let h_threshold = r_m / t;
        let first = |threshold: f64| {
            (1..=MAX_MEMORY)
                .find(|&i| self.psi(i) <= threshold)
                .ok_or(DrcError::MemorySelection { limit: MAX_MEMORY })
        };
        Ok((first(m_threshold)?, first(h_threshold)?))
    }

    pub(crate) fn emit(&self, x: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        &self.c * x + e
    }

    pub(crate) fn advance(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

/// Pick the first `k` with `||A^k|| <= 1/2` and derive `rho = ||A^k||^{1/k}`,
/// `c = max_{j < k} ||A^j|| / rho^j`, so that `||A^j|| <= c rho^j` for all `j`.
fn power_decay_bound(a: &DMatrix<f64>) -> DecayBound {
    const TARGET: f64 = 0.5;
    const MAX_K: usize = 100_000;
    let n = a.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    // norms[j] = ||A^j||
    let mut norms = vec![1.0];
    let mut fallback: Option<(usize, f64)> = None;
    let mut chosen: Option<(usize, f64)> = None;
    for k in 1..=MAX_K {
        power = &power * a;
        let nk = spectral_norm(&power);
        if nk <= TARGET {
            chosen = Some((k, nk));
            break;
        }
        if nk < 1.0 && fallback.is_none_or(|(_, v)| nk < v) {
            fallback = Some((k, nk));
        }
        norms.push(nk);
    }
    let Some((k, nk)) = chosen.or(fallback) else {
        return DecayBound {
            c: f64::INFINITY,
            rho: 1.0,
        };
    };
    if nk == 0.0 && k == 1 {
        return DecayBound { c: 1.0, rho: 0.0 };
    }
    // A nilpotent A^k = 0 still satisfies ||A^k|| <= TARGET.
    let base = if nk == 0.0 { TARGET } else { nk };
    let rho = base.powf(1.0 / k as f64);
    let c = (0..k)
        .map(|j| norms[j] / rho.powi(j as i32))
        .fold(1.0_f64, f64::max);
    DecayBound { c, rho }
}

/// Realized disturbances, replayable through the recurrence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseLog {
    /// `w_t`, `t = 1..`
    pub w: Vec<DVector<f64>>,
    /// `e_t`, `t = 1..`
    pub e: Vec<DVector<f64>>,
}

/// Single-owner simulation state. Time starts at `t = 1` with `x_1` given
/// (zero by default).
#[derive(Debug, Clone)]
pub struct SimState {
    t: usize,
    x: DVector<f64>,
    x_init: DVector<f64>,
    input_history: Vec<DVector<f64>>,
    output_history: Vec<DVector<f64>>,
    noise_log: NoiseLog,
    rng: ChaCha8Rng,
    observed: bool,
}

impl SimState {
    pub fn new(model: &SystemModel, seed: u64) -> Self {
        Self::with_initial_state(model, DVector::zeros(model.dx()), seed)
    }

    pub fn with_initial_state(model: &SystemModel, x1: DVector<f64>, seed: u64) -> Self {
        debug_assert_eq!(x1.len(), model.dx());
        Self {
            t: 1,
            x: x1.clone(),
            x_init: x1,
            input_history: Vec::new(),
            output_history: Vec::new(),
            noise_log: NoiseLog::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            observed: false,
        }
    }

    /// Index of the current step.
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }
    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x_init
    }
    pub fn input_history(&self) -> &[DVector<f64>] {
        &self.input_history
    }
    pub fn output_history(&self) -> &[DVector<f64>] {
        &self.output_history
    }
    pub fn noise_log(&self) -> &NoiseLog {
        &self.noise_log
    }

    /// Draw `e_t` and emit `y_t = C x_t + e_t`. Idempotent within a step.
    pub fn observe(&mut self, model: &SystemModel) -> DVector<f64> {
        if !self.observed {
            let e = model.noise_e.sample(&mut self.rng);
            let y = model.emit(&self.x, &e);
            self.noise_log.e.push(e);
            self.output_history.push(y);
            self.observed = true;
        }
        self.output_history.last().cloned().expect("output recorded")
    }

    /// Apply `u_t`, draw `w_t` and advance to `x_{t+1}`.
    pub fn apply(&mut self, model: &SystemModel, u: &DVector<f64>) -> Result<()> {
        check_dim("control input", model.du(), u.len())?;
        if !self.observed {
            return Err(DrcError::InvalidArgument(
                "the output at time t must be observed before u_t is applied".into(),
            ));
        }
        let w = model.noise_w.sample(&mut self.rng);
        self.x = model.advance(&self.x, u, &w);
        self.noise_log.w.push(w);
        self.input_history.push(u.clone());
        self.t += 1;
        self.observed = false;
        Ok(())
    }

    /// Emit `y_t`, then advance with `u_t`.
    pub fn step(&mut self, model: &SystemModel, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("control input", model.du(), u.len())?;
        let y = self.observe(model);
        self.apply(model, u)?;
        Ok(y)
    }

    /// Same as [`SimState::step`] but with caller-supplied disturbances.
    pub fn step_with_noise(
        &mut self,
        model: &SystemModel,
        u: &DVector<f64>,
        w: &DVector<f64>,
        e: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("control input", model.du(), u.len())?;
        check_dim("state noise", model.dx(), w.len())?;
        check_dim("output noise", model.dy(), e.len())?;
        if self.observed {
            return Err(DrcError::InvalidArgument(
                "step_with_noise called after observe in the same step".into(),
            ));
        }
        let y = model.emit(&self.x, e);
        self.x = model.advance(&self.x, u, w);
        self.noise_log.e.push(e.clone());
        self.noise_log.w.push(w.clone());
        self.output_history.push(y.clone());
        self.input_history.push(u.clone());
        self.t += 1;
        Ok(y)
    }
}

/// Re-run the recurrence from `x_1` with logged noise and inputs.
pub fn replay_outputs(
    model: &SystemModel,
    x1: &DVector<f64>,
    noise: &NoiseLog,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_dim("replay inputs", noise.w.len(), inputs.len())?;
    check_dim("replay output noise", noise.w.len(), noise.e.len())?;
    let mut x = x1.clone();
    let mut ys = Vec::with_capacity(inputs.len());
    for ((u, w), e) in inputs.iter().zip(&noise.w).zip(&noise.e) {
        check_dim("control input", model.du(), u.len())?;
        ys.push(model.emit(&x, e));
        x = model.advance(&x, u, w);
    }
    Ok(ys)
}

/// Zero-input outputs driven by the logged noise, starting from `x_1`.
pub fn natural_outputs_from_noise(
    model: &SystemModel,
    x1: &DVector<f64>,
    noise: &NoiseLog,
) -> Vec<DVector<f64>> {
    let mut x = x1.clone();
    noise
        .e
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let y = model.emit(&x, e);
            if let Some(w) = noise.w.get(k) {
                x = &model.a * &x + w;
            }
            y
        })
        .collect()
}

/// `y_nat_t = y_t - sum_{s=1}^{t-1} G[s] u_{t-s}`, with `past_inputs = u_{1..t-1}`.
pub fn natural_output(
    y_t: &DVector<f64>,
    past_inputs: &[DVector<f64>],
    model: &SystemModel,
) -> Result<DVector<f64>> {
    check_dim("output", model.dy(), y_t.len())?;
    let ops = model.markov_operators(past_inputs.len());
    let mut ynat = y_t.clone();
    for (s, g) in ops.iter().enumerate() {
        let u = &past_inputs[past_inputs.len() - 1 - s];
        check_dim("past input", model.du(), u.len())?;
        ynat -= g * u;
    }
    Ok(ynat)
}

/// Tracks the input-driven part of the state so that
/// `y_nat_t = y_t - C x^u_t` is available in O(1) per step.
#[derive(Debug, Clone)]
pub struct InputResponse {
    x: DVector<f64>,
}

impl InputResponse {
    pub fn new(model: &SystemModel) -> Self {
        Self {
            x: DVector::zeros(model.dx()),
        }
    }

    pub fn natural_output(&self, model: &SystemModel, y_t: &DVector<f64>) -> DVector<f64> {
        y_t - &model.c * &self.x
    }

    pub fn push(&mut self, model: &SystemModel, u: &DVector<f64>) {
        self.x = &model.a * &self.x + &model.b * u;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> SystemModel {
        SystemModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            BoundedNoiseSpec::uniform_ball(1, 1.0).unwrap(),
            BoundedNoiseSpec::uniform_ball(1, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn random_model(seed: u64) -> SystemModel {
        SystemModel::random_stable(
            3,
            2,
            2,
            0.8,
            seed,
            BoundedNoiseSpec::uniform_ball(3, 0.5).unwrap(),
            BoundedNoiseSpec::truncated_gaussian(2, 0.2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_unstable_and_mismatched() {
        let n1 = BoundedNoiseSpec::zero(1);
        let err = SystemModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            n1,
            n1,
        )
        .unwrap_err();
        assert!(matches!(err, DrcError::Unstable { .. }));
        let err = SystemModel::new(
            DMatrix::from_element(1, 1, 0.2),
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            n1,
            n1,
        )
        .unwrap_err();
        assert!(matches!(err, DrcError::DimensionMismatch { .. }));
    }

    #[test]
    fn step_direct_substitution() {
        let model = scalar(0.0);
        let mut st = SimState::new(&model, 0);
        let y = st
            .step_with_noise(
                &model,
                &DVector::from_element(1, 2.0),
                &DVector::from_element(1, 0.5),
                &DVector::from_element(1, 0.0),
            )
            .unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(st.x()[0], 2.5);
    }

    #[test]
    fn zero_noise_equilibrium() {
        let z = BoundedNoiseSpec::zero(1);
        let model = SystemModel::scalar_stable(z, z).unwrap();
        let mut st = SimState::new(&model, 3);
        for _ in 0..100 {
            let y = st.step(&model, &DVector::zeros(1)).unwrap();
            assert_eq!(y[0], 0.0);
        }
    }

    #[test]
    fn step_rejects_bad_input_dimension() {
        let model = random_model(1);
        let mut st = SimState::new(&model, 0);
        assert!(st.step(&model, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn apply_requires_observation() {
        let model = scalar(0.5);
        let mut st = SimState::new(&model, 0);
        assert!(st.apply(&model, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn dense_recurrence_matches() {
        let model = random_model(7);
        let mut st = SimState::new(&model, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u = DVector::from_fn(2, |_, _| rng.random::<f64>() - 0.5);
            st.step(&model, &u).unwrap();
        }
        // Independent scalar-loop recurrence.
        let (a, b, c) = (model.a(), model.b(), model.c());
        let mut x = vec![0.0; 3];
        for t in 0..50 {
            let e = &st.noise_log().e[t];
            let w = &st.noise_log().w[t];
            let u = &st.input_history()[t];
            for i in 0..2 {
                let mut y = e[i];
                for j in 0..3 {
                    y += c[(i, j)] * x[j];
                }
                assert!((y - st.output_history()[t][i]).abs() < 1e-12);
            }
            let mut nx = vec![0.0; 3];
            for i in 0..3 {
                nx[i] = w[i];
                for j in 0..3 {
                    nx[i] += a[(i, j)] * x[j];
                }
                for j in 0..2 {
                    nx[i] += b[(i, j)] * u[j];
                }
            }
            x = nx;
        }
    }

    #[test]
    fn replay_is_bit_exact() {
        let model = random_model(2);
        let mut st = SimState::new(&model, 99);
        for k in 0..40 {
            let u = DVector::from_element(2, (k as f64 * 0.37).sin());
            st.step(&model, &u).unwrap();
        }
        let ys = replay_outputs(&model, st.initial_state(), st.noise_log(), st.input_history())
            .unwrap();
        assert_eq!(ys, st.output_history());
    }

    #[test]
    fn markov_operator_examples() {
        let model = scalar(0.5);
        assert!((model.markov_operator(3).unwrap()[(0, 0)] - 0.25).abs() < 1e-15);
        assert!(model.markov_operator(0).is_err());
        let r = random_model(4);
        assert_eq!(r.markov_operator(1).unwrap(), r.c() * r.b());
    }

    #[test]
    fn markov_operator_column_oracle() {
        let model = SystemModel::random_stable(
            2,
            2,
            2,
            0.7,
            17,
            BoundedNoiseSpec::zero(2),
            BoundedNoiseSpec::zero(2),
        )
        .unwrap();
        let g5 = model.markov_operator(5).unwrap();
        for col in 0..2 {
            let mut v: Vec<f64> = (0..2).map(|i| model.b()[(i, col)]).collect();
            for _ in 0..4 {
                v = (0..2)
                    .map(|i| (0..2).map(|j| model.a()[(i, j)] * v[j]).sum())
                    .collect();
            }
            for i in 0..2 {
                let y: f64 = (0..2).map(|j| model.c()[(i, j)] * v[j]).sum();
                assert!((y - g5[(i, col)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn natural_output_edge_cases() {
        let model = random_model(3);
        let y = DVector::from_vec(vec![0.3, -0.1]);
        assert_eq!(natural_output(&y, &[], &model).unwrap(), y);
        let zeros = vec![DVector::zeros(2); 6];
        assert_eq!(natural_output(&y, &zeros, &model).unwrap(), y);
    }

    #[test]
    fn natural_output_matches_noise_convolution() {
        let model = random_model(5);
        let mut st = SimState::new(&model, 1);
        let mut tracker = InputResponse::new(&model);
        for t in 1..=60usize {
            let y = st.observe(&model);
            let ynat = natural_output(&y, st.input_history(), &model).unwrap();
            // e_t + sum_{s=1}^{t-1} C A^{t-s-1} w_s
            let mut oracle = st.noise_log().e[t - 1].clone();
            for s in 1..t {
                let mut v = st.noise_log().w[s - 1].clone();
                for _ in 0..(t - s - 1) {
                    v = model.a() * v;
                }
                oracle += model.c() * v;
            }
            assert!((&ynat - &oracle).norm() < 1e-9);
            assert!((tracker.natural_output(&model, &y) - &oracle).norm() < 1e-9);
            assert!(ynat.norm() <= model.r_nat());
            let u = DVector::from_element(2, (t as f64).cos());
            tracker.push(&model, &u);
            st.apply(&model, &u).unwrap();
        }
    }

    #[test]
    fn psi_examples() {
        let model = scalar(0.5);
        assert!((model.psi(1) - 2.0).abs() < 1e-10);
        assert!((model.r_g_star() - 3.0).abs() < 1e-10);
        let nil = SystemModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 1),
            DMatrix::identity(1, 2),
            BoundedNoiseSpec::zero(2),
            BoundedNoiseSpec::zero(1),
        )
        .unwrap();
        assert_eq!(nil.psi(2), 0.0);
        assert_eq!(nil.select_memory(1.0, 1000).unwrap(), (2, 2));
        assert_eq!(nil.select_memory(0.1, 7).unwrap(), (2, 2));
    }

    #[test]
    fn psi_monotone_and_decay_bound() {
        let model = random_model(8);
        let (c, rho) = model.psi_decay_constants();
        assert!(rho < 1.0);
        let mut prev = f64::INFINITY;
        for i in 1..=50 {
            let p = model.psi(i);
            assert!(p <= prev);
            assert!(p <= c * rho.powi(i as i32) * (1.0 + 1e-9) + 1e-300);
            prev = p;
        }
    }

    #[test]
    fn select_memory_scan_oracle() {
        let model = scalar(0.5);
        let (m, h) = model.select_memory(2.0, 1024).unwrap();
        // psi(i) = 2^{2-i} in closed form.
        let scan = |thr: f64| (1..).find(|&i| 2f64.powi(2 - i as i32) <= thr).unwrap();
        assert_eq!(m, scan(3.0 / 1024.0));
        assert_eq!(h, scan(2.0 / 1024.0));
        let (m2, h2) = model.select_memory(2.0, 2048).unwrap();
        assert!(m2 >= m && h2 >= h);
    }

    #[test]
    fn select_memory_rejects_bad_args() {
        let model = scalar(0.5);
        assert!(model.select_memory(0.0, 10).is_err());
        assert!(model.select_memory(1.0, 0).is_err());
    }

    #[test]
    fn noise_bounds_and_moments() {
        for spec in [
            BoundedNoiseSpec::uniform_ball(3, 2.0).unwrap(),
            BoundedNoiseSpec::truncated_gaussian(2, 0.7).unwrap(),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let n = 100_000;
            let mut mean = DVector::zeros(spec.dim);
            let mut second = DVector::zeros(spec.dim);
            for _ in 0..n {
                let w = spec.sample(&mut rng);
                assert!(w.norm() <= spec.bound() + 1e-12);
                mean += &w;
                second += w.component_mul(&w);
            }
            mean /= n as f64;
            second /= n as f64;
            assert!(mean.norm() <= 0.01 * spec.bound());
            for v in second.iter() {
                assert!(*v >= 0.9 * spec.variance_floor());
            }
        }
    }
}
