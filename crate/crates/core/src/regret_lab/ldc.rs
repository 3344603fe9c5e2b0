use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::adversary::LossSpec;
use crate::error::{check_dim, DrcError, Result};
use crate::linalg::spectral_radius;
use crate::lti_system::{NoiseLog, SystemModel};

/// Linear dynamic controller
/// `s_{t+1} = A_pi s_t + B_pi y_t`, `u_t = C_pi s_t + D_pi y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ldc {
    pub a_pi: DMatrix<f64>,
    pub b_pi: DMatrix<f64>,
    pub c_pi: DMatrix<f64>,
    pub d_pi: DMatrix<f64>,
}

impl Ldc {
    pub fn zero(d_pi: usize, du: usize, dy: usize) -> Self {
        Self {
            a_pi: DMatrix::zeros(d_pi, d_pi),
            b_pi: DMatrix::zeros(d_pi, dy),
            c_pi: DMatrix::zeros(du, d_pi),
            d_pi: DMatrix::zeros(du, dy),
        }
    }

    /// `u_t = D y_t` with no internal state.
    pub fn static_feedback(d: DMatrix<f64>) -> Self {
        let (du, dy) = d.shape();
        Self {
            a_pi: DMatrix::zeros(0, 0),
            b_pi: DMatrix::zeros(0, dy),
            c_pi: DMatrix::zeros(du, 0),
            d_pi: d,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a_pi.nrows()
    }

    fn check(&self, model: &SystemModel) -> Result<()> {
        let k = self.state_dim();
        check_dim("controller A columns", k, self.a_pi.ncols())?;
        check_dim("controller B rows", k, self.b_pi.nrows())?;
        check_dim("controller B columns", model.dy(), self.b_pi.ncols())?;
        check_dim("controller C rows", model.du(), self.c_pi.nrows())?;
        check_dim("controller C columns", k, self.c_pi.ncols())?;
        check_dim("controller D rows", model.du(), self.d_pi.nrows())?;
        check_dim("controller D columns", model.dy(), self.d_pi.ncols())
    }

    /// `[[A + B D_pi C, B C_pi], [B_pi C, A_pi]]`.
    pub fn closed_loop_matrix(&self, model: &SystemModel) -> Result<DMatrix<f64>> {
        self.check(model)?;
        let (dx, k) = (model.dx(), self.state_dim());
        let mut cl = DMatrix::zeros(dx + k, dx + k);
        cl.view_mut((0, 0), (dx, dx))
            .copy_from(&(model.a() + model.b() * &self.d_pi * model.c()));
        cl.view_mut((0, dx), (dx, k)).copy_from(&(model.b() * &self.c_pi));
        cl.view_mut((dx, 0), (k, dx)).copy_from(&(&self.b_pi * model.c()));
        cl.view_mut((dx, dx), (k, k)).copy_from(&self.a_pi);
        Ok(cl)
    }

    pub fn is_stabilizing(&self, model: &SystemModel) -> Result<bool> {
        Ok(spectral_radius(&self.closed_loop_matrix(model)?) < 1.0)
    }
}

/// Total loss of the closed loop driven by the logged noise from `x_1 = 0`.
pub fn ldc_rollout(
    ldc: &Ldc,
    model: &SystemModel,
    noise: &NoiseLog,
    losses: &[LossSpec],
) -> Result<f64> {
    ldc.check(model)?;
    check_dim("loss sequence", noise.e.len(), losses.len())?;
    let mut x = DVector::zeros(model.dx());
    let mut s = DVector::zeros(ldc.state_dim());
    let mut total = 0.0;
    for (t, loss) in losses.iter().enumerate() {
        let y = model.c() * &x + &noise.e[t];
        let u = &ldc.c_pi * &s + &ldc.d_pi * &y;
        total += loss.value(&y, &u)?;
        s = &ldc.a_pi * &s + &ldc.b_pi * &y;
        if let Some(w) = noise.w.get(t) {
            x = model.a() * &x + model.b() * &u + w;
        }
    }
    Ok(total)
}

/// Random controller with `d_pi` internal states and entries of size `scale`;
/// destabilizing draws are rejected (up to 100 attempts).
pub fn sample_stabilizing_ldc<R: Rng + ?Sized>(
    model: &SystemModel,
    d_pi: usize,
    scale: f64,
    rng: &mut R,
) -> Option<Ldc> {
    let mut gauss = |r: usize, c: usize, s: f64| {
        DMatrix::from_fn(r, c, |_, _| s * rng.sample::<f64, _>(StandardNormal))
    };
    for _ in 0..100 {
        let mut a_pi = gauss(d_pi, d_pi, 1.0);
        let r = spectral_radius(&a_pi);
        if r > 0.0 {
            a_pi *= 0.9 / r;
        }
        let ldc = Ldc {
            a_pi,
            b_pi: gauss(d_pi, model.dy(), scale),
            c_pi: gauss(model.du(), d_pi, scale),
            d_pi: gauss(model.du(), model.dy(), scale),
        };
        if ldc.is_stabilizing(model).unwrap_or(false) {
            return Some(ldc);
        }
    }
    None
}

/// Cheapest of the zero controller and `samples` random stabilizing ones.
pub fn best_sampled_ldc(
    model: &SystemModel,
    noise: &NoiseLog,
    losses: &[LossSpec],
    samples: usize,
    seed: u64,
) -> Result<(Ldc, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = Ldc::zero(0, model.du(), model.dy());
    let mut best_cost = ldc_rollout(&zero, model, noise, losses)?;
    let mut best = zero;
    for k in 0..samples {
        let d_pi = k % (model.dx() + 1);
        let scale = 0.5 * rng.random::<f64>();
        let Some(ldc) = sample_stabilizing_ldc(model, d_pi, scale, &mut rng) else {
            continue;
        };
        let cost = ldc_rollout(&ldc, model, noise, losses)?;
        if cost < best_cost {
            best_cost = cost;
            best = ldc;
        }
    }
    if !best_cost.is_finite() {
        return Err(DrcError::InvalidArgument("controller rollout diverged".into()));
    }
    Ok((best, best_cost))
}
