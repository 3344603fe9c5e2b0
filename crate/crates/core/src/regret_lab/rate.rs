use serde::Serialize;

use crate::error::{DrcError, Result};

/// Least-squares fit of `log R = slope * log T + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Points that entered the fit.
    pub used: usize,
    /// `R_i / log T_i` for every positive point, in input order.
    pub log_ratios: Vec<(usize, f64)>,
}

pub fn fit_rate(horizons: &[usize], regrets: &[f64]) -> Result<RateFit> {
    if horizons.len() != regrets.len() {
        return Err(DrcError::DimensionMismatch {
            what: "regret series",
            expected: horizons.len(),
            got: regrets.len(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut log_ratios = Vec::new();
    for (&t, &r) in horizons.iter().zip(regrets) {
        if !(r > 0.0) || !r.is_finite() || t < 2 {
            log::warn!("excluding point T = {t}, R = {r} from the rate fit");
            continue;
        }
        let lt = (t as f64).ln();
        xs.push(lt);
        ys.push(r.ln());
        log_ratios.push((t, r / lt));
    }
    if xs.len() < 2 {
        return Err(DrcError::InvalidArgument(
            "rate fit needs at least two positive points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(DrcError::InvalidArgument("rate fit needs distinct horizons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        used: xs.len(),
        log_ratios,
    })
}
