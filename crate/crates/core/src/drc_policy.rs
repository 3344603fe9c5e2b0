//! Disturbance response controller `u_t = sum_{s<m} M[s] y_nat_{t-s}`.
//!
//! Parameters are stored as the flat vector `P`: block `s` occupies
//! `P[s*q .. (s+1)*q]` with `q = d_u * d_y`, and within a block the rows of
//! `M[s]` are laid out one after another (row-major).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DrcError, Result};

/// A closed convex set with an exact Euclidean projection.
pub trait ConvexSet {
    fn dim(&self) -> usize;
    fn project(&self, x: &DVector<f64>) -> DVector<f64>;
    /// How far inside the set `x` sits (negative when infeasible).
    fn slack(&self, x: &DVector<f64>) -> f64;
    /// Upper bound on both the diameter and the largest norm of a member.
    fn diameter(&self) -> f64;

    fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.slack(x) >= -tol
    }
}

/// `{x : ||x|| <= radius}` in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EuclideanBall {
    pub dim: usize,
    pub radius: f64,
}

impl ConvexSet for EuclideanBall {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = x.norm();
        if n <= self.radius {
            x.clone()
        } else {
            x * (self.radius / n)
        }
    }

    fn slack(&self, x: &DVector<f64>) -> f64 {
        self.radius - x.norm()
    }

    fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrcParams {
    m: usize,
    du: usize,
    dy: usize,
    /// Stacked vector `P`, length `m * du * dy`.
    data: DVector<f64>,
}

impl DrcParams {
    pub fn zeros(m: usize, du: usize, dy: usize) -> Self {
        Self {
            m,
            du,
            dy,
            data: DVector::zeros(m * du * dy),
        }
    }

    pub fn from_vector(m: usize, du: usize, dy: usize, p: DVector<f64>) -> Result<Self> {
        check_dim("DRC parameter vector", m * du * dy, p.len())?;
        Ok(Self { m, du, dy, data: p })
    }

    pub fn from_blocks(blocks: &[DMatrix<f64>]) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| DrcError::InvalidArgument("at least one block is required".into()))?;
        let (du, dy) = first.shape();
        let q = du * dy;
        let mut data = DVector::zeros(blocks.len() * q);
        for (s, blk) in blocks.iter().enumerate() {
            check_dim("block rows", du, blk.nrows())?;
            check_dim("block columns", dy, blk.ncols())?;
            for j in 0..du {
                for k in 0..dy {
                    data[s * q + j * dy + k] = blk[(j, k)];
                }
            }
        }
        Ok(Self {
            m: blocks.len(),
            du,
            dy,
            data,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn du(&self) -> usize {
        self.du
    }
    pub fn dy(&self) -> usize {
        self.dy
    }
    pub fn vector(&self) -> &DVector<f64> {
        &self.data
    }
    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn block(&self, s: usize) -> DMatrix<f64> {
        let q = self.du * self.dy;
        DMatrix::from_row_slice(self.du, self.dy, &self.data.as_slice()[s * q..(s + 1) * q])
    }

    pub fn blocks(&self) -> Vec<DMatrix<f64>> {
        (0..self.m).map(|s| self.block(s)).collect()
    }

    /// `sum_s ||M[s]||_F`
    pub fn group_norm_sum(&self) -> f64 {
        group_norms(&self.data, self.du * self.dy).iter().sum()
    }
}

fn group_norms(p: &DVector<f64>, group: usize) -> Vec<f64> {
    if group == 0 {
        return Vec::new();
    }
    p.as_slice()
        .chunks(group)
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

/// `u = sum_{s<m} M[s] y_nat_{t-s}`. `history` is chronological (newest
/// last); entries older than the start of the record count as zero.
pub fn control_input(params: &DrcParams, history: &[DVector<f64>]) -> Result<DVector<f64>> {
    control_input_raw(params.vector(), params.m, params.du, params.dy, history)
}

pub(crate) fn control_input_raw(
    p: &DVector<f64>,
    m: usize,
    du: usize,
    dy: usize,
    history: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let q = du * dy;
    let mut u = DVector::zeros(du);
    for (s, y) in history.iter().rev().take(m).enumerate() {
        check_dim("natural output", dy, y.len())?;
        let base = s * q;
        for j in 0..du {
            let row = &p.as_slice()[base + j * dy..base + (j + 1) * dy];
            u[j] += row.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(u)
}

/// The `d_u x (m d_u d_y)` matrix `Y` with `control_input = Y P`.
pub fn input_jacobian(
    m: usize,
    du: usize,
    dy: usize,
    history: &[DVector<f64>],
) -> DMatrix<f64> {
    let q = du * dy;
    let mut jac = DMatrix::zeros(du, m * q);
    for (s, y) in history.iter().rev().take(m).enumerate() {
        for j in 0..du {
            for k in 0..dy {
                jac[(j, s * q + j * dy + k)] = y[k];
            }
        }
    }
    jac
}

/// `{P : sum_s ||M[s]||_F <= radius}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrcConstraintSet {
    pub m: usize,
    pub du: usize,
    pub dy: usize,
    pub radius: f64,
}

impl DrcConstraintSet {
    pub fn new(m: usize, du: usize, dy: usize, radius: f64) -> Result<Self> {
        if m == 0 || du == 0 || dy == 0 {
            return Err(DrcError::InvalidArgument(
                "memory length and dimensions must be positive".into(),
            ));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(DrcError::InvalidArgument(format!(
                "constraint radius must be positive, got {radius}"
            )));
        }
        Ok(Self { m, du, dy, radius })
    }

    pub fn group_size(&self) -> usize {
        self.du * self.dy
    }
}

impl ConvexSet for DrcConstraintSet {
    fn dim(&self) -> usize {
        self.m * self.group_size()
    }

    fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        project_group_ball(p, self.group_size(), self.radius)
    }

    fn slack(&self, p: &DVector<f64>) -> f64 {
        self.radius - group_norms(p, self.group_size()).iter().sum::<f64>()
    }

    fn diameter(&self) -> f64 {
        diameter(self.du, self.dy, self.radius)
    }
}

/// Euclidean projection onto `{x : sum_g ||x_g|| <= radius}` with contiguous
/// groups of size `group`. The group norms are projected onto the simplex
/// `{n >= 0, sum n <= radius}` (sort + threshold) and each group is rescaled.
pub fn project_group_ball(p: &DVector<f64>, group: usize, radius: f64) -> DVector<f64> {
    let norms = group_norms(p, group);
    let total: f64 = norms.iter().sum();
    if total <= radius {
        return p.clone();
    }
    if radius <= 0.0 {
        return DVector::zeros(p.len());
    }
    let mut sorted = norms.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut out = p.clone();
    for (g, &n) in norms.iter().enumerate() {
        let scale = if n > 0.0 { (n - theta).max(0.0) / n } else { 0.0 };
        for v in out.as_mut_slice()[g * group..(g + 1) * group].iter_mut() {
            *v *= scale;
        }
    }
    out
}

/// `D = 2 sqrt(min(d_u, d_y)) R_M`.
pub fn diameter(du: usize, dy: usize, radius: f64) -> f64 {
    2.0 * (du.min(dy) as f64).sqrt() * radius
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
    }

    #[test]
    fn layout_matches_row_stacking() {
        let blocks = vec![
            DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]),
            DMatrix::from_row_slice(2, 3, &[7., 8., 9., 10., 11., 12.]),
        ];
        let p = DrcParams::from_blocks(&blocks).unwrap();
        let expect: Vec<f64> = (1..=12).map(|v| v as f64).collect();
        assert_eq!(p.vector().as_slice(), expect.as_slice());
        assert_eq!(p.blocks(), blocks);
        let back = DrcParams::from_vector(2, 2, 3, p.vector().clone()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn control_input_examples() {
        let hist = vec![DVector::from_vec(vec![0.4, -1.0]); 3];
        let zero = DrcParams::zeros(3, 2, 2);
        assert_eq!(control_input(&zero, &hist).unwrap(), DVector::zeros(2));
        let ident = DrcParams::from_blocks(&[DMatrix::identity(2, 2)]).unwrap();
        let h2 = vec![DVector::from_vec(vec![9.0, 9.0]), DVector::from_vec(vec![0.1, 0.2])];
        assert_eq!(control_input(&ident, &h2).unwrap(), h2[1]);
    }

    #[test]
    fn control_input_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, du, dy) = (4, 2, 3);
        let p = DrcParams::from_vector(m, du, dy, rand_vec(&mut rng, m * du * dy, 1.0)).unwrap();
        let hist: Vec<_> = (0..6).map(|_| rand_vec(&mut rng, dy, 1.0)).collect();
        let u = control_input(&p, &hist).unwrap();
        let blocks = p.blocks();
        for j in 0..du {
            let mut acc = 0.0;
            for s in 0..m {
                for k in 0..dy {
                    acc += blocks[s][(j, k)] * hist[hist.len() - 1 - s][k];
                }
            }
            assert!((acc - u[j]).abs() < 1e-12);
        }
        let jac = input_jacobian(m, du, dy, &hist);
        assert!((&jac * p.vector() - &u).norm() < 1e-12);
    }

    #[test]
    fn short_history_is_zero_padded() {
        let p = DrcParams::from_vector(3, 1, 1, DVector::from_vec(vec![1.0, 2.0, 4.0])).unwrap();
        let hist = vec![DVector::from_element(1, 1.0)];
        assert_eq!(control_input(&p, &hist).unwrap()[0], 1.0);
        assert!(control_input(&p, &[DVector::zeros(2)]).is_err());
    }

    #[test]
    fn projection_examples() {
        let set = DrcConstraintSet::new(2, 1, 2, 2.0).unwrap();
        let inside = DVector::from_vec(vec![0.3, 0.4, 0.0, 0.5]);
        assert_eq!(set.project(&inside), inside);
        let single = DrcConstraintSet::new(1, 2, 2, 1.5).unwrap();
        let p = DVector::from_vec(vec![1.0, -2.0, 2.0, 0.5]);
        let expect = &p * (1.5 / p.norm());
        assert!((single.project(&p) - expect).norm() < 1e-14);
    }

    #[test]
    fn projection_feasible_and_optimal_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set = DrcConstraintSet::new(3, 2, 1, 1.0).unwrap();
        for _ in 0..50 {
            let p = rand_vec(&mut rng, 6, 3.0);
            let pr = set.project(&p);
            assert!(set.slack(&pr) >= -1e-9);
            let d = (&p - &pr).norm();
            for _ in 0..200 {
                let q = set.project(&rand_vec(&mut rng, 6, 1.0));
                assert!(d <= (&p - &q).norm() + 1e-9);
            }
        }
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(diameter(1, 1, 2.0), 4.0);
        assert_eq!(diameter(4, 1, 1.0), 2.0);
        assert!((diameter(3, 2, 3.0) - 3.0 * diameter(3, 2, 1.0)).abs() < 1e-15);
    }
}
