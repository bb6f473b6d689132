//! Two-dimensional Gaussian measures with the conditional/marginal
//! reductions and KL divergences used throughout.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("non-positive variance: {0}")]
    NonPositiveVariance(f64),
    #[error("degenerate measure: marginal variance {0} <= 0")]
    DegenerateMeasure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMeasure {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn centered(cov: Matrix2<f64>) -> Self {
        Self {
            mean: Vector2::zeros(),
            cov,
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        let det = self.cov[(0, 0)] * self.cov[(1, 1)] - self.cov[(0, 1)] * self.cov[(1, 0)];
        let dx = x - self.mean[0];
        let dy = y - self.mean[1];
        let quad = (self.cov[(1, 1)] * dx * dx - 2.0 * self.cov[(0, 1)] * dx * dy
            + self.cov[(0, 0)] * dy * dy)
            / det;
        (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }
}

/// Conditional law of coordinate 1 given coordinate 2, and the marginal of
/// coordinate 2: x1 | x2 ~ N(mean1 + slope (x2 - mean2), cond_var).
#[derive(Debug, Clone, Copy)]
pub struct CondMarg {
    pub cond_slope: f64,
    pub cond_var: f64,
    pub marg_mean: f64,
    pub marg_var: f64,
}

pub fn conditional_marginal(g: &GaussianMeasure) -> Result<CondMarg, GaussianError> {
    let c22 = g.cov[(1, 1)];
    if c22 <= 0.0 {
        return Err(GaussianError::DegenerateMeasure(c22));
    }
    Ok(CondMarg {
        cond_slope: g.cov[(0, 1)] / c22,
        cond_var: g.cov[(0, 0)] - g.cov[(0, 1)] * g.cov[(1, 0)] / c22,
        marg_mean: g.mean[1],
        marg_var: c22,
    })
}

/// KL(N(u1, s1) || N(u2, s2)) for variances s1, s2.
pub fn kl_1d_gaussian(u1: f64, s1: f64, u2: f64, s2: f64) -> Result<f64, GaussianError> {
    if s1 <= 0.0 {
        return Err(GaussianError::NonPositiveVariance(s1));
    }
    if s2 <= 0.0 {
        return Err(GaussianError::NonPositiveVariance(s2));
    }
    Ok(0.5 * ((s2 / s1).ln() - 1.0 + s1 / s2 + (u2 - u1) * (u2 - u1) / s2))
}

/// Conditional-average and marginal KL divergences of p from q, splitting
/// the joint divergence along coordinate 2. The conditional mean mismatch
/// is a quadratic integrated in closed form against the marginal of p.
pub fn kl_conditional_marginal(
    p: &GaussianMeasure,
    q: &GaussianMeasure,
) -> Result<(f64, f64), GaussianError> {
    let cp = conditional_marginal(p)?;
    let cq = conditional_marginal(q)?;
    if cp.cond_var <= 0.0 {
        return Err(GaussianError::NonPositiveVariance(cp.cond_var));
    }
    if cq.cond_var <= 0.0 {
        return Err(GaussianError::NonPositiveVariance(cq.cond_var));
    }
    let slope_gap = cq.cond_slope - cp.cond_slope;
    let mean_gap = q.mean[0] + cq.cond_slope * (p.mean[1] - q.mean[1]) - p.mean[0];
    let d1 = 0.5
        * ((cq.cond_var / cp.cond_var).ln() - 1.0
            + cp.cond_var / cq.cond_var
            + (slope_gap * slope_gap * cp.marg_var + mean_gap * mean_gap) / cq.cond_var);
    let d2 = kl_1d_gaussian(cp.marg_mean, cp.marg_var, cq.marg_mean, cq.marg_var)?;
    Ok((d1, d2))
}

/// KL(p || q) for two 2-d Gaussians.
pub fn kl_gaussian_2d(p: &GaussianMeasure, q: &GaussianMeasure) -> Result<f64, GaussianError> {
    let det_p = p.cov[(0, 0)] * p.cov[(1, 1)] - p.cov[(0, 1)] * p.cov[(1, 0)];
    let det_q = q.cov[(0, 0)] * q.cov[(1, 1)] - q.cov[(0, 1)] * q.cov[(1, 0)];
    if det_p <= 0.0 || p.cov[(0, 0)] <= 0.0 {
        return Err(GaussianError::NonPositiveVariance(det_p));
    }
    if det_q <= 0.0 || q.cov[(0, 0)] <= 0.0 {
        return Err(GaussianError::NonPositiveVariance(det_q));
    }
    let q_inv = Matrix2::new(q.cov[(1, 1)], -q.cov[(0, 1)], -q.cov[(1, 0)], q.cov[(0, 0)]) / det_q;
    let dm = q.mean - p.mean;
    let trace = (q_inv * p.cov).trace();
    Ok(0.5 * ((det_q / det_p).ln() - 2.0 + trace + (dm.transpose() * q_inv * dm)[(0, 0)]))
}
