//! The wide-time-scale stationary measure: conditional partition function
//! Z1(x2), effective potential F(x2) = -log Z1 / beta1, the marginal Gibbs
//! measure at inverse temperature beta2, and the joint density built from
//! them. Quadrature works for block dimensions up to two; the quadratic
//! family also has everything in closed form.
//!
//! Partition functions are carried in log space so large beta V does not
//! underflow, and the beta2/beta1 exponent acts on log Z1 directly.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::gaussian::{kl_conditional_marginal, GaussianError, GaussianMeasure};
use crate::linalg::{gauss_legendre_on, log_sum_exp};
use crate::potential::{Potential, Quadratic};

#[derive(Debug, Error)]
pub enum StationaryError {
    #[error("quadrature path requires block dimensions 1 or 2, got d1={0}, d2={1}")]
    DimensionTooLarge(usize, usize),
    #[error("quadrature needs at least 16 nodes per axis, got {0}")]
    TooFewNodes(usize),
    #[error("half-width must be positive, got {0}")]
    BadHalfWidth(f64),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    Trapezoid,
    GaussLegendre,
}

#[derive(Debug, Clone, Copy)]
pub enum HalfWidth {
    /// Derived from the confinement constants: R with a R^2 - a0 >= 40/beta.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub nodes: usize,
    pub half_width: HalfWidth,
    pub rule: QuadRule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            nodes: 96,
            half_width: HalfWidth::Auto,
            rule: QuadRule::GaussLegendre,
        }
    }
}

impl QuadratureSpec {
    fn axis(&self, half: f64) -> (Vec<f64>, Vec<f64>) {
        match self.rule {
            QuadRule::GaussLegendre => gauss_legendre_on(self.nodes, -half, half),
            QuadRule::Trapezoid => {
                let n = self.nodes;
                let h = 2.0 * half / (n - 1) as f64;
                let nodes: Vec<f64> = (0..n).map(|i| -half + i as f64 * h).collect();
                let mut weights = vec![h; n];
                weights[0] = 0.5 * h;
                weights[n - 1] = 0.5 * h;
                (nodes, weights)
            }
        }
    }
}

/// Per-node table of the slow-block quantities, exportable as CSV.
#[derive(Debug, Clone)]
pub struct StationaryTables {
    pub x2: Vec<f64>,
    pub z1: Vec<f64>,
    pub effective_potential: Vec<f64>,
    pub rho2_star: Vec<f64>,
    pub log_z2: f64,
    /// Relative boundary-to-peak integrand ratio, a crude truncation check.
    pub tail_estimate: f64,
    pub nodes: usize,
    pub half_width1: f64,
    pub half_width2: f64,
}

/// Stationary measure of an energy function over truncated blocks.
/// Immutable after construction; evaluators may be shared across threads.
pub struct StationaryMeasure<'a> {
    energy: Box<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'a>,
    d1: usize,
    d2: usize,
    pub beta1: f64,
    pub beta2: f64,
    spec: QuadratureSpec,
    half1: f64,
    half2: f64,
    log_z2: f64,
}

fn tensor_nodes(d: usize, axis: &(Vec<f64>, Vec<f64>)) -> Vec<(Vec<f64>, f64)> {
    let (xs, ws) = axis;
    match d {
        1 => xs.iter().zip(ws).map(|(x, w)| (vec![*x], w.ln())).collect(),
        2 => {
            let mut out = Vec::with_capacity(xs.len() * xs.len());
            for (x, wx) in xs.iter().zip(ws) {
                for (y, wy) in xs.iter().zip(ws) {
                    out.push((vec![*x, *y], (wx * wy).ln()));
                }
            }
            out
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

impl<'a> StationaryMeasure<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        energy: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'a,
        d1: usize,
        d2: usize,
        beta1: f64,
        beta2: f64,
        spec: QuadratureSpec,
        half1: f64,
        half2: f64,
    ) -> Result<Self, StationaryError> {
        if !(1..=2).contains(&d1) || !(1..=2).contains(&d2) {
            return Err(StationaryError::DimensionTooLarge(d1, d2));
        }
        if spec.nodes < 16 {
            return Err(StationaryError::TooFewNodes(spec.nodes));
        }
        if !(half1 > 0.0 && half2 > 0.0) {
            return Err(StationaryError::BadHalfWidth(half1.min(half2)));
        }
        let mut m = Self {
            energy: Box::new(energy),
            d1,
            d2,
            beta1,
            beta2,
            spec,
            half1,
            half2,
            log_z2: 0.0,
        };
        m.log_z2 = m.compute_log_z2();
        Ok(m)
    }

    /// Builds the measure for a library potential, with auto half-widths
    /// from the analytic confinement constants.
    pub fn for_potential(
        p: &'a Potential,
        beta1: f64,
        beta2: f64,
        spec: QuadratureSpec,
    ) -> Result<Self, StationaryError> {
        let data = p.confinement_data();
        let (a1, a2, a0) = data.lower;
        let auto = |beta: f64, a: f64| ((40.0 / beta + a0) / a).sqrt();
        let (half1, half2) = match spec.half_width {
            HalfWidth::Auto => (auto(beta1, a1), auto(beta2.min(beta1), a2)),
            HalfWidth::Fixed(h) => (h, h),
        };
        let (d1, d2) = (p.d1(), p.d2());
        Self::new(
            move |x1: &[f64], x2: &[f64]| p.eval_unchecked(x1, x2),
            d1,
            d2,
            beta1,
            beta2,
            spec,
            half1,
            half2,
        )
    }

    fn fast_grid(&self) -> Vec<(Vec<f64>, f64)> {
        tensor_nodes(self.d1, &self.spec.axis(self.half1))
    }

    fn slow_grid(&self) -> Vec<(Vec<f64>, f64)> {
        tensor_nodes(self.d2, &self.spec.axis(self.half2))
    }

    /// log Z1(x2) = log int exp(-beta1 V(x1, x2)) dx1 over the truncated box.
    pub fn log_z1(&self, x2: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .fast_grid()
            .iter()
            .map(|(x1, logw)| -self.beta1 * (self.energy)(x1, x2) + logw)
            .collect();
        log_sum_exp(&terms)
    }

    pub fn z1(&self, x2: &[f64]) -> f64 {
        self.log_z1(x2).exp()
    }

    /// F(x2) = -log Z1(x2) / beta1.
    pub fn effective_potential(&self, x2: &[f64]) -> f64 {
        -self.log_z1(x2) / self.beta1
    }

    fn compute_log_z2(&self) -> f64 {
        let ratio = self.beta2 / self.beta1;
        let terms: Vec<f64> = self
            .slow_grid()
            .iter()
            .map(|(x2, logw)| ratio * self.log_z1(x2) + logw)
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_z2(&self) -> f64 {
        self.log_z2
    }

    /// Joint stationary density.
    pub fn joint(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let lz1 = self.log_z1(x2);
        (-self.beta1 * (self.energy)(x1, x2) + (self.beta2 / self.beta1 - 1.0) * lz1 - self.log_z2)
            .exp()
    }

    /// Conditional density of the fast block given x2 (the Gibbs measure
    /// at beta1 with frozen slow variables).
    pub fn conditional(&self, x1: &[f64], x2: &[f64]) -> f64 {
        (-self.beta1 * (self.energy)(x1, x2) - self.log_z1(x2)).exp()
    }

    /// Marginal density of the slow block (the Gibbs measure of the
    /// effective potential at beta2).
    pub fn marginal(&self, x2: &[f64]) -> f64 {
        ((self.beta2 / self.beta1) * self.log_z1(x2) - self.log_z2).exp()
    }

    /// Conditional expectation of an observable against the fast block.
    pub fn conditional_expectation(&self, x2: &[f64], obs: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
        let lz1 = self.log_z1(x2);
        self.fast_grid()
            .iter()
            .map(|(x1, logw)| {
                obs(x1, x2) * (-self.beta1 * (self.energy)(x1, x2) + logw - lz1).exp()
            })
            .sum()
    }

    /// Conditional raw moment <|x1|^r>_*(x2).
    pub fn conditional_moment(&self, x2: &[f64], r: f64) -> f64 {
        self.conditional_expectation(x2, &|x1, _| {
            x1.iter().map(|x| x * x).sum::<f64>().powf(r / 2.0)
        })
    }

    /// Slow-block tables (requires d2 = 1).
    pub fn tables(&self) -> Result<StationaryTables, StationaryError> {
        if self.d2 != 1 {
            return Err(StationaryError::DimensionTooLarge(self.d1, self.d2));
        }
        let (xs, _) = self.spec.axis(self.half2);
        let mut z1 = Vec::with_capacity(xs.len());
        let mut eff = Vec::with_capacity(xs.len());
        let mut rho2 = Vec::with_capacity(xs.len());
        for &x in &xs {
            let lz = self.log_z1(&[x]);
            z1.push(lz.exp());
            eff.push(-lz / self.beta1);
            rho2.push(((self.beta2 / self.beta1) * lz - self.log_z2).exp());
        }
        let peak = self.log_z1(&[0.0]);
        let boundary = -self.beta1 * (self.energy)(&vec![self.half1; self.d1], &[0.0]);
        let tail_estimate = (boundary - peak).exp();
        Ok(StationaryTables {
            x2: xs,
            z1,
            effective_potential: eff,
            rho2_star: rho2,
            log_z2: self.log_z2,
            tail_estimate,
            nodes: self.spec.nodes,
            half_width1: self.half1,
            half_width2: self.half2,
        })
    }

    /// Total mass of the marginal over the truncated grid; 1 up to
    /// quadrature and truncation error.
    pub fn marginal_mass(&self) -> f64 {
        self.slow_grid()
            .iter()
            .map(|(x2, logw)| {
                (logw + (self.beta2 / self.beta1) * self.log_z1(x2) - self.log_z2).exp()
            })
            .sum()
    }
}

/// Closed-form stationary Gaussian for quadratic potentials: fast block in
/// conditional equilibrium at beta1, slow block under the effective
/// potential at beta2.
pub fn gaussian_stationary(q: &Quadratic, beta1: f64, beta2: f64) -> GaussianMeasure {
    GaussianMeasure::centered(crate::ou_exact::sigma_star(q, beta1, beta2))
}

/// Two-temperature free energy of a Gaussian law under a quadratic
/// potential, in closed form:
/// F(pi) = E[V] + beta1^-1 E[log pi(x1|x2)] + beta2^-1 E[log pi(x2)].
pub fn free_energy_gaussian(pi: &GaussianMeasure, q: &Quadratic, beta1: f64, beta2: f64) -> f64 {
    let a = q.matrix();
    let e_v = 0.5 * ((a * pi.cov).trace() + (pi.mean.transpose() * a * pi.mean)[(0, 0)]);
    let cond_var = pi.cov[(0, 0)] - pi.cov[(0, 1)] * pi.cov[(1, 0)] / pi.cov[(1, 1)];
    let two_pi = 2.0 * std::f64::consts::PI;
    let e_log_cond = -0.5 * (1.0 + (two_pi * cond_var).ln());
    let e_log_marg = -0.5 * (1.0 + (two_pi * pi.cov[(1, 1)]).ln());
    e_v + e_log_cond / beta1 + e_log_marg / beta2
}

/// Free-energy difference of two Gaussian laws together with its KL
/// representation beta1^-1 D1 + beta2^-1 D2 relative to the reference.
pub fn free_energy_gap_gaussian(
    pi: &GaussianMeasure,
    reference: &GaussianMeasure,
    q: &Quadratic,
    beta1: f64,
    beta2: f64,
) -> Result<(f64, f64), StationaryError> {
    let gap = free_energy_gaussian(pi, q, beta1, beta2)
        - free_energy_gaussian(reference, q, beta1, beta2);
    let (d1, d2) = kl_conditional_marginal(pi, reference)?;
    Ok((gap, d1 / beta1 + d2 / beta2))
}

/// Free energy of a gridded density (row-major over xs1 x xs2, with
/// d1 = d2 = 1): empty cells are skipped and counted.
pub struct GridFreeEnergy {
    pub value: f64,
    pub skipped_cells: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn free_energy_grid(
    density: &[f64],
    xs1: &[f64],
    ws1: &[f64],
    xs2: &[f64],
    ws2: &[f64],
    energy: &dyn Fn(f64, f64) -> f64,
    beta1: f64,
    beta2: f64,
) -> GridFreeEnergy {
    let n1 = xs1.len();
    let n2 = xs2.len();
    let mut marg = vec![0.0; n2];
    for j in 0..n2 {
        for i in 0..n1 {
            marg[j] += density[i * n2 + j] * ws1[i];
        }
    }
    let mut value = 0.0;
    let mut skipped = 0;
    for i in 0..n1 {
        for j in 0..n2 {
            let rho = density[i * n2 + j];
            let w = ws1[i] * ws2[j];
            if rho <= 0.0 || marg[j] <= 0.0 {
                skipped += usize::from(rho > 0.0);
                continue;
            }
            let cond = rho / marg[j];
            value += w * rho * (energy(xs1[i], xs2[j]) + cond.ln() / beta1 + marg[j].ln() / beta2);
        }
    }
    GridFreeEnergy {
        value,
        skipped_cells: skipped,
    }
}

/// Quadrature mean and covariance of a 2-d density evaluator; oracle for
/// the closed-form Gaussians.
pub fn density_moments(
    density: &dyn Fn(f64, f64) -> f64,
    half1: f64,
    half2: f64,
    nodes: usize,
) -> (Vector2<f64>, Matrix2<f64>) {
    let (xs, wx) = gauss_legendre_on(nodes, -half1, half1);
    let (ys, wy) = gauss_legendre_on(nodes, -half2, half2);
    let mut mass = 0.0;
    let mut mean = Vector2::zeros();
    let mut second = Matrix2::zeros();
    for (x, wxi) in xs.iter().zip(&wx) {
        for (y, wyi) in ys.iter().zip(&wy) {
            let w = wxi * wyi * density(*x, *y);
            mass += w;
            mean += Vector2::new(*x, *y) * w;
            second += Matrix2::new(x * x, x * y, x * y, y * y) * w;
        }
    }
    mean /= mass;
    let cov = second / mass - mean * mean.transpose();
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn p0() -> Potential {
        Potential::Quadratic(Quadratic::new(2.0, 1.0, 0.5).unwrap())
    }

    fn spec(nodes: usize) -> QuadratureSpec {
        QuadratureSpec {
            nodes,
            ..Default::default()
        }
    }

    #[test]
    fn z1_gaussian_closed_form() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        // int exp(-x^2) dx = sqrt(pi) at x2 = 0, beta1 = 1, a = 2
        assert_relative_eq!(
            m.z1(&[0.0]),
            std::f64::consts::PI.sqrt(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn z1_decreases_with_beta() {
        let p = p0();
        let cold = StationaryMeasure::for_potential(&p, 2.0, 2.0, spec(96)).unwrap();
        let warm = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        for x2 in [-1.0, 0.0, 1.5] {
            assert!(cold.z1(&[x2]) < warm.z1(&[x2]));
        }
    }

    #[test]
    fn z1_self_convergence_quartic() {
        // V = x^4/4 + x^2 y^2 through the generic energy interface
        let energy = |x1: &[f64], x2: &[f64]| {
            let (x, y) = (x1[0], x2[0]);
            0.25 * x.powi(4) + x * x * y * y
        };
        let coarse = StationaryMeasure::new(energy, 1, 1, 1.0, 1.0, spec(96), 8.0, 8.0).unwrap();
        let fine = StationaryMeasure::new(energy, 1, 1, 1.0, 1.0, spec(192), 8.0, 8.0).unwrap();
        for y in [0.0, 0.7, 2.0] {
            assert_relative_eq!(coarse.z1(&[y]), fine.z1(&[y]), max_relative = 1e-8);
        }
    }

    #[test]
    fn node_doubling_converges_at_reference_parameters() {
        let p = p0();
        let coarse = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let fine = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(192)).unwrap();
        for y in [-1.5, 0.0, 2.0] {
            assert_relative_eq!(coarse.z1(&[y]), fine.z1(&[y]), max_relative = 1e-8);
            assert_relative_eq!(
                coarse.effective_potential(&[y]),
                fine.effective_potential(&[y]),
                epsilon = 1e-8
            );
        }
        assert_relative_eq!(coarse.log_z2(), fine.log_z2(), epsilon = 1e-8);
    }

    #[test]
    fn effective_potential_quadratic_slope() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let gap = m.effective_potential(&[1.0]) - m.effective_potential(&[0.0]);
        assert_relative_eq!(gap, 0.4375, max_relative = 1e-9);
    }

    #[test]
    fn effective_potential_decoupled() {
        let p = Potential::Quadratic(Quadratic::new(2.0, 1.0, 0.0).unwrap());
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let gap = m.effective_potential(&[1.0]) - m.effective_potential(&[0.0]);
        assert_relative_eq!(gap, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn effective_potential_gradient_is_conditional_mean_force() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(128)).unwrap();
        let h = 1e-4;
        for y in [-1.0, 0.3, 1.2] {
            let fd =
                (m.effective_potential(&[y + h]) - m.effective_potential(&[y - h])) / (2.0 * h);
            let mean_force =
                m.conditional_expectation(&[y], &|x1, x2| p.grad(x1, x2).unwrap().1[0]);
            assert_relative_eq!(fd, mean_force, max_relative = 1e-6);
        }
    }

    #[test]
    fn gibbs_limit_at_equal_temperatures() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.5, 1.5, spec(128)).unwrap();
        let z: f64 = {
            let (xs, ws) = gauss_legendre_on(128, -8.0, 8.0);
            let mut total = 0.0;
            for (x, wx) in xs.iter().zip(&ws) {
                for (y, wy) in xs.iter().zip(&ws) {
                    total += wx * wy * (-1.5 * p.eval(&[*x], &[*y]).unwrap()).exp();
                }
            }
            total
        };
        for (x, y) in [(0.0, 0.0), (0.5, -0.3), (1.0, 1.0)] {
            let gibbs = (-1.5 * p.eval(&[x], &[y]).unwrap()).exp() / z;
            assert_relative_eq!(m.joint(&[x], &[y]), gibbs, max_relative = 1e-8);
        }
    }

    #[test]
    fn joint_factorizes_and_marginal_normalized() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        for (x, y) in [(0.3, -0.8), (-1.1, 0.4)] {
            let joint = m.joint(&[x], &[y]);
            let product = m.conditional(&[x], &[y]) * m.marginal(&[y]);
            assert_relative_eq!(joint, product, max_relative = 1e-10);
        }
        assert_abs_diff_eq!(m.marginal_mass(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn conditional_normalized() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let (xs, ws) = gauss_legendre_on(96, -10.0, 10.0);
        for y in [-1.0, 0.0, 2.0] {
            let mass: f64 = xs
                .iter()
                .zip(&ws)
                .map(|(x, w)| w * m.conditional(&[*x], &[y]))
                .sum();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn quadrature_matches_gaussian_stationary() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let g = gaussian_stationary(&Quadratic::new(2.0, 1.0, 0.5).unwrap(), 1.0, 2.0);
        assert_relative_eq!(g.cov[(0, 0)], 0.535714, max_relative = 1e-5);
        assert_relative_eq!(g.cov[(0, 1)], -0.142857, max_relative = 1e-5);
        assert_relative_eq!(g.cov[(1, 1)], 0.571429, max_relative = 1e-5);
        // pointwise density agreement on a 21x21 grid spanning +-4 sigma
        let sx = g.cov[(0, 0)].sqrt();
        let sy = g.cov[(1, 1)].sqrt();
        let mut worst: f64 = 0.0;
        for i in 0..21 {
            for j in 0..21 {
                let x = -4.0 * sx + 8.0 * sx * i as f64 / 20.0;
                let y = -4.0 * sy + 8.0 * sy * j as f64 / 20.0;
                worst = worst.max((m.joint(&[x], &[y]) - g.density(x, y)).abs());
            }
        }
        assert!(worst < 1e-6, "worst pointwise gap {worst}");
    }

    #[test]
    fn quadrature_moments_match_sigma() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let density = |x: f64, y: f64| m.joint(&[x], &[y]);
        let (mean, cov) = density_moments(&density, 10.0, 8.0, 128);
        let g = gaussian_stationary(&Quadratic::new(2.0, 1.0, 0.5).unwrap(), 1.0, 2.0);
        assert_abs_diff_eq!(mean.abs().max(), 0.0, epsilon = 1e-8);
        assert!((cov - g.cov).abs().max() < 1e-6);
    }

    #[test]
    fn stationary_moments_finite_up_to_fourth() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(128)).unwrap();
        let g = gaussian_stationary(&Quadratic::new(2.0, 1.0, 0.5).unwrap(), 1.0, 2.0);
        // E x^4 of the Gaussian marginal = 3 sigma^4
        let (xs, ws) = gauss_legendre_on(160, -10.0, 10.0);
        let mut m4 = 0.0;
        for (x, wx) in xs.iter().zip(&ws) {
            for (y, wy) in xs.iter().zip(&ws) {
                m4 += wx * wy * m.joint(&[*x], &[*y]) * x.powi(4);
            }
        }
        assert_relative_eq!(m4, 3.0 * g.cov[(0, 0)].powi(2), max_relative = 1e-6);
    }

    #[test]
    fn marginal_is_gibbs_of_effective_potential() {
        // log rho2_star + beta2 F is constant across the grid
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        let t = m.tables().unwrap();
        let mut consts = vec![];
        for k in 0..t.x2.len() {
            if t.rho2_star[k] > 1e-12 {
                consts.push(t.rho2_star[k].ln() + 2.0 * t.effective_potential[k]);
            }
        }
        let first = consts[0];
        for c in &consts {
            assert_abs_diff_eq!(*c, first, epsilon = 1e-8);
        }
    }

    #[test]
    fn gaussian_stationary_special_cases() {
        let q = Quadratic::new(2.0, 1.0, 0.0).unwrap();
        let g = gaussian_stationary(&q, 1.0, 2.0);
        assert_relative_eq!(g.cov[(0, 0)], 0.5);
        assert_relative_eq!(g.cov[(1, 1)], 0.5);
        assert_eq!(g.cov[(0, 1)], 0.0);
        // equal temperatures: (beta A)^-1
        let q = Quadratic::new(2.0, 1.0, 0.5).unwrap();
        let beta = 1.3;
        let g = gaussian_stationary(&q, beta, beta);
        let inv = q.matrix().try_inverse().unwrap() / beta;
        assert!((g.cov - inv).abs().max() < 1e-14);
    }

    #[test]
    fn free_energy_gap_vanishes_at_reference() {
        let q = Quadratic::new(2.0, 1.0, 0.5).unwrap();
        let reference = gaussian_stationary(&q, 1.0, 2.0);
        let (gap, decomposition) =
            free_energy_gap_gaussian(&reference, &reference, &q, 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(gap, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(decomposition, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn free_energy_gap_equals_weighted_kl() {
        use crate::ou_exact::OuSystem;
        let q = Quadratic::new(2.0, 1.0, 0.5).unwrap();
        let sys = OuSystem::build(q, 1.0, 2.0, 100.0).unwrap();
        let reference = sys.reference();
        for t in [0.3, 1.0, 10.0] {
            let pi = sys.law_at(t, 1.0, 1.0);
            let (gap, decomposition) =
                free_energy_gap_gaussian(&pi, &reference, &q, 1.0, 2.0).unwrap();
            assert_relative_eq!(gap, decomposition, max_relative = 1e-8);
            let kl = sys.kl_at(t, 1.0, 1.0).unwrap();
            assert_relative_eq!(
                decomposition,
                kl.d1 / 1.0 + kl.d2 / 2.0,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn free_energy_grid_matches_gaussian_path() {
        let q = Quadratic::new(2.0, 1.0, 0.5).unwrap();
        let g = gaussian_stationary(&q, 1.0, 2.0);
        let (xs, ws) = gauss_legendre_on(128, -8.0, 8.0);
        let mut density = vec![0.0; xs.len() * xs.len()];
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in xs.iter().enumerate() {
                density[i * xs.len() + j] = g.density(*x, *y);
            }
        }
        let energy = |x: f64, y: f64| 0.5 * (2.0 * x * x + x * y + y * y);
        let grid = free_energy_grid(&density, &xs, &ws, &xs, &ws, &energy, 1.0, 2.0);
        let closed = free_energy_gaussian(&g, &q, 1.0, 2.0);
        assert_relative_eq!(grid.value, closed, max_relative = 1e-6);
        assert_eq!(grid.skipped_cells, 0);
    }

    #[test]
    fn rejects_bad_specs() {
        let p = p0();
        assert!(StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(8)).is_err());
        let energy = |_: &[f64], _: &[f64]| 0.0;
        assert!(StationaryMeasure::new(energy, 3, 1, 1.0, 1.0, spec(32), 1.0, 1.0).is_err());
        assert!(StationaryMeasure::new(energy, 1, 1, 1.0, 1.0, spec(32), -1.0, 1.0).is_err());
    }

    #[test]
    fn evaluators_shareable_across_threads() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(32)).unwrap();
        let reference = m.joint(&[0.3], &[0.4]);
        std::thread::scope(|scope| {
            for _ in 0..4 {
                scope.spawn(|| assert_eq!(m.joint(&[0.3], &[0.4]), reference));
            }
        });
    }

    #[test]
    fn tables_have_positive_z1_and_small_tail() {
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(64)).unwrap();
        let t = m.tables().unwrap();
        assert!(t.z1.iter().all(|z| *z > 0.0));
        assert!(t.tail_estimate < 1e-8, "tail {}", t.tail_estimate);
    }

    #[test]
    fn trapezoid_rule_agrees_with_gauss() {
        let p = p0();
        let tr = QuadratureSpec {
            nodes: 400,
            half_width: HalfWidth::Auto,
            rule: QuadRule::Trapezoid,
        };
        let m1 = StationaryMeasure::for_potential(&p, 1.0, 2.0, tr).unwrap();
        let m2 = StationaryMeasure::for_potential(&p, 1.0, 2.0, spec(96)).unwrap();
        assert_relative_eq!(m1.z1(&[0.5]), m2.z1(&[0.5]), max_relative = 1e-8);
    }
}
