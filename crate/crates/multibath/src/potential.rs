//! Potential families for the two-block Langevin dynamics: a positive
//! definite quadratic in 1+1 dimensions, a soft-spin glass with slow
//! external fields, and a rank-one matrix estimation potential.
//!
//! Each family exposes energy, block gradients and Hessian blocks, a
//! convex+bounded decomposition used by the log-Sobolev criteria, and
//! analytic confinement/growth constants consumed by the bounds module.

use nalgebra::{DMatrix, DVector, Matrix2};

use thiserror::Error;

use crate::linalg::sym2_eigenvalues;
use crate::rng::{counter_normal, counter_u64};

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("dimension mismatch: expected ({expect1}, {expect2}), got ({got1}, {got2})")]
    DimensionMismatch {
        expect1: usize,
        expect2: usize,
        got1: usize,
        got2: usize,
    },
    #[error("quadratic potential must be positive definite: a={a}, det={det}")]
    NotPositiveDefinite { a: f64, det: f64 },
    #[error("invalid parameter {name}: {value} (must be positive)")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("convexity certification failed: H11 not positive definite at witness point (lambda_min = {lambda_min})")]
    CertificationFailure { lambda_min: f64 },
}

/// Symmetric positive definite 2x2 quadratic form; energy is x' A x / 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, PotentialError> {
        let det = a * b - c * c;
        if !(a > 0.0 && det > 0.0) {
            return Err(PotentialError::NotPositiveDefinite { a, det });
        }
        Ok(Self { a, b, c })
    }

    pub fn det(&self) -> f64 {
        self.a * self.b - self.c * self.c
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a, self.c, self.c, self.b)
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        sym2_eigenvalues(&self.matrix())
    }
}

/// Soft spins (fast block) coupled to slow external fields through a
/// quenched Gaussian coupling matrix.
#[derive(Debug, Clone)]
pub struct SoftSpinGlass {
    pub n: usize,
    /// Two-body interaction strength.
    pub two_body: f64,
    /// One-body spin-field coupling strength.
    pub one_body: f64,
    /// Quartic confinement weight pushing spins toward +-1.
    pub quartic: f64,
    /// Field confinement weight.
    pub field: f64,
    /// Concentration slack for the disorder spectral bound.
    pub tau: f64,
    pub coupling: DMatrix<f64>,
    /// (J + J')/2, cached for gradients and spectral checks.
    sym_coupling: DMatrix<f64>,
}

impl SoftSpinGlass {
    pub fn new(
        n: usize,
        two_body: f64,
        one_body: f64,
        quartic: f64,
        field: f64,
        tau: f64,
        coupling: DMatrix<f64>,
    ) -> Result<Self, PotentialError> {
        for (name, value) in [
            ("two_body", two_body),
            ("one_body", one_body),
            ("quartic", quartic),
            ("field", field),
        ] {
            if !(value > 0.0) {
                return Err(PotentialError::NonPositiveParameter { name, value });
            }
        }
        let sym_coupling = (&coupling + coupling.transpose()) * 0.5;
        Ok(Self {
            n,
            two_body,
            one_body,
            quartic,
            field,
            tau,
            coupling,
            sym_coupling,
        })
    }

    /// lambda_max((J+J')/2) / sqrt(N), the statistic entering the
    /// disorder concentration event.
    pub fn sym_spectral_stat(&self) -> f64 {
        let eig = self.sym_coupling.clone().symmetric_eigen();
        eig.eigenvalues.max() / (self.n as f64).sqrt()
    }

    /// Spectral radius of (J+J')/2 scaled by sqrt(Delta/N); a two-sided
    /// bound on the interaction quadratic form.
    pub fn interaction_norm(&self) -> f64 {
        let eig = self.sym_coupling.clone().symmetric_eigen();
        let rho = self.eigen_abs_max(&eig.eigenvalues);
        self.two_body.sqrt() * rho / (self.n as f64).sqrt()
    }

    fn eigen_abs_max(&self, eigs: &DVector<f64>) -> f64 {
        eigs.iter().fold(0.0f64, |m, e| m.max(e.abs()))
    }
}

/// Rank-one matrix estimation: quadratic data misfit plus quartic
/// confinement on both latent blocks.
#[derive(Debug, Clone)]
pub struct RankOne {
    pub n1: usize,
    pub n2: usize,
    /// Signal-to-noise ratio of the observation channel.
    pub snr: f64,
    pub u_mass: f64,
    pub v_mass: f64,
    pub u_quartic: f64,
    pub v_quartic: f64,
    pub data: DMatrix<f64>,
    /// Latent vectors, retained for diagnostics only.
    pub u_star: DVector<f64>,
    pub v_star: DVector<f64>,
}

impl RankOne {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n1: usize,
        n2: usize,
        snr: f64,
        u_mass: f64,
        v_mass: f64,
        u_quartic: f64,
        v_quartic: f64,
        data: DMatrix<f64>,
        u_star: DVector<f64>,
        v_star: DVector<f64>,
    ) -> Result<Self, PotentialError> {
        for (name, value) in [
            ("u_mass", u_mass),
            ("v_mass", v_mass),
            ("u_quartic", u_quartic),
            ("v_quartic", v_quartic),
        ] {
            if !(value > 0.0) {
                return Err(PotentialError::NonPositiveParameter { name, value });
            }
        }
        if !(snr >= 0.0) {
            return Err(PotentialError::NonPositiveParameter {
                name: "snr",
                value: snr,
            });
        }
        Ok(Self {
            n1,
            n2,
            snr,
            u_mass,
            v_mass,
            u_quartic,
            v_quartic,
            data,
            u_star,
            v_star,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.n1 + self.n2
    }

    fn coupling_scale(&self) -> f64 {
        (self.snr / self.total_dim() as f64).sqrt()
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    Quadratic(Quadratic),
    SoftSpinGlass(SoftSpinGlass),
    RankOne(RankOne),
}

impl Potential {
    pub fn d1(&self) -> usize {
        match self {
            Potential::Quadratic(_) => 1,
            Potential::SoftSpinGlass(p) => p.n,
            Potential::RankOne(p) => p.n1,
        }
    }

    pub fn d2(&self) -> usize {
        match self {
            Potential::Quadratic(_) => 1,
            Potential::SoftSpinGlass(p) => p.n,
            Potential::RankOne(p) => p.n2,
        }
    }

    fn check_dims(&self, x1: &[f64], x2: &[f64]) -> Result<(), PotentialError> {
        if x1.len() != self.d1() || x2.len() != self.d2() {
            return Err(PotentialError::DimensionMismatch {
                expect1: self.d1(),
                expect2: self.d2(),
                got1: x1.len(),
                got2: x2.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x1: &[f64], x2: &[f64]) -> Result<f64, PotentialError> {
        self.check_dims(x1, x2)?;
        Ok(self.eval_unchecked(x1, x2))
    }

    pub(crate) fn eval_unchecked(&self, x1: &[f64], x2: &[f64]) -> f64 {
        match self {
            Potential::Quadratic(q) => {
                let (x, y) = (x1[0], x2[0]);
                0.5 * (q.a * x * x + 2.0 * q.c * x * y + q.b * y * y)
            }
            Potential::SoftSpinGlass(p) => {
                let mut inter = 0.0;
                for i in 0..p.n {
                    for j in 0..p.n {
                        inter += p.coupling[(i, j)] * x1[i] * x1[j];
                    }
                }
                let mut e = -0.5 * p.two_body.sqrt() / (p.n as f64).sqrt() * inter;
                let sd0 = p.one_body.sqrt();
                for i in 0..p.n {
                    let s = x1[i];
                    let t = s * s - 1.0;
                    e += -sd0 * x2[i] * s + 0.5 * p.quartic * t * t + 0.5 * p.field * x2[i] * x2[i];
                }
                e
            }
            Potential::RankOne(p) => {
                let k = p.coupling_scale();
                let mut e = 0.0;
                for i in 0..p.n1 {
                    for j in 0..p.n2 {
                        let r = p.data[(i, j)] - k * x1[i] * x2[j];
                        e += 0.5 * r * r;
                    }
                }
                for i in 0..p.n1 {
                    let u = x1[i];
                    e += 0.5 * p.u_mass * u * u + p.u_quartic / 12.0 * u.powi(4);
                }
                for j in 0..p.n2 {
                    let v = x2[j];
                    e += 0.5 * p.v_mass * v * v + p.v_quartic / 12.0 * v.powi(4);
                }
                e
            }
        }
    }

    pub fn grad(&self, x1: &[f64], x2: &[f64]) -> Result<(Vec<f64>, Vec<f64>), PotentialError> {
        self.check_dims(x1, x2)?;
        let mut g1 = vec![0.0; self.d1()];
        let mut g2 = vec![0.0; self.d2()];
        self.grad_into(x1, x2, &mut g1, &mut g2);
        Ok((g1, g2))
    }

    pub(crate) fn grad_into(&self, x1: &[f64], x2: &[f64], g1: &mut [f64], g2: &mut [f64]) {
        match self {
            Potential::Quadratic(q) => {
                g1[0] = q.a * x1[0] + q.c * x2[0];
                g2[0] = q.c * x1[0] + q.b * x2[0];
            }
            Potential::SoftSpinGlass(p) => {
                let scale = p.two_body.sqrt() / (p.n as f64).sqrt();
                let sd0 = p.one_body.sqrt();
                for i in 0..p.n {
                    let mut js = 0.0;
                    for j in 0..p.n {
                        js += p.sym_coupling[(i, j)] * x1[j];
                    }
                    let s = x1[i];
                    g1[i] = -scale * js - sd0 * x2[i] + 2.0 * p.quartic * s * (s * s - 1.0);
                    g2[i] = -sd0 * s + p.field * x2[i];
                }
            }
            Potential::RankOne(p) => {
                let k = p.coupling_scale();
                let v_sq: f64 = x2.iter().map(|v| v * v).sum();
                let u_sq: f64 = x1.iter().map(|u| u * u).sum();
                for i in 0..p.n1 {
                    let mut jv = 0.0;
                    for j in 0..p.n2 {
                        jv += p.data[(i, j)] * x2[j];
                    }
                    let u = x1[i];
                    g1[i] =
                        -k * jv + k * k * u * v_sq + p.u_mass * u + p.u_quartic / 3.0 * u * u * u;
                }
                for j in 0..p.n2 {
                    let mut ju = 0.0;
                    for i in 0..p.n1 {
                        ju += p.data[(i, j)] * x1[i];
                    }
                    let v = x2[j];
                    g2[j] =
                        -k * ju + k * k * v * u_sq + p.v_mass * v + p.v_quartic / 3.0 * v * v * v;
                }
            }
        }
    }

    /// Hessian blocks (H11, H12, H22) of the full potential.
    pub fn hessian_blocks(
        &self,
        x1: &[f64],
        x2: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), PotentialError> {
        self.check_dims(x1, x2)?;
        Ok(self.hessian_blocks_of(x1, x2, false))
    }

    /// Hessian blocks of the strongly convex part Vc.
    pub fn hessian_blocks_convex(
        &self,
        x1: &[f64],
        x2: &[f64],
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), PotentialError> {
        self.check_dims(x1, x2)?;
        Ok(self.hessian_blocks_of(x1, x2, true))
    }

    fn hessian_blocks_of(
        &self,
        x1: &[f64],
        x2: &[f64],
        convex: bool,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        match self {
            Potential::Quadratic(q) => (
                DMatrix::from_element(1, 1, q.a),
                DMatrix::from_element(1, 1, q.c),
                DMatrix::from_element(1, 1, q.b),
            ),
            Potential::SoftSpinGlass(p) => {
                let scale = p.two_body.sqrt() / (p.n as f64).sqrt();
                let mut h11 = &p.sym_coupling * (-scale);
                for i in 0..p.n {
                    let s = x1[i];
                    h11[(i, i)] += if convex {
                        0.5 * p.quartic * smoothing_eta(s).2
                    } else {
                        2.0 * p.quartic * (3.0 * s * s - 1.0)
                    };
                }
                let h12 = DMatrix::from_diagonal_element(p.n, p.n, -p.one_body.sqrt());
                let h22 = DMatrix::from_diagonal_element(p.n, p.n, p.field);
                (h11, h12, h22)
            }
            Potential::RankOne(p) => {
                let k = p.coupling_scale();
                let v_sq: f64 = x2.iter().map(|v| v * v).sum();
                let u_sq: f64 = x1.iter().map(|u| u * u).sum();
                let mut h11 = DMatrix::zeros(p.n1, p.n1);
                for i in 0..p.n1 {
                    h11[(i, i)] = k * k * v_sq + p.u_mass + p.u_quartic * x1[i] * x1[i];
                }
                let mut h22 = DMatrix::zeros(p.n2, p.n2);
                for j in 0..p.n2 {
                    h22[(j, j)] = k * k * u_sq + p.v_mass + p.v_quartic * x2[j] * x2[j];
                }
                let mut h12 = DMatrix::zeros(p.n1, p.n2);
                for i in 0..p.n1 {
                    for j in 0..p.n2 {
                        h12[(i, j)] = -k * p.data[(i, j)] + 2.0 * k * k * x1[i] * x2[j];
                    }
                }
                (h11, h12, h22)
            }
        }
    }

    /// Gradient of the convex part Vc (differs from `grad` only for the
    /// spin glass, where the quartic confinement is replaced by its
    /// smoothed convex version).
    pub fn grad_convex_into(&self, x1: &[f64], x2: &[f64], g1: &mut [f64], g2: &mut [f64]) {
        match self {
            Potential::SoftSpinGlass(p) => {
                self.grad_into(x1, x2, g1, g2);
                for i in 0..p.n {
                    let s = x1[i];
                    g1[i] += 0.5 * p.quartic * (smoothing_eta(s).1 - 4.0 * s * (s * s - 1.0));
                }
            }
            _ => self.grad_into(x1, x2, g1, g2),
        }
    }

    /// Oscillation sup(Vb) - inf(Vb) of the bounded part, as used by the
    /// perturbation criterion. The quadratic and rank-one potentials have
    /// Vb = 0; the spin glass carries the quartic-vs-smoothed remainder,
    /// accounted with the size-extensive bound (quartic/2) * N.
    pub fn osc_bounded_part(&self) -> f64 {
        match self {
            Potential::Quadratic(_) | Potential::RankOne(_) => 0.0,
            Potential::SoftSpinGlass(p) => 0.5 * p.quartic * p.n as f64,
        }
    }

    /// Laplacian with respect to the slow block.
    pub fn slow_laplacian(&self, x1: &[f64], x2: &[f64]) -> Result<f64, PotentialError> {
        self.check_dims(x1, x2)?;
        Ok(match self {
            Potential::Quadratic(q) => q.b,
            Potential::SoftSpinGlass(p) => p.field * p.n as f64,
            Potential::RankOne(p) => {
                let k = p.coupling_scale();
                let u_sq: f64 = x1.iter().map(|u| u * u).sum();
                let v_sq: f64 = x2.iter().map(|v| v * v).sum();
                p.n2 as f64 * (k * k * u_sq + p.v_mass) + p.v_quartic * v_sq
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Degree-5 smoothing of the double-well confinement
// ---------------------------------------------------------------------------

/// Largest intersection of x^2 and (x^2-1)^2, the golden ratio.
pub const ETA_X0: f64 = 1.618_033_988_749_895;
/// Half-width of the blending interval.
pub const ETA_DELTA: f64 = 0.1;

/// Two-point quintic Hermite basis on [0, 1] (value, slope, curvature at
/// each endpoint), as monomial coefficient rows.
const HERMITE5: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, -10.0, 15.0, -6.0], // value at 0
    [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],   // slope at 0
    [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],   // curvature at 0
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],  // value at 1
    [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],   // slope at 1
    [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],    // curvature at 1
];

fn hermite5_eval(w: f64) -> ([f64; 6], [f64; 6], [f64; 6]) {
    let mut val = [0.0; 6];
    let mut d1 = [0.0; 6];
    let mut d2 = [0.0; 6];
    for (i, c) in HERMITE5.iter().enumerate() {
        for k in (0..6).rev() {
            val[i] = val[i] * w + c[k];
        }
        for k in (1..6).rev() {
            d1[i] = d1[i] * w + k as f64 * c[k];
        }
        for k in (2..6).rev() {
            d2[i] = d2[i] * w + (k * (k - 1)) as f64 * c[k];
        }
    }
    (val, d1, d2)
}

/// C^2 convex interpolation between x^2 (inner) and (x^2-1)^2 (outer):
/// returns (value, first derivative, second derivative).
pub fn smoothing_eta(x: f64) -> (f64, f64, f64) {
    let ax = x.abs();
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    if ax < ETA_X0 - ETA_DELTA {
        (x * x, 2.0 * x, 2.0)
    } else if ax > ETA_X0 + ETA_DELTA {
        let t = x * x - 1.0;
        (t * t, 4.0 * x * t, 12.0 * x * x - 4.0)
    } else {
        let xl = ETA_X0 - ETA_DELTA;
        let xr = ETA_X0 + ETA_DELTA;
        let len = 2.0 * ETA_DELTA;
        let w = (ax - xl) / len;
        let (val, d1b, d2b) = hermite5_eval(w);
        let tr = xr * xr - 1.0;
        // Endpoint data: x^2 on the left, (x^2-1)^2 on the right.
        let data = [
            xl * xl,
            2.0 * xl * len,
            2.0 * len * len,
            tr * tr,
            4.0 * xr * tr * len,
            (12.0 * xr * xr - 4.0) * len * len,
        ];
        let mut v = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for i in 0..6 {
            v += data[i] * val[i];
            d1 += data[i] * d1b[i];
            d2 += data[i] * d2b[i];
        }
        (v, sign * d1 / len, d2 / (len * len))
    }
}

// ---------------------------------------------------------------------------
// Disorder samplers
// ---------------------------------------------------------------------------

/// N x N matrix of i.i.d. standard normals keyed by (seed, i, j).
pub fn sample_spin_glass_disorder(seed: u64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| counter_normal(seed, i as u64, j as u64, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    Rademacher,
    StandardGaussian,
}

impl Prior {
    pub fn second_moment(&self) -> f64 {
        1.0
    }
}

/// Latent vectors drawn from the prior and the noisy rank-one observation
/// J = sqrt(snr/N) u* v*' + Z with standard Gaussian noise Z.
pub fn sample_rank_one_data(
    seed: u64,
    n1: usize,
    n2: usize,
    snr: f64,
    prior: Prior,
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let draw_prior = |stream: u64, i: usize| -> f64 {
        match prior {
            Prior::Rademacher => {
                if counter_u64(seed, stream, i as u64, 7) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Prior::StandardGaussian => counter_normal(seed, stream, i as u64, 6),
        }
    };
    let u_star = DVector::from_fn(n1, |i, _| draw_prior(1, i));
    let v_star = DVector::from_fn(n2, |j, _| draw_prior(2, j));
    let k = (snr / (n1 + n2) as f64).sqrt();
    let data = DMatrix::from_fn(n1, n2, |i, j| {
        k * u_star[i] * v_star[j] + counter_normal(seed, 3 + i as u64, j as u64, 0)
    });
    (u_star, v_star, data)
}

// ---------------------------------------------------------------------------
// Sampled confinement report (advisory)
// ---------------------------------------------------------------------------

/// Uniform sampling region, a centered box per block.
#[derive(Debug, Clone, Copy)]
pub struct SampleBox {
    pub half_width1: f64,
    pub half_width2: f64,
}

#[derive(Debug, Clone)]
pub struct FitConstants {
    pub a1: f64,
    pub a2: f64,
    pub a0: f64,
    /// Slow-block exponent (2 except for the drift condition on x1).
    pub p: f64,
    pub violations: usize,
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
}

/// Sampled estimates of the confinement constants. Advisory only: the
/// constants hold on the sampled points, which is not a proof.
#[derive(Debug, Clone)]
pub struct ConfinementReport {
    pub growth: FitConstants,
    pub drift: FitConstants,
    pub fast_drift: FitConstants,
    pub n_samples: usize,
    pub advisory: &'static str,
}

fn sample_point(p: &Potential, bx: &SampleBox, seed: u64, idx: u64) -> (Vec<f64>, Vec<f64>) {
    let d1 = p.d1();
    let d2 = p.d2();
    let x1: Vec<f64> = (0..d1)
        .map(|k| (2.0 * crate::rng::counter_uniform(seed, idx, k as u64, 0) - 1.0) * bx.half_width1)
        .collect();
    let x2: Vec<f64> = (0..d2)
        .map(|k| (2.0 * crate::rng::counter_uniform(seed, idx, k as u64, 1) - 1.0) * bx.half_width2)
        .collect();
    (x1, x2)
}

/// Fits (a1, a2, a0) with g >= a1|x1|^2 + a2|x2|^2 - a0 over samples,
/// comparing a joint isotropic fit with a block-anisotropic two-pass fit.
fn fit_two_block(samples: &[(Vec<f64>, Vec<f64>, f64)]) -> FitConstants {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let g_min = samples.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let a0_base = (-g_min).max(0.0);

    let joint = samples
        .iter()
        .filter(|(x1, x2, _)| sq(x1) + sq(x2) > 1e-12)
        .map(|(x1, x2, g)| (g + a0_base) / (sq(x1) + sq(x2)))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);

    // Two-pass: slow-dominated samples pin a2, then a1 from the rest.
    let safety = 0.98;
    let a2 = samples
        .iter()
        .filter(|(x1, x2, _)| sq(x2) >= 4.0 * sq(x1) && sq(x2) > 1e-12)
        .map(|(_, x2, g)| (g + a0_base) / sq(x2))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        * safety;
    let a1 = samples
        .iter()
        .filter(|(x1, _, _)| sq(x1) > 1e-12)
        .map(|(x1, x2, g)| (g + a0_base - a2 * sq(x2)) / sq(x1))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        * safety;

    let (a1, a2) = if a1.is_finite() && a2.is_finite() && a1.min(a2) >= 0.98 * joint {
        (a1, a2)
    } else {
        (joint, joint)
    };
    // Minimal a0 making the bound hold on every sample.
    let a0 = samples
        .iter()
        .map(|(x1, x2, g)| a1 * sq(x1) + a2 * sq(x2) - g)
        .fold(0.0f64, f64::max);
    let (violations, witness) = if a1 <= 0.0 && a2 <= 0.0 {
        let w = samples
            .iter()
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(x1, x2, _)| (x1.clone(), x2.clone()));
        (1, w)
    } else {
        (0, None)
    };
    FitConstants {
        a1,
        a2,
        a0,
        p: 2.0,
        violations,
        witness,
    }
}

/// Samples the region and fits the growth (on V), drift (on x . grad V)
/// and fast-drift (on x1 . grad_1 V) constants.
pub fn check_confinement(
    p: &Potential,
    bx: SampleBox,
    n_samples: usize,
    seed: u64,
) -> ConfinementReport {
    let mut growth_data = Vec::with_capacity(n_samples);
    let mut drift_data = Vec::with_capacity(n_samples);
    let mut fast_data = Vec::with_capacity(n_samples);
    let mut g1 = vec![0.0; p.d1()];
    let mut g2 = vec![0.0; p.d2()];
    for idx in 0..n_samples {
        let (x1, x2) = sample_point(p, &bx, seed, idx as u64);
        let v = p.eval_unchecked(&x1, &x2);
        p.grad_into(&x1, &x2, &mut g1, &mut g2);
        let drift: f64 = x1.iter().zip(&g1).map(|(x, g)| x * g).sum::<f64>()
            + x2.iter().zip(&g2).map(|(x, g)| x * g).sum::<f64>();
        let fast: f64 = x1.iter().zip(&g1).map(|(x, g)| x * g).sum();
        growth_data.push((x1.clone(), x2.clone(), v));
        drift_data.push((x1.clone(), x2.clone(), drift));
        fast_data.push((x1, x2, fast));
    }
    let growth = fit_two_block(&growth_data);
    let drift = fit_two_block(&drift_data);
    let fast_drift = fit_fast_drift(&fast_data, 2.0);
    ConfinementReport {
        growth,
        drift,
        fast_drift,
        n_samples,
        advisory: "sampled estimates only; not a certificate",
    }
}

/// Fits x1 . grad_1 V >= a1|x1|^2 - a2|x2|^p - a0 with fixed exponent p.
fn fit_fast_drift(samples: &[(Vec<f64>, Vec<f64>, f64)], p_exp: f64) -> FitConstants {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let pnorm = |v: &[f64]| sq(v).powf(p_exp / 2.0);
    let med_sq1 = {
        let mut mags: Vec<f64> = samples.iter().map(|(x1, _, _)| sq(x1)).collect();
        mags.sort_by(f64::total_cmp);
        mags[mags.len() / 2]
    };
    let a1 = samples
        .iter()
        .filter(|(x1, x2, _)| pnorm(x2) <= 0.25 * sq(x1) && sq(x1) >= med_sq1)
        .map(|(x1, _, h)| h / sq(x1))
        .fold(f64::INFINITY, f64::min);
    let (a1, violations, witness) = if a1.is_finite() && a1 > 0.0 {
        (0.95 * a1, 0, None)
    } else {
        let w = samples
            .iter()
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(x1, x2, _)| (x1.clone(), x2.clone()));
        (0.0, 1, w)
    };
    let a2 = samples
        .iter()
        .filter(|(_, x2, _)| pnorm(x2) > 1e-9)
        .map(|(x1, x2, h)| (a1 * sq(x1) - h) / pnorm(x2))
        .fold(0.0f64, f64::max);
    let a0 = samples
        .iter()
        .map(|(x1, x2, h)| a1 * sq(x1) - a2 * pnorm(x2) - h)
        .fold(0.0f64, f64::max);
    FitConstants {
        a1,
        a2,
        a0,
        p: p_exp,
        violations,
        witness,
    }
}

// ---------------------------------------------------------------------------
// Convex + bounded split certification
// ---------------------------------------------------------------------------

/// Certified constants of the convex+bounded decomposition V = Vc + Vb.
#[derive(Debug, Clone)]
pub struct ConvexBoundedSplit {
    /// sup(Vb) - inf(Vb).
    pub osc_vb: f64,
    /// Strong convexity of the full Hessian of Vc over the sampled region.
    pub alpha: f64,
    /// Fast-block Hessian lower bound.
    pub alpha1: f64,
    /// Schur-complement lower bound for the slow block.
    pub alpha2: f64,
    /// Point attaining the minimum full-Hessian eigenvalue.
    pub witness: (Vec<f64>, Vec<f64>),
    /// For quenched-disorder potentials: the concentration event backing
    /// the a-priori bound, with its observed statistic and threshold.
    pub disorder_event: Option<DisorderEvent>,
}

#[derive(Debug, Clone, Copy)]
pub struct DisorderEvent {
    pub statistic: f64,
    pub threshold: f64,
    pub ok: bool,
}

/// Sampled minimization of the Hessian eigenvalue bounds of Vc over a box,
/// with shrinking restarts around the running minimizer.
pub fn certify_split(
    p: &Potential,
    bx: SampleBox,
    n_samples: usize,
    seed: u64,
) -> Result<ConvexBoundedSplit, PotentialError> {
    let mut best_alpha = f64::INFINITY;
    let mut best_alpha1 = f64::INFINITY;
    let mut best_alpha2 = f64::INFINITY;
    let mut witness = (vec![0.0; p.d1()], vec![0.0; p.d2()]);

    let evaluate = |x1: &[f64], x2: &[f64]| -> Result<(f64, f64, f64), PotentialError> {
        let (h11, h12, h22) = p.hessian_blocks_of(x1, x2, true);
        let e11 = h11.clone().symmetric_eigen().eigenvalues;
        let a1 = e11.min();
        if a1 <= 0.0 {
            return Err(PotentialError::CertificationFailure { lambda_min: a1 });
        }
        let schur = &h22 - h12.transpose() * h11.clone().lu().solve(&h12).expect("H11 invertible");
        let a2 = schur.symmetric_eigen().eigenvalues.min();
        let d1 = h11.nrows();
        let d = d1 + h22.nrows();
        let mut full = DMatrix::zeros(d, d);
        full.view_mut((0, 0), (d1, d1)).copy_from(&h11);
        full.view_mut((0, d1), (d1, h22.nrows())).copy_from(&h12);
        full.view_mut((d1, 0), (h22.nrows(), d1))
            .copy_from(&h12.transpose());
        full.view_mut((d1, d1), (h22.nrows(), h22.nrows()))
            .copy_from(&h22);
        let a = full.symmetric_eigen().eigenvalues.min();
        Ok((a, a1, a2))
    };

    let n_global = n_samples.max(16);
    for idx in 0..n_global {
        let (x1, x2) = sample_point(p, &bx, seed ^ 0xC0FFEE, idx as u64);
        let (a, a1, a2) = evaluate(&x1, &x2)?;
        if a < best_alpha {
            best_alpha = a;
            witness = (x1.clone(), x2.clone());
        }
        best_alpha1 = best_alpha1.min(a1);
        best_alpha2 = best_alpha2.min(a2);
    }
    // Shrinking local restarts around the current worst point.
    let mut width = (bx.half_width1.max(bx.half_width2)) * 0.5;
    for round in 0..10u64 {
        let center = witness.clone();
        for idx in 0..(n_global / 10).max(8) {
            let local = SampleBox {
                half_width1: width,
                half_width2: width,
            };
            let (dx1, dx2) = sample_point(p, &local, seed ^ (round + 1), idx as u64);
            let x1: Vec<f64> = center.0.iter().zip(&dx1).map(|(c, d)| c + d).collect();
            let x2: Vec<f64> = center.1.iter().zip(&dx2).map(|(c, d)| c + d).collect();
            let (a, a1, a2) = evaluate(&x1, &x2)?;
            if a < best_alpha {
                best_alpha = a;
                witness = (x1, x2);
            }
            best_alpha1 = best_alpha1.min(a1);
            best_alpha2 = best_alpha2.min(a2);
        }
        width *= 0.6;
    }

    if best_alpha <= 0.0 {
        return Err(PotentialError::CertificationFailure {
            lambda_min: best_alpha,
        });
    }
    let disorder_event = match p {
        Potential::SoftSpinGlass(sg) => {
            let stat = sg.sym_spectral_stat();
            let threshold = std::f64::consts::SQRT_2 + sg.tau;
            Some(DisorderEvent {
                statistic: stat,
                threshold,
                ok: stat <= threshold,
            })
        }
        _ => None,
    };
    // The full-Hessian bound can exceed a block bound only through rounding.
    let alpha = best_alpha.min(best_alpha1).min(best_alpha2);
    Ok(ConvexBoundedSplit {
        osc_vb: p.osc_bounded_part(),
        alpha,
        alpha1: best_alpha1,
        alpha2: best_alpha2,
        witness,
        disorder_event,
    })
}

// ---------------------------------------------------------------------------
// Analytic growth/confinement metadata for the bounds module
// ---------------------------------------------------------------------------

/// Polynomial domination g <= c0 + c1 |x1|^r1 + c2 |x2|^r2.
#[derive(Debug, Clone, Copy)]
pub struct PolyBound {
    pub c0: f64,
    pub c1: f64,
    pub r1: f64,
    pub c2: f64,
    pub r2: f64,
}

/// Analytic constants: confinement from below, growth from above, drift
/// conditions, and polynomial bounds on slow-block derivatives. Exact for
/// the quadratic family; valid (loose) degree bounds for the others.
#[derive(Debug, Clone)]
pub struct ConfinementData {
    /// V >= a1|x1|^2 + a2|x2|^2 - a0.
    pub lower: (f64, f64, f64),
    /// V <= g1|x1|^m1 + g2|x2|^m2 + g0, as (g1, m1, g2, m2, g0).
    pub upper: (f64, f64, f64, f64, f64),
    /// x . grad V >= a |x|^2 - a0, as (a, a0).
    pub drift: (f64, f64),
    /// x1 . grad_1 V >= a1|x1|^2 - a2|x2|^p - a0, as (a1, a2, p, a0).
    pub fast_drift: (f64, f64, f64, f64),
    /// |grad_2 V|^2.
    pub grad2_sq: PolyBound,
    /// |grad_2 V|^4.
    pub grad2_fourth: PolyBound,
    /// |laplacian_2 V|.
    pub slow_lap: PolyBound,
}

impl Potential {
    pub fn confinement_data(&self) -> ConfinementData {
        match self {
            Potential::Quadratic(q) => {
                let (lo, hi) = q.eigenvalues();
                let (a, b, c) = (q.a, q.b, q.c);
                ConfinementData {
                    lower: (lo / 2.0, lo / 2.0, 0.0),
                    upper: (hi / 2.0, 2.0, hi / 2.0, 2.0, 0.0),
                    drift: (lo, 0.0),
                    fast_drift: (a / 2.0, c * c / (2.0 * a), 2.0, 0.0),
                    grad2_sq: PolyBound {
                        c0: 0.0,
                        c1: 2.0 * c * c,
                        r1: 2.0,
                        c2: 2.0 * b * b,
                        r2: 2.0,
                    },
                    grad2_fourth: PolyBound {
                        c0: 0.0,
                        c1: 8.0 * c.powi(4),
                        r1: 4.0,
                        c2: 8.0 * b.powi(4),
                        r2: 4.0,
                    },
                    slow_lap: PolyBound {
                        c0: b,
                        c1: 0.0,
                        r1: 0.0,
                        c2: 0.0,
                        r2: 0.0,
                    },
                }
            }
            Potential::SoftSpinGlass(p) => {
                let n = p.n as f64;
                let k = p.interaction_norm();
                let d0 = p.one_body;
                let sd0 = d0.sqrt();
                let aq = p.quartic;
                let bf = p.field;
                // Quartic term absorbs the indefinite quadratic pieces by AM-GM.
                let borrow = |coef: f64, mu: f64| mu * mu / (4.0 * coef);
                let mu_lower = k / 2.0 + d0 / bf + 1.0;
                let mu_drift = k + 2.0 * aq + 2.0 * d0 / bf + bf.min(2.0) / 2.0;
                let mu_fast = k + d0 / bf + 2.0 * aq + aq.min(1.0);
                ConfinementData {
                    lower: (
                        1.0,
                        bf / 4.0,
                        0.5 * aq * n + n * borrow(aq / (4.0 * n), mu_lower) / n,
                    ),
                    upper: (
                        k / 2.0 + sd0 / 2.0 + aq,
                        4.0,
                        (sd0 + bf) / 2.0,
                        2.0,
                        aq * n + k / 2.0 + sd0 / 2.0,
                    ),
                    drift: (bf.min(2.0) / 2.0, n * mu_drift * mu_drift / (8.0 * aq)),
                    fast_drift: (
                        aq.min(1.0),
                        bf / 4.0,
                        2.0,
                        n * mu_fast * mu_fast / (8.0 * aq),
                    ),
                    grad2_sq: PolyBound {
                        c0: 0.0,
                        c1: 2.0 * d0,
                        r1: 2.0,
                        c2: 2.0 * bf * bf,
                        r2: 2.0,
                    },
                    grad2_fourth: PolyBound {
                        c0: 0.0,
                        c1: 8.0 * d0 * d0,
                        r1: 4.0,
                        c2: 8.0 * bf.powi(4),
                        r2: 4.0,
                    },
                    slow_lap: PolyBound {
                        c0: n * bf,
                        c1: 0.0,
                        r1: 0.0,
                        c2: 0.0,
                        r2: 0.0,
                    },
                }
            }
            Potential::RankOne(p) => {
                let nt = p.total_dim() as f64;
                let ksq = p.snr / nt;
                let sig = p.data.clone().svd(false, false).singular_values.max();
                let s0 = ksq.sqrt() * sig;
                let (a, b) = (p.u_mass, p.v_mass);
                let (aq, bq) = (p.u_quartic, p.v_quartic);
                let frob2 = p.data.iter().map(|x| x * x).sum::<f64>();
                let drift_base = a.min(b) - s0;
                let drift = if drift_base >= a.min(b) / 2.0 {
                    (drift_base, 0.0)
                } else {
                    let target = a.min(b) / 2.0;
                    let mu = target - drift_base;
                    (
                        target,
                        3.0 * nt * mu * mu * (1.0 / (4.0 * aq) + 1.0 / (4.0 * bq)),
                    )
                };
                let g_c0 = 4.0 * (s0 * s0 + b * b);
                let g_c1 = 4.0 * (s0 * s0 + 2.0 / 3.0 * ksq * ksq);
                let g_c2 = 4.0 * (b * b + bq * bq / 9.0 + ksq * ksq / 3.0);
                ConfinementData {
                    lower: (a / 2.0, b / 2.0, 0.0),
                    upper: (
                        ksq / 2.0 + aq / 12.0 + a / 2.0,
                        4.0,
                        ksq / 2.0 + bq / 12.0 + b / 2.0,
                        4.0,
                        frob2 + (a + b) / 2.0,
                    ),
                    drift,
                    fast_drift: (a / 2.0, s0 * s0 / (2.0 * a), 2.0, 0.0),
                    grad2_sq: PolyBound {
                        c0: g_c0,
                        c1: g_c1,
                        r1: 6.0,
                        c2: g_c2,
                        r2: 6.0,
                    },
                    grad2_fourth: PolyBound {
                        c0: 3.0 * g_c0 * g_c0,
                        c1: 3.0 * g_c1 * g_c1,
                        r1: 12.0,
                        c2: 3.0 * g_c2 * g_c2,
                        r2: 12.0,
                    },
                    slow_lap: PolyBound {
                        c0: p.n2 as f64 * b,
                        c1: p.n2 as f64 * ksq,
                        r1: 2.0,
                        c2: bq,
                        r2: 2.0,
                    },
                }
            }
        }
    }
}
