//! Empirical divergence estimation from two-dimensional ensembles:
//! Gaussian moment-fit KL (unbiased-in-class for quadratic potentials),
//! binned plug-in KL with its conditional/marginal decomposition, total
//! variation, and raw moment tables.
//!
//! The histogram estimators are biased plug-ins and are labeled as such in
//! all outputs; the Gaussian fit is the acceptance path for quadratics.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::gaussian::{kl_conditional_marginal, GaussianError, GaussianMeasure};
use crate::linalg::{gauss_legendre_on, pairwise_sum};

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("singular sample covariance (det = {0})")]
    SingularCovariance(f64),
    #[error("histogram edges must be strictly increasing with at least two entries")]
    BadEdges,
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// KL divergence split into the conditional-average and marginal parts.
#[derive(Debug, Clone, Copy)]
pub struct KlSplit {
    pub d: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Sample mean and covariance (unbiased) of 2-d samples.
pub fn fit_gaussian(samples: &[[f64; 2]]) -> Result<GaussianMeasure, DivergenceError> {
    let n = samples.len();
    if n < 2 {
        return Err(DivergenceError::TooFewSamples { need: 2, got: n });
    }
    let xs: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s[1]).collect();
    let mx = pairwise_sum(&xs) / n as f64;
    let my = pairwise_sum(&ys) / n as f64;
    let cxx: Vec<f64> = samples.iter().map(|s| (s[0] - mx) * (s[0] - mx)).collect();
    let cyy: Vec<f64> = samples.iter().map(|s| (s[1] - my) * (s[1] - my)).collect();
    let cxy: Vec<f64> = samples.iter().map(|s| (s[0] - mx) * (s[1] - my)).collect();
    let denom = (n - 1) as f64;
    let cov = Matrix2::new(
        pairwise_sum(&cxx) / denom,
        pairwise_sum(&cxy) / denom,
        pairwise_sum(&cxy) / denom,
        pairwise_sum(&cyy) / denom,
    );
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if det <= 0.0 || cov[(0, 0)] <= 0.0 {
        return Err(DivergenceError::SingularCovariance(det));
    }
    Ok(GaussianMeasure::new(Vector2::new(mx, my), cov))
}

/// Fits a Gaussian to the samples and computes the exact Gaussian KL
/// divergences (joint, conditional-average, marginal) from the reference.
pub fn gaussian_fit_kl(
    samples: &[[f64; 2]],
    reference: &GaussianMeasure,
) -> Result<KlSplit, DivergenceError> {
    if samples.len() < 100 {
        return Err(DivergenceError::TooFewSamples {
            need: 100,
            got: samples.len(),
        });
    }
    let fitted = fit_gaussian(samples)?;
    let (d1, d2) = kl_conditional_marginal(&fitted, reference)?;
    Ok(KlSplit { d: d1 + d2, d1, d2 })
}

/// Two-dimensional histogram with outside mass lumped into the edge bins.
#[derive(Debug, Clone)]
pub struct HistogramDensity {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major bin masses (x bin index major), summing to one.
    pub masses: Vec<f64>,
    pub count: usize,
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    if v < edges[0] {
        return 0;
    }
    let n_bins = edges.len() - 1;
    match edges.binary_search_by(|e| e.partial_cmp(&v).unwrap()) {
        Ok(i) => i.min(n_bins - 1),
        Err(i) => (i - 1).min(n_bins - 1),
    }
}

impl HistogramDensity {
    pub fn from_samples(
        samples: &[[f64; 2]],
        x_edges: Vec<f64>,
        y_edges: Vec<f64>,
    ) -> Result<Self, DivergenceError> {
        for e in [&x_edges, &y_edges] {
            if e.len() < 2 || e.windows(2).any(|w| w[1] <= w[0]) {
                return Err(DivergenceError::BadEdges);
            }
        }
        if samples.is_empty() {
            return Err(DivergenceError::TooFewSamples { need: 1, got: 0 });
        }
        let nx = x_edges.len() - 1;
        let ny = y_edges.len() - 1;
        let mut masses = vec![0.0; nx * ny];
        let w = 1.0 / samples.len() as f64;
        for s in samples {
            let i = bin_index(&x_edges, s[0]);
            let j = bin_index(&y_edges, s[1]);
            masses[i * ny + j] += w;
        }
        Ok(Self {
            x_edges,
            y_edges,
            masses,
            count: samples.len(),
        })
    }

    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.masses)
    }
}

/// Default edges: +-5 reference standard deviations, `bins` bins per axis.
pub fn default_edges(reference: &GaussianMeasure, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let make = |mean: f64, var: f64| -> Vec<f64> {
        let half = 5.0 * var.sqrt();
        (0..=bins)
            .map(|k| mean - half + 2.0 * half * k as f64 / bins as f64)
            .collect()
    };
    (
        make(reference.mean[0], reference.cov[(0, 0)]),
        make(reference.mean[1], reference.cov[(1, 1)]),
    )
}

/// Reference bin masses by per-bin Gauss-Legendre quadrature.
pub fn reference_bin_masses(
    reference: &dyn Fn(f64, f64) -> f64,
    x_edges: &[f64],
    y_edges: &[f64],
    nodes_per_bin: usize,
) -> Vec<f64> {
    let nx = x_edges.len() - 1;
    let ny = y_edges.len() - 1;
    let mut masses = vec![0.0; nx * ny];
    for i in 0..nx {
        let (xs, wx) = gauss_legendre_on(nodes_per_bin, x_edges[i], x_edges[i + 1]);
        for j in 0..ny {
            let (ys, wy) = gauss_legendre_on(nodes_per_bin, y_edges[j], y_edges[j + 1]);
            let mut acc = 0.0;
            for (x, wxi) in xs.iter().zip(&wx) {
                for (y, wyi) in ys.iter().zip(&wy) {
                    acc += wxi * wyi * reference(*x, *y);
                }
            }
            masses[i * ny + j] = acc;
        }
    }
    masses
}

/// Binned plug-in KL report. `d = d1 + d2` holds exactly when no rows were
/// skipped; rows with fewer than `min_row_count` samples are dropped from
/// the conditional part and their mass reported.
#[derive(Debug, Clone, Copy)]
pub struct HistogramKl {
    pub d: f64,
    pub d1: f64,
    pub d2: f64,
    pub skipped_mass: f64,
    /// Mass of occupied bins whose reference mass underflowed; excluded
    /// from the sums rather than divided by zero.
    pub flagged_mass: f64,
}

/// Plug-in KL of the histogram against reference bin masses, decomposed
/// along the y (slow) coordinate: d2 over the y-marginal, d1 as the
/// row-conditional average.
pub fn histogram_kl(
    hist: &HistogramDensity,
    reference_masses: &[f64],
    min_row_count: usize,
) -> HistogramKl {
    let nx = hist.nx();
    let ny = hist.ny();
    let n = hist.count as f64;
    let mut d = 0.0;
    let mut flagged_mass = 0.0;
    for (p, q) in hist.masses.iter().zip(reference_masses) {
        if *p > 0.0 {
            if *q > 0.0 {
                d += p * (p / q).ln();
            } else {
                flagged_mass += p;
            }
        }
    }
    let mut p_marg = vec![0.0; ny];
    let mut q_marg = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            p_marg[j] += hist.masses[i * ny + j];
            q_marg[j] += reference_masses[i * ny + j];
        }
    }
    let mut d2 = 0.0;
    for j in 0..ny {
        if p_marg[j] > 0.0 && q_marg[j] > 0.0 {
            d2 += p_marg[j] * (p_marg[j] / q_marg[j]).ln();
        } else if p_marg[j] > 0.0 {
            flagged_mass += p_marg[j];
        }
    }
    let mut d1 = 0.0;
    let mut skipped_mass = 0.0;
    for j in 0..ny {
        if p_marg[j] <= 0.0 {
            continue;
        }
        if (p_marg[j] * n).round() < min_row_count as f64 {
            skipped_mass += p_marg[j];
            continue;
        }
        if q_marg[j] <= 0.0 {
            continue;
        }
        for i in 0..nx {
            let p = hist.masses[i * ny + j];
            let q = reference_masses[i * ny + j];
            if p > 0.0 && q > 0.0 {
                d1 += p * ((p / p_marg[j]) / (q / q_marg[j])).ln();
            }
        }
    }
    HistogramKl {
        d,
        d1,
        d2,
        skipped_mass,
        flagged_mass,
    }
}

/// Total variation between the histogram and the reference bin masses,
/// counting the reference mass that falls outside the grid.
pub fn tv_histogram(hist: &HistogramDensity, reference_masses: &[f64]) -> f64 {
    let inside: f64 = reference_masses.iter().sum();
    let gap: f64 = hist
        .masses
        .iter()
        .zip(reference_masses)
        .map(|(p, q)| (p - q).abs())
        .sum();
    0.5 * (gap + (1.0 - inside).max(0.0))
}

/// Raw moment table: E|x1|^r, E|x2|^r and E[v_lambda^r] with
/// v_lambda = |x1|^2/lambda + |x2|^2.
#[derive(Debug, Clone)]
pub struct MomentTable {
    pub powers: Vec<f64>,
    pub abs_x1: Vec<f64>,
    pub abs_x2: Vec<f64>,
    pub v_lambda: Vec<f64>,
}

pub fn moment_table(samples: &[[f64; 2]], powers: &[f64], lambda: f64) -> MomentTable {
    let n = samples.len().max(1) as f64;
    let mut abs_x1 = Vec::with_capacity(powers.len());
    let mut abs_x2 = Vec::with_capacity(powers.len());
    let mut v_lambda = Vec::with_capacity(powers.len());
    for &r in powers {
        let mut s1 = Vec::with_capacity(samples.len());
        let mut s2 = Vec::with_capacity(samples.len());
        let mut sv = Vec::with_capacity(samples.len());
        for s in samples {
            s1.push(s[0].abs().powf(r));
            s2.push(s[1].abs().powf(r));
            sv.push((s[0] * s[0] / lambda + s[1] * s[1]).powf(r));
        }
        abs_x1.push(pairwise_sum(&s1) / n);
        abs_x2.push(pairwise_sum(&s2) / n);
        v_lambda.push(pairwise_sum(&sv) / n);
    }
    MomentTable {
        powers: powers.to_vec(),
        abs_x1,
        abs_x2,
        v_lambda,
    }
}

/// Draws n samples of a 2-d Gaussian through the counter generator
/// (Cholesky of the covariance); used by tests and calibration runs.
pub fn gaussian_samples(g: &GaussianMeasure, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let l11 = g.cov[(0, 0)].sqrt();
    let l21 = g.cov[(0, 1)] / l11;
    let l22 = (g.cov[(1, 1)] - l21 * l21).sqrt();
    (0..n)
        .map(|i| {
            let (z1, z2) = crate::rng::counter_normal_pair(seed, i as u64, 0, 0);
            [g.mean[0] + l11 * z1, g.mean[1] + l21 * z1 + l22 * z2]
        })
        .collect()
}
