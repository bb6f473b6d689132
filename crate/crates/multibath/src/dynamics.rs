//! Ensemble integration of the two-time-scale overdamped Langevin SDE
//! with the Euler-Maruyama scheme:
//!
//!   x1 <- x1 - grad_1 V dt + sqrt(2 dt / beta1) xi1
//!   x2 <- x2 - grad_2 V dt / lambda + sqrt(2 dt / (lambda beta2)) xi2
//!
//! Noise is addressed by (seed, particle, step, component) through the
//! counter generator, and statistics are reduced over fixed-size particle
//! blocks in index order, so every output is bit-reproducible regardless
//! of the worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::pairwise_sum;
use crate::potential::Potential;
use crate::rng::fill_normals;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid parameter {name}: {value} (must be positive)")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error(
        "init distribution has {got} coordinates, expected {expect} (or 2 for per-block broadcast)"
    )]
    BadInit { expect: usize, got: usize },
    #[error("record times must lie in [0, t_max]")]
    BadRecordTimes,
    #[error(
        "non-finite position for particle {particle} at t = {time}: integration blew up; decrease sim.dt"
    )]
    BlowUp { particle: usize, time: f64 },
}

/// Initial distribution of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum InitDist {
    /// Point mass; either d1+d2 coordinates or 2 values broadcast per block.
    Point(Vec<f64>),
    /// Isotropic Gaussian with the mean broadcast the same way.
    Gaussian { mean: Vec<f64>, std: f64 },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub dt: f64,
    pub t_max: f64,
    pub n_particles: usize,
    pub seed: u64,
    pub record_times: Vec<f64>,
    pub init: InitDist,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        for (name, value) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lambda", self.lambda),
            ("dt", self.dt),
        ] {
            if !(value > 0.0) {
                return Err(DynamicsError::NonPositiveParameter { name, value });
            }
        }
        if self
            .record_times
            .iter()
            .any(|t| *t < 0.0 || *t > self.t_max + 1e-12)
        {
            return Err(DynamicsError::BadRecordTimes);
        }
        Ok(())
    }
}

/// Particle block size for the order-fixed parallel reductions.
const BLOCK: usize = 1024;

#[derive(Debug, Clone)]
pub struct Ensemble {
    /// n x (d1+d2) row-major positions.
    pub positions: Vec<f64>,
    pub time: f64,
    pub step_index: u64,
    pub d1: usize,
    pub d2: usize,
    pub n: usize,
    seed: u64,
}

/// Expands a point/broadcast coordinate list to the full dimension.
fn expand_coords(values: &[f64], d1: usize, d2: usize) -> Result<Vec<f64>, DynamicsError> {
    let d = d1 + d2;
    if values.len() == d {
        Ok(values.to_vec())
    } else if values.len() == 2 {
        let mut out = vec![values[0]; d1];
        out.extend(std::iter::repeat_n(values[1], d2));
        Ok(out)
    } else {
        Err(DynamicsError::BadInit {
            expect: d,
            got: values.len(),
        })
    }
}

/// Draws the initial ensemble; i.i.d. per particle and deterministic in
/// the seed (the init stream uses a reserved step index).
pub fn init_ensemble(cfg: &SimConfig, p: &Potential) -> Result<Ensemble, DynamicsError> {
    cfg.validate()?;
    let d1 = p.d1();
    let d2 = p.d2();
    let d = d1 + d2;
    let n = cfg.n_particles;
    let mut positions = vec![0.0; n * d];
    match &cfg.init {
        InitDist::Point(values) => {
            let full = expand_coords(values, d1, d2)?;
            for i in 0..n {
                positions[i * d..(i + 1) * d].copy_from_slice(&full);
            }
        }
        InitDist::Gaussian { mean, std } => {
            let full = expand_coords(mean, d1, d2)?;
            positions
                .par_chunks_mut(BLOCK * d)
                .enumerate()
                .for_each(|(block, chunk)| {
                    let mut noise = vec![0.0; d];
                    for (row, part) in chunk.chunks_mut(d).enumerate() {
                        let particle = (block * BLOCK + row) as u64;
                        fill_normals(cfg.seed, particle, u64::MAX, &mut noise);
                        for k in 0..d {
                            part[k] = full[k] + std * noise[k];
                        }
                    }
                });
        }
    }
    Ok(Ensemble {
        positions,
        time: 0.0,
        step_index: 0,
        d1,
        d2,
        n,
        seed: cfg.seed,
    })
}

/// One Euler-Maruyama step over the whole ensemble.
pub fn step(e: &mut Ensemble, p: &Potential, cfg: &SimConfig) -> Result<(), DynamicsError> {
    let d1 = e.d1;
    let d2 = e.d2;
    let d = d1 + d2;
    let dt = cfg.dt;
    let scale1 = (2.0 * dt / cfg.beta1).sqrt();
    let scale2 = (2.0 * dt / (cfg.lambda * cfg.beta2)).sqrt();
    let inv_lambda = 1.0 / cfg.lambda;
    let seed = e.seed;
    let step_index = e.step_index;

    let bad = e
        .positions
        .par_chunks_mut(BLOCK * d)
        .enumerate()
        .map(|(block, chunk)| {
            let mut g1 = vec![0.0; d1];
            let mut g2 = vec![0.0; d2];
            let mut noise = vec![0.0; d];
            let mut first_bad: Option<usize> = None;
            for (row, part) in chunk.chunks_mut(d).enumerate() {
                let particle = block * BLOCK + row;
                let (x1, x2) = part.split_at_mut(d1);
                p.grad_into(x1, x2, &mut g1, &mut g2);
                fill_normals(seed, particle as u64, step_index, &mut noise);
                let mut finite = true;
                for k in 0..d1 {
                    x1[k] += -g1[k] * dt + scale1 * noise[k];
                    finite &= x1[k].is_finite();
                }
                for k in 0..d2 {
                    x2[k] += -g2[k] * inv_lambda * dt + scale2 * noise[d1 + k];
                    finite &= x2[k].is_finite();
                }
                if !finite && first_bad.is_none() {
                    first_bad = Some(particle);
                }
            }
            first_bad
        })
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            },
        );

    e.step_index += 1;
    e.time = e.step_index as f64 * dt;
    if let Some(particle) = bad {
        return Err(DynamicsError::BlowUp {
            particle,
            time: e.time,
        });
    }
    Ok(())
}

/// Step-size guidance dt <= 0.1 / L, with L the sampled spectral norm of
/// the Hessian over (a subset of) the ensemble. The scheme is explicit
/// Euler-Maruyama with weak order-1 bias; acceptance comparisons must
/// either extrapolate in dt or allow an O(dt) tolerance.
pub fn suggested_dt(p: &Potential, e: &Ensemble) -> f64 {
    let d = e.d1 + e.d2;
    let stride = (e.n / 64).max(1);
    let mut lipschitz: f64 = 0.0;
    for part in e.positions.chunks(d).step_by(stride) {
        let (x1, x2) = part.split_at(e.d1);
        if let Ok((h11, h12, h22)) = p.hessian_blocks(x1, x2) {
            let bound = h11.abs().max().max(h22.abs().max()) + h12.abs().max();
            lipschitz = lipschitz.max(bound);
        }
    }
    if lipschitz > 0.0 {
        0.1 / lipschitz
    } else {
        0.1
    }
}

/// Snapshot statistics at one record time.
#[derive(Debug, Clone)]
pub struct RecordPoint {
    pub requested_t: f64,
    /// Largest grid time at or below the requested time.
    pub actual_t: f64,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub powers: Vec<f64>,
    pub abs_x1: Vec<f64>,
    pub abs_x2: Vec<f64>,
    pub v_lambda: Vec<f64>,
    /// Full positions, retained on request.
    pub samples: Option<Vec<f64>>,
}

impl RecordPoint {
    /// Rows as [x1, x2] pairs; only meaningful for d1 = d2 = 1.
    pub fn samples_2d(&self) -> Option<Vec<[f64; 2]>> {
        self.samples
            .as_ref()
            .map(|s| s.chunks(2).map(|c| [c[0], c[1]]).collect())
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryStats {
    pub points: Vec<RecordPoint>,
    pub d1: usize,
    pub d2: usize,
}

/// Order-fixed ensemble statistics: per-block partial sums computed in
/// parallel, then combined pairwise in block order.
fn snapshot(
    e: &Ensemble,
    requested_t: f64,
    powers: &[f64],
    lambda: f64,
    retain: bool,
) -> RecordPoint {
    let d = e.d1 + e.d2;
    let n = e.n;
    let blocks: Vec<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> = e
        .positions
        .par_chunks(BLOCK * d)
        .map(|chunk| {
            let mut sum = vec![0.0; d];
            let mut outer = vec![0.0; d * d];
            let mut mom = vec![vec![0.0; 3]; powers.len()];
            for part in chunk.chunks(d) {
                for k in 0..d {
                    sum[k] += part[k];
                    for l in 0..d {
                        outer[k * d + l] += part[k] * part[l];
                    }
                }
                let n1: f64 = part[..e.d1].iter().map(|x| x * x).sum();
                let n2: f64 = part[e.d1..].iter().map(|x| x * x).sum();
                for (idx, &r) in powers.iter().enumerate() {
                    mom[idx][0] += n1.powf(r / 2.0);
                    mom[idx][1] += n2.powf(r / 2.0);
                    mom[idx][2] += (n1 / lambda + n2).powf(r);
                }
            }
            (sum, outer, mom)
        })
        .collect();

    let combine = |extract: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)) -> f64| -> f64 {
        let parts: Vec<f64> = blocks.iter().map(extract).collect();
        pairwise_sum(&parts)
    };
    let mean: Vec<f64> = (0..d).map(|k| combine(&|b| b.0[k]) / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            cov[(k, l)] = combine(&|b| b.1[k * d + l]) / n as f64 - mean[k] * mean[l];
        }
    }
    // enforce exact symmetry against rounding in the reductions
    for k in 0..d {
        for l in (k + 1)..d {
            let s = 0.5 * (cov[(k, l)] + cov[(l, k)]);
            cov[(k, l)] = s;
            cov[(l, k)] = s;
        }
    }
    let mut abs_x1 = Vec::with_capacity(powers.len());
    let mut abs_x2 = Vec::with_capacity(powers.len());
    let mut v_lambda = Vec::with_capacity(powers.len());
    for idx in 0..powers.len() {
        abs_x1.push(combine(&|b| b.2[idx][0]) / n as f64);
        abs_x2.push(combine(&|b| b.2[idx][1]) / n as f64);
        v_lambda.push(combine(&|b| b.2[idx][2]) / n as f64);
    }
    RecordPoint {
        requested_t,
        actual_t: e.time,
        mean,
        cov,
        powers: powers.to_vec(),
        abs_x1,
        abs_x2,
        v_lambda,
        samples: retain.then(|| e.positions.clone()),
    }
}

/// Advances the ensemble to t_max, snapshotting at the largest grid time
/// at or below each requested record time.
pub fn simulate(
    cfg: &SimConfig,
    p: &Potential,
    powers: &[f64],
    retain_samples: bool,
) -> Result<TrajectoryStats, DynamicsError> {
    cfg.validate()?;
    let mut e = init_ensemble(cfg, p)?;
    let mut requested: Vec<f64> = cfg.record_times.clone();
    requested.sort_by(f64::total_cmp);
    let record_steps: Vec<(u64, f64)> = requested
        .iter()
        .map(|t| ((t / cfg.dt + 1e-9).floor() as u64, *t))
        .collect();
    let n_steps = (cfg.t_max / cfg.dt + 1e-9).floor() as u64;
    let mut points = Vec::with_capacity(record_steps.len());
    let mut next = record_steps.iter().peekable();
    for s in 0..=n_steps {
        while let Some((k, t)) = next.peek() {
            if *k == s {
                points.push(snapshot(&e, *t, powers, cfg.lambda, retain_samples));
                next.next();
            } else {
                break;
            }
        }
        if s < n_steps {
            step(&mut e, p, cfg)?;
        }
    }
    // requested times beyond the grid end resolve to the final state
    for (_, t) in next {
        points.push(snapshot(&e, *t, powers, cfg.lambda, retain_samples));
    }
    Ok(TrajectoryStats {
        points,
        d1: e.d1,
        d2: e.d2,
    })
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// A test function with the derivative blocks the generator needs.
/// Defaults fall back to central finite differences of `value`.
pub trait TestFunction {
    fn value(&self, x1: &[f64], x2: &[f64]) -> f64;

    fn grad1(&self, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        let h = 1e-5;
        let mut xp = x1.to_vec();
        for k in 0..x1.len() {
            xp[k] = x1[k] + h;
            let up = self.value(&xp, x2);
            xp[k] = x1[k] - h;
            let dn = self.value(&xp, x2);
            xp[k] = x1[k];
            out[k] = (up - dn) / (2.0 * h);
        }
    }

    fn grad2(&self, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        let h = 1e-5;
        let mut xp = x2.to_vec();
        for k in 0..x2.len() {
            xp[k] = x2[k] + h;
            let up = self.value(x1, &xp);
            xp[k] = x2[k] - h;
            let dn = self.value(x1, &xp);
            xp[k] = x2[k];
            out[k] = (up - dn) / (2.0 * h);
        }
    }

    fn laplacian1(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let h = 1e-4;
        let center = self.value(x1, x2);
        let mut xp = x1.to_vec();
        let mut acc = 0.0;
        for k in 0..x1.len() {
            xp[k] = x1[k] + h;
            let up = self.value(&xp, x2);
            xp[k] = x1[k] - h;
            let dn = self.value(&xp, x2);
            xp[k] = x1[k];
            acc += (up - 2.0 * center + dn) / (h * h);
        }
        acc
    }

    fn laplacian2(&self, x1: &[f64], x2: &[f64]) -> f64 {
        let h = 1e-4;
        let center = self.value(x1, x2);
        let mut xp = x2.to_vec();
        let mut acc = 0.0;
        for k in 0..x2.len() {
            xp[k] = x2[k] + h;
            let up = self.value(x1, &xp);
            xp[k] = x2[k] - h;
            let dn = self.value(x1, &xp);
            xp[k] = x2[k];
            acc += (up - 2.0 * center + dn) / (h * h);
        }
        acc
    }
}

/// Monomials on 1+1 dimensions with analytic derivatives.
#[derive(Debug, Clone, Copy)]
pub enum Monomial2d {
    XX,
    YY,
    XY,
}

impl TestFunction for Monomial2d {
    fn value(&self, x1: &[f64], x2: &[f64]) -> f64 {
        match self {
            Monomial2d::XX => x1[0] * x1[0],
            Monomial2d::YY => x2[0] * x2[0],
            Monomial2d::XY => x1[0] * x2[0],
        }
    }

    fn grad1(&self, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        out[0] = match self {
            Monomial2d::XX => 2.0 * x1[0],
            Monomial2d::YY => 0.0,
            Monomial2d::XY => x2[0],
        };
    }

    fn grad2(&self, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        out[0] = match self {
            Monomial2d::XX => 0.0,
            Monomial2d::YY => 2.0 * x2[0],
            Monomial2d::XY => x1[0],
        };
    }

    fn laplacian1(&self, _: &[f64], _: &[f64]) -> f64 {
        match self {
            Monomial2d::XX => 2.0,
            _ => 0.0,
        }
    }

    fn laplacian2(&self, _: &[f64], _: &[f64]) -> f64 {
        match self {
            Monomial2d::YY => 2.0,
            _ => 0.0,
        }
    }
}

/// The backward generator applied to a test function at a point:
/// L phi = (lap_1 phi / beta1 - grad_1 phi . grad_1 V)
///       + (lap_2 phi / beta2 - grad_2 phi . grad_2 V) / lambda.
pub fn apply_generator(
    p: &Potential,
    cfg: &SimConfig,
    phi: &dyn TestFunction,
    x1: &[f64],
    x2: &[f64],
) -> f64 {
    let mut g1 = vec![0.0; x1.len()];
    let mut g2 = vec![0.0; x2.len()];
    p.grad_into(x1, x2, &mut g1, &mut g2);
    let mut p1 = vec![0.0; x1.len()];
    let mut p2 = vec![0.0; x2.len()];
    phi.grad1(x1, x2, &mut p1);
    phi.grad2(x1, x2, &mut p2);
    let dot1: f64 = p1.iter().zip(&g1).map(|(a, b)| a * b).sum();
    let dot2: f64 = p2.iter().zip(&g2).map(|(a, b)| a * b).sum();
    phi.laplacian1(x1, x2) / cfg.beta1 - dot1
        + (phi.laplacian2(x1, x2) / cfg.beta2 - dot2) / cfg.lambda
}

/// Ensemble average of L phi.
pub fn mean_generator(p: &Potential, cfg: &SimConfig, phi: &dyn TestFunction, e: &Ensemble) -> f64 {
    let d = e.d1 + e.d2;
    let vals: Vec<f64> = e
        .positions
        .chunks(d)
        .map(|part| apply_generator(p, cfg, phi, &part[..e.d1], &part[e.d1..]))
        .collect();
    pairwise_sum(&vals) / e.n as f64
}
