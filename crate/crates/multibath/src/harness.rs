//! Experiment orchestration: configuration ingestion, the per-kind
//! pipelines, CSV/JSON persistence, named pass/fail checks, and parameter
//! sweeps. CSV numbers use the shortest round-trip decimal form, so a
//! rerun with the same manifest reproduces byte-identical bodies.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::divergence::gaussian_fit_kl;
use crate::dynamics::{simulate, DynamicsError, InitDist, SimConfig};

use crate::lsi_bounds::{
    c0_estimate, c0_tilde_estimate, envelope_d1, envelope_d2, lsi_constants, rank_one_conditions,
    BoundsError, EnvelopeParams, InitMoments, MomentBounds, MomentSource,
};
use crate::ou_exact::{OuError, OuSystem};
use crate::potential::{
    certify_split, sample_rank_one_data, sample_spin_glass_disorder, Potential, PotentialError,
    Prior, Quadratic, RankOne, SampleBox, SoftSpinGlass,
};
use crate::stationary::{HalfWidth, QuadRule, QuadratureSpec, StationaryError, StationaryMeasure};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Ou(#[from] OuError),
    #[error(transparent)]
    Stationary(#[from] StationaryError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("unknown experiment kind `{0}`")]
    UnknownKind(String),
    #[error("experiment `{kind}` requires a quadratic potential, got `{got}`")]
    NeedsQuadratic { kind: &'static str, got: String },
    #[error("cannot parse init spec `{0}` (expected point:... or gauss:mean,std)")]
    BadInitSpec(String),
    #[error("sweep key must look like key=v1,v2,..., got `{0}`")]
    BadSweepSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    OuExact,
    Simulate,
    Stationary,
    Lsi,
    Envelope,
    SpinGlass,
    RankOne,
}

impl ExperimentKind {
    pub fn from_name(name: &str) -> Result<Self, HarnessError> {
        Ok(match name {
            "ou-exact" => Self::OuExact,
            "simulate" => Self::Simulate,
            "stationary" => Self::Stationary,
            "lsi" => Self::Lsi,
            "envelope" => Self::Envelope,
            "spin-glass" => Self::SpinGlass,
            "rank-one" => Self::RankOne,
            other => return Err(HarnessError::UnknownKind(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::OuExact => "ou-exact",
            Self::Simulate => "simulate",
            Self::Stationary => "stationary",
            Self::Lsi => "lsi",
            Self::Envelope => "envelope",
            Self::SpinGlass => "spin-glass",
            Self::RankOne => "rank-one",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub outputs: Vec<PathBuf>,
    pub checks: Vec<CheckResult>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn print_checks(&self) {
        for c in &self.checks {
            println!(
                "CHECK {}: {} ({})",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.detail
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Config -> domain objects
// ---------------------------------------------------------------------------

pub fn build_potential(cfg: &Config) -> Result<Potential, HarnessError> {
    match cfg.str("potential.kind")? {
        "quadratic" => Ok(Potential::Quadratic(Quadratic::new(
            cfg.f64("potential.a")?,
            cfg.f64("potential.b")?,
            cfg.f64_or("potential.c", 0.0)?,
        )?)),
        "spin-glass" => {
            let n = cfg.usize("potential.N")?;
            let seed = cfg.u64_or("potential.seed_disorder", 1)?;
            let coupling = sample_spin_glass_disorder(seed, n);
            Ok(Potential::SoftSpinGlass(SoftSpinGlass::new(
                n,
                cfg.f64("potential.delta")?,
                cfg.f64("potential.delta0")?,
                cfg.f64("potential.Aq")?,
                cfg.f64("potential.B")?,
                cfg.f64_or("potential.tau", 0.5)?,
                coupling,
            )?))
        }
        "rank-one" => {
            let n1 = cfg.usize("potential.N1")?;
            let n2 = cfg.usize("potential.N2")?;
            let snr = cfg.f64("potential.delta")?;
            let seed = cfg.u64_or("potential.seed_disorder", 1)?;
            let prior = match cfg.str_or("potential.prior", "rademacher") {
                "gaussian" => Prior::StandardGaussian,
                _ => Prior::Rademacher,
            };
            let (u_star, v_star, data) = sample_rank_one_data(seed, n1, n2, snr, prior);
            Ok(Potential::RankOne(RankOne::new(
                n1,
                n2,
                snr,
                cfg.f64("potential.a")?,
                cfg.f64("potential.b")?,
                cfg.f64("potential.Aq")?,
                cfg.f64("potential.Bq")?,
                data,
                u_star,
                v_star,
            )?))
        }
        other => Err(HarnessError::UnknownKind(format!("potential.kind={other}"))),
    }
}

fn parse_init(spec: &str) -> Result<InitDist, HarnessError> {
    let bad = || HarnessError::BadInitSpec(spec.to_string());
    let (head, rest) = spec.split_once(':').ok_or_else(bad)?;
    let values: Vec<f64> = rest
        .split(',')
        .map(|tok| tok.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match head {
        "point" => Ok(InitDist::Point(values)),
        "gauss" => {
            if values.len() < 2 {
                return Err(bad());
            }
            let (std, mean) = values.split_last().unwrap();
            if !(*std > 0.0) {
                return Err(bad());
            }
            let mean = if mean.len() == 1 {
                vec![mean[0], mean[0]]
            } else {
                mean.to_vec()
            };
            Ok(InitDist::Gaussian { mean, std: *std })
        }
        _ => Err(bad()),
    }
}

pub fn build_sim(cfg: &Config) -> Result<SimConfig, HarnessError> {
    let t_max = cfg.f64("sim.t_max")?;
    let record_times = if cfg.has("sim.record_times") {
        cfg.f64_list("sim.record_times")?
    } else {
        vec![t_max]
    };
    Ok(SimConfig {
        beta1: cfg.f64("sim.beta1")?,
        beta2: cfg.f64("sim.beta2")?,
        lambda: cfg.f64("sim.lambda")?,
        dt: cfg.f64("sim.dt")?,
        t_max,
        n_particles: cfg.usize_or("sim.n_particles", 10_000)?,
        seed: cfg.u64_or("sim.seed", 1)?,
        record_times,
        init: parse_init(cfg.str_or("sim.init", "point:1,1"))?,
    })
}

pub fn build_quadrature(cfg: &Config) -> Result<QuadratureSpec, HarnessError> {
    let half_width = match cfg.str_or("quad.halfwidth", "auto") {
        "auto" => HalfWidth::Auto,
        other => HalfWidth::Fixed(other.parse().map_err(|_| {
            HarnessError::Config(ConfigError::Missing(format!(
                "quad.halfwidth = {other} is neither `auto` nor a number"
            )))
        })?),
    };
    let rule = match cfg.str_or("quad.rule", "gauss-legendre") {
        "trapezoid" => QuadRule::Trapezoid,
        _ => QuadRule::GaussLegendre,
    };
    Ok(QuadratureSpec {
        nodes: cfg.usize_or("quad.nodes", 96)?,
        half_width,
        rule,
    })
}

fn quadratic_of(p: &Potential, kind: &'static str) -> Result<Quadratic, HarnessError> {
    match p {
        Potential::Quadratic(q) => Ok(*q),
        Potential::SoftSpinGlass(_) => Err(HarnessError::NeedsQuadratic {
            kind,
            got: "spin-glass".into(),
        }),
        Potential::RankOne(_) => Err(HarnessError::NeedsQuadratic {
            kind,
            got: "rank-one".into(),
        }),
    }
}

fn point_init(sim: &SimConfig) -> (f64, f64) {
    match &sim.init {
        InitDist::Point(v) if v.len() >= 2 => (v[0], v[v.len() - 1]),
        InitDist::Gaussian { mean, .. } if mean.len() >= 2 => (mean[0], mean[mean.len() - 1]),
        _ => (1.0, 1.0),
    }
}

fn init_moments(sim: &SimConfig, p: &Potential) -> InitMoments {
    match &sim.init {
        InitDist::Point(v) => {
            let d1 = p.d1();
            let full = if v.len() == 2 && d1 + p.d2() != 2 {
                let mut f = vec![v[0]; d1];
                f.extend(std::iter::repeat_n(v[1], p.d2()));
                f
            } else {
                v.clone()
            };
            let x1_sq = full[..d1.min(full.len())].iter().map(|x| x * x).sum();
            let x2_sq = full[d1.min(full.len())..].iter().map(|x| x * x).sum();
            InitMoments::Point { x1_sq, x2_sq }
        }
        InitDist::Gaussian { std, .. } => InitMoments::IsotropicGaussian {
            std: *std,
            d1: p.d1(),
            d2: p.d2(),
        },
    }
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

struct OutputWriter {
    dir: PathBuf,
    outputs: Vec<(PathBuf, String)>,
}

impl OutputWriter {
    fn new(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: &[String],
    ) -> Result<PathBuf, HarnessError> {
        let mut body = String::with_capacity(rows.len() * 32 + header.len() + 1);
        body.push_str(header);
        body.push('\n');
        for row in rows {
            body.push_str(row);
            body.push('\n');
        }
        let path = self.dir.join(name);
        std::fs::write(&path, &body)?;
        let digest = format!("{:x}", Sha256::digest(body.as_bytes()));
        self.outputs.push((path.clone(), digest));
        Ok(path)
    }

    fn write_text(&mut self, name: &str, body: &str) -> Result<PathBuf, HarnessError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        let digest = format!("{:x}", Sha256::digest(body.as_bytes()));
        self.outputs.push((path.clone(), digest));
        Ok(path)
    }

    fn finish_manifest(
        &mut self,
        kind: ExperimentKind,
        cfg: &Config,
        wall: Instant,
        checks: &[CheckResult],
    ) -> Result<PathBuf, HarnessError> {
        #[derive(Serialize)]
        struct OutputEntry {
            file: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest<'a> {
            kind: &'a str,
            version: &'a str,
            config: &'a str,
            sim_seed: Option<u64>,
            disorder_seed: Option<u64>,
            wall_ms: u128,
            outputs: Vec<OutputEntry>,
            checks: &'a [CheckResult],
        }
        let manifest = Manifest {
            kind: kind.name(),
            version: env!("CARGO_PKG_VERSION"),
            config: cfg.raw(),
            sim_seed: cfg.u64("sim.seed").ok(),
            disorder_seed: cfg.u64("potential.seed_disorder").ok(),
            wall_ms: wall.elapsed().as_millis(),
            outputs: self
                .outputs
                .iter()
                .map(|(p, h)| OutputEntry {
                    file: p
                        .file_name()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    sha256: h.clone(),
                })
                .collect(),
            checks,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())?;
        Ok(path)
    }
}

fn fmt_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v}");
    }
    s
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

pub fn run(
    kind: ExperimentKind,
    cfg: &Config,
    out_dir: &Path,
    check: bool,
) -> Result<RunReport, HarnessError> {
    let wall = Instant::now();
    let mut writer = OutputWriter::new(out_dir)?;
    let mut checks = Vec::new();
    match kind {
        ExperimentKind::OuExact => run_ou_exact(cfg, &mut writer, check, &mut checks)?,
        ExperimentKind::Simulate => run_simulate(cfg, &mut writer, check, &mut checks)?,
        ExperimentKind::Stationary => run_stationary(cfg, &mut writer, check, &mut checks)?,
        ExperimentKind::Lsi => run_lsi(cfg, &mut writer, check, &mut checks)?,
        ExperimentKind::Envelope => run_envelope(cfg, &mut writer, check, &mut checks)?,
        ExperimentKind::SpinGlass => run_spin_glass(cfg, &mut writer, check, &mut checks)?,
        ExperimentKind::RankOne => run_rank_one(cfg, &mut writer, check, &mut checks)?,
    }
    let outputs: Vec<PathBuf> = writer.outputs.iter().map(|(p, _)| p.clone()).collect();
    writer.finish_manifest(kind, cfg, wall, &checks)?;
    Ok(RunReport {
        kind,
        outputs,
        checks,
    })
}

fn ou_system_from(cfg: &Config) -> Result<(OuSystem, SimConfig), HarnessError> {
    let p = build_potential(cfg)?;
    let q = quadratic_of(&p, "ou-exact")?;
    let sim = build_sim(cfg)?;
    let sys = OuSystem::build(q, sim.beta1, sim.beta2, sim.lambda)?;
    Ok((sys, sim))
}

fn run_ou_exact(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let (sys, sim) = ou_system_from(cfg)?;
    let (x0, y0) = point_init(&sim);
    let times: Vec<f64> = sim
        .record_times
        .iter()
        .cloned()
        .filter(|t| *t > 0.0)
        .collect();
    let mut rows = Vec::with_capacity(times.len());
    for &t in &times {
        let mu = sys.mean_at(t, x0, y0);
        let om = sys.covariance_at(t);
        let kl = sys.kl_at(t, x0, y0)?;
        rows.push(fmt_row(&[
            t,
            mu[0],
            mu[1],
            om[(0, 0)],
            om[(0, 1)],
            om[(1, 1)],
            kl.d1,
            kl.d2,
            kl.d,
            kl.tv_bound,
        ]));
    }
    writer.write_csv(
        "ou_trajectory.csv",
        "t,mu1,mu2,Om11,Om12,Om22,D1,D2,D,tv_bound",
        &rows,
    )?;
    if check {
        let mut worst: f64 = 0.0;
        for &t in times.iter().take(8) {
            let closed = sys.covariance_at(t);
            let quad = sys.covariance_quadrature(t, 24);
            worst = worst.max((closed - quad).abs().max() / (1.0 + closed.abs().max()));
        }
        checks.push(CheckResult {
            name: "ou_closed_form_vs_quadrature".into(),
            pass: worst < 1e-8,
            detail: format!("max relative gap {worst:.2e}"),
        });
    }
    Ok(())
}

fn run_simulate(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let p = build_potential(cfg)?;
    let sim = build_sim(cfg)?;
    let compare = cfg.str_or("experiment.compare", "") == "ou-exact";
    let powers = [1.0, 2.0, 3.0, 4.0];
    let is_2d = p.d1() == 1 && p.d2() == 1;
    let stats = simulate(&sim, &p, &powers, compare && is_2d)?;

    let mut rows = Vec::new();
    for point in &stats.points {
        let d1 = stats.d1;
        let mean_fast = point.mean[..d1].iter().sum::<f64>() / d1 as f64;
        let mean_slow = point.mean[d1..].iter().sum::<f64>() / stats.d2 as f64;
        let mut cols = vec![point.requested_t, point.actual_t, mean_fast, mean_slow];
        if is_2d {
            cols.extend([point.cov[(0, 0)], point.cov[(0, 1)], point.cov[(1, 1)]]);
        } else {
            let tr_fast = (0..d1).map(|k| point.cov[(k, k)]).sum::<f64>() / d1 as f64;
            let tr_slow = (0..stats.d2)
                .map(|k| point.cov[(d1 + k, d1 + k)])
                .sum::<f64>()
                / stats.d2 as f64;
            cols.extend([tr_fast, 0.0, tr_slow]);
        }
        cols.extend(point.abs_x1.iter());
        cols.extend(point.abs_x2.iter());
        cols.extend(point.v_lambda.iter());
        rows.push(fmt_row(&cols));
    }
    writer.write_csv(
        "sim_stats.csv",
        "t,actual_t,mean_fast,mean_slow,cov11,cov12,cov22,\
         m1_r1,m1_r2,m1_r3,m1_r4,m2_r1,m2_r2,m2_r3,m2_r4,v_r1,v_r2,v_r3,v_r4",
        &rows,
    )?;

    if compare && is_2d {
        let q = quadratic_of(&p, "simulate --compare")?;
        let sys = OuSystem::build(q, sim.beta1, sim.beta2, sim.lambda)?;
        let (x0, y0) = point_init(&sim);
        let n = sim.n_particles as f64;
        let mut rows = Vec::new();
        let mut z_values = Vec::new();
        let mut kl_gaps = Vec::new();
        for point in &stats.points {
            let t = point.actual_t;
            if t <= 0.0 {
                continue;
            }
            let mu = sys.mean_at(t, x0, y0);
            let om = sys.covariance_at(t);
            let cells: [(&str, f64, f64, f64); 5] = [
                ("mu1", point.mean[0], mu[0], (om[(0, 0)] / n).sqrt()),
                ("mu2", point.mean[1], mu[1], (om[(1, 1)] / n).sqrt()),
                (
                    "cov11",
                    point.cov[(0, 0)],
                    om[(0, 0)],
                    ((om[(0, 0)] * om[(0, 0)] + om[(0, 0)] * om[(0, 0)]) / n).sqrt(),
                ),
                (
                    "cov12",
                    point.cov[(0, 1)],
                    om[(0, 1)],
                    ((om[(0, 0)] * om[(1, 1)] + om[(0, 1)] * om[(0, 1)]) / n).sqrt(),
                ),
                (
                    "cov22",
                    point.cov[(1, 1)],
                    om[(1, 1)],
                    ((om[(1, 1)] * om[(1, 1)] + om[(1, 1)] * om[(1, 1)]) / n).sqrt(),
                ),
            ];
            for (name, emp, exact, se) in cells {
                let z = (emp - exact) / se;
                z_values.push(z.abs());
                rows.push(format!("{t},{name},{emp},{exact},{se},{z}"));
            }
            if let Some(samples) = point.samples_2d() {
                let kl_emp = gaussian_fit_kl(&samples, &sys.reference()).ok();
                let kl_exact = sys.kl_at(t, x0, y0)?;
                if let Some(kl_emp) = kl_emp {
                    // Monte-Carlo scale of the estimate from 10 batches.
                    let batches = 10;
                    let chunk = samples.len() / batches;
                    let mut b1 = Vec::with_capacity(batches);
                    let mut b2 = Vec::with_capacity(batches);
                    for b in 0..batches {
                        let part = &samples[b * chunk..(b + 1) * chunk];
                        if let Ok(kl) = gaussian_fit_kl(part, &sys.reference()) {
                            b1.push(kl.d1);
                            b2.push(kl.d2);
                        }
                    }
                    let sigma = |vals: &[f64]| -> f64 {
                        let n = vals.len() as f64;
                        let mean = vals.iter().sum::<f64>() / n;
                        let var =
                            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                        (var / n).sqrt()
                    };
                    let tol1 = (3.0 * sigma(&b1)).max(5e-3);
                    let tol2 = (3.0 * sigma(&b2)).max(5e-3);
                    kl_gaps.push((
                        (kl_emp.d1 - kl_exact.d1).abs(),
                        tol1,
                        (kl_emp.d2 - kl_exact.d2).abs(),
                        tol2,
                    ));
                    rows.push(format!("{t},kl_d1,{},{},{},", kl_emp.d1, kl_exact.d1, tol1));
                    rows.push(format!("{t},kl_d2,{},{},{},", kl_emp.d2, kl_exact.d2, tol2));
                }
            }
        }
        writer.write_csv("compare.csv", "t,cell,empirical,exact,se,z", &rows)?;

        // histogram estimators against the reference measure (biased
        // plug-ins, reserved for non-Gaussian laws; emitted for audit)
        let mut div_rows = Vec::new();
        for point in &stats.points {
            let Some(samples) = point.samples_2d() else {
                continue;
            };
            if point.actual_t <= 0.0 {
                continue;
            }
            let star = sys.reference();
            let (xe, ye) = crate::divergence::default_edges(&star, 64);
            let hist =
                crate::divergence::HistogramDensity::from_samples(&samples, xe.clone(), ye.clone());
            let Ok(hist) = hist else { continue };
            let density = |x: f64, y: f64| star.density(x, y);
            let masses = crate::divergence::reference_bin_masses(&density, &xe, &ye, 3);
            let kl = crate::divergence::histogram_kl(&hist, &masses, 10);
            let tv = crate::divergence::tv_histogram(&hist, &masses);
            div_rows.push(fmt_row(&[
                point.actual_t,
                kl.d1,
                kl.d2,
                kl.d,
                tv,
                (2.0 * kl.d).sqrt(),
                kl.skipped_mass,
            ]));
        }
        if !div_rows.is_empty() {
            writer.write_csv(
                "divergence.csv",
                "t,D1_emp,D2_emp,D_emp,TV_emp,pinsker_rhs,skipped_mass",
                &div_rows,
            )?;
        }
        if check {
            let within = z_values.iter().filter(|z| **z <= 4.0).count();
            let frac = within as f64 / z_values.len().max(1) as f64;
            checks.push(CheckResult {
                name: "simulate_z_scores".into(),
                pass: frac >= 0.95,
                detail: format!("{within}/{} cells within 4 se", z_values.len()),
            });
            let kl_ok = kl_gaps
                .iter()
                .all(|(g1, tol1, g2, tol2)| g1 <= tol1 && g2 <= tol2);
            let worst_excess = kl_gaps
                .iter()
                .map(|(g1, tol1, g2, tol2)| (g1 - tol1).max(g2 - tol2))
                .fold(f64::NEG_INFINITY, f64::max);
            checks.push(CheckResult {
                name: "simulate_gaussian_fit_kl".into(),
                pass: kl_ok,
                detail: format!("within max(3 mc-sigma, 5e-3); worst excess {worst_excess:.2e}"),
            });
        }
    }
    Ok(())
}

fn run_stationary(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let p = build_potential(cfg)?;
    let sim = build_sim(cfg)?;
    let spec = build_quadrature(cfg)?;
    let m = StationaryMeasure::for_potential(&p, sim.beta1, sim.beta2, spec)?;
    let tables = m.tables()?;
    let mut rows = Vec::with_capacity(tables.x2.len());
    for k in 0..tables.x2.len() {
        rows.push(fmt_row(&[
            tables.x2[k],
            tables.z1[k],
            tables.effective_potential[k],
            tables.rho2_star[k],
        ]));
    }
    writer.write_csv("stationary_tables.csv", "x2,Z1,F,rho2_star", &rows)?;
    if check {
        let mass = m.marginal_mass();
        checks.push(CheckResult {
            name: "stationary_marginal_mass".into(),
            pass: (mass - 1.0).abs() < 1e-6,
            detail: format!("marginal mass {mass}"),
        });
        if let Ok(q) = quadratic_of(&p, "stationary") {
            let sigma = crate::ou_exact::sigma_star(&q, sim.beta1, sim.beta2);
            let density = |x: f64, y: f64| m.joint(&[x], &[y]);
            let (_, cov) = crate::stationary::density_moments(
                &density,
                tables.half_width1,
                tables.half_width2,
                128,
            );
            let gap = (cov - sigma).abs().max();
            checks.push(CheckResult {
                name: "stationary_sigma_quadrature".into(),
                pass: gap < 1e-6,
                detail: format!("max entry gap {gap:.2e}"),
            });
        }
    }
    Ok(())
}

/// Constants report shared by the lsi and envelope pipelines.
struct LsiReport {
    c1: f64,
    c2: f64,
    alpha1: f64,
    alpha2: f64,
    osc: f64,
    c0: f64,
    c0_tilde: f64,
    eta: f64,
    epsilon: f64,
}

fn lsi_pipeline(cfg: &Config) -> Result<(LsiReport, Potential, SimConfig), HarnessError> {
    let p = build_potential(cfg)?;
    let sim = build_sim(cfg)?;
    let half = cfg.f64_or("experiment.box_halfwidth", 3.0)?;
    let split = certify_split(
        &p,
        SampleBox {
            half_width1: half,
            half_width2: half,
        },
        cfg.usize_or("experiment.box_samples", 512)?,
        cfg.u64_or("experiment.box_seed", 1)?,
    )?;
    let k = lsi_constants(&split, sim.beta1, sim.beta2);
    let data = p.confinement_data();
    let mb = MomentBounds::for_potential(&p, sim.beta1, sim.beta2, init_moments(&sim, &p));
    let src = MomentSource::Analytic(&mb);
    let c0 = c0_estimate(&data, sim.beta1, sim.beta2, &src)?;
    let c0_tilde = c0_tilde_estimate(&data, sim.beta1, sim.beta2, &src)?;
    let eta = cfg.f64_or("experiment.eta", 1.0)?;
    let epsilon = EnvelopeParams::epsilon_star(c0, k.c1, c0_tilde, sim.lambda);
    Ok((
        LsiReport {
            c1: k.c1,
            c2: k.c2,
            alpha1: k.alpha1,
            alpha2: k.alpha2,
            osc: k.osc_vb,
            c0,
            c0_tilde,
            eta,
            epsilon,
        },
        p,
        sim,
    ))
}

fn run_lsi(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let (report, p, _) = lsi_pipeline(cfg)?;
    let kv = format!(
        "c1 = {}\nc2 = {}\nalpha1 = {}\nalpha2 = {}\nosc_vb = {}\nc0 = {}\nc0_tilde = {}\neta = {}\nepsilon = {}\n",
        report.c1,
        report.c2,
        report.alpha1,
        report.alpha2,
        report.osc,
        report.c0,
        report.c0_tilde,
        report.eta,
        report.epsilon
    );
    print!("{kv}");
    writer.write_text("lsi_report.txt", &kv)?;
    let json = serde_json::json!({
        "c1": report.c1,
        "c2": report.c2,
        "alpha1": report.alpha1,
        "alpha2": report.alpha2,
        "osc_vb": report.osc,
        "c0": report.c0,
        "c0_tilde": report.c0_tilde,
        "eta": report.eta,
        "epsilon": report.epsilon,
    });
    writer.write_text(
        "lsi_report.json",
        &serde_json::to_string_pretty(&json).unwrap(),
    )?;
    if check {
        checks.push(CheckResult {
            name: "lsi_rates_positive".into(),
            pass: report.c1 > 0.0 && report.c2 > 0.0 && report.c0.is_finite(),
            detail: format!("c1 = {}, c2 = {}", report.c1, report.c2),
        });
        if let Potential::Quadratic(q) = &p {
            let expect_c2 = q.det() / q.a;
            checks.push(CheckResult {
                name: "lsi_quadratic_exact_rates".into(),
                pass: (report.c1 - q.a).abs() < 1e-9 && (report.c2 - expect_c2).abs() < 1e-9,
                detail: format!("c1 = {}, c2 = {}", report.c1, report.c2),
            });
        }
    }
    Ok(())
}

fn run_envelope(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let (report, p, sim) = lsi_pipeline(cfg)?;
    let q = quadratic_of(&p, "envelope")?;
    let sys = OuSystem::build(q, sim.beta1, sim.beta2, sim.lambda)?;
    let (x0, y0) = point_init(&sim);
    let t0 = cfg.f64_or("experiment.t0", 0.01)?;
    let t_end = sim.t_max.max(t0 * 10.0);
    let n_grid = cfg.usize_or("experiment.grid", 200)?;
    let anchor = sys.kl_at(t0, x0, y0)?;
    let params = EnvelopeParams {
        c1: report.c1,
        c2: report.c2,
        c0: report.c0,
        c0_tilde: report.c0_tilde,
        eta: report.eta,
        epsilon: report.epsilon,
        d1_init: anchor.d1,
        d2_init: anchor.d2,
        lambda: sim.lambda,
    };
    let mut rows = Vec::with_capacity(n_grid);
    let mut dominated = true;
    let mut worst_margin = f64::INFINITY;
    for k in 0..n_grid {
        // log-spaced grid from t0 to t_end
        let t = t0 * (t_end / t0).powf(k as f64 / (n_grid - 1) as f64);
        let kl = sys.kl_at(t, x0, y0)?;
        let tau = t - t0;
        let env1 = envelope_d1(tau, sim.lambda, params.d1_init, params.c1, params.c0);
        let env2 = envelope_d2(tau, &params)?;
        dominated &= kl.d1 <= env1 * (1.0 + 1e-12) && kl.d2 <= env2 * (1.0 + 1e-12);
        worst_margin = worst_margin.min(env1 - kl.d1).min(env2 - kl.d2);
        rows.push(fmt_row(&[t, kl.d1, kl.d2, env1, env2]));
    }
    writer.write_csv("envelope.csv", "t,d1_exact,d2_exact,env_d1,env_d2", &rows)?;
    if check {
        checks.push(CheckResult {
            name: "envelope_domination".into(),
            pass: dominated,
            detail: format!("worst margin {worst_margin:.3e}"),
        });
    }
    Ok(())
}

fn run_spin_glass(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let n = cfg.usize("potential.N")?;
    let delta = cfg.f64("potential.delta")?;
    let delta0 = cfg.f64("potential.delta0")?;
    let aq = cfg.f64("potential.Aq")?;
    let b = cfg.f64("potential.B")?;
    let tau = cfg.f64_or("potential.tau", 0.5)?;
    let draws = cfg.usize_or("experiment.draws", 200)?;
    let seed0 = cfg.u64_or("potential.seed_disorder", 1)?;
    let mut rows = Vec::with_capacity(draws);
    let mut successes = 0usize;
    let mut event_fails = 0usize;
    for draw in 0..draws {
        let seed = seed0 + draw as u64;
        let coupling = sample_spin_glass_disorder(seed, n);
        let sg = SoftSpinGlass::new(n, delta, delta0, aq, b, tau, coupling)?;
        let stat = sg.sym_spectral_stat();
        let p = Potential::SoftSpinGlass(sg);
        let split = certify_split(
            &p,
            SampleBox {
                half_width1: 2.0,
                half_width2: 2.0,
            },
            cfg.usize_or("experiment.box_samples", 96)?,
            seed ^ 0xA5A5,
        );
        let cond = crate::lsi_bounds::spin_glass_condition(aq, delta, delta0, b, tau);
        let (ok, alpha) = match &split {
            Ok(s) => {
                let event_ok = s.disorder_event.map(|e| e.ok).unwrap_or(false);
                if !event_ok {
                    event_fails += 1;
                }
                (event_ok && cond.holds && s.alpha > 0.0, s.alpha)
            }
            Err(_) => (false, f64::NAN),
        };
        successes += usize::from(ok);
        rows.push(format!(
            "{draw},{seed},{stat},{},{alpha},{}",
            u8::from(ok),
            cond.alpha
        ));
    }
    writer.write_csv(
        "spin_glass.csv",
        "draw,seed,spectral_stat,certified,alpha_sampled,alpha_condition",
        &rows,
    )?;
    if check {
        checks.push(CheckResult {
            name: "spin_glass_certification_rate".into(),
            pass: successes * 200 >= draws * 199,
            detail: format!(
                "{successes}/{draws} certified ({event_fails} spectral-event failures)"
            ),
        });
    }
    if cfg.str_or("experiment.relaxation", "false") == "true" {
        spin_glass_relaxation(cfg, writer, check, checks)?;
    }
    Ok(())
}

/// Two-time-scale relaxation on one disorder draw: spins settle on an
/// order-one time while the fields need a time of order lambda. Writes
/// the block-mean trajectories and, in check mode, requires the measured
/// relaxation-time ratio to reach lambda/2.
fn spin_glass_relaxation(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let p = build_potential(cfg)?;
    let n = cfg.usize("potential.N")?;
    let mut sim = build_sim(cfg)?;
    if sim.record_times.len() <= 1 {
        let mut times: Vec<f64> = (0..100).map(|k| 0.05 * k as f64).collect();
        times.extend((5..=(sim.t_max as usize)).map(|k| k as f64));
        sim.record_times = times;
    }
    let stats = simulate(&sim, &p, &[], false)?;
    let block_mean = |point: &crate::dynamics::RecordPoint, fast: bool| -> f64 {
        let range = if fast { 0..n } else { n..2 * n };
        point.mean[range].iter().sum::<f64>() / n as f64
    };
    let mut rows = Vec::with_capacity(stats.points.len());
    let s_series: Vec<(f64, f64)> = stats
        .points
        .iter()
        .map(|pt| (pt.actual_t, block_mean(pt, true)))
        .collect();
    let y_series: Vec<(f64, f64)> = stats
        .points
        .iter()
        .map(|pt| (pt.actual_t, block_mean(pt, false)))
        .collect();
    for ((t, s), (_, y)) in s_series.iter().zip(&y_series) {
        rows.push(fmt_row(&[*t, *s, *y]));
    }
    writer.write_csv("relaxation.csv", "t,mean_s,mean_y", &rows)?;
    if check {
        let crossing = |series: &[(f64, f64)], target: f64| -> f64 {
            let start = series[0].1;
            let threshold = (start - target).abs() / std::f64::consts::E;
            let mut hits = 0;
            for (t, v) in series {
                if (v - target).abs() <= threshold {
                    hits += 1;
                    if hits >= 3 {
                        return *t;
                    }
                } else {
                    hits = 0;
                }
            }
            f64::INFINITY
        };
        let s_ref = s_series
            .iter()
            .find(|(t, _)| *t >= 4.95)
            .map(|(_, v)| *v)
            .unwrap_or(s_series.last().map(|(_, v)| *v).unwrap_or(0.0));
        let y_ref = y_series.last().map(|(_, v)| *v).unwrap_or(0.0);
        let tau_s = crossing(&s_series, s_ref);
        let tau_y = crossing(&y_series, y_ref);
        let ratio = tau_y / tau_s;
        checks.push(CheckResult {
            name: "spin_glass_relaxation_separation".into(),
            pass: ratio >= sim.lambda / 2.0,
            detail: format!(
                "tau_s = {tau_s:.2}, tau_y = {tau_y:.1}, ratio {ratio:.0} (>= {})",
                sim.lambda / 2.0
            ),
        });
    }
    Ok(())
}

fn run_rank_one(
    cfg: &Config,
    writer: &mut OutputWriter,
    check: bool,
    checks: &mut Vec<CheckResult>,
) -> Result<(), HarnessError> {
    let p = build_potential(cfg)?;
    let Potential::RankOne(r) = &p else {
        return Err(HarnessError::NeedsQuadratic {
            kind: "rank-one",
            got: "non-rank-one".into(),
        });
    };
    let gamma_ratio = r.n1 as f64 / r.total_dim() as f64;
    let tau0 = cfg.f64_or("experiment.tau0", 0.2)?;
    let tau1 = cfg.f64_or("experiment.tau1", 0.2)?;
    let tau2 = cfg.f64_or("experiment.tau2", 0.2)?;
    let cond = rank_one_conditions(
        r.u_mass,
        r.v_mass,
        r.u_quartic,
        r.v_quartic,
        r.snr,
        gamma_ratio,
        tau0,
        tau1,
        tau2,
        1.0,
        1.0,
    );
    let n_states = cfg.usize_or("experiment.hessian_samples", 50)?;
    let mut rows = Vec::with_capacity(n_states);
    let mut min_eig = f64::INFINITY;
    for idx in 0..n_states {
        let draw = |k: u64, c: u64| crate::rng::counter_normal(991, idx as u64, k, c);
        let u: Vec<f64> = (0..r.n1).map(|k| draw(k as u64, 0)).collect();
        let v: Vec<f64> = (0..r.n2).map(|k| draw(k as u64, 1)).collect();
        let (h11, h12, h22) = p.hessian_blocks(&u, &v)?;
        let d1 = r.n1;
        let d = r.total_dim();
        let mut full = nalgebra::DMatrix::zeros(d, d);
        full.view_mut((0, 0), (d1, d1)).copy_from(&h11);
        full.view_mut((0, d1), (d1, r.n2)).copy_from(&h12);
        full.view_mut((d1, 0), (r.n2, d1))
            .copy_from(&h12.transpose());
        full.view_mut((d1, d1), (r.n2, r.n2)).copy_from(&h22);
        let lam = full.symmetric_eigen().eigenvalues.min();
        min_eig = min_eig.min(lam);
        rows.push(fmt_row(&[idx as f64, lam]));
    }
    writer.write_csv("rank_one.csv", "state,lambda_min", &rows)?;
    let kv = format!(
        "cond1 = {}\ncond2 = {}\nk_tau = {}\nalpha = {}\nmin_sampled_lambda = {}\n",
        cond.cond1, cond.cond2, cond.k_tau, cond.alpha, min_eig
    );
    writer.write_text("rank_one_report.txt", &kv)?;
    if check {
        checks.push(CheckResult {
            name: "rank_one_conditions".into(),
            pass: cond.cond1 && cond.cond2,
            detail: format!("cond1 = {}, cond2 = {}", cond.cond1, cond.cond2),
        });
        checks.push(CheckResult {
            name: "rank_one_sampled_hessian".into(),
            pass: min_eig >= cond.alpha - 0.05,
            detail: format!("min lambda {min_eig:.4} vs alpha {:.4}", cond.alpha),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// Runs the experiment once per value of `key`, writing each run into its
/// own subdirectory and an aggregated summary CSV at the top.
pub fn sweep(
    kind: ExperimentKind,
    cfg: &Config,
    spec: &str,
    out_dir: &Path,
    check: bool,
) -> Result<RunReport, HarnessError> {
    let (key, list) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::BadSweepSpec(spec.to_string()))?;
    let values: Vec<f64> = list
        .split(',')
        .map(|tok| tok.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| HarnessError::BadSweepSpec(spec.to_string()))?;
    if values.is_empty() {
        return Err(HarnessError::BadSweepSpec(spec.to_string()));
    }
    let wall = Instant::now();
    let mut writer = OutputWriter::new(out_dir)?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (idx, value) in values.iter().enumerate() {
        let mut local = cfg.clone();
        local.set(key, &format!("{value}"));
        let sub = out_dir.join(format!("sweep_{idx}"));
        let report = run(kind, &local, &sub, check)?;
        checks.extend(report.checks.iter().cloned().map(|mut c| {
            c.name = format!("{key}={value}:{}", c.name);
            c
        }));
        let summary = sweep_summary(kind, &local)?;
        let mut cols = vec![*value];
        cols.extend(summary.iter().map(|(_, v)| *v));
        rows.push(fmt_row(&cols));
        if idx == 0 {
            let mut header = String::from("value");
            for (name, _) in &summary {
                header.push(',');
                header.push_str(name);
            }
            rows.insert(0, header);
        }
    }
    let header = rows.remove(0);
    writer.write_csv("sweep.csv", &header, &rows)?;
    writer.finish_manifest(kind, cfg, wall, &checks)?;
    let outputs: Vec<PathBuf> = writer.outputs.iter().map(|(p, _)| p.clone()).collect();
    Ok(RunReport {
        kind,
        outputs,
        checks,
    })
}

/// Scalar summary per kind used in the sweep rows.
fn sweep_summary(
    kind: ExperimentKind,
    cfg: &Config,
) -> Result<Vec<(&'static str, f64)>, HarnessError> {
    match kind {
        ExperimentKind::Envelope | ExperimentKind::Lsi => {
            let (report, p, sim) = lsi_pipeline(cfg)?;
            let d1_residual = report.c0 / (2.0 * report.c1 * sim.lambda);
            let params = EnvelopeParams {
                c1: report.c1,
                c2: report.c2,
                c0: report.c0,
                c0_tilde: report.c0_tilde,
                eta: report.eta,
                epsilon: report.epsilon,
                d1_init: 0.0,
                d2_init: 0.0,
                lambda: sim.lambda,
            };
            let d2_residual = envelope_d2(1e9 * sim.lambda, &params)?;
            let mut out = vec![
                ("d1_env_residual", d1_residual),
                ("d2_env_residual", d2_residual),
            ];
            if let Ok(q) = quadratic_of(&p, "sweep") {
                let sys = OuSystem::build(q, sim.beta1, sim.beta2, sim.lambda)?;
                out.push(("d_stationary_gap", sys.stationary_gap()?.d));
            }
            Ok(out)
        }
        ExperimentKind::Simulate => {
            let p = build_potential(cfg)?;
            let mut sim = build_sim(cfg)?;
            let q = quadratic_of(&p, "sweep simulate")?;
            let sys = OuSystem::build(q, sim.beta1, sim.beta2, sim.lambda)?;
            let (x0, y0) = point_init(&sim);
            let reseeds = cfg.usize_or("experiment.reseeds", 1)?;
            let base_seed = sim.seed;
            let mut errors = Vec::with_capacity(reseeds);
            for k in 0..reseeds {
                sim.seed = base_seed + k as u64;
                let stats = simulate(&sim, &p, &[], false)?;
                let point = stats.points.last().expect("at least one record");
                let om = sys.covariance_at(point.actual_t);
                let mu = sys.mean_at(point.actual_t, x0, y0);
                let mut err: f64 = 0.0;
                for (kk, ll) in [(0, 0), (0, 1), (1, 1)] {
                    err = err.max((point.cov[(kk, ll)] - om[(kk, ll)]).abs());
                }
                err = err
                    .max((point.mean[0] - mu[0]).abs())
                    .max((point.mean[1] - mu[1]).abs());
                errors.push(err);
            }
            errors.sort_by(f64::total_cmp);
            Ok(vec![("median_abs_error", errors[errors.len() / 2])])
        }
        _ => Ok(vec![]),
    }
}
