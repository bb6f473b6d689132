//! Log-Sobolev constants and the convergence-rate envelopes: the
//! convexity and perturbation criteria, the Schur-complement bound for the
//! marginal, uniform moment bounds, the c0 / c0~ remainder constants, the
//! two envelope formulas with their Gronwall comparison system, and the
//! disorder conditions for the spin-glass and rank-one examples.

use nalgebra::{DMatrix, Matrix2, Vector2};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::linalg::expm2_series;
use crate::potential::{ConfinementData, ConvexBoundedSplit, PolyBound, Potential};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("singular fast-block Hessian in Schur complement")]
    SingularBlock,
    #[error("eta must lie in (0, 2), got {0}")]
    BadEta(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("lambda = {lambda} below the envelope threshold max(1, c2/c1) = {threshold}")]
    LambdaTooSmall { lambda: f64, threshold: f64 },
    #[error("comparison system needs nonpositive off-diagonal entries, got {0}")]
    MonotonicityViolation(f64),
    #[error("comparison matrix is singular")]
    SingularSystem,
    #[error("moment power must be nonnegative, got {0}")]
    BadPower(f64),
    #[error("no empirical moment available at or above power {0}")]
    MissingMoment(f64),
}

// ---------------------------------------------------------------------------
// LSI criteria
// ---------------------------------------------------------------------------

/// Strong convexity alpha at inverse temperature beta gives the LSI
/// constant beta * alpha.
pub fn bakry_emery(alpha: f64, beta: f64) -> f64 {
    beta * alpha
}

/// A bounded perturbation of oscillation `osc` degrades an LSI constant by
/// exp(-beta osc).
pub fn holley_stroock(c0: f64, beta: f64, osc: f64) -> f64 {
    c0 * (-beta * osc).exp()
}

/// S = H22 - H12' H11^-1 H12.
pub fn schur_complement(
    h11: &DMatrix<f64>,
    h12: &DMatrix<f64>,
    h22: &DMatrix<f64>,
) -> Result<DMatrix<f64>, BoundsError> {
    let solved = h11
        .clone()
        .lu()
        .solve(h12)
        .ok_or(BoundsError::SingularBlock)?;
    Ok(h22 - h12.transpose() * solved)
}

/// Conditional and marginal LSI rates from a certified split:
/// c1 = alpha1 exp(-beta1 osc), c2 = alpha2 exp(-beta2 osc).
#[derive(Debug, Clone, Copy)]
pub struct LsiConstants {
    pub c1: f64,
    pub c2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub osc_vb: f64,
}

pub fn lsi_constants(split: &ConvexBoundedSplit, beta1: f64, beta2: f64) -> LsiConstants {
    LsiConstants {
        c1: holley_stroock(split.alpha1, beta1, split.osc_vb),
        c2: holley_stroock(split.alpha2, beta2, split.osc_vb),
        alpha1: split.alpha1,
        alpha2: split.alpha2,
        osc_vb: split.osc_vb,
    }
}

// ---------------------------------------------------------------------------
// Uniform moment bounds
// ---------------------------------------------------------------------------

/// Initial-law moments consumed by the bound formulas.
#[derive(Debug, Clone, Copy)]
pub enum InitMoments {
    /// Point mass with given squared block norms.
    Point { x1_sq: f64, x2_sq: f64 },
    /// Centered isotropic Gaussian with standard deviation `std`.
    IsotropicGaussian { std: f64, d1: usize, d2: usize },
}

impl InitMoments {
    /// E |x|^s over the initial law.
    pub fn joint_moment(&self, s: f64) -> f64 {
        match self {
            InitMoments::Point { x1_sq, x2_sq } => (x1_sq + x2_sq).powf(s / 2.0),
            InitMoments::IsotropicGaussian { std, d1, d2 } => {
                let d = (d1 + d2) as f64;
                std.powf(s) * 2f64.powf(s / 2.0) * gamma(s / 2.0 + d / 2.0) / gamma(d / 2.0)
            }
        }
    }

    /// E |x1|^s over the initial law.
    pub fn fast_moment(&self, s: f64) -> f64 {
        match self {
            InitMoments::Point { x1_sq, .. } => x1_sq.powf(s / 2.0),
            InitMoments::IsotropicGaussian { std, d1, .. } => {
                let d = *d1 as f64;
                std.powf(s) * 2f64.powf(s / 2.0) * gamma(s / 2.0 + d / 2.0) / gamma(d / 2.0)
            }
        }
    }
}

/// M_{2r}: uniform-in-time bound on E[v_lambda^r] with
/// v_lambda = |x1|^2/lambda + |x2|^2, from the joint drift condition
/// x . grad V >= a |x|^2 - a0. Convention 0^0 = 1 at r = 1.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_m(
    r: f64,
    a: f64,
    a0: f64,
    beta1: f64,
    beta2: f64,
    d1: usize,
    d2: usize,
    init_moment_2r: f64,
) -> f64 {
    assert!(r >= 1.0, "moment index r must be >= 1");
    let k = a0 + d1 as f64 / beta1 + d2 as f64 / beta2 + 2.0 * (r - 1.0) / beta1.min(beta2);
    let power_term = if r == 1.0 {
        1.0
    } else {
        (r - 1.0).powf(r - 1.0)
    };
    init_moment_2r + 2f64.powf(r) * power_term / (a.powf(r) * r.powf(r)) * (k / r).powf(r)
}

/// Bundles the confinement constants and initial moments behind the
/// moment-bound formulas.
#[derive(Debug, Clone)]
pub struct MomentBounds {
    pub beta1: f64,
    pub beta2: f64,
    pub d1: usize,
    pub d2: usize,
    /// Joint drift constants (a, a0) from x . grad V >= a|x|^2 - a0.
    pub drift: (f64, f64),
    /// Fast drift constants (a1, a2, p, a0).
    pub fast_drift: (f64, f64, f64, f64),
    pub init: InitMoments,
}

impl MomentBounds {
    pub fn for_potential(p: &Potential, beta1: f64, beta2: f64, init: InitMoments) -> Self {
        let data = p.confinement_data();
        Self {
            beta1,
            beta2,
            d1: p.d1(),
            d2: p.d2(),
            drift: data.drift,
            fast_drift: data.fast_drift,
            init,
        }
    }

    /// Bound on sup_t E[v_lambda^r], r >= 1.
    pub fn v_lambda(&self, r: f64) -> f64 {
        moment_bound_m(
            r,
            self.drift.0,
            self.drift.1,
            self.beta1,
            self.beta2,
            self.d1,
            self.d2,
            self.init.joint_moment(2.0 * r),
        )
    }

    /// Bound on sup_t E |x2|^s for any s >= 0 (interpolating below s = 2).
    pub fn slow(&self, s: f64) -> f64 {
        if s == 0.0 {
            1.0
        } else if s >= 2.0 {
            self.v_lambda(s / 2.0)
        } else {
            1.0 - s / 2.0 + s / 2.0 * self.v_lambda(1.0)
        }
    }

    /// M'_s: bound on sup_t E |x1|^s from the fast drift condition.
    pub fn fast(&self, s: f64) -> f64 {
        let (a1, a2, p, a0) = self.fast_drift;
        if s == 0.0 {
            1.0
        } else if s > 2.0 {
            let k = a0 + (self.d1 as f64 + s - 2.0) / self.beta1;
            let m_r = young_residual(s, a1, a2 * (s - 2.0) / (s - 1.0), k);
            self.init.fast_moment(s) + (4.0 * a2 * self.slow(p * s / 2.0) + s * m_r) / (s * a1)
        } else if s == 2.0 {
            self.init.fast_moment(2.0) + (a2 * self.slow(p) + a0 + self.d1 as f64 / self.beta1) / a1
        } else {
            1.0 - s / 2.0 + s / 2.0 * self.fast(2.0)
        }
    }
}

/// -min over xi >= 0 of (a1/2) xi^r - b xi^(r-1) - c xi^(r-2), for r > 2;
/// the positive critical point solves a quadratic exactly.
fn young_residual(r: f64, a1: f64, b: f64, c: f64) -> f64 {
    let disc = b * b * (r - 1.0) * (r - 1.0) + 2.0 * a1 * r * c * (r - 2.0);
    let xi = (b * (r - 1.0) + disc.max(0.0).sqrt()) / (a1 * r);
    if xi <= 0.0 {
        return 0.0;
    }
    let g = 0.5 * a1 * xi.powf(r) - b * xi.powf(r - 1.0) - c * xi.powf(r - 2.0);
    (-g.min(0.0)).max(0.0)
}

/// Conditional polynomial bound <|x1|^r>_*(x2) <= C0 + C1 |x2|^s, from the
/// confinement sandwich
/// a1|x1|^2 + a2|x2|^2 - a0 <= V <= g1|x1|^m1 + g2|x2|^m2 + g0.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalPolyBound {
    pub c0: f64,
    pub c1: f64,
    pub s: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn conditional_poly_bound(
    r: f64,
    a1: f64,
    a0: f64,
    g1: f64,
    m1: f64,
    g2: f64,
    m2: f64,
    g0: f64,
    beta1: f64,
) -> ConditionalPolyBound {
    let s = r * m2 / 2.0;
    let c1 = (2.0 * g2 / a1).powf(r / 2.0);
    let c0 = (beta1 * g1).powf(1.0 / m1) * gamma((r + 1.0) / 2.0)
        / (2.0 * (beta1 * a1 / 2.0).powf((r + 1.0) / 2.0) * gamma(1.0 + 1.0 / m1))
        * (beta1 * (a0 + g0)).exp();
    ConditionalPolyBound { c0, c1, s }
}

// ---------------------------------------------------------------------------
// The remainder constants c0 and c0~
// ---------------------------------------------------------------------------

/// How the time-uniform moments entering c0 / c0~ are supplied.
pub enum MomentSource<'a> {
    /// Rigorous route through the M / M' bound formulas.
    Analytic(&'a MomentBounds),
    /// Observed sup-over-time moments from a simulation, as
    /// (power, value) tables per block. Not rigorous; labeled as such.
    Empirical {
        fast: &'a [(f64, f64)],
        slow: &'a [(f64, f64)],
    },
}

impl MomentSource<'_> {
    fn fast(&self, s: f64) -> Result<f64, BoundsError> {
        match self {
            MomentSource::Analytic(m) => Ok(m.fast(s)),
            MomentSource::Empirical { fast, .. } => lookup_moment(fast, s),
        }
    }

    fn slow(&self, s: f64) -> Result<f64, BoundsError> {
        match self {
            MomentSource::Analytic(m) => Ok(m.slow(s)),
            MomentSource::Empirical { slow, .. } => lookup_moment(slow, s),
        }
    }

    pub fn is_rigorous(&self) -> bool {
        matches!(self, MomentSource::Analytic(_))
    }
}

/// E|x|^s from a (power, value) table: exact match, or Jensen domination
/// from the smallest available power above s.
fn lookup_moment(table: &[(f64, f64)], s: f64) -> Result<f64, BoundsError> {
    if s < 0.0 {
        return Err(BoundsError::BadPower(s));
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    if let Some((_, v)) = table.iter().find(|(p, _)| (*p - s).abs() < 1e-12) {
        return Ok(*v);
    }
    table
        .iter()
        .filter(|(p, _)| *p > s)
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(p, v)| v.powf(s / p))
        .ok_or(BoundsError::MissingMoment(s))
}

fn conditional_consts(data: &ConfinementData, beta1: f64, r: f64) -> ConditionalPolyBound {
    let (a1, _, a0) = data.lower;
    let (g1, m1, g2, m2, g0) = data.upper;
    conditional_poly_bound(r, a1, a0, g1, m1, g2, m2, g0, beta1)
}

/// Bound on the integral of a slow-derivative polynomial against rho_t.
fn poly_vs_rho(pb: &PolyBound, src: &MomentSource) -> Result<f64, BoundsError> {
    Ok(pb.c0 + pb.c1 * src.fast(pb.r1)? + pb.c2 * src.slow(pb.r2)?)
}

/// Bound on the integral of the conditional average of the polynomial
/// against the slow marginal: fast moments go through the conditional
/// bound, slow moments through the uniform tables.
fn poly_vs_cond(
    pb: &PolyBound,
    data: &ConfinementData,
    beta1: f64,
    src: &MomentSource,
) -> Result<f64, BoundsError> {
    let cond = conditional_consts(data, beta1, pb.r1);
    Ok(pb.c0 + pb.c1 * (cond.c0 + cond.c1 * src.slow(cond.s)?) + pb.c2 * src.slow(pb.r2)?)
}

/// Upper bound for the conditional-remainder constant c0: every term of
/// the dissipation remainder is dominated through polynomial growth of the
/// slow-block derivatives, the conditional moment bound, and the uniform
/// moment tables.
pub fn c0_estimate(
    data: &ConfinementData,
    beta1: f64,
    beta2: f64,
    src: &MomentSource,
) -> Result<f64, BoundsError> {
    let grad2_rho = poly_vs_rho(&data.grad2_sq, src)?;
    let grad2_cond = poly_vs_cond(&data.grad2_sq, data, beta1, src)?;
    let lap_rho = poly_vs_rho(&data.slow_lap, src)?;
    let lap_cond = poly_vs_cond(&data.slow_lap, data, beta1, src)?;
    // |hess_2 F| <= <|lap_2 V|>_* + beta1 <|grad_2 V|^2>_*
    let hess_f = lap_cond + beta1 * grad2_cond;
    let c0 = (beta2 / 4.0 - beta1).max(0.0) * grad2_rho
        + beta1 * beta1 / (4.0 * beta2) * grad2_cond
        + (beta1 / 2.0 - 1.0).abs() * 0.5 * (grad2_rho + grad2_cond)
        + beta1 / beta2 * lap_rho
        + beta1 / beta2 * hess_f;
    Ok(c0)
}

/// Upper bound for the marginal-remainder constant c0~:
/// (9/2) beta2^2 (E_rho |grad_2 V|^4 + E_cond |grad_2 V|^4).
pub fn c0_tilde_estimate(
    data: &ConfinementData,
    beta1: f64,
    beta2: f64,
    src: &MomentSource,
) -> Result<f64, BoundsError> {
    let direct = poly_vs_rho(&data.grad2_fourth, src)?;
    let cond = poly_vs_cond(&data.grad2_fourth, data, beta1, src)?;
    Ok(4.5 * beta2 * beta2 * (direct + cond))
}

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

/// Inputs of the two-time-scale envelopes.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeParams {
    pub c1: f64,
    pub c2: f64,
    pub c0: f64,
    pub c0_tilde: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub d1_init: f64,
    pub d2_init: f64,
    pub lambda: f64,
}

impl EnvelopeParams {
    pub fn validate(&self) -> Result<(), BoundsError> {
        if !(self.eta > 0.0 && self.eta < 2.0) {
            return Err(BoundsError::BadEta(self.eta));
        }
        if !(self.epsilon > 0.0) {
            return Err(BoundsError::BadEpsilon(self.epsilon));
        }
        let threshold = 1f64.max(self.c2 / self.c1);
        if self.lambda < threshold {
            return Err(BoundsError::LambdaTooSmall {
                lambda: self.lambda,
                threshold,
            });
        }
        Ok(())
    }

    /// Epsilon minimizing the stationary marginal envelope:
    /// sqrt(R2(inf) / (R3(inf) lambda)).
    pub fn epsilon_star(c0: f64, c1: f64, c0_tilde: f64, lambda: f64) -> f64 {
        (c0 / (2.0 * c1 * c0_tilde * lambda)).sqrt()
    }
}

/// Conditional envelope: D1(0) e^{-2 c1 t} + (1 - e^{-2 c1 t}) c0/(2 c1 lambda).
pub fn envelope_d1(t: f64, lambda: f64, d1_init: f64, c1: f64, c0: f64) -> f64 {
    let e = (-2.0 * c1 * t).exp();
    d1_init * e + (1.0 - e) * c0 / (2.0 * c1 * lambda)
}

/// Marginal envelope with remainders R2, R3 of the two-scale comparison.
pub fn envelope_d2(t: f64, p: &EnvelopeParams) -> Result<f64, BoundsError> {
    p.validate()?;
    let s = p.eta * p.c2 / p.lambda;
    let e_slow = (-s * t).exp();
    let e_fast = (-2.0 * p.c1 * t).exp();
    let r2 = (e_slow - e_fast) * (p.d1_init + p.c0 / (2.0 * p.c1 * p.lambda)) / (2.0 * p.c1 - s)
        + (1.0 - e_slow) * p.c0 / (2.0 * p.eta * p.c1 * p.c2);
    let r3 = (1.0 - e_slow) * p.c0_tilde / (p.eta * p.c2);
    Ok(p.d2_init * e_slow
        + r2 / ((2.0 - p.eta) * p.epsilon * p.lambda)
        + r3 * p.epsilon / (2.0 - p.eta))
}

/// Solution of the comparison system g' = -C g + B at time t:
/// e^{-tC} f0 + (I - e^{-tC}) C^-1 B. Requires the off-diagonal entries of
/// -C to be nonnegative (the componentwise comparison hypothesis).
pub fn gronwall_system(
    c: &Matrix2<f64>,
    b: &Vector2<f64>,
    f0: &Vector2<f64>,
    t: f64,
) -> Result<Vector2<f64>, BoundsError> {
    let off = c[(0, 1)].max(c[(1, 0)]);
    if off > 0.0 {
        return Err(BoundsError::MonotonicityViolation(off));
    }
    let inv = c.try_inverse().ok_or(BoundsError::SingularSystem)?;
    let e = expm2_series(&(-c * t));
    Ok(e * f0 + (Matrix2::identity() - e) * inv * b)
}

/// The comparison matrix and source of the two-scale KL system.
pub fn kl_comparison_system(p: &EnvelopeParams) -> (Matrix2<f64>, Vector2<f64>) {
    let c = Matrix2::new(
        2.0 * p.c1,
        0.0,
        -1.0 / ((2.0 - p.eta) * p.epsilon * p.lambda),
        p.eta * p.c2 / p.lambda,
    );
    let b = Vector2::new(
        p.c0 / p.lambda,
        p.c0_tilde * p.epsilon / ((2.0 - p.eta) * p.lambda),
    );
    (c, b)
}

/// The marginal envelope reassembled from the matrix-exponential entries
/// of the comparison system; must agree with `envelope_d2` identically.
pub fn envelope_d2_from_gronwall(t: f64, p: &EnvelopeParams) -> Result<f64, BoundsError> {
    p.validate()?;
    let (c, b) = kl_comparison_system(p);
    let inv = c.try_inverse().ok_or(BoundsError::SingularSystem)?;
    let e = expm2_series(&(-c * t));
    let asym = inv * b;
    Ok(e[(1, 0)] * (p.d1_init + p.c0 / (2.0 * p.c1 * p.lambda))
        + e[(1, 1)] * p.d2_init
        + (1.0 - e[(1, 1)]) * asym[1])
}

// ---------------------------------------------------------------------------
// Example-specific disorder conditions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SpinGlassCondition {
    pub holds: bool,
    pub k_tau: f64,
    pub threshold: f64,
    pub alpha: f64,
}

/// Convexity condition for the soft-spin glass: the confinement weight
/// must beat the disorder spectral bound plus the coupling-to-field ratio,
/// quartic > K_tau + one_body/field, K_tau = (sqrt(2) + tau) sqrt(two_body).
pub fn spin_glass_condition(
    quartic: f64,
    two_body: f64,
    one_body: f64,
    field: f64,
    tau: f64,
) -> SpinGlassCondition {
    let k_tau = (std::f64::consts::SQRT_2 + tau) * two_body.sqrt();
    let threshold = k_tau + one_body / field;
    let p = quartic - k_tau;
    let q = one_body.sqrt();
    let alpha = 0.5 * (p + field - ((p - field) * (p - field) + 4.0 * q * q).sqrt());
    SpinGlassCondition {
        holds: quartic > threshold,
        k_tau,
        threshold,
        alpha,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RankOneConditions {
    /// Quartic-weights condition A B >= gamma (1 - gamma) snr^2.
    pub cond1: bool,
    /// Mass condition a b > K_tau^2.
    pub cond2: bool,
    pub k_tau: f64,
    pub alpha: f64,
}

/// Convexity conditions for the rank-one estimation potential in the low
/// signal-to-noise regime, with concentration slacks tau0 (noise
/// spectrum), tau1/tau2 (latent norms) and the prior second moments.
#[allow(clippy::too_many_arguments)]
pub fn rank_one_conditions(
    u_mass: f64,
    v_mass: f64,
    u_quartic: f64,
    v_quartic: f64,
    snr: f64,
    gamma_ratio: f64,
    tau0: f64,
    tau1: f64,
    tau2: f64,
    prior_m2_u: f64,
    prior_m2_v: f64,
) -> RankOneConditions {
    let g = gamma_ratio;
    let cond1 = u_quartic * v_quartic >= g * (1.0 - g) * snr * snr;
    let k_tau = snr * g * (1.0 - g) * (prior_m2_u.sqrt() + tau1) * (prior_m2_v.sqrt() + tau2)
        + snr.sqrt() * (g.sqrt() + (1.0 - g).sqrt() + tau0);
    let cond2 = u_mass * v_mass > k_tau * k_tau;
    let gap = u_mass - v_mass;
    let alpha = 0.5 * (u_mass + v_mass - (gap * gap + 4.0 * k_tau * k_tau).sqrt());
    RankOneConditions {
        cond1,
        cond2,
        k_tau,
        alpha,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{certify_split, Quadratic, SampleBox};
    use crate::rng::counter_normal;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn p0() -> Potential {
        Potential::Quadratic(Quadratic::new(2.0, 1.0, 0.5).unwrap())
    }

    fn p0_split() -> ConvexBoundedSplit {
        certify_split(
            &p0(),
            SampleBox {
                half_width1: 3.0,
                half_width2: 3.0,
            },
            256,
            1,
        )
        .unwrap()
    }

    #[test]
    fn bakry_emery_cases() {
        assert_eq!(bakry_emery(1.0, 1.0), 1.0);
        // 1-d Gaussian with variance sigma: alpha = 1/(beta sigma), so the
        // best LSI constant is 1/sigma
        let sigma = 0.37;
        let beta = 2.4;
        assert_relative_eq!(bakry_emery(1.0 / (beta * sigma), beta), 1.0 / sigma);
        assert_relative_eq!(bakry_emery(2.0, 1.0), 2.0);
    }

    #[test]
    fn holley_stroock_cases() {
        assert_eq!(holley_stroock(3.0, 1.0, 0.0), 3.0);
        assert_relative_eq!(holley_stroock(2.0, 1.0, 2f64.ln()), 1.0);
        // spin-glass scale: e^{-(A/2) N} at beta1 = 1, A = 10, N = 20
        assert_relative_eq!(holley_stroock(1.0, 1.0, 100.0), (-100f64).exp());
    }

    #[test]
    fn schur_examples() {
        let h11 = DMatrix::from_element(1, 1, 2.0);
        let h12 = DMatrix::from_element(1, 1, 0.5);
        let h22 = DMatrix::from_element(1, 1, 1.0);
        let s = schur_complement(&h11, &h12, &h22).unwrap();
        assert_relative_eq!(s[(0, 0)], 0.875);
        let z = DMatrix::zeros(1, 1);
        let s = schur_complement(&h11, &z, &h22).unwrap();
        assert_relative_eq!(s[(0, 0)], 1.0);
        let singular = DMatrix::from_element(1, 1, 0.0);
        assert!(schur_complement(&singular, &h12, &h22).is_err());
    }

    #[test]
    fn schur_preserves_eigenvalue_lower_bound() {
        // 200 random SPD 4x4 matrices split into 2+2 blocks
        for trial in 0..200u64 {
            let g = DMatrix::from_fn(4, 4, |i, j| counter_normal(77, trial, i as u64, j as u64));
            let spd = &g * g.transpose() + DMatrix::identity(4, 4) * 0.1;
            let lam_full = spd.clone().symmetric_eigen().eigenvalues.min();
            let h11 = spd.view((0, 0), (2, 2)).into_owned();
            let h12 = spd.view((0, 2), (2, 2)).into_owned();
            let h22 = spd.view((2, 2), (2, 2)).into_owned();
            let s = schur_complement(&h11, &h12, &h22).unwrap();
            let lam_s = s.symmetric_eigen().eigenvalues.min();
            assert!(
                lam_s >= lam_full - 1e-10,
                "trial {trial}: {lam_s} < {lam_full}"
            );
        }
    }

    #[test]
    fn lsi_constants_p0() {
        let k = lsi_constants(&p0_split(), 1.0, 2.0);
        assert_relative_eq!(k.c1, 2.0, epsilon = 1e-12);
        assert_relative_eq!(k.c2, 0.875, epsilon = 1e-12);
    }

    #[test]
    fn lsi_rates_match_ou_eigenvalues_at_large_lambda() {
        use crate::ou_exact::OuSystem;
        let k = lsi_constants(&p0_split(), 1.0, 2.0);
        let mut fast_consts = vec![];
        let mut slow_consts = vec![];
        for lambda in [100.0, 200.0, 400.0] {
            let sys =
                OuSystem::build(Quadratic::new(2.0, 1.0, 0.5).unwrap(), 1.0, 2.0, lambda).unwrap();
            fast_consts.push((sys.gamma1 - k.c1).abs() * lambda);
            slow_consts.push((sys.gamma2 - k.c2 / lambda).abs() * lambda * lambda);
        }
        for w in [&fast_consts, &slow_consts] {
            let max = w.iter().cloned().fold(0.0f64, f64::max);
            let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(max < 4.0 * min.max(1e-9), "unstable constants {w:?}");
        }
    }

    #[test]
    fn moment_bound_m_p0_example() {
        let a = (3.0 - 2f64.sqrt()) / 2.0;
        // standard Gaussian init in 2 coordinates: E|x|^2 = 2
        let m2 = moment_bound_m(1.0, a, 0.0, 1.0, 2.0, 1, 1, 2.0);
        assert_abs_diff_eq!(m2, 2.0 + (2.0 / a) * 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m2, 5.784, epsilon = 1e-3);
    }

    #[test]
    fn moment_bound_m_zero_temperature_limit() {
        let m = moment_bound_m(2.0, 1.0, 0.0, 1e12, 1e12, 1, 1, 3.5);
        assert_abs_diff_eq!(m, 3.5, epsilon = 1e-10);
    }

    #[test]
    fn moment_bounds_interpolation_cases() {
        let mb = MomentBounds {
            beta1: 1.0,
            beta2: 2.0,
            d1: 1,
            d2: 1,
            drift: (0.79, 0.0),
            fast_drift: (1.0, 0.0, 2.0, 0.0),
            init: InitMoments::Point {
                x1_sq: 1.0,
                x2_sq: 1.0,
            },
        };
        // s < 2 interpolation: 1 - s/2 + (s/2) M'_2
        let m2 = mb.fast(2.0);
        assert_relative_eq!(mb.fast(1.0), 0.5 + 0.5 * m2);
        // a2 = 0, s = 2: init + (a0 + d1/beta1)/a1
        assert_relative_eq!(m2, 1.0 + 1.0);
    }

    #[test]
    fn init_moments_gaussian() {
        let g = InitMoments::IsotropicGaussian {
            std: 1.0,
            d1: 1,
            d2: 1,
        };
        assert_relative_eq!(g.joint_moment(2.0), 2.0, max_relative = 1e-12);
        assert_relative_eq!(g.joint_moment(4.0), 8.0, max_relative = 1e-12);
        assert_relative_eq!(g.fast_moment(2.0), 1.0, max_relative = 1e-12);
        assert_relative_eq!(g.fast_moment(4.0), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn conditional_poly_bound_cases() {
        // g2 = 0: conditional moments bounded uniformly in x2
        let b = conditional_poly_bound(2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 2.0, 0.0, 1.0);
        assert_eq!(b.c1, 0.0);
        // r = 0: C0 + C1 >= 1 (the measure is normalized)
        let b = conditional_poly_bound(0.0, 0.4, 0.0, 1.1, 2.0, 1.1, 2.0, 0.0, 1.0);
        assert!(b.c0 + b.c1 >= 1.0, "c0 + c1 = {}", b.c0 + b.c1);
        assert_eq!(b.s, 0.0);
    }

    #[test]
    fn conditional_moment_dominated_on_grid() {
        use crate::stationary::{QuadratureSpec, StationaryMeasure};
        let p = p0();
        let m = StationaryMeasure::for_potential(&p, 1.0, 2.0, QuadratureSpec::default()).unwrap();
        let data = p.confinement_data();
        let (a1, _, a0) = data.lower;
        let (g1, m1, g2, m2, g0) = data.upper;
        let b = conditional_poly_bound(2.0, a1, a0, g1, m1, g2, m2, g0, 1.0);
        for k in 0..41 {
            let y = -4.0 + 0.2 * k as f64;
            let lhs = m.conditional_moment(&[y], 2.0);
            let rhs = b.c0 + b.c1 * y.abs().powf(b.s);
            assert!(lhs <= rhs, "y = {y}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn c0_finite_and_positive_for_p0() {
        let p = p0();
        let data = p.confinement_data();
        let mb = MomentBounds::for_potential(
            &p,
            1.0,
            2.0,
            InitMoments::Point {
                x1_sq: 1.0,
                x2_sq: 1.0,
            },
        );
        let src = MomentSource::Analytic(&mb);
        let c0 = c0_estimate(&data, 1.0, 2.0, &src).unwrap();
        let c0t = c0_tilde_estimate(&data, 1.0, 2.0, &src).unwrap();
        assert!(c0.is_finite() && c0 > 0.0, "c0 = {c0}");
        assert!(c0t.is_finite() && c0t > 0.0, "c0~ = {c0t}");
    }

    #[test]
    fn c0_decoupled_structure() {
        // c = 0: grad_2 V is independent of x1 and the formula stays finite
        let p = Potential::Quadratic(Quadratic::new(2.0, 1.0, 0.0).unwrap());
        let data = p.confinement_data();
        assert_eq!(data.grad2_sq.c1, 0.0);
        let mb = MomentBounds::for_potential(
            &p,
            1.0,
            2.0,
            InitMoments::Point {
                x1_sq: 1.0,
                x2_sq: 1.0,
            },
        );
        let c0 = c0_estimate(&data, 1.0, 2.0, &MomentSource::Analytic(&mb)).unwrap();
        assert!(c0.is_finite());
    }

    #[test]
    fn c0_tilde_bounded_gradient_and_beta_scaling() {
        // |grad_2 V| <= G: c0~ <= 9 beta2^2 G^4
        let g4 = 1.7f64.powi(4);
        let mut data = p0().confinement_data();
        data.grad2_fourth = PolyBound {
            c0: g4,
            c1: 0.0,
            r1: 0.0,
            c2: 0.0,
            r2: 0.0,
        };
        let mb = MomentBounds::for_potential(
            &p0(),
            1.0,
            2.0,
            InitMoments::Point {
                x1_sq: 0.0,
                x2_sq: 0.0,
            },
        );
        let src = MomentSource::Analytic(&mb);
        let c = c0_tilde_estimate(&data, 1.0, 2.0, &src).unwrap();
        assert_relative_eq!(c, 9.0 * 4.0 * g4);
        let c_doubled = c0_tilde_estimate(&data, 1.0, 4.0, &src).unwrap();
        assert_relative_eq!(c_doubled / c, 4.0, max_relative = 1e-12);
    }

    #[test]
    fn empirical_mode_within_order_of_magnitude() {
        let p = p0();
        let data = p.confinement_data();
        let mb = MomentBounds::for_potential(
            &p,
            1.0,
            2.0,
            InitMoments::Point {
                x1_sq: 1.0,
                x2_sq: 1.0,
            },
        );
        let analytic = c0_estimate(&data, 1.0, 2.0, &MomentSource::Analytic(&mb)).unwrap();
        // sup-over-time moments of the exact dynamics from (1,1)
        let fast = [(2.0, 1.1), (4.0, 1.3), (6.0, 2.0)];
        let slow = [(2.0, 1.1), (4.0, 1.4), (6.0, 2.2)];
        let empirical = c0_estimate(
            &data,
            1.0,
            2.0,
            &MomentSource::Empirical {
                fast: &fast,
                slow: &slow,
            },
        )
        .unwrap();
        let ratio = analytic / empirical;
        assert!((0.1..=10.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn envelope_d1_limits() {
        let d1i = 3.0;
        assert_relative_eq!(envelope_d1(0.0, 100.0, d1i, 2.0, 40.0), d1i);
        let plateau = envelope_d1(1e9, 100.0, d1i, 2.0, 40.0);
        assert_relative_eq!(plateau, 40.0 / (2.0 * 2.0 * 100.0), max_relative = 1e-12);
    }

    #[test]
    fn envelope_d2_limits_and_validation() {
        let p = EnvelopeParams {
            c1: 2.0,
            c2: 0.875,
            c0: 40.0,
            c0_tilde: 400.0,
            eta: 1.0,
            epsilon: 0.02,
            d1_init: 3.0,
            d2_init: 5.0,
            lambda: 100.0,
        };
        let v0 = envelope_d2(0.0, &p).unwrap();
        assert_relative_eq!(v0, 5.0, max_relative = 1e-12);
        let mut bad = p;
        bad.eta = 2.5;
        assert!(envelope_d2(1.0, &bad).is_err());
        bad = p;
        bad.lambda = 0.2;
        assert!(envelope_d2(1.0, &bad).is_err());
        bad = p;
        bad.epsilon = 0.0;
        assert!(envelope_d2(1.0, &bad).is_err());
    }

    #[test]
    fn envelope_d2_plateau_scales_as_inverse_sqrt_lambda() {
        let base = |lambda: f64| {
            let eps = EnvelopeParams::epsilon_star(40.0, 2.0, 400.0, lambda);
            let p = EnvelopeParams {
                c1: 2.0,
                c2: 0.875,
                c0: 40.0,
                c0_tilde: 400.0,
                eta: 1.0,
                epsilon: eps,
                d1_init: 0.0,
                d2_init: 0.0,
                lambda,
            };
            envelope_d2(1e9 * lambda, &p).unwrap()
        };
        let r = base(400.0) / base(100.0);
        assert_relative_eq!(r, 0.5, max_relative = 1e-6);
    }

    #[test]
    fn gronwall_diagonal_case() {
        let c = Matrix2::new(2.0, 0.0, 0.0, 0.5);
        let b = Vector2::zeros();
        let f0 = Vector2::new(1.0, 3.0);
        let g = gronwall_system(&c, &b, &f0, 1.3).unwrap();
        assert_relative_eq!(g[0], (-2.0f64 * 1.3).exp(), max_relative = 1e-12);
        assert_relative_eq!(g[1], 3.0 * (-0.5f64 * 1.3).exp(), max_relative = 1e-12);
    }

    #[test]
    fn gronwall_rejects_positive_off_diagonal() {
        let c = Matrix2::new(2.0, 0.3, 0.0, 0.5);
        assert!(gronwall_system(&c, &Vector2::zeros(), &Vector2::zeros(), 1.0).is_err());
    }

    #[test]
    fn gronwall_matches_rk4_oracle() {
        // 50 random admissible (C, B, f0) against a fine Runge-Kutta solve
        for trial in 0..50u64 {
            let r = |k: u64| counter_normal(913, trial, k, 0);
            let c = Matrix2::new(
                1.0 + r(0).abs(),
                -r(1).abs() * 0.3,
                -r(2).abs() * 0.3,
                0.5 + r(3).abs(),
            );
            let b = Vector2::new(r(4).abs(), r(5).abs());
            let f0 = Vector2::new(r(6).abs() * 2.0, r(7).abs() * 2.0);
            let t_end = 2.0;
            let closed = gronwall_system(&c, &b, &f0, t_end).unwrap();
            let mut g = f0;
            let n = 4000;
            let h = t_end / n as f64;
            let rhs = |v: Vector2<f64>| -c * v + b;
            for _ in 0..n {
                let k1 = rhs(g);
                let k2 = rhs(g + k1 * (h / 2.0));
                let k3 = rhs(g + k2 * (h / 2.0));
                let k4 = rhs(g + k3 * h);
                g += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            assert!(
                (closed - g).abs().max() < 1e-8,
                "trial {trial}: gap {}",
                (closed - g).abs().max()
            );
        }
    }

    #[test]
    fn gronwall_monotone_in_source_and_start() {
        for trial in 0..20u64 {
            let r = |k: u64| counter_normal(37, trial, k, 0);
            let c = Matrix2::new(
                1.0 + r(0).abs(),
                -r(1).abs() * 0.4,
                -r(2).abs() * 0.4,
                0.5 + r(3).abs(),
            );
            let b = Vector2::new(r(4).abs(), r(5).abs());
            let f0 = Vector2::new(r(6).abs(), r(7).abs());
            let base = gronwall_system(&c, &b, &f0, 1.0).unwrap();
            let bumped_b = gronwall_system(&c, &(b + Vector2::new(0.1, 0.0)), &f0, 1.0).unwrap();
            let bumped_f = gronwall_system(&c, &b, &(f0 + Vector2::new(0.0, 0.1)), 1.0).unwrap();
            assert!(bumped_b[0] >= base[0] - 1e-13 && bumped_b[1] >= base[1] - 1e-13);
            assert!(bumped_f[0] >= base[0] - 1e-13 && bumped_f[1] >= base[1] - 1e-13);
        }
    }

    #[test]
    fn envelope_d2_matches_gronwall_expansion() {
        let p = EnvelopeParams {
            c1: 2.0,
            c2: 0.875,
            c0: 46.0,
            c0_tilde: 700.0,
            eta: 1.0,
            epsilon: EnvelopeParams::epsilon_star(46.0, 2.0, 700.0, 100.0),
            d1_init: 3.3,
            d2_init: 6.1,
            lambda: 100.0,
        };
        for t in [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            let direct = envelope_d2(t, &p).unwrap();
            let expanded = envelope_d2_from_gronwall(t, &p).unwrap();
            assert_abs_diff_eq!(direct, expanded, epsilon = 1e-12 * (1.0 + direct));
        }
    }

    #[test]
    fn spin_glass_condition_example() {
        let c = spin_glass_condition(10.0, 1.0, 1.0, 1.0, 0.5);
        assert!(c.holds);
        assert_abs_diff_eq!(c.threshold, 2.914, epsilon = 1e-3);
        // footnote eigenvalue: 2 alpha = p + B - sqrt((p + B)^2 - 4 (p B - d0))
        let p = 10.0 - c.k_tau;
        let expect = 0.5 * (p + 1.0 - ((p + 1.0) * (p + 1.0) - 4.0 * (p - 1.0)).sqrt());
        assert_relative_eq!(c.alpha, expect, max_relative = 1e-12);
        assert_abs_diff_eq!(c.alpha, 0.8616, epsilon = 1e-3);
        assert!(!spin_glass_condition(2.0, 1.0, 1.0, 1.0, 0.5).holds);
        // no one-body coupling: the threshold is K_tau alone
        let c = spin_glass_condition(3.0, 1.0, 0.0, 5.0, 0.5);
        assert_relative_eq!(c.threshold, c.k_tau);
    }

    #[test]
    fn rank_one_condition_examples() {
        // equality case of the quartic condition
        let c = rank_one_conditions(1.0, 1.0, 1.0, 1.0, 2.0, 0.5, 0.1, 0.1, 0.1, 1.0, 1.0);
        assert!(c.cond1);
        // zero signal: K_tau vanishes entirely
        let c = rank_one_conditions(1.0, 1.0, 1.0, 1.0, 0.0, 0.5, 0.1, 0.1, 0.1, 1.0, 1.0);
        assert_eq!(c.k_tau, 0.0);
        assert!(c.cond2);
        // doubling the masses preserves cond2 and improves alpha
        let base = rank_one_conditions(2.0, 2.0, 1.0, 1.0, 0.5, 0.5, 0.2, 0.2, 0.2, 1.0, 1.0);
        assert!(base.cond2);
        let doubled = rank_one_conditions(4.0, 4.0, 1.0, 1.0, 0.5, 0.5, 0.2, 0.2, 0.2, 1.0, 1.0);
        assert!(doubled.cond2);
        assert!(doubled.alpha > base.alpha);
    }

    #[test]
    fn lookup_moment_jensen_fallback() {
        let table = [(2.0, 4.0), (4.0, 32.0)];
        assert_relative_eq!(lookup_moment(&table, 2.0).unwrap(), 4.0);
        // missing power 3: Jensen domination from power 4
        assert_relative_eq!(lookup_moment(&table, 3.0).unwrap(), 32f64.powf(0.75));
        assert!(lookup_moment(&table, 6.0).is_err());
        assert_eq!(lookup_moment(&table, 0.0).unwrap(), 1.0);
    }
}
