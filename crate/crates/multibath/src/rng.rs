//! Counter-based random number generation.
//!
//! Every variate is a pure function of a 64-bit seed and a counter
//! `(stream, step, slot)`, so parallel generation over particles is
//! bit-reproducible regardless of worker count or evaluation order.
//! The mixer is the SplitMix64 finalizer applied to the absorbed counter
//! words, which is more than adequate for Monte-Carlo statistics.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const SALT: u64 = 0x6A09_E667_F3BC_C909;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, w: u64) -> u64 {
    mix64(h.wrapping_add(GOLDEN).wrapping_add(w))
}

/// Mixes `(seed, a, b, c)` into a single pseudo-random 64-bit word.
#[inline]
pub fn counter_u64(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = mix64(seed ^ SALT);
    h = absorb(h, a);
    h = absorb(h, b);
    h = absorb(h, c);
    h
}

/// Uniform variate in (0, 1], using the top 53 bits of the counter word.
#[inline]
pub fn counter_uniform(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    ((counter_u64(seed, a, b, c) >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// A Box-Muller pair of independent standard normals for one counter.
#[inline]
pub fn counter_normal_pair(seed: u64, stream: u64, step: u64, pair: u64) -> (f64, f64) {
    let u1 = counter_uniform(seed, stream, step, 2 * pair);
    let u2 = counter_uniform(seed, stream, step, 2 * pair + 1);
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (r * th.cos(), r * th.sin())
}

/// Standard normal addressed by `(seed, stream, step, component)`.
///
/// Components 2k and 2k+1 share one Box-Muller pair.
#[inline]
pub fn counter_normal(seed: u64, stream: u64, step: u64, component: u64) -> f64 {
    let (z0, z1) = counter_normal_pair(seed, stream, step, component / 2);
    if component.is_multiple_of(2) {
        z0
    } else {
        z1
    }
}

/// Fills `out` with the normals for components `0..out.len()` of one
/// `(seed, stream, step)` counter, drawing whole Box-Muller pairs.
#[inline]
pub fn fill_normals(seed: u64, stream: u64, step: u64, out: &mut [f64]) {
    let mut k = 0;
    while k + 1 < out.len() {
        let (z0, z1) = counter_normal_pair(seed, stream, step, (k / 2) as u64);
        out[k] = z0;
        out[k + 1] = z1;
        k += 2;
    }
    if k < out.len() {
        out[k] = counter_normal(seed, stream, step, k as u64);
    }
}
