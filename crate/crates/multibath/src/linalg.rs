//! Small numerical helpers shared across modules: a series 2x2 matrix
//! exponential, Gauss-Legendre rules, log-sum-exp, and order-fixed
//! pairwise summation.

use nalgebra::Matrix2;

/// exp(M) for a 2x2 matrix by scaling and squaring with a Taylor core.
///
/// Deliberately independent of any eigendecomposition so it can serve as
/// an oracle for spectral closed forms.
pub fn expm2_series(m: &Matrix2<f64>) -> Matrix2<f64> {
    let norm = m.abs().sum();
    let k = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / f64::powi(2.0, k as i32);
    let mut term = Matrix2::identity();
    let mut acc = Matrix2::identity();
    for j in 1..=20 {
        term = (term * scaled) / j as f64;
        acc += term;
        if term.abs().max() < 1e-18 {
            break;
        }
    }
    for _ in 0..k {
        acc = acc * acc;
    }
    acc
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre_with_derivative(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre nodes/weights mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

/// log(sum_i exp(v_i)) without overflow; -inf for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Pairwise summation in a fixed tree shape, so the result does not
/// depend on chunking or thread count upstream.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym2_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let tr = m[(0, 0)] + m[(1, 1)];
    let gap = m[(0, 0)] - m[(1, 1)];
    let disc = (gap * gap + 4.0 * m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt();
    (0.5 * (tr - disc), 0.5 * (tr + disc))
}
