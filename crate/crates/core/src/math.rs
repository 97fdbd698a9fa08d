//! Float helpers backed by `libm` so the crate stays `no_std`.

pub use core::f64::consts::PI;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Cosine masking schedule `cos(pi r / 2)`: 1 at r = 0, 0 at r = 1.
#[inline]
pub fn cosine_schedule(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else if r <= 0.0 {
        1.0
    } else {
        cos(PI * r / 2.0)
    }
}

/// Number of units left masked for schedule fraction `r` out of `n` units.
///
/// `ceil(gamma(r) * n)`, with the endpoint r = 1 pinned to zero so float
/// residue of `cos(pi/2)` never leaves a stray unit.
pub fn masked_count(r: f64, n: usize) -> usize {
    if r >= 1.0 || n == 0 {
        return 0;
    }
    let x = cosine_schedule(r) * n as f64;
    // absorb float noise just above an integer
    let c = ceil(x - 1e-9);
    (c.max(0.0) as usize).min(n)
}

/// Dot product with four independent accumulators (fixed order, deterministic).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
