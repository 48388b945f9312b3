//! Deterministic low-discrepancy sequences used by the condition probes and
//! the test-direction generator. Halton points are reproducible across runs
//! and platforms, which keeps worst-case condition reports stable.

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical-inverse of `n` in the given base, in [0,1).
pub fn van_der_corput(mut n: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut x = 0.0;
    while n > 0 {
        x += (n % base as u64) as f64 * inv;
        n /= base as u64;
        inv /= b;
    }
    x
}

/// The `index`-th Halton point in `dims` dimensions (dims <= 16).
/// Index 0 maps to the origin-ish corner, so callers usually start at 1.
pub fn halton_point(index: u64, dims: usize) -> Vec<f64> {
    assert!(dims <= PRIMES.len(), "halton_point supports up to 16 dims");
    (0..dims).map(|d| van_der_corput(index, PRIMES[d])).collect()
}
