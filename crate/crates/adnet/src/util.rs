//! Shared numerical plumbing: seeded counter-based RNG streams, fixed-order
//! reductions, quadrature nodes and the RK4 stepping core.

use crate::error::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 mixing step.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-key RNG stream.
///
/// Streams keyed by e.g. `(replica, i, j)` are independent of iteration
/// order and of how many other streams were drawn, so initial data are
/// reproducible across thread counts and run layouts.
pub fn stream_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, key))
}

/// Derived seed for an independent keyed sub-stream.
pub fn subseed(seed: u64, key: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x51_7C_C1_B7_27_22_0A_95);
    for &k in key {
        h = splitmix64(h ^ k);
    }
    h
}

/// Pairwise (tree) summation in fixed ascending order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        let mut acc = 0.0;
        for &x in v {
            acc += x;
        }
        acc
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn require_finite(v: &[f64], what: &str) -> Result<()> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite value in {what}")))
    }
}

/// Midpoint of the k-th of n equal cells of the unit interval (0-based k).
pub fn cell_midpoint(k: usize, n: usize) -> f64 {
    (2 * k + 1) as f64 / (2 * n) as f64
}

/// Gauss-Legendre nodes and weights on the reference interval for q in 1..=5.
pub fn gauss_legendre(q: usize) -> (&'static [f64], &'static [f64]) {
    const N1: [f64; 1] = [0.0];
    const W1: [f64; 1] = [2.0];
    const N2: [f64; 2] = [-0.5773502691896257, 0.5773502691896257];
    const W2: [f64; 2] = [1.0, 1.0];
    const N3: [f64; 3] = [-0.7745966692414834, 0.0, 0.7745966692414834];
    const W3: [f64; 3] = [0.5555555555555556, 0.8888888888888888, 0.5555555555555556];
    const N4: [f64; 4] = [
        -0.8611363115940526,
        -0.33998104358485626,
        0.33998104358485626,
        0.8611363115940526,
    ];
    const W4: [f64; 4] = [
        0.34785484513745385,
        0.6521451548625461,
        0.6521451548625461,
        0.34785484513745385,
    ];
    const N5: [f64; 5] = [
        -0.906179845938664,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.906179845938664,
    ];
    const W5: [f64; 5] = [
        0.23692688505618908,
        0.47862867049936647,
        0.5688888888888889,
        0.47862867049936647,
        0.23692688505618908,
    ];
    match q {
        1 => (&N1, &W1),
        2 => (&N2, &W2),
        3 => (&N3, &W3),
        4 => (&N4, &W4),
        5 => (&N5, &W5),
        _ => panic!("gauss_legendre supports 1..=5 nodes, got {q}"),
    }
}

/// Scratch buffers for one classical RK4 step on a flat state vector.
pub(crate) struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(len: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }
}

/// One classical fourth-order Runge-Kutta step, in place.
pub(crate) fn rk4_step(
    t: f64,
    h: f64,
    y: &mut [f64],
    scratch: &mut Rk4Scratch,
    rhs: &mut dyn FnMut(f64, &[f64], &mut [f64]),
) {
    let n = y.len();
    rhs(t, y, &mut scratch.k1);
    for i in 0..n {
        scratch.tmp[i] = y[i] + 0.5 * h * scratch.k1[i];
    }
    rhs(t + 0.5 * h, &scratch.tmp, &mut scratch.k2);
    for i in 0..n {
        scratch.tmp[i] = y[i] + 0.5 * h * scratch.k2[i];
    }
    rhs(t + 0.5 * h, &scratch.tmp, &mut scratch.k3);
    for i in 0..n {
        scratch.tmp[i] = y[i] + h * scratch.k3[i];
    }
    rhs(t + h, &scratch.tmp, &mut scratch.k4);
    for i in 0..n {
        y[i] += h / 6.0
            * (scratch.k1[i] + 2.0 * scratch.k2[i] + 2.0 * scratch.k3[i] + scratch.k4[i]);
    }
}

/// Fixed-step RK4 driver over [0, horizon].
///
/// The step counter drives the clock (`t = k * dt`); the last step is
/// shortened so the terminal time equals `horizon` exactly. `normalize`
/// runs after every step (the particle solvers re-zero weight diagonals
/// there), `record` is called at t = 0, every `record_every`-th step and
/// at the terminal time.
pub(crate) fn integrate_fixed_step(
    y: &mut [f64],
    horizon: f64,
    dt: f64,
    record_every: usize,
    rhs: &mut dyn FnMut(f64, &[f64], &mut [f64]),
    normalize: &mut dyn FnMut(&mut [f64]),
    record: &mut dyn FnMut(usize, f64, &[f64]),
) -> Result<()> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::domain(format!("step size must be positive, got {dt}")));
    }
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(Error::domain(format!("horizon must be nonnegative, got {horizon}")));
    }
    let record_every = record_every.max(1);
    let eps = 1e-12 * horizon.max(1.0);
    normalize(y);
    record(0, 0.0, y);
    let mut step = 0usize;
    let mut t = 0.0;
    let mut scratch = Rk4Scratch::new(y.len());
    while t < horizon - eps {
        let h = if t + dt <= horizon { dt } else { horizon - t };
        rk4_step(t, h, y, &mut scratch, rhs);
        step += 1;
        let full = step as f64 * dt;
        t = if full <= horizon { full } else { horizon };
        normalize(y);
        if !all_finite(y) {
            return Err(Error::BlowUp { step, t });
        }
        let at_end = t >= horizon - eps;
        if step % record_every == 0 || at_end {
            record(step, t, y);
        }
    }
    Ok(())
}
