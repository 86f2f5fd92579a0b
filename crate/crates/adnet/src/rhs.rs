//! Right-hand sides shared by the particle and graph-limit solvers.
//!
//! Both discretizations evaluate the same sums over the same index ranges
//! in the same order; with midpoint cell averages the two systems are the
//! same floating-point computation, which the equivalence tests assert
//! bit for bit.

use crate::kernels::{KernelSpec, WeightDynamicsSpec};
use crate::util::{cell_midpoint, gauss_legendre};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Index range convention for the weight sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumMode {
    /// Full double sum over (i1, j1).
    General,
    /// Excludes i1 = i and j1 = i; requires an x-independent dynamics.
    Restricted,
}

/// Quadrature used for the cell averages of Λ over I_i × I_j.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Evaluate at the cell midpoint; exact for integrands affine in (ξ, ζ)
    /// and the convention that makes particle and continuum coincide.
    #[default]
    Midpoint,
    /// Tensor Gauss-Legendre with q nodes per axis, q in 1..=5.
    Gauss(usize),
}

const PAR_THRESHOLD: usize = 32;

/// Cell average of Λ over I_i × I_j at fixed non-identity arguments.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lambda_cell_avg_raw(
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
    i: usize,
    j: usize,
    n: usize,
    x: &[f64],
    y: &[f64],
    w: f64,
    xt: &[f64],
    yt: &[f64],
    wt: f64,
) -> f64 {
    match quad {
        Quadrature::Midpoint => {
            lam.eval_raw(cell_midpoint(i, n), cell_midpoint(j, n), x, y, w, xt, yt, wt)
        }
        Quadrature::Gauss(q) => {
            let (nodes, weights) = gauss_legendre(q);
            let half = 1.0 / (2.0 * n as f64);
            let mi = cell_midpoint(i, n);
            let mj = cell_midpoint(j, n);
            let mut acc = 0.0;
            for (a, &na) in nodes.iter().enumerate() {
                let xi = mi + half * na;
                for (b, &nb) in nodes.iter().enumerate() {
                    let zeta = mj + half * nb;
                    acc += 0.25 * weights[a] * weights[b]
                        * lam.eval_raw(xi, zeta, x, y, w, xt, yt, wt);
                }
            }
            acc
        }
    }
}

/// Cell average of a separable local factor a_k over I_i × I_j.
#[allow(clippy::too_many_arguments)]
fn local_factor_cell_avg(
    factor: &crate::kernels::LocalFactorFn,
    quad: Quadrature,
    i: usize,
    j: usize,
    n: usize,
    x: &[f64],
    y: &[f64],
    w: f64,
) -> f64 {
    match quad {
        Quadrature::Midpoint => factor(cell_midpoint(i, n), cell_midpoint(j, n), x, y, w),
        Quadrature::Gauss(q) => {
            let (nodes, weights) = gauss_legendre(q);
            let half = 1.0 / (2.0 * n as f64);
            let mi = cell_midpoint(i, n);
            let mj = cell_midpoint(j, n);
            let mut acc = 0.0;
            for (a, &na) in nodes.iter().enumerate() {
                for (b, &nb) in nodes.iter().enumerate() {
                    acc += 0.25 * weights[a] * weights[b]
                        * factor(mi + half * na, mj + half * nb, x, y, w);
                }
            }
            acc
        }
    }
}

/// dx_i = (1/n) Σ_j w_ij φ(t, x_i, x_j), broadcast over state components.
///
/// φ is scalar-valued, so its value drives every component of the state
/// derivative; the desk-scale configurations all use d = 1.
pub(crate) fn drift_into(
    dx: &mut [f64],
    t: f64,
    x: &[f64],
    w: &[f64],
    n: usize,
    d: usize,
    phi: &KernelSpec,
) {
    let inv_n = 1.0 / n as f64;
    let body = |i: usize, out: &mut [f64]| {
        let xi = &x[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for j in 0..n {
            let xj = &x[j * d..(j + 1) * d];
            acc += w[i * n + j] * phi.eval_raw(t, xi, xj);
        }
        let v = acc * inv_n;
        for k in 0..d {
            out[k] = v;
        }
    };
    if n >= PAR_THRESHOLD {
        dx.par_chunks_mut(d).enumerate().for_each(|(i, out)| body(i, out));
    } else {
        for (i, out) in dx.chunks_mut(d).enumerate() {
            body(i, out);
        }
    }
}

/// Generic O(n⁴) weight right-hand side.
///
/// dw_ij = (1/n²) Σ_{i1} Σ_{j1} Λ_ij(x_i, x_j, w_ij, x_{i1}, x_{j1}, w_{i1 j1}),
/// with the restricted mode excluding i1 = i and j1 = i. The diagonal is
/// forced to zero (no self-loops).
#[allow(clippy::too_many_arguments)]
pub(crate) fn weight_rhs_generic_into(
    dw: &mut [f64],
    x: &[f64],
    w: &[f64],
    n: usize,
    d: usize,
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
    mode: SumMode,
) {
    let inv_n2 = 1.0 / (n * n) as f64;
    let body = |i: usize, row: &mut [f64]| {
        let xi = &x[i * d..(i + 1) * d];
        for j in 0..n {
            if i == j {
                row[j] = 0.0;
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            let wij = w[i * n + j];
            let mut acc = 0.0;
            for i1 in 0..n {
                if mode == SumMode::Restricted && i1 == i {
                    continue;
                }
                let xi1 = &x[i1 * d..(i1 + 1) * d];
                for j1 in 0..n {
                    if mode == SumMode::Restricted && j1 == i {
                        continue;
                    }
                    let xj1 = &x[j1 * d..(j1 + 1) * d];
                    acc += lambda_cell_avg_raw(
                        lam,
                        quad,
                        i,
                        j,
                        n,
                        xi,
                        xj,
                        wij,
                        xi1,
                        xj1,
                        w[i1 * n + j1],
                    );
                }
            }
            row[j] = acc * inv_n2;
        }
    };
    if n >= 8 {
        dw.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in dw.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
}

/// Separable O(n²) weight right-hand side.
///
/// Remote moments ⟨b_k⟩ are accumulated once; the restricted mode
/// subtracts the i1 = i row and j1 = i column and re-adds the doubly
/// excluded cell (i, i).
#[allow(clippy::too_many_arguments)]
pub(crate) fn weight_rhs_separable_into(
    dw: &mut [f64],
    x: &[f64],
    w: &[f64],
    n: usize,
    d: usize,
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
    mode: SumMode,
) {
    let form = lam
        .separable
        .as_ref()
        .expect("separable path requires a declared separable form");
    let kk = form.terms();
    let inv_n2 = 1.0 / (n * n) as f64;

    // Full remote sums and, for the restricted mode, per-index exclusions.
    let mut total = vec![0.0; kk];
    let mut row_sums = vec![0.0; kk * n]; // Σ_{j1} b_k(x_i, x_{j1}, w_{i j1})
    let mut col_sums = vec![0.0; kk * n]; // Σ_{i1} b_k(x_{i1}, x_i, w_{i1 i})
    let mut diag = vec![0.0; kk * n]; // b_k(x_i, x_i, w_{ii})
    for k in 0..kk {
        let bk = &form.remote[k];
        let mut tot = 0.0;
        for i1 in 0..n {
            let xi1 = &x[i1 * d..(i1 + 1) * d];
            let mut row = 0.0;
            for j1 in 0..n {
                let xj1 = &x[j1 * d..(j1 + 1) * d];
                let v = bk(xi1, xj1, w[i1 * n + j1]);
                tot += v;
                row += v;
                col_sums[k * n + j1] += v;
            }
            row_sums[k * n + i1] = row;
            diag[k * n + i1] = bk(xi1, xi1, w[i1 * n + i1]);
        }
        total[k] = tot;
    }

    let body = |i: usize, row_out: &mut [f64]| {
        let xi = &x[i * d..(i + 1) * d];
        for j in 0..n {
            if i == j {
                row_out[j] = 0.0;
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            let wij = w[i * n + j];
            let mut acc = 0.0;
            for k in 0..kk {
                let remote = match mode {
                    SumMode::General => total[k],
                    SumMode::Restricted => {
                        total[k] - row_sums[k * n + i] - col_sums[k * n + i] + diag[k * n + i]
                    }
                };
                let a = local_factor_cell_avg(form.local[k].as_ref(), quad, i, j, n, xi, xj, wij);
                acc += a * remote;
            }
            row_out[j] = acc * inv_n2;
        }
    };
    if n >= PAR_THRESHOLD {
        dw.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in dw.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
}

/// Weight right-hand side, taking the separable fast path when declared.
#[allow(clippy::too_many_arguments)]
pub(crate) fn weight_rhs_into(
    dw: &mut [f64],
    x: &[f64],
    w: &[f64],
    n: usize,
    d: usize,
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
    mode: SumMode,
) {
    if lam.separable.is_some() {
        weight_rhs_separable_into(dw, x, w, n, d, lam, quad, mode);
    } else {
        weight_rhs_generic_into(dw, x, w, n, d, lam, quad, mode);
    }
}
