//! The graph-limit integro-differential system on a uniform grid of the
//! unit identity interval.
//!
//! Cell values x_i ≈ x(t, ξ_i), w_ij ≈ w(t, ξ_i, ζ_j) at midpoints; the
//! ξ-integrals use the rectangle rule induced by the grid, so for n = N and
//! identical arrays the discretized system is the same computation as the
//! particle system (the solvers share their right-hand sides). The grid
//! solver also adopts the particle convention of a frozen zero diagonal,
//! which is what makes that identity exact; the diagonal cells carry
//! vanishing measure as n grows.

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, WeightDynamicsSpec};
use crate::particle::{Quadrature, SumMode};
use crate::rhs::{drift_into, weight_rhs_generic_into, weight_rhs_into};
use crate::util::{cell_midpoint, gauss_legendre, integrate_fixed_step, require_finite};
use std::io::{BufWriter, Write};
use std::path::Path;

/// Piecewise-constant continuum fields on n cells (states) and n² cells
/// (weights).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub t: f64,
    pub n: usize,
    pub d: usize,
    /// Row-major n×d cell values of x(t, ·).
    pub x: Vec<f64>,
    /// Row-major n×n cell values of w(t, ·, ·).
    pub w: Vec<f64>,
}

impl GridSolution {
    pub fn new(n: usize, d: usize, t: f64, x: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::domain("n and d must be positive"));
        }
        if x.len() != n * d || w.len() != n * n {
            return Err(Error::domain("grid shape mismatch"));
        }
        require_finite(&x, "grid state")?;
        require_finite(&w, "grid weights")?;
        Ok(GridSolution { t, n, d, x, w })
    }

    pub fn x_i(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn w_ij(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    /// Reinterprets the grid data as a particle state (shared arrays, zeroed
    /// diagonal); the bridge used by the equivalence experiments.
    pub fn to_particle_state(&self) -> Result<crate::particle::ParticleState> {
        crate::particle::ParticleState::with_zeroed_diagonal(
            self.n,
            self.d,
            self.t,
            self.x.clone(),
            self.w.clone(),
        )
    }

    /// CSV export: a sidecar header line with the resolution metadata, then
    /// t,i,x_0.. rows and t,i,j,w rows in two files.
    pub fn write_csv(&self, state_path: &Path, weight_path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(state_path)?);
        writeln!(f, "# n={} d={} t={}", self.n, self.d, self.t)?;
        write!(f, "t,i")?;
        for k in 0..self.d {
            write!(f, ",x_{k}")?;
        }
        writeln!(f)?;
        for i in 0..self.n {
            write!(f, "{},{}", self.t, i)?;
            for k in 0..self.d {
                write!(f, ",{}", self.x[i * self.d + k])?;
            }
            writeln!(f)?;
        }
        let mut g = BufWriter::new(std::fs::File::create(weight_path)?);
        writeln!(g, "# n={} d={} t={}", self.n, self.d, self.t)?;
        writeln!(g, "t,i,j,w")?;
        for i in 0..self.n {
            for j in 0..self.n {
                writeln!(g, "{},{},{},{}", self.t, i, j, self.w[i * self.n + j])?;
            }
        }
        Ok(())
    }
}

/// Snapshots of a grid integration.
#[derive(Debug, Clone)]
pub struct GridTrajectory {
    pub states: Vec<GridSolution>,
    pub dt: f64,
    pub scheme: &'static str,
}

impl GridTrajectory {
    pub fn terminal(&self) -> &GridSolution {
        self.states.last().expect("trajectory is never empty")
    }
}

/// Projects initial profiles onto the grid by per-cell quadrature of the
/// cell averages; exact for inputs piecewise constant on the grid.
pub fn project_initial(
    x0: &dyn Fn(f64) -> Vec<f64>,
    w0: &dyn Fn(f64, f64) -> f64,
    n: usize,
    d: usize,
    quad: Quadrature,
) -> Result<GridSolution> {
    if n == 0 {
        return Err(Error::domain("grid must have at least one cell"));
    }
    let mut x = vec![0.0; n * d];
    let mut w = vec![0.0; n * n];
    match quad {
        Quadrature::Midpoint => {
            for i in 0..n {
                let v = x0(cell_midpoint(i, n));
                if v.len() != d {
                    return Err(Error::domain("x0 returned wrong dimension"));
                }
                x[i * d..(i + 1) * d].copy_from_slice(&v);
                for j in 0..n {
                    w[i * n + j] = w0(cell_midpoint(i, n), cell_midpoint(j, n));
                }
            }
        }
        Quadrature::Gauss(q) => {
            let (nodes, weights) = gauss_legendre(q);
            let half = 1.0 / (2.0 * n as f64);
            for i in 0..n {
                let mi = cell_midpoint(i, n);
                for (a, &na) in nodes.iter().enumerate() {
                    let v = x0(mi + half * na);
                    if v.len() != d {
                        return Err(Error::domain("x0 returned wrong dimension"));
                    }
                    for k in 0..d {
                        x[i * d + k] += 0.5 * weights[a] * v[k];
                    }
                }
                for j in 0..n {
                    let mj = cell_midpoint(j, n);
                    let mut acc = 0.0;
                    for (a, &na) in nodes.iter().enumerate() {
                        for (b, &nb) in nodes.iter().enumerate() {
                            acc += 0.25 * weights[a] * weights[b]
                                * w0(mi + half * na, mj + half * nb);
                        }
                    }
                    w[i * n + j] = acc;
                }
            }
        }
    }
    GridSolution::new(n, d, 0.0, x, w)
}

/// Right-hand side of the discretized graph-limit system; identical to the
/// general-mode particle right-hand side on the same arrays.
pub fn graph_limit_rhs(
    sol: &GridSolution,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; sol.n * sol.d];
    let mut dw = vec![0.0; sol.n * sol.n];
    drift_into(&mut dx, sol.t, &sol.x, &sol.w, sol.n, sol.d, phi);
    weight_rhs_into(
        &mut dw,
        &sol.x,
        &sol.w,
        sol.n,
        sol.d,
        lam,
        Quadrature::Midpoint,
        SumMode::General,
    );
    (dx, dw)
}

/// Generic O(n⁴) reference for the weight part of [`graph_limit_rhs`].
pub fn graph_limit_rhs_reference(
    sol: &GridSolution,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; sol.n * sol.d];
    let mut dw = vec![0.0; sol.n * sol.n];
    drift_into(&mut dx, sol.t, &sol.x, &sol.w, sol.n, sol.d, phi);
    weight_rhs_generic_into(
        &mut dw,
        &sol.x,
        &sol.w,
        sol.n,
        sol.d,
        lam,
        Quadrature::Midpoint,
        SumMode::General,
    );
    (dx, dw)
}

/// RK4 integration of the grid system; same stepping and diagonal
/// convention as the particle integrator.
pub fn integrate_graph_limit(
    sol0: &GridSolution,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<GridTrajectory> {
    if sol0.n > 32 && lam.separable.is_none() {
        return Err(Error::config(format!(
            "grids beyond n = 32 require a separable weight dynamics ('{}' declares none); \
             the generic weight sum is O(n^4)",
            lam.name
        )));
    }
    let (n, d) = (sol0.n, sol0.d);
    let nx = n * d;
    let mut y = Vec::with_capacity(nx + n * n);
    y.extend_from_slice(&sol0.x);
    y.extend_from_slice(&sol0.w);

    let mut snapshots = Vec::new();
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, w) = y.split_at(nx);
        let (dx, dw) = dy.split_at_mut(nx);
        drift_into(dx, t, x, w, n, d, phi);
        weight_rhs_into(dw, x, w, n, d, lam, Quadrature::Midpoint, SumMode::General);
    };
    let mut normalize = |y: &mut [f64]| {
        for i in 0..n {
            y[nx + i * n + i] = 0.0;
        }
    };
    let mut record = |_step: usize, t: f64, y: &[f64]| {
        let (x, w) = y.split_at(nx);
        snapshots.push(GridSolution {
            t,
            n,
            d,
            x: x.to_vec(),
            w: w.to_vec(),
        });
    };
    integrate_fixed_step(&mut y, horizon, dt, record_every, &mut rhs, &mut normalize, &mut record)?;
    Ok(GridTrajectory {
        states: snapshots,
        dt,
        scheme: "rk4",
    })
}

/// L²(I) distance between the step-function embeddings of two grid state
/// fields whose resolutions divide each other.
pub fn state_l2_distance(a: &GridSolution, b: &GridSolution) -> Result<f64> {
    let (coarse, fine) = if a.n <= b.n { (a, b) } else { (b, a) };
    if fine.n % coarse.n != 0 || coarse.d != fine.d {
        return Err(Error::GridMismatch(format!(
            "resolutions {} and {} are not nested",
            a.n, b.n
        )));
    }
    let f = fine.n / coarse.n;
    let mut acc = 0.0;
    for i in 0..fine.n {
        let ci = i / f;
        for k in 0..fine.d {
            let diff = fine.x[i * fine.d + k] - coarse.x[ci * coarse.d + k];
            acc += diff * diff;
        }
    }
    Ok((acc / fine.n as f64).sqrt())
}

/// L²(I²) distance between weight fields on nested grids, excluding the
/// coarse diagonal cells where the no-self-loop convention pins the coarse
/// field to zero.
pub fn weight_l2_distance_offdiag(a: &GridSolution, b: &GridSolution) -> Result<f64> {
    let (coarse, fine) = if a.n <= b.n { (a, b) } else { (b, a) };
    if fine.n % coarse.n != 0 {
        return Err(Error::GridMismatch(format!(
            "resolutions {} and {} are not nested",
            a.n, b.n
        )));
    }
    let f = fine.n / coarse.n;
    let mut acc = 0.0;
    for i in 0..fine.n {
        let ci = i / f;
        for j in 0..fine.n {
            let cj = j / f;
            if ci == cj {
                continue;
            }
            let diff = fine.w[i * fine.n + j] - coarse.w[ci * coarse.n + cj];
            acc += diff * diff;
        }
    }
    Ok((acc / (fine.n * fine.n) as f64).sqrt())
}
