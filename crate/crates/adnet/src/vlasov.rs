//! Method-of-characteristics solver for the Vlasov-type equation on the
//! extended phase space (ξ, ζ, x, y, w).
//!
//! The measure is represented by equal-weight samples per (ξ_i, ζ_j) fiber
//! on an n×n midpoint grid; advecting the samples by the self-consistent
//! force realizes the push-forward characterization directly, so no fixed
//! point iteration is needed. Fiber-to-fiber integrals use the rectangle
//! rule, matching the grid solver.

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, WeightDynamicsSpec};
use crate::util::{cell_midpoint, integrate_fixed_step, pairwise_sum};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Declared support of the initial measure:
/// B(0, r_x) × B(0, r_y) × [-r_m, r_m].
#[derive(Debug, Clone, Copy)]
pub struct SupportBox {
    pub r_x: f64,
    pub r_y: f64,
    pub r_m: f64,
}

/// Equal-weight sample clouds on an n×n fiber grid; each fiber carries P
/// triples (x, y, w) of mass 1/P.
#[derive(Debug, Clone)]
pub struct FiberedEnsemble {
    pub t: f64,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    /// Fiber-major sample x-components, (n·n·p)×d.
    pub x: Vec<f64>,
    /// Fiber-major sample y-components, (n·n·p)×d.
    pub y: Vec<f64>,
    /// Fiber-major sample w-components, n·n·p.
    pub w: Vec<f64>,
    /// Freeze the w-component on diagonal fibers (i = i): the sample-level
    /// form of the no-self-loop convention. Set by the Dirac-from-grid
    /// constructor so the Dirac ensemble reproduces the grid solver
    /// exactly; off for genuine measure solves, where the diagonal carries
    /// no mass in the limit.
    pub no_loop_diagonal: bool,
}

impl FiberedEnsemble {
    fn sample_base(&self, i: usize, j: usize, q: usize) -> usize {
        (i * self.n + j) * self.p + q
    }

    pub fn sample(&self, i: usize, j: usize, q: usize) -> (&[f64], &[f64], f64) {
        let b = self.sample_base(i, j, q);
        (
            &self.x[b * self.d..(b + 1) * self.d],
            &self.y[b * self.d..(b + 1) * self.d],
            self.w[b],
        )
    }

    pub fn total_samples(&self) -> usize {
        self.n * self.n * self.p
    }

    /// Draws P samples per fiber with fiber-keyed streams; errors when P = 0
    /// or a sample escapes the declared support.
    pub fn init_fibered(
        sampler: &(dyn Fn(f64, f64, &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) + Sync),
        n: usize,
        p: usize,
        d: usize,
        seed: u64,
        support: &SupportBox,
    ) -> Result<Self> {
        if p == 0 {
            return Err(Error::domain("samples per fiber must be positive"));
        }
        if n == 0 || d == 0 {
            return Err(Error::domain("fiber grid and dimension must be positive"));
        }
        let mut x = vec![0.0; n * n * p * d];
        let mut y = vec![0.0; n * n * p * d];
        let mut w = vec![0.0; n * n * p];
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for i in 0..n {
            for j in 0..n {
                let mut rng = crate::util::stream_rng(seed, &[0xE5, i as u64, j as u64]);
                let (xi, zeta) = (cell_midpoint(i, n), cell_midpoint(j, n));
                for q in 0..p {
                    let (sx, sy, sw) = sampler(xi, zeta, &mut rng);
                    if sx.len() != d || sy.len() != d {
                        return Err(Error::Init("sampler returned wrong dimension".into()));
                    }
                    let tol = 1e-9;
                    if norm(&sx) > support.r_x + tol
                        || norm(&sy) > support.r_y + tol
                        || sw.abs() > support.r_m + tol
                        || !sw.is_finite()
                    {
                        return Err(Error::Init(format!(
                            "sample outside declared support in fiber ({i},{j})"
                        )));
                    }
                    let b = (i * n + j) * p + q;
                    x[b * d..(b + 1) * d].copy_from_slice(&sx);
                    y[b * d..(b + 1) * d].copy_from_slice(&sy);
                    w[b] = sw;
                }
            }
        }
        Ok(FiberedEnsemble {
            t: 0.0,
            n,
            p,
            d,
            x,
            y,
            w,
            no_loop_diagonal: false,
        })
    }

    /// Fiberwise Dirac data from a grid solution: fiber (i, j) holds the
    /// single triple (x_i, x_j, w_ij). Adopts the grid's no-loop convention.
    pub fn dirac_from_grid(grid: &crate::continuum::GridSolution) -> Self {
        let (n, d) = (grid.n, grid.d);
        let mut x = vec![0.0; n * n * d];
        let mut y = vec![0.0; n * n * d];
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let b = i * n + j;
                x[b * d..(b + 1) * d].copy_from_slice(grid.x_i(i));
                y[b * d..(b + 1) * d].copy_from_slice(grid.x_i(j));
                w[b] = grid.w_ij(i, j);
            }
        }
        FiberedEnsemble {
            t: grid.t,
            n,
            p: 1,
            d,
            x,
            y,
            w,
            no_loop_diagonal: true,
        }
    }

    /// Deterministic equal-weight representation of a fiber-uniform product
    /// measure U[-r_x, r_x] ⊗ U[-r_y, r_y] ⊗ U[w_lo, w_hi] (d = 1): one
    /// sample at each midpoint of a gx×gy×gw tensor grid, identical in
    /// every fiber. Quadrature bias O(g⁻²) instead of sampling noise.
    pub fn uniform_product_grid(
        n: usize,
        gx: usize,
        gy: usize,
        gw: usize,
        r_x: f64,
        r_y: f64,
        w_range: (f64, f64),
    ) -> Result<Self> {
        if n == 0 || gx == 0 || gy == 0 || gw == 0 {
            return Err(Error::domain("grid sizes must be positive"));
        }
        let p = gx * gy * gw;
        let mut xs = Vec::with_capacity(p);
        let mut ys = Vec::with_capacity(p);
        let mut ws = Vec::with_capacity(p);
        let (wlo, whi) = w_range;
        for a in 0..gx {
            let xv = -r_x + (2 * a + 1) as f64 / (2 * gx) as f64 * 2.0 * r_x;
            for b in 0..gy {
                let yv = -r_y + (2 * b + 1) as f64 / (2 * gy) as f64 * 2.0 * r_y;
                for c in 0..gw {
                    let wv = wlo + (2 * c + 1) as f64 / (2 * gw) as f64 * (whi - wlo);
                    xs.push(xv);
                    ys.push(yv);
                    ws.push(wv);
                }
            }
        }
        let mut x = Vec::with_capacity(n * n * p);
        let mut y = Vec::with_capacity(n * n * p);
        let mut w = Vec::with_capacity(n * n * p);
        for _ in 0..n * n {
            x.extend_from_slice(&xs);
            y.extend_from_slice(&ys);
            w.extend_from_slice(&ws);
        }
        Ok(FiberedEnsemble {
            t: 0.0,
            n,
            p,
            d: 1,
            x,
            y,
            w,
            no_loop_diagonal: false,
        })
    }

    /// CSV export with columns t,i,j,p,x_0..,y_0..,w.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        write!(f, "t,i,j,p")?;
        for k in 0..self.d {
            write!(f, ",x_{k}")?;
        }
        for k in 0..self.d {
            write!(f, ",y_{k}")?;
        }
        writeln!(f, ",w")?;
        for i in 0..self.n {
            for j in 0..self.n {
                for q in 0..self.p {
                    let (sx, sy, sw) = self.sample(i, j, q);
                    write!(f, "{},{},{},{}", self.t, i, j, q)?;
                    for v in sx.iter().chain(sy.iter()) {
                        write!(f, ",{v}")?;
                    }
                    writeln!(f, ",{sw}")?;
                }
            }
        }
        Ok(())
    }
}

/// Multi-snapshot ensemble export: rows t,i,j,p,x..,y..,w across a
/// trajectory.
pub fn write_trajectory_csv(traj: &[FiberedEnsemble], path: &Path) -> Result<()> {
    let Some(first) = traj.first() else {
        return Err(Error::domain("empty ensemble trajectory"));
    };
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "t,i,j,p")?;
    for k in 0..first.d {
        write!(f, ",x_{k}")?;
    }
    for k in 0..first.d {
        write!(f, ",y_{k}")?;
    }
    writeln!(f, ",w")?;
    for snap in traj {
        for i in 0..snap.n {
            for j in 0..snap.n {
                for q in 0..snap.p {
                    let (sx, sy, sw) = snap.sample(i, j, q);
                    write!(f, "{},{},{},{}", snap.t, i, j, q)?;
                    for v in sx.iter().chain(sy.iter()) {
                        write!(f, ",{v}")?;
                    }
                    writeln!(f, ",{sw}")?;
                }
            }
        }
    }
    Ok(())
}

/// Remote moments ⟨b_k⟩ = (1/(n²P)) Σ_fibers Σ_samples b_k(x~, y~, w~) for a
/// separable dynamics; the O(n²P) precomputation behind the fast w-force.
#[derive(Debug, Clone)]
pub struct RemoteWeightMoments(pub Vec<f64>);

pub fn weight_moments(ens: &FiberedEnsemble, lam: &WeightDynamicsSpec) -> Option<RemoteWeightMoments> {
    let form = lam.separable.as_ref()?;
    let total = ens.total_samples();
    let inv = 1.0 / total as f64;
    let mut out = Vec::with_capacity(form.terms());
    for k in 0..form.terms() {
        let bk = &form.remote[k];
        let vals: Vec<f64> = (0..total)
            .map(|b| {
                bk(
                    &ens.x[b * ens.d..(b + 1) * ens.d],
                    &ens.y[b * ens.d..(b + 1) * ens.d],
                    ens.w[b],
                )
            })
            .collect();
        out.push(pairwise_sum(&vals) * inv);
    }
    Some(RemoteWeightMoments(out))
}

/// State drift at an arbitrary point x against the fibers in row i:
/// (1/(nP)) Σ_{j~} Σ_q w~ φ(t, x, y~). The scalar interaction value drives
/// every component of the state derivative.
pub fn force_x_at(ens: &FiberedEnsemble, phi: &KernelSpec, t: f64, i_row: usize, x: &[f64]) -> f64 {
    let (n, p, d) = (ens.n, ens.p, ens.d);
    let mut acc = 0.0;
    for jt in 0..n {
        let base = (i_row * n + jt) * p;
        for q in 0..p {
            let b = base + q;
            acc += ens.w[b] * phi.eval_raw(t, x, &ens.y[b * d..(b + 1) * d]);
        }
    }
    acc / (n * p) as f64
}

/// Weight force at an arbitrary phase point, generic O(n²P) sum.
pub fn force_w_at(
    ens: &FiberedEnsemble,
    lam: &WeightDynamicsSpec,
    xi: f64,
    zeta: f64,
    x: &[f64],
    y: &[f64],
    w: f64,
) -> f64 {
    let total = ens.total_samples();
    let d = ens.d;
    let mut acc = 0.0;
    for b in 0..total {
        acc += lam.eval_raw(
            xi,
            zeta,
            x,
            y,
            w,
            &ens.x[b * d..(b + 1) * d],
            &ens.y[b * d..(b + 1) * d],
            ens.w[b],
        );
    }
    acc / total as f64
}

/// Weight force through precomputed remote moments.
pub fn force_w_at_with_moments(
    lam: &WeightDynamicsSpec,
    moments: &RemoteWeightMoments,
    xi: f64,
    zeta: f64,
    x: &[f64],
    y: &[f64],
    w: f64,
) -> f64 {
    let form = lam.separable.as_ref().expect("moments imply a separable form");
    let mut acc = 0.0;
    for k in 0..form.terms() {
        acc += (form.local[k])(xi, zeta, x, y, w) * moments.0[k];
    }
    acc
}

/// Three-component force on one sample: the reference per-sample operation
/// with the generic sums (the integrator's bulk path must agree with it).
pub fn vlasov_force(
    ens: &FiberedEnsemble,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    i: usize,
    j: usize,
    q: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if i >= ens.n || j >= ens.n || q >= ens.p {
        return Err(Error::domain(format!(
            "fiber/sample index ({i},{j},{q}) out of range"
        )));
    }
    let (sx, sy, sw) = ens.sample(i, j, q);
    let fx = force_x_at(ens, phi, ens.t, i, sx);
    let fy = force_x_at(ens, phi, ens.t, j, sy);
    let fw = force_w_at(
        ens,
        lam,
        cell_midpoint(i, ens.n),
        cell_midpoint(j, ens.n),
        sx,
        sy,
        sw,
    );
    Ok((vec![fx; ens.d], vec![fy; ens.d], fw))
}

/// Bulk forces for every sample, written into flat (dx, dy, dw) blocks;
/// uses the separable moments when declared and honors the ensemble's
/// diagonal convention.
fn forces_into(
    dx: &mut [f64],
    dy: &mut [f64],
    dw: &mut [f64],
    ens: &FiberedEnsemble,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    t: f64,
) {
    let (n, p, d) = (ens.n, ens.p, ens.d);
    let moments = weight_moments(ens, lam);
    let chunk = p;
    let work = |fiber: usize, dxc: &mut [f64], dyc: &mut [f64], dwc: &mut [f64]| {
        let (i, j) = (fiber / n, fiber % n);
        let (xi, zeta) = (cell_midpoint(i, n), cell_midpoint(j, n));
        let freeze_w = ens.no_loop_diagonal && i == j;
        for q in 0..p {
            let b = fiber * p + q;
            let sx = &ens.x[b * d..(b + 1) * d];
            let sy = &ens.y[b * d..(b + 1) * d];
            let sw = ens.w[b];
            let fx = force_x_at(ens, phi, t, i, sx);
            let fy = force_x_at(ens, phi, t, j, sy);
            for k in 0..d {
                dxc[q * d + k] = fx;
                dyc[q * d + k] = fy;
            }
            dwc[q] = if freeze_w {
                0.0
            } else {
                match &moments {
                    Some(m) => force_w_at_with_moments(lam, m, xi, zeta, sx, sy, sw),
                    None => force_w_at(ens, lam, xi, zeta, sx, sy, sw),
                }
            };
        }
    };
    if n * n >= 4 || p >= 64 {
        dx.par_chunks_mut(chunk * d)
            .zip(dy.par_chunks_mut(chunk * d))
            .zip(dw.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(fiber, ((dxc, dyc), dwc))| work(fiber, dxc, dyc, dwc));
    } else {
        dx.chunks_mut(chunk * d)
            .zip(dy.chunks_mut(chunk * d))
            .zip(dw.chunks_mut(chunk))
            .enumerate()
            .for_each(|(fiber, ((dxc, dyc), dwc))| work(fiber, dxc, dyc, dwc));
    }
}

/// Bulk forces as owned vectors (the frozen-copy self-consistency hook).
pub fn vlasov_forces(
    ens: &FiberedEnsemble,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let total = ens.total_samples();
    let mut dx = vec![0.0; total * ens.d];
    let mut dy = vec![0.0; total * ens.d];
    let mut dw = vec![0.0; total];
    forces_into(&mut dx, &mut dy, &mut dw, ens, phi, lam, ens.t);
    (dx, dy, dw)
}

/// RK4 advection of every sample by its self-consistent force; per-fiber
/// masses are untouched (the transport is conservative).
pub fn integrate_vlasov(
    ens0: &FiberedEnsemble,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<FiberedEnsemble>> {
    let (n, p, d) = (ens0.n, ens0.p, ens0.d);
    let total = n * n * p;
    let nx = total * d;
    let mut y = Vec::with_capacity(2 * nx + total);
    y.extend_from_slice(&ens0.x);
    y.extend_from_slice(&ens0.y);
    y.extend_from_slice(&ens0.w);
    let template = FiberedEnsemble {
        t: 0.0,
        n,
        p,
        d,
        x: Vec::new(),
        y: Vec::new(),
        w: Vec::new(),
        no_loop_diagonal: ens0.no_loop_diagonal,
    };

    let mut snapshots = Vec::new();
    let mut rhs = |t: f64, state: &[f64], dstate: &mut [f64]| {
        let view = FiberedEnsemble {
            t,
            x: state[..nx].to_vec(),
            y: state[nx..2 * nx].to_vec(),
            w: state[2 * nx..].to_vec(),
            ..template.clone()
        };
        let (dxs, rest) = dstate.split_at_mut(nx);
        let (dys, dws) = rest.split_at_mut(nx);
        forces_into(dxs, dys, dws, &view, phi, lam, t);
    };
    let mut record = |_step: usize, t: f64, state: &[f64]| {
        snapshots.push(FiberedEnsemble {
            t,
            x: state[..nx].to_vec(),
            y: state[nx..2 * nx].to_vec(),
            w: state[2 * nx..].to_vec(),
            ..template.clone()
        });
    };
    integrate_fixed_step(
        &mut y,
        horizon,
        dt,
        record_every,
        &mut rhs,
        &mut |_| {},
        &mut record,
    )?;
    Ok(snapshots)
}

/// Kernel constants plus the derived a priori constants of the limit
/// analysis, with T fixed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundConstants {
    pub r_x: f64,
    pub r_y: f64,
    pub r_m: f64,
    pub m_phi: f64,
    pub l_phi: f64,
    pub c_lambda: f64,
    pub l_lambda: f64,
    pub horizon: f64,
    /// esssup ∫ w² dμ₀ (defaults to r_m² for measures in the declared box).
    pub w2_initial: f64,
    /// Proxy for ‖∇χ_T‖_∞ of the smooth cutoff (a unit-shell transition
    /// exists with sup-gradient ≤ 2).
    pub chi_gradient: f64,
    pub m1: f64,
    pub r_m_bar: f64,
    pub c1: f64,
    pub l2: f64,
    pub l3: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c_total: f64,
}

impl BoundConstants {
    #[allow(clippy::too_many_arguments)]
    pub fn derive(
        r_x: f64,
        r_y: f64,
        r_m: f64,
        m_phi: f64,
        l_phi: f64,
        c_lambda: f64,
        l_lambda: f64,
        horizon: f64,
        w2_initial: Option<f64>,
        chi_gradient: f64,
    ) -> Self {
        let t = horizon;
        let w2 = w2_initial.unwrap_or(r_m * r_m);
        let grow = (4.0 * c_lambda * t).exp();
        let m1 = 2.0 + (w2 + 4.0 * c_lambda * t) * grow;
        let r_m_bar = r_m * (1.0 + t * c_lambda) + t * c_lambda;
        let c1 = (l_phi * m1).max(l_lambda);
        let l2 = (c_lambda * (2.0 + r_m_bar))
            .max(chi_gradient * c_lambda * (2.0 + r_m_bar))
            .max(l_lambda);
        let l3 = ((r_m_bar + 1.0) * m_phi)
            .max(m_phi * (1.0 + (r_m_bar + 1.0) * chi_gradient))
            .max((1.0 + r_m_bar) * l_phi);
        let c2 = c1.max(l2).max(l3);
        let c3 = c2.max(1.0);
        let c4 = (r_m + c_lambda * t) * (c_lambda * t).exp();
        let c5 = (2.0 * c4 * l_phi + 3.0 * l_lambda).max(m_phi + 2.0 * l_lambda);
        let c_total =
            (2.0 * c4 * t * m_phi + 2.0 * c_lambda * t * (1.0 + c4)) * (c5 * t).exp();
        BoundConstants {
            r_x,
            r_y,
            r_m,
            m_phi,
            l_phi,
            c_lambda,
            l_lambda,
            horizon,
            w2_initial: w2,
            chi_gradient,
            m1,
            r_m_bar,
            c1,
            l2,
            l3,
            c2,
            c3,
            c4,
            c5,
            c_total,
        }
    }

    pub fn from_kernels(
        phi: &KernelSpec,
        lam: &WeightDynamicsSpec,
        support: &SupportBox,
        horizon: f64,
        chi_gradient: f64,
    ) -> Self {
        BoundConstants::derive(
            support.r_x,
            support.r_y,
            support.r_m,
            phi.bound,
            phi.lipschitz,
            lam.growth,
            lam.lipschitz,
            horizon,
            None,
            chi_gradient,
        )
    }

    /// Support radius bound for the state components: R + T M_φ m₁.
    pub fn state_radius_bound(&self, r0: f64) -> f64 {
        r0 + self.horizon * self.m_phi * self.m1
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("r_x", self.r_x),
            ("r_y", self.r_y),
            ("r_m", self.r_m),
            ("m_phi", self.m_phi),
            ("l_phi", self.l_phi),
            ("c_lambda", self.c_lambda),
            ("l_lambda", self.l_lambda),
            ("horizon", self.horizon),
            ("w2_initial", self.w2_initial),
            ("chi_gradient", self.chi_gradient),
            ("m1", self.m1),
            ("r_m_bar", self.r_m_bar),
            ("c1", self.c1),
            ("l2", self.l2),
            ("l3", self.l3),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c5", self.c5),
            ("c_total", self.c_total),
        ] {
            s.push_str(&format!("{k}: {v:.12e}\n"));
        }
        s
    }
}

/// Minimal margins of the a priori estimates over an ensemble trajectory.
#[derive(Debug, Clone)]
pub struct AprioriReport {
    /// (R_X + T M_φ m₁) − max |x| over samples, min over time.
    pub support_x_margin: f64,
    /// Same for the y-component with R_Y.
    pub support_y_margin: f64,
    /// R̄_M − max |w|, min over time.
    pub weight_radius_margin: f64,
    /// Per fiber: (∫w² dμ₀ + 4 C_Λ T) e^{4 C_Λ T} − ∫w² dμ_t, min over
    /// fibers and time.
    pub second_moment_margin: f64,
}

impl AprioriReport {
    pub fn min_margin(&self) -> f64 {
        self.support_x_margin
            .min(self.support_y_margin)
            .min(self.weight_radius_margin)
            .min(self.second_moment_margin)
    }

    pub fn render(&self) -> String {
        format!(
            "support_x_margin: {:.6e}\nsupport_y_margin: {:.6e}\nweight_radius_margin: {:.6e}\nsecond_moment_margin: {:.6e}\n",
            self.support_x_margin,
            self.support_y_margin,
            self.weight_radius_margin,
            self.second_moment_margin
        )
    }
}

/// Checks the support and second-moment a priori bounds along a trajectory.
/// Negative margins signal a bug or mis-declared constants; they are
/// reported, not raised.
pub fn a_priori_checks(traj: &[FiberedEnsemble], bounds: &BoundConstants) -> Result<AprioriReport> {
    if traj.is_empty() {
        return Err(Error::domain("empty ensemble trajectory"));
    }
    let first = &traj[0];
    let (n, p, d) = (first.n, first.p, first.d);
    let fibers = n * n;
    let mut w2_init = vec![0.0; fibers];
    for f in 0..fibers {
        let mut acc = 0.0;
        for q in 0..p {
            let w = first.w[f * p + q];
            acc += w * w;
        }
        w2_init[f] = acc / p as f64;
    }
    let grow = (4.0 * bounds.c_lambda * bounds.horizon).exp();
    let x_bound = bounds.state_radius_bound(bounds.r_x);
    let y_bound = bounds.state_radius_bound(bounds.r_y);

    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut rep = AprioriReport {
        support_x_margin: f64::INFINITY,
        support_y_margin: f64::INFINITY,
        weight_radius_margin: f64::INFINITY,
        second_moment_margin: f64::INFINITY,
    };
    for snap in traj {
        let mut max_x: f64 = 0.0;
        let mut max_y: f64 = 0.0;
        let mut max_w: f64 = 0.0;
        for b in 0..snap.total_samples() {
            max_x = max_x.max(norm(&snap.x[b * d..(b + 1) * d]));
            max_y = max_y.max(norm(&snap.y[b * d..(b + 1) * d]));
            max_w = max_w.max(snap.w[b].abs());
        }
        rep.support_x_margin = rep.support_x_margin.min(x_bound - max_x);
        rep.support_y_margin = rep.support_y_margin.min(y_bound - max_y);
        rep.weight_radius_margin = rep.weight_radius_margin.min(bounds.r_m_bar - max_w);
        for f in 0..fibers {
            let mut acc = 0.0;
            for q in 0..p {
                let w = snap.w[f * p + q];
                acc += w * w;
            }
            let m2 = acc / p as f64;
            let bound = (w2_init[f] + 4.0 * bounds.c_lambda * bounds.horizon) * grow;
            rep.second_moment_margin = rep.second_moment_margin.min(bound - m2);
        }
    }
    Ok(rep)
}
