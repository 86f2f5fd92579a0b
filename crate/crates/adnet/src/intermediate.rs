//! The intermediate McKean-type system, realized by a replica ensemble.
//!
//! The exact system drives each replica by conditional expectations against
//! the laws of (X̄_j, W̄_ij); those laws have no closed form, so the drifts
//! are estimated by the empirical law across R independent replicas sharing
//! one RK4 clock. With a single replica the estimator degenerates to the
//! replica's own empirical law and the dynamics coincides with the
//! restricted particle system, which the tests assert bitwise.

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, WeightDynamicsSpec};
use crate::particle::{ParticleState, Quadrature, Trajectory};
use crate::rhs::lambda_cell_avg_raw;
use crate::util::{integrate_fixed_step, stream_rng};
use rand::Rng;
use rayon::prelude::*;
use std::io::{BufWriter, Write};
use std::path::Path;

/// R replica copies of an N-particle state under one clock.
#[derive(Debug, Clone)]
pub struct ReplicaEnsemble {
    pub t: f64,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    /// Replica-major state block, r × (n·d).
    pub x: Vec<f64>,
    /// Replica-major weight block, r × (n·n), zero diagonals.
    pub w: Vec<f64>,
    pub seed: u64,
}

impl ReplicaEnsemble {
    pub fn from_states(states: &[ParticleState], seed: u64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::domain("ensemble needs at least one replica"));
        }
        let (n, d, t) = (states[0].n, states[0].d, states[0].t);
        let mut x = Vec::with_capacity(states.len() * n * d);
        let mut w = Vec::with_capacity(states.len() * n * n);
        for s in states {
            if s.n != n || s.d != d || s.t != t {
                return Err(Error::domain("replicas must share N, d and clock"));
            }
            x.extend_from_slice(&s.x);
            w.extend_from_slice(&s.w);
        }
        Ok(ReplicaEnsemble {
            t,
            n,
            d,
            r: states.len(),
            x,
            w,
            seed,
        })
    }

    /// iid initial data: states uniform on [-state_radius, state_radius]^d,
    /// weights uniform on [0, weight_max], streams keyed by (replica, index).
    pub fn sample_iid_uniform(
        n: usize,
        d: usize,
        replicas: usize,
        state_radius: f64,
        weight_max: f64,
        seed: u64,
    ) -> Result<Self> {
        let states: Vec<ParticleState> = (0..replicas)
            .map(|rep| iid_uniform_state(n, d, state_radius, weight_max, seed, rep as u64))
            .collect::<Result<_>>()?;
        ReplicaEnsemble::from_states(&states, seed)
    }

    pub fn replica_state(&self, rep: usize) -> ParticleState {
        let nx = self.n * self.d;
        let nw = self.n * self.n;
        ParticleState {
            t: self.t,
            n: self.n,
            d: self.d,
            x: self.x[rep * nx..(rep + 1) * nx].to_vec(),
            w: self.w[rep * nw..(rep + 1) * nw].to_vec(),
        }
    }
}

/// One particle run's worth of iid uniform initial data, keyed so particle
/// runs and replicas can share it.
pub fn iid_uniform_state(
    n: usize,
    d: usize,
    state_radius: f64,
    weight_max: f64,
    seed: u64,
    replica: u64,
) -> Result<ParticleState> {
    let mut x = vec![0.0; n * d];
    for i in 0..n {
        let mut rng = stream_rng(seed, &[0x0A, replica, i as u64]);
        for k in 0..d {
            x[i * d + k] = rng.gen_range(-state_radius..=state_radius);
        }
    }
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut rng = stream_rng(seed, &[0x0B, replica, i as u64, j as u64]);
            w[i * n + j] = rng.gen_range(0.0..=weight_max);
        }
    }
    ParticleState::new(n, d, 0.0, x, w)
}

struct RemoteMoments {
    /// Per factor k and row index i: (1/(N²R)) Σ_r [B − row_i − col_i + diag_i].
    restricted: Vec<f64>,
    terms: usize,
}

fn cross_replica_moments(
    lam: &WeightDynamicsSpec,
    x: &[f64],
    w: &[f64],
    n: usize,
    d: usize,
    r: usize,
) -> RemoteMoments {
    let form = lam.separable.as_ref().expect("separable moments need a separable form");
    let kk = form.terms();
    let nx = n * d;
    let nw = n * n;
    let mut restricted = vec![0.0; kk * n];
    let inv = 1.0 / r as f64;
    for k in 0..kk {
        let bk = &form.remote[k];
        let mut acc = vec![0.0; n];
        for rep in 0..r {
            let xs = &x[rep * nx..(rep + 1) * nx];
            let ws = &w[rep * nw..(rep + 1) * nw];
            let mut total = 0.0;
            let mut rows = vec![0.0; n];
            let mut cols = vec![0.0; n];
            for i1 in 0..n {
                let xi1 = &xs[i1 * d..(i1 + 1) * d];
                for j1 in 0..n {
                    let xj1 = &xs[j1 * d..(j1 + 1) * d];
                    let v = bk(xi1, xj1, ws[i1 * n + j1]);
                    total += v;
                    rows[i1] += v;
                    cols[j1] += v;
                }
            }
            for i in 0..n {
                let xi = &xs[i * d..(i + 1) * d];
                let diag = bk(xi, xi, ws[i * n + i]);
                acc[i] += total - rows[i] - cols[i] + diag;
            }
        }
        for i in 0..n {
            restricted[k * n + i] = acc[i] * inv;
        }
    }
    RemoteMoments { restricted, terms: kk }
}

#[allow(clippy::too_many_arguments)]
fn replica_rhs_into(
    dy: &mut [f64],
    t: f64,
    rep: usize,
    x_all: &[f64],
    w_all: &[f64],
    n: usize,
    d: usize,
    r: usize,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
    moments: Option<&RemoteMoments>,
) {
    let nx = n * d;
    let nw = n * n;
    let xs = &x_all[rep * nx..(rep + 1) * nx];
    let ws = &w_all[rep * nw..(rep + 1) * nw];
    let inv_n = 1.0 / n as f64;
    let inv_r = 1.0 / r as f64;
    let inv_n2 = 1.0 / (n * n) as f64;
    let (dx, dw) = dy.split_at_mut(nx);

    // dX̄_i: cross-replica estimate of ∫ w~ φ(t, x̄_i, y~) dλ̄^{N,i,j}.
    for i in 0..n {
        let xi = &xs[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for j in 0..n {
            let mut inner = 0.0;
            for rr in 0..r {
                let xo = &x_all[rr * nx..(rr + 1) * nx];
                let wo = &w_all[rr * nw..(rr + 1) * nw];
                inner += wo[i * n + j] * phi.eval_raw(t, xi, &xo[j * d..(j + 1) * d]);
            }
            acc += inner * inv_r;
        }
        let v = acc * inv_n;
        for k in 0..d {
            dx[i * d + k] = v;
        }
    }

    // dW̄_ij over i1 ≠ i, j1 ≠ i, against the cross-replica empirical law.
    match moments {
        Some(m) => {
            let form = lam.separable.as_ref().unwrap();
            for i in 0..n {
                let xi = &xs[i * d..(i + 1) * d];
                for j in 0..n {
                    if i == j {
                        dw[i * n + j] = 0.0;
                        continue;
                    }
                    let xj = &xs[j * d..(j + 1) * d];
                    let wij = ws[i * n + j];
                    let mut acc = 0.0;
                    for k in 0..m.terms {
                        let a = local_factor_avg(form.local[k].as_ref(), quad, i, j, n, xi, xj, wij);
                        acc += a * m.restricted[k * n + i];
                    }
                    dw[i * n + j] = acc * inv_n2;
                }
            }
        }
        None => {
            for i in 0..n {
                let xi = &xs[i * d..(i + 1) * d];
                for j in 0..n {
                    if i == j {
                        dw[i * n + j] = 0.0;
                        continue;
                    }
                    let xj = &xs[j * d..(j + 1) * d];
                    let wij = ws[i * n + j];
                    let mut acc = 0.0;
                    for i1 in 0..n {
                        if i1 == i {
                            continue;
                        }
                        for j1 in 0..n {
                            if j1 == i {
                                continue;
                            }
                            let mut inner = 0.0;
                            for rr in 0..r {
                                let xo = &x_all[rr * nx..(rr + 1) * nx];
                                let wo = &w_all[rr * nw..(rr + 1) * nw];
                                inner += lambda_cell_avg_raw(
                                    lam,
                                    quad,
                                    i,
                                    j,
                                    n,
                                    xi,
                                    xj,
                                    wij,
                                    &xo[i1 * d..(i1 + 1) * d],
                                    &xo[j1 * d..(j1 + 1) * d],
                                    wo[i1 * n + j1],
                                );
                            }
                            acc += inner * inv_r;
                        }
                    }
                    dw[i * n + j] = acc * inv_n2;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn local_factor_avg(
    factor: &crate::kernels::LocalFactorFn,
    quad: Quadrature,
    i: usize,
    j: usize,
    n: usize,
    x: &[f64],
    y: &[f64],
    w: f64,
) -> f64 {
    use crate::util::{cell_midpoint, gauss_legendre};
    match quad {
        Quadrature::Midpoint => factor(cell_midpoint(i, n), cell_midpoint(j, n), x, y, w),
        Quadrature::Gauss(q) => {
            let (nodes, weights) = gauss_legendre(q);
            let half = 1.0 / (2.0 * n as f64);
            let (mi, mj) = (cell_midpoint(i, n), cell_midpoint(j, n));
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

fn check_preconditions(lam: &WeightDynamicsSpec, ens: &ReplicaEnsemble) -> Result<()> {
    if !lam.x_independent {
        return Err(Error::config(format!(
            "the intermediate system requires an x-independent weight dynamics, '{}' is not",
            lam.name
        )));
    }
    if ens.r == 0 {
        return Err(Error::domain("ensemble needs at least one replica"));
    }
    Ok(())
}

/// Per-replica (dx̄, dw̄) under the cross-replica empirical-law estimator.
pub fn intermediate_rhs(
    ens: &ReplicaEnsemble,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_preconditions(lam, ens)?;
    let (n, d, r) = (ens.n, ens.d, ens.r);
    let rep_len = n * d + n * n;
    let mut dy = vec![0.0; r * rep_len];
    let moments = lam
        .separable
        .as_ref()
        .map(|_| cross_replica_moments(lam, &ens.x, &ens.w, n, d, r));
    dy.par_chunks_mut(rep_len).enumerate().for_each(|(rep, chunk)| {
        replica_rhs_into(
            chunk,
            ens.t,
            rep,
            &ens.x,
            &ens.w,
            n,
            d,
            r,
            phi,
            lam,
            quad,
            moments.as_ref(),
        );
    });
    let mut dx = Vec::with_capacity(r * n * d);
    let mut dw = Vec::with_capacity(r * n * n);
    for rep in 0..r {
        let chunk = &dy[rep * rep_len..(rep + 1) * rep_len];
        dx.extend_from_slice(&chunk[..n * d]);
        dw.extend_from_slice(&chunk[n * d..]);
    }
    Ok((dx, dw))
}

/// RK4 integration of the coupled replica system under one clock.
#[allow(clippy::too_many_arguments)]
pub fn integrate_intermediate(
    ens0: &ReplicaEnsemble,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    quad: Quadrature,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<ReplicaEnsemble>> {
    check_preconditions(lam, ens0)?;
    let (n, d, r) = (ens0.n, ens0.d, ens0.r);
    let nx = n * d;
    let nw = n * n;
    let rep_len = nx + nw;
    // Flat layout: per replica, states then weights.
    let mut y = Vec::with_capacity(r * rep_len);
    for rep in 0..r {
        y.extend_from_slice(&ens0.x[rep * nx..(rep + 1) * nx]);
        y.extend_from_slice(&ens0.w[rep * nw..(rep + 1) * nw]);
    }

    let mut snapshots = Vec::new();
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        // Re-split the flat state into the ensemble layout for the moments.
        let mut x_all = vec![0.0; r * nx];
        let mut w_all = vec![0.0; r * nw];
        for rep in 0..r {
            let chunk = &y[rep * rep_len..(rep + 1) * rep_len];
            x_all[rep * nx..(rep + 1) * nx].copy_from_slice(&chunk[..nx]);
            w_all[rep * nw..(rep + 1) * nw].copy_from_slice(&chunk[nx..]);
        }
        let moments = lam
            .separable
            .as_ref()
            .map(|_| cross_replica_moments(lam, &x_all, &w_all, n, d, r));
        dy.par_chunks_mut(rep_len).enumerate().for_each(|(rep, chunk)| {
            replica_rhs_into(
                chunk, t, rep, &x_all, &w_all, n, d, r, phi, lam, quad,
                moments.as_ref(),
            );
        });
    };
    let mut normalize = |y: &mut [f64]| {
        for rep in 0..r {
            for i in 0..n {
                y[rep * rep_len + nx + i * n + i] = 0.0;
            }
        }
    };
    let seed = ens0.seed;
    let mut record = |_step: usize, t: f64, y: &[f64]| {
        let mut x_all = Vec::with_capacity(r * nx);
        let mut w_all = Vec::with_capacity(r * nw);
        for rep in 0..r {
            let chunk = &y[rep * rep_len..(rep + 1) * rep_len];
            x_all.extend_from_slice(&chunk[..nx]);
            w_all.extend_from_slice(&chunk[nx..]);
        }
        snapshots.push(ReplicaEnsemble {
            t,
            n,
            d,
            r,
            x: x_all,
            w: w_all,
            seed,
        });
    };
    integrate_fixed_step(&mut y, horizon, dt, record_every, &mut rhs, &mut normalize, &mut record)?;
    Ok(snapshots)
}

/// Monte Carlo coupling error at time t between matched particle runs and
/// an intermediate ensemble trajectory:
/// sup_i avg_r |x_i − x̄_i| + sup_ij avg_r |w_ij − w̄_ij|.
pub fn coupling_error(
    particle_runs: &[Trajectory],
    ensemble_traj: &[ReplicaEnsemble],
    t: f64,
) -> Result<f64> {
    let (ex, ew) = coupling_error_components(particle_runs, ensemble_traj, t)?;
    Ok(ex + ew)
}

/// The state and weight parts of [`coupling_error`], separately.
pub fn coupling_error_components(
    particle_runs: &[Trajectory],
    ensemble_traj: &[ReplicaEnsemble],
    t: f64,
) -> Result<(f64, f64)> {
    if particle_runs.is_empty() || ensemble_traj.is_empty() {
        return Err(Error::domain("empty inputs to coupling_error"));
    }
    let find_ens = ensemble_traj
        .iter()
        .find(|e| (e.t - t).abs() <= 1e-9 * t.abs().max(1.0))
        .ok_or_else(|| Error::domain(format!("no ensemble snapshot at t = {t}")))?;
    let (n, d, r) = (find_ens.n, find_ens.d, find_ens.r);
    if particle_runs.len() != r {
        return Err(Error::domain(format!(
            "runs ({}) and replicas ({r}) must match",
            particle_runs.len()
        )));
    }
    let nx = n * d;
    let nw = n * n;
    let mut per_run_states = Vec::with_capacity(r);
    for run in particle_runs {
        let s = run
            .states
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::domain(format!("no particle snapshot at t = {t}")))?;
        if s.n != n || s.d != d {
            return Err(Error::domain("mismatched shapes between runs and ensemble"));
        }
        per_run_states.push(s);
    }
    let inv_r = 1.0 / r as f64;
    let mut err_x: f64 = 0.0;
    for i in 0..n {
        let mut acc = 0.0;
        for (rep, s) in per_run_states.iter().enumerate() {
            let mut sq = 0.0;
            for k in 0..d {
                let diff = s.x[i * d + k] - find_ens.x[rep * nx + i * d + k];
                sq += diff * diff;
            }
            acc += sq.sqrt();
        }
        err_x = err_x.max(acc * inv_r);
    }
    let mut err_w: f64 = 0.0;
    for idx in 0..nw {
        let mut acc = 0.0;
        for (rep, s) in per_run_states.iter().enumerate() {
            acc += (s.w[idx] - find_ens.w[rep * nw + idx]).abs();
        }
        err_w = err_w.max(acc * inv_r);
    }
    Ok((err_x, err_w))
}

/// Ensemble summary export: one row (t, error_x, error_w, R, N, seed) per
/// listed time.
pub fn write_coupling_csv(
    path: &Path,
    rows: &[(f64, f64, f64)],
    r: usize,
    n: usize,
    seed: u64,
) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,error_x,error_w,R,N,seed")?;
    for (t, ex, ew) in rows {
        writeln!(f, "{t},{ex},{ew},{r},{n},{seed}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelCatalog;
    use crate::particle::{integrate_particle, particle_rhs, SumMode};

    fn catalog() -> KernelCatalog {
        KernelCatalog::builtin()
    }

    const TANH: fn(f64) -> f64 = f64::tanh;

    #[test]
    fn single_replica_matches_restricted_particle_system_bitwise() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = iid_uniform_state(6, 1, 1.0, 1.0, 3, 0).unwrap();
        let ens = ReplicaEnsemble::from_states(std::slice::from_ref(&st), 3).unwrap();

        let (dx_e, dw_e) = intermediate_rhs(&ens, phi, lam, Quadrature::Midpoint).unwrap();
        let (dx_p, dw_p) =
            particle_rhs(&st, phi, lam, SumMode::Restricted, Quadrature::Midpoint).unwrap();
        for (a, b) in dx_e.iter().zip(&dx_p) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in dw_e.iter().zip(&dw_p) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        let etraj = integrate_intermediate(&ens, phi, lam, Quadrature::Midpoint, 0.5, 0.01, 10)
            .unwrap();
        let ptraj = integrate_particle(
            &st, phi, lam, SumMode::Restricted, Quadrature::Midpoint, 0.5, 0.01, 10,
        )
        .unwrap();
        for (e, p) in etraj.iter().zip(&ptraj.states) {
            assert_eq!(e.t, p.t);
            for (a, b) in e.x.iter().zip(&p.x) {
                assert!((a - b).abs() <= 1e-13);
            }
            for (a, b) in e.w.iter().zip(&p.w) {
                assert!((a - b).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn identical_replicas_degenerate_to_the_restricted_particle_rhs() {
        // The empirical law collapses to a Dirac at the common state.
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = iid_uniform_state(5, 1, 1.0, 1.0, 41, 0).unwrap();
        let ens = ReplicaEnsemble::from_states(&[st.clone(), st.clone(), st.clone()], 41).unwrap();
        let (dx_e, dw_e) = intermediate_rhs(&ens, phi, lam, Quadrature::Midpoint).unwrap();
        let (dx_p, dw_p) =
            particle_rhs(&st, phi, lam, SumMode::Restricted, Quadrature::Midpoint).unwrap();
        let (nx, nw) = (st.n * st.d, st.n * st.n);
        for rep in 0..3 {
            for i in 0..nx {
                assert!((dx_e[rep * nx + i] - dx_p[i]).abs() <= 1e-13);
            }
            for i in 0..nw {
                assert!((dw_e[rep * nw + i] - dw_p[i]).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn identical_replicas_stay_identical() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = iid_uniform_state(4, 1, 1.0, 1.0, 9, 0).unwrap();
        let ens = ReplicaEnsemble::from_states(&[st.clone(), st.clone(), st], 9).unwrap();
        let traj =
            integrate_intermediate(&ens, phi, lam, Quadrature::Midpoint, 0.4, 0.02, 5).unwrap();
        let end = traj.last().unwrap();
        let nx = end.n * end.d;
        let nw = end.n * end.n;
        for rep in 1..end.r {
            assert_eq!(&end.x[..nx], &end.x[rep * nx..(rep + 1) * nx]);
            assert_eq!(&end.w[..nw], &end.w[rep * nw..(rep + 1) * nw]);
        }
    }

    #[test]
    fn zero_phi_gives_zero_state_drift() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let ens = ReplicaEnsemble::sample_iid_uniform(4, 1, 3, 1.0, 1.0, 5).unwrap();
        let (dx, _) = intermediate_rhs(&ens, phi, lam, Quadrature::Midpoint).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_computed_two_replica_estimator() {
        // R = 2, N = 2, d = 1, tanh-consensus:
        // dx̄_1^{(1)} = (1/2)(1/2)[ w̄_12^{(1)} tanh(x̄_2^{(1)} − x̄_1^{(1)})
        //                        + w̄_12^{(2)} tanh(x̄_2^{(2)} − x̄_1^{(1)}) ].
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let s1 = ParticleState::new(2, 1, 0.0, vec![0.1, 0.7], vec![0.0, 0.4, 0.9, 0.0]).unwrap();
        let s2 = ParticleState::new(2, 1, 0.0, vec![-0.3, 0.2], vec![0.0, 0.8, 0.1, 0.0]).unwrap();
        let ens = ReplicaEnsemble::from_states(&[s1, s2], 0).unwrap();
        let (dx, _) = intermediate_rhs(&ens, phi, lam, Quadrature::Midpoint).unwrap();
        let expect = 0.5 * 0.5 * (0.4 * TANH(0.7 - 0.1) + 0.8 * TANH(0.2 - 0.1));
        assert!((dx[0] - expect).abs() < 1e-15, "{} vs {expect}", dx[0]);
    }

    #[test]
    fn frozen_dynamics_keeps_all_replicas_constant() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let ens = ReplicaEnsemble::sample_iid_uniform(3, 1, 4, 1.0, 1.0, 7).unwrap();
        let traj =
            integrate_intermediate(&ens, phi, lam, Quadrature::Midpoint, 1.0, 0.05, 5).unwrap();
        let end = traj.last().unwrap();
        assert_eq!(end.x, ens.x);
        assert_eq!(end.w, ens.w);
    }

    #[test]
    fn relaxation_closed_form_with_states_at_zero() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let n = 8;
        let mut states = Vec::new();
        for rep in 0..3u64 {
            let mut st = iid_uniform_state(n, 1, 1.0, 1.0, 21, rep).unwrap();
            st.x.iter_mut().for_each(|v| *v = 0.0);
            states.push(st);
        }
        let w0: Vec<Vec<f64>> = states.iter().map(|s| s.w.clone()).collect();
        let ens = ReplicaEnsemble::from_states(&states, 21).unwrap();
        let traj =
            integrate_intermediate(&ens, phi, lam, Quadrature::Midpoint, 1.0, 1e-3, 1000).unwrap();
        let end = traj.last().unwrap();
        let rate = ((n - 1) as f64 / n as f64).powi(2);
        let nw = n * n;
        for rep in 0..3 {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let expect = 1.0 + (w0[rep][i * n + j] - 1.0) * (-rate).exp();
                    assert!((end.w[rep * nw + i * n + j] - expect).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn x_dependent_dynamics_is_rejected() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = WeightDynamicsSpec::new("uses-x", 1.0, 1.0, false, None, |_, _, x, _, _, _, _, _| x[0]);
        let ens = ReplicaEnsemble::sample_iid_uniform(3, 1, 2, 1.0, 1.0, 5).unwrap();
        assert!(intermediate_rhs(&ens, phi, &lam, Quadrature::Midpoint).is_err());
    }

    #[test]
    fn separable_estimator_matches_generic_estimator() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let mut generic = lam.clone();
        generic.separable = None;
        let ens = ReplicaEnsemble::sample_iid_uniform(5, 1, 3, 1.0, 1.0, 13).unwrap();
        let (dx_s, dw_s) = intermediate_rhs(&ens, phi, lam, Quadrature::Midpoint).unwrap();
        let (dx_g, dw_g) = intermediate_rhs(&ens, phi, &generic, Quadrature::Midpoint).unwrap();
        assert_eq!(dx_s, dx_g);
        for (a, b) in dw_s.iter().zip(&dw_g) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn coupling_error_zero_for_identical_dynamics_and_at_t0() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let states: Vec<ParticleState> = (0..3)
            .map(|rep| iid_uniform_state(4, 1, 1.0, 1.0, 2, rep).unwrap())
            .collect();
        let ens = ReplicaEnsemble::from_states(&states, 2).unwrap();
        let runs: Vec<Trajectory> = states
            .iter()
            .map(|s| {
                integrate_particle(
                    s, phi, lam, SumMode::Restricted, Quadrature::Midpoint, 0.5, 0.05, 1,
                )
                .unwrap()
            })
            .collect();
        let etraj =
            integrate_intermediate(&ens, phi, lam, Quadrature::Midpoint, 0.5, 0.05, 1).unwrap();
        assert_eq!(coupling_error(&runs, &etraj, 0.0).unwrap(), 0.0);
        assert_eq!(coupling_error(&runs, &etraj, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn coupling_error_rejects_mismatched_shapes() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let states: Vec<ParticleState> = (0..2)
            .map(|rep| iid_uniform_state(4, 1, 1.0, 1.0, 2, rep).unwrap())
            .collect();
        let ens = ReplicaEnsemble::from_states(&states, 2).unwrap();
        let etraj =
            integrate_intermediate(&ens, phi, lam, Quadrature::Midpoint, 0.5, 0.05, 1).unwrap();
        let one_run = vec![integrate_particle(
            &states[0], phi, lam, SumMode::Restricted, Quadrature::Midpoint, 0.5, 0.05, 1,
        )
        .unwrap()];
        assert!(coupling_error(&one_run, &etraj, 0.5).is_err());
    }
}
