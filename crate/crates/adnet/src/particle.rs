//! The finite-N adaptive-network ODE system.
//!
//! States are N points in R^d coupled to an N×N weight matrix with zero
//! diagonal (no self-loops). The general mode runs the full double sum in
//! the weight equation; the restricted mode (x-independent dynamics)
//! excludes the pairs sharing the row index, which is what the mean-field
//! analysis of the intermediate system requires.

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, WeightDynamicsSpec};
use crate::rhs::{drift_into, lambda_cell_avg_raw, weight_rhs_generic_into, weight_rhs_into};
pub use crate::rhs::{Quadrature, SumMode};
use crate::util::{all_finite, integrate_fixed_step, require_finite};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Positions and weights of the N-particle system at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    pub n: usize,
    pub d: usize,
    /// Row-major N×d state block.
    pub x: Vec<f64>,
    /// Row-major N×N weight matrix, zero diagonal.
    pub w: Vec<f64>,
}

impl ParticleState {
    /// Builds a state, rejecting shape errors, non-finite entries and a
    /// nonzero diagonal.
    pub fn new(n: usize, d: usize, t: f64, x: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::domain("n and d must be positive"));
        }
        if x.len() != n * d || w.len() != n * n {
            return Err(Error::domain(format!(
                "shape mismatch: expected x len {} and w len {}, got {} and {}",
                n * d,
                n * n,
                x.len(),
                w.len()
            )));
        }
        require_finite(&x, "particle state")?;
        require_finite(&w, "particle weights")?;
        for i in 0..n {
            if w[i * n + i] != 0.0 {
                return Err(Error::domain(format!("weight diagonal must be zero at index {i}")));
            }
        }
        Ok(ParticleState { t, n, d, x, w })
    }

    /// Like [`ParticleState::new`] but zeroes the diagonal instead of
    /// rejecting it (projected initial data lands here).
    pub fn with_zeroed_diagonal(n: usize, d: usize, t: f64, x: Vec<f64>, mut w: Vec<f64>) -> Result<Self> {
        if w.len() == n * n {
            for i in 0..n {
                w[i * n + i] = 0.0;
            }
        }
        ParticleState::new(n, d, t, x, w)
    }

    pub fn x_i(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn w_ij(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.w.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean state vector (1/N) Σ x_i.
    pub fn state_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        for i in 0..self.n {
            for k in 0..self.d {
                mean[k] += self.x[i * self.d + k];
            }
        }
        for m in &mut mean {
            *m /= self.n as f64;
        }
        mean
    }
}

/// Recorded snapshots of one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<ParticleState>,
    pub dt: f64,
    pub scheme: &'static str,
    pub record_every: usize,
}

impl Trajectory {
    pub fn terminal(&self) -> &ParticleState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    /// CSV with columns t,i,x_0..x_{d-1}.
    pub fn write_states_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        write!(f, "t,i")?;
        for k in 0..self.states[0].d {
            write!(f, ",x_{k}")?;
        }
        writeln!(f)?;
        for s in &self.states {
            for i in 0..s.n {
                write!(f, "{},{}", s.t, i)?;
                for k in 0..s.d {
                    write!(f, ",{}", s.x[i * s.d + k])?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }

    /// CSV with columns t,i,j,w.
    pub fn write_weights_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,i,j,w")?;
        for s in &self.states {
            for i in 0..s.n {
                for j in 0..s.n {
                    writeln!(f, "{},{},{},{}", s.t, i, j, s.w[i * s.n + j])?;
                }
            }
        }
        Ok(())
    }
}

/// Binary snapshot file: header N, d, K as little-endian u64, then per
/// snapshot t followed by the N×d state block and the N×N weight block,
/// all little-endian f64.
pub fn write_snapshots_binary(states: &[ParticleState], path: &Path) -> Result<()> {
    if states.is_empty() {
        return Err(Error::domain("no snapshots to write"));
    }
    let n = states[0].n;
    let d = states[0].d;
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for v in [n as u64, d as u64, states.len() as u64] {
        f.write_all(&v.to_le_bytes())?;
    }
    for s in states {
        f.write_all(&s.t.to_le_bytes())?;
        for v in s.x.iter().chain(s.w.iter()) {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshots_binary(path: &Path) -> Result<Vec<ParticleState>> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |f: &mut BufReader<std::fs::File>| -> Result<u64> {
        f.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let n = read_u64(&mut f)? as usize;
    let d = read_u64(&mut f)? as usize;
    let k = read_u64(&mut f)? as usize;
    let mut out = Vec::with_capacity(k);
    let mut fbuf = [0u8; 8];
    for _ in 0..k {
        f.read_exact(&mut fbuf)?;
        let t = f64::from_le_bytes(fbuf);
        let mut x = vec![0.0; n * d];
        for v in &mut x {
            f.read_exact(&mut fbuf)?;
            *v = f64::from_le_bytes(fbuf);
        }
        let mut w = vec![0.0; n * n];
        for v in &mut w {
            f.read_exact(&mut fbuf)?;
            *v = f64::from_le_bytes(fbuf);
        }
        out.push(ParticleState::new(n, d, t, x, w)?);
    }
    Ok(out)
}

/// Cell average of Λ over I_i × I_j (0-based cells) at fixed non-identity
/// arguments. Exact for dynamics constant in (ξ, ζ); the midpoint rule is
/// also exact for affine dependence.
#[allow(clippy::too_many_arguments)]
pub fn lambda_cell_average(
    lam: &WeightDynamicsSpec,
    i: usize,
    j: usize,
    n: usize,
    x: &[f64],
    y: &[f64],
    w: f64,
    xt: &[f64],
    yt: &[f64],
    wt: f64,
    quad: Quadrature,
) -> Result<f64> {
    if i >= n || j >= n || n == 0 {
        return Err(Error::domain(format!("cell index ({i},{j}) out of range for n={n}")));
    }
    Ok(lambda_cell_avg_raw(lam, quad, i, j, n, x, y, w, xt, yt, wt))
}

fn check_mode(lam: &WeightDynamicsSpec, mode: SumMode) -> Result<()> {
    if mode == SumMode::Restricted && !lam.x_independent {
        return Err(Error::config(format!(
            "restricted mode requires an x-independent weight dynamics, '{}' is not",
            lam.name
        )));
    }
    Ok(())
}

/// Full right-hand side (dx, dw); takes the separable fast path when the
/// dynamics declares one.
pub fn particle_rhs(
    state: &ParticleState,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    mode: SumMode,
    quad: Quadrature,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_mode(lam, mode)?;
    let mut dx = vec![0.0; state.n * state.d];
    let mut dw = vec![0.0; state.n * state.n];
    drift_into(&mut dx, state.t, &state.x, &state.w, state.n, state.d, phi);
    weight_rhs_into(&mut dw, &state.x, &state.w, state.n, state.d, lam, quad, mode);
    Ok((dx, dw))
}

/// Reference right-hand side along the generic O(N⁴) weight sum, kept for
/// equivalence testing of the separable path.
pub fn particle_rhs_reference(
    state: &ParticleState,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    mode: SumMode,
    quad: Quadrature,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_mode(lam, mode)?;
    let mut dx = vec![0.0; state.n * state.d];
    let mut dw = vec![0.0; state.n * state.n];
    drift_into(&mut dx, state.t, &state.x, &state.w, state.n, state.d, phi);
    weight_rhs_generic_into(&mut dw, &state.x, &state.w, state.n, state.d, lam, quad, mode);
    Ok((dx, dw))
}

/// Classical RK4 with fixed step; the weight diagonal is re-zeroed after
/// every step and the terminal time equals `horizon` exactly.
#[allow(clippy::too_many_arguments)]
pub fn integrate_particle(
    state0: &ParticleState,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    mode: SumMode,
    quad: Quadrature,
    horizon: f64,
    dt: f64,
    record_every: usize,
) -> Result<Trajectory> {
    check_mode(lam, mode)?;
    if !all_finite(&state0.x) || !all_finite(&state0.w) {
        return Err(Error::domain("non-finite initial state"));
    }
    let (n, d) = (state0.n, state0.d);
    let nx = n * d;
    let mut y = Vec::with_capacity(nx + n * n);
    y.extend_from_slice(&state0.x);
    y.extend_from_slice(&state0.w);

    let mut snapshots = Vec::new();
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, w) = y.split_at(nx);
        let (dx, dw) = dy.split_at_mut(nx);
        drift_into(dx, t, x, w, n, d, phi);
        weight_rhs_into(dw, x, w, n, d, lam, quad, mode);
    };
    let mut normalize = |y: &mut [f64]| {
        for i in 0..n {
            y[nx + i * n + i] = 0.0;
        }
    };
    let mut record = |_step: usize, t: f64, y: &[f64]| {
        let (x, w) = y.split_at(nx);
        snapshots.push(ParticleState {
            t,
            n,
            d,
            x: x.to_vec(),
            w: w.to_vec(),
        });
    };
    integrate_fixed_step(&mut y, horizon, dt, record_every, &mut rhs, &mut normalize, &mut record)?;
    Ok(Trajectory {
        states: snapshots,
        dt,
        scheme: "rk4",
        record_every,
    })
}

/// Minimal margin of the Gronwall weight bound
/// max_ij |w_ij(t)| ≤ (C + C_Λ t) exp(C_Λ t), C = max_ij |w_ij(0)|,
/// over the recorded snapshots. Nonnegative on a faithful run.
pub fn weight_bound_margin(traj: &Trajectory, c_lambda: f64) -> Result<f64> {
    if traj.states.is_empty() {
        return Err(Error::domain("empty trajectory"));
    }
    let c0 = traj.states[0].max_abs_weight();
    let mut margin = f64::INFINITY;
    for s in &traj.states {
        let bound = (c0 + c_lambda * s.t) * (c_lambda * s.t).exp();
        margin = margin.min(bound - s.max_abs_weight());
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelCatalog;
    use crate::util::stream_rng;
    use rand::Rng;

    const TANH_ONE: f64 = 0.7615941559557649;

    fn catalog() -> KernelCatalog {
        KernelCatalog::builtin()
    }

    fn random_state(n: usize, d: usize, seed: u64) -> ParticleState {
        let mut rng = stream_rng(seed, &[0x51]);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        ParticleState::new(n, d, 0.0, x, w).unwrap()
    }

    #[test]
    fn state_rejects_nonzero_diagonal_and_bad_shapes() {
        assert!(ParticleState::new(2, 1, 0.0, vec![0.0; 2], vec![0.1; 4]).is_err());
        assert!(ParticleState::new(2, 1, 0.0, vec![0.0; 3], vec![0.0; 4]).is_err());
        assert!(ParticleState::with_zeroed_diagonal(2, 1, 0.0, vec![0.0; 2], vec![0.1; 4]).is_ok());
    }

    #[test]
    fn cell_average_constant_dynamics_is_pointwise_value() {
        let cat = catalog();
        let lam = cat.lambda("relax-to-H").unwrap();
        let direct = lam.eval_raw(0.5, 0.5, &[0.1], &[0.2], 0.3, &[0.4], &[0.5], 0.6);
        for quad in [Quadrature::Midpoint, Quadrature::Gauss(3)] {
            let v = lambda_cell_average(
                lam, 2, 5, 8, &[0.1], &[0.2], 0.3, &[0.4], &[0.5], 0.6, quad,
            )
            .unwrap();
            assert!((v - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_average_affine_identity_dependence() {
        // Λ = ξ · c: midpoint at cell i of N gives c (2i+1)/(2N) (0-based i).
        let c = 0.8;
        let lam = WeightDynamicsSpec::new("affine-xi", 1.0, 0.0, true, None, move |xi, _, _, _, _, _, _, _| xi * c);
        let n = 7;
        for i in 0..n {
            let v = lambda_cell_average(
                &lam, i, n - 1, n, &[0.0], &[0.0], 0.0, &[0.0], &[0.0], 0.0,
                Quadrature::Midpoint,
            )
            .unwrap();
            let expect = c * (2 * i + 1) as f64 / (2 * n) as f64;
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_average_bilinear_over_unit_square() {
        // Λ = ξ ζ c with N = 1: Gauss-2 integrates exactly to c/4.
        let c = 2.0;
        let lam = WeightDynamicsSpec::new("bilinear", 1.0, 0.0, true, None, move |xi, zeta, _, _, _, _, _, _| {
            xi * zeta * c
        });
        let v = lambda_cell_average(
            &lam, 0, 0, 1, &[0.0], &[0.0], 0.0, &[0.0], &[0.0], 0.0,
            Quadrature::Gauss(2),
        )
        .unwrap();
        assert!((v - c / 4.0).abs() < 1e-15);
    }

    #[test]
    fn cell_average_rejects_bad_index() {
        let cat = catalog();
        let lam = cat.lambda("relax-to-H").unwrap();
        assert!(lambda_cell_average(
            lam, 8, 0, 8, &[0.0], &[0.0], 0.0, &[0.0], &[0.0], 0.0,
            Quadrature::Midpoint
        )
        .is_err());
    }

    #[test]
    fn zero_weights_give_zero_drift() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let st = ParticleState::new(3, 1, 0.0, vec![0.3, -0.5, 1.0], vec![0.0; 9]).unwrap();
        let (dx, dw) = particle_rhs(&st, phi, lam, SumMode::General, Quadrature::Midpoint).unwrap();
        assert!(dx.iter().all(|v| *v == 0.0));
        assert!(dw.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_particle_drift_hand_value() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let st = ParticleState::new(2, 1, 0.0, vec![0.0, 1.0], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (dx, _) = particle_rhs(&st, phi, lam, SumMode::General, Quadrature::Midpoint).unwrap();
        assert!((dx[0] - TANH_ONE / 2.0).abs() < 1e-15);
        assert!((dx[1] + TANH_ONE / 2.0).abs() < 1e-15);
    }

    #[test]
    fn restricted_mode_rejects_x_dependent_dynamics() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = WeightDynamicsSpec::new("uses-x", 1.0, 1.0, false, None, |_, _, x, _, _, _, _, _| x[0]);
        let st = random_state(3, 1, 5);
        assert!(particle_rhs(&st, phi, &lam, SumMode::Restricted, Quadrature::Midpoint).is_err());
        assert!(particle_rhs(&st, phi, &lam, SumMode::General, Quadrature::Midpoint).is_ok());
    }

    #[test]
    fn frozen_dynamics_keeps_state_constant() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let st = random_state(4, 1, 9);
        let traj = integrate_particle(
            &st, phi, lam, SumMode::General, Quadrature::Midpoint, 1.0, 0.01, 10,
        )
        .unwrap();
        let end = traj.terminal();
        assert_eq!(end.t, 1.0);
        assert_eq!(end.x, st.x);
        assert_eq!(end.w, st.w);
    }

    #[test]
    fn antisymmetric_drift_conserves_state_mean() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let n = 8;
        let mut rng = stream_rng(3, &[0x33]);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut w = vec![1.0; n * n];
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        let st = ParticleState::new(n, 1, 0.0, x, w).unwrap();
        let mean0 = st.state_mean()[0];
        let traj = integrate_particle(
            &st, phi, lam, SumMode::General, Quadrature::Midpoint, 1.0, 1e-3, 100,
        )
        .unwrap();
        for s in &traj.states {
            assert!((s.state_mean()[0] - mean0).abs() <= 1e-12);
        }
    }

    #[test]
    fn weight_relaxation_matches_closed_form() {
        // φ = 0, relax-to-H, all states at 0, restricted mode:
        // w_ij(t) = 1 + (w_ij(0) - 1) exp(-((N-1)/N)² t).
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let n = 8;
        let mut rng = stream_rng(17, &[0x44]);
        let mut w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        let st = ParticleState::new(n, 1, 0.0, vec![0.0; n], w.clone()).unwrap();
        let traj = integrate_particle(
            &st, phi, lam, SumMode::Restricted, Quadrature::Midpoint, 1.0, 1e-3, 1000,
        )
        .unwrap();
        let end = traj.terminal();
        let rate = ((n - 1) as f64 / n as f64).powi(2);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    assert_eq!(end.w[i * n + j], 0.0);
                    continue;
                }
                let expect = 1.0 + (w[i * n + j] - 1.0) * (-rate * 1.0).exp();
                assert!(
                    (end.w[i * n + j] - expect).abs() <= 1e-8,
                    "w[{i},{j}] = {} vs {expect}",
                    end.w[i * n + j]
                );
            }
        }
    }

    #[test]
    fn diagonal_stays_zero_and_states_record_at_terminal_time() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = random_state(6, 1, 21);
        let traj = integrate_particle(
            &st, phi, lam, SumMode::General, Quadrature::Midpoint, 0.7, 0.02, 7,
        )
        .unwrap();
        assert_eq!(traj.terminal().t, 0.7);
        for s in &traj.states {
            for i in 0..s.n {
                assert_eq!(s.w[i * s.n + i], 0.0);
            }
        }
    }

    #[test]
    fn rk4_step_halving_ratio_is_fourth_order() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = random_state(5, 1, 8);
        let run = |dt: f64| {
            integrate_particle(
                &st, phi, lam, SumMode::General, Quadrature::Midpoint, 1.0, dt, usize::MAX,
            )
            .unwrap()
            .terminal()
            .clone()
        };
        let a = run(0.1);
        let b = run(0.05);
        let c = run(0.025);
        let diff = |p: &ParticleState, q: &ParticleState| {
            p.x.iter()
                .zip(&q.x)
                .chain(p.w.iter().zip(&q.w))
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max)
        };
        let ratio = diff(&a, &b) / diff(&b, &c);
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn general_vs_restricted_difference_is_order_one_over_n() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        for n in [4usize, 8, 16] {
            let st = random_state(n, 1, 100 + n as u64);
            let (_, dw_g) = particle_rhs(&st, phi, lam, SumMode::General, Quadrature::Midpoint).unwrap();
            let (_, dw_r) =
                particle_rhs(&st, phi, lam, SumMode::Restricted, Quadrature::Midpoint).unwrap();
            let wmax = st.max_abs_weight();
            let bound = (2 * n - 1) as f64 / (n * n) as f64 * lam.growth * (1.0 + wmax);
            for idx in 0..n * n {
                assert!(
                    (dw_g[idx] - dw_r[idx]).abs() <= bound + 1e-15,
                    "entry {idx}: {} vs bound {bound}",
                    (dw_g[idx] - dw_r[idx]).abs()
                );
            }
        }
    }

    #[test]
    fn separable_path_matches_generic_reference() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        for n in [3usize, 5, 8] {
            for mode in [SumMode::General, SumMode::Restricted] {
                for quad in [Quadrature::Midpoint, Quadrature::Gauss(2)] {
                    let st = random_state(n, 1, 200 + n as u64);
                    let (dx_f, dw_f) = particle_rhs(&st, phi, lam, mode, quad).unwrap();
                    let (dx_g, dw_g) = particle_rhs_reference(&st, phi, lam, mode, quad).unwrap();
                    assert_eq!(dx_f, dx_g);
                    for idx in 0..n * n {
                        assert!((dw_f[idx] - dw_g[idx]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn weight_bound_margin_zero_dynamics() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("zero").unwrap();
        let st = random_state(4, 1, 31);
        let traj = integrate_particle(
            &st, phi, lam, SumMode::General, Quadrature::Midpoint, 1.0, 0.05, 1,
        )
        .unwrap();
        // C_Λ = 0 and constant weights: the bound is attained exactly.
        let m = weight_bound_margin(&traj, 0.0).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn weight_bound_margin_single_snapshot_is_zero() {
        let st = random_state(4, 1, 32);
        let traj = Trajectory {
            states: vec![st],
            dt: 0.1,
            scheme: "rk4",
            record_every: 1,
        };
        assert_eq!(weight_bound_margin(&traj, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn weight_bound_margin_positive_for_relaxation_run() {
        let cat = catalog();
        let phi = cat.phi("zero").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = random_state(8, 1, 33);
        let traj = integrate_particle(
            &st, phi, lam, SumMode::Restricted, Quadrature::Midpoint, 1.0, 0.01, 10,
        )
        .unwrap();
        // The t = 0 snapshot attains the bound exactly (margin 0); every
        // later snapshot sits strictly inside it.
        assert!(weight_bound_margin(&traj, lam.growth).unwrap() >= 0.0);
        let later = Trajectory {
            states: traj.states[1..].to_vec(),
            dt: traj.dt,
            scheme: traj.scheme,
            record_every: traj.record_every,
        };
        let c0 = traj.states[0].max_abs_weight();
        let mut margin = f64::INFINITY;
        for s in &later.states {
            let bound = (c0 + lam.growth * s.t) * (lam.growth * s.t).exp();
            margin = margin.min(bound - s.max_abs_weight());
        }
        assert!(margin > 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn diagonal_stays_zero_for_random_runs(seed in 0u64..1000, n in 2usize..7) {
            let cat = catalog();
            let phi = cat.phi("tanh-consensus").unwrap();
            let lam = cat.lambda("relax-to-H").unwrap();
            let st = random_state(n, 1, seed);
            let traj = integrate_particle(
                &st, phi, lam, SumMode::General, Quadrature::Midpoint, 0.2, 0.05, 1,
            )
            .unwrap();
            for s in &traj.states {
                for i in 0..s.n {
                    proptest::prop_assert_eq!(s.w[i * s.n + i], 0.0);
                }
                proptest::prop_assert!(s.x.iter().chain(s.w.iter()).all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn binary_snapshot_round_trip() {
        let cat = catalog();
        let phi = cat.phi("tanh-consensus").unwrap();
        let lam = cat.lambda("relax-to-H").unwrap();
        let st = random_state(4, 2, 55);
        let traj = integrate_particle(
            &st, phi, lam, SumMode::General, Quadrature::Midpoint, 0.2, 0.05, 2,
        )
        .unwrap();
        let dir = std::env::temp_dir().join("adnet_bin_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("snap.bin");
        write_snapshots_binary(&traj.states, &path).unwrap();
        let back = read_snapshots_binary(&path).unwrap();
        assert_eq!(back.len(), traj.states.len());
        for (a, b) in back.iter().zip(&traj.states) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.x, b.x);
            assert_eq!(a.w, b.w);
        }
        std::fs::remove_file(&path).ok();
    }
}
