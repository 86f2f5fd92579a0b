//! Finitely supported measures on the extended phase space and the exact
//! flat-metric machinery: d_BL on atoms via balanced optimal transport with
//! truncated ground cost, and the fiber-averaged distance d₁.

mod transport;

use crate::continuum::GridSolution;
use crate::error::{Error, Result};
use crate::particle::ParticleState;
use crate::util::{cell_midpoint, pairwise_sum};
use crate::vlasov::FiberedEnsemble;
use rayon::prelude::*;
use std::io::{BufWriter, Write};
use std::path::Path;
use transport::transport_min_cost;

/// Tolerance below which atoms are identified before metric computations.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// A probability measure supported on finitely many atoms of R^dim
/// (dim = 2d + 1 for phase-space triples (x, y, w)).
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    pub dim: usize,
    /// Row-major k×dim atom coordinates.
    pub points: Vec<f64>,
    /// Nonnegative masses summing to 1.
    pub masses: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != masses.len() * dim {
            return Err(Error::domain("measure shape mismatch"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite atom"));
        }
        if masses.iter().any(|m| !m.is_finite() || *m < -1e-15) {
            return Err(Error::domain("masses must be nonnegative"));
        }
        Ok(DiscreteMeasure { dim, points, masses })
    }

    pub fn dirac(point: Vec<f64>) -> Self {
        DiscreteMeasure {
            dim: point.len(),
            points: point,
            masses: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.masses)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let total = self.total_mass();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("measure not normalized: total mass {total}")));
        }
        Ok(())
    }

    /// Canonical form: atoms within `tol` (max-norm) are identified and
    /// their masses accumulated; zero-mass atoms are dropped.
    pub fn merged(&self, tol: f64) -> DiscreteMeasure {
        let k = self.len();
        let mut rep_points: Vec<f64> = Vec::new();
        let mut rep_masses: Vec<f64> = Vec::new();
        let mut reps = 0usize;
        for a in 0..k {
            let pa = self.point(a);
            let mut found = None;
            for r in 0..reps {
                let pr = &rep_points[r * self.dim..(r + 1) * self.dim];
                if pa.iter().zip(pr).all(|(u, v)| (u - v).abs() <= tol) {
                    found = Some(r);
                    break;
                }
            }
            match found {
                Some(r) => rep_masses[r] += self.masses[a],
                None => {
                    rep_points.extend_from_slice(pa);
                    rep_masses.push(self.masses[a]);
                    reps += 1;
                }
            }
        }
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for r in 0..reps {
            if rep_masses[r] > 0.0 {
                points.extend_from_slice(&rep_points[r * self.dim..(r + 1) * self.dim]);
                masses.push(rep_masses[r]);
            }
        }
        DiscreteMeasure {
            dim: self.dim,
            points,
            masses,
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Exact bounded-Lipschitz (flat) distance between two finitely supported
/// probability measures:
/// sup { ∫φ d(μ−ν) : ‖φ‖_∞ ≤ 1, Lip(φ) ≤ 1 } with the Euclidean ground
/// distance on the concatenated coordinates. Always in [0, 2], zero iff
/// the measures coincide after atom merging.
pub fn dbl_discrete(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.dim != nu.dim {
        return Err(Error::domain("measures live on different spaces"));
    }
    mu.check_normalized()?;
    nu.check_normalized()?;

    // Net signed measure on the merged union support.
    let dim = mu.dim;
    let mut union_points = mu.points.clone();
    union_points.extend_from_slice(&nu.points);
    let mut signed: Vec<f64> = mu.masses.clone();
    signed.extend(nu.masses.iter().map(|m| -m));
    let union = DiscreteMeasure {
        dim,
        points: union_points,
        masses: vec![0.0; signed.len()],
    };
    // Merge atoms of the union while accumulating signed mass.
    let k = signed.len();
    let mut rep_points: Vec<f64> = Vec::new();
    let mut rep_mass: Vec<f64> = Vec::new();
    let mut reps = 0usize;
    for a in 0..k {
        let pa = union.point(a);
        let mut found = None;
        for r in 0..reps {
            let pr = &rep_points[r * dim..(r + 1) * dim];
            if pa.iter().zip(pr).all(|(u, v)| (u - v).abs() <= ATOM_MERGE_TOL) {
                found = Some(r);
                break;
            }
        }
        match found {
            Some(r) => rep_mass[r] += signed[a],
            None => {
                rep_points.extend_from_slice(pa);
                rep_mass.push(signed[a]);
                reps += 1;
            }
        }
    }

    let drop_tol = 1e-14;
    let mut sur_pts: Vec<f64> = Vec::new();
    let mut sur_mass: Vec<f64> = Vec::new();
    let mut def_pts: Vec<f64> = Vec::new();
    let mut def_mass: Vec<f64> = Vec::new();
    for r in 0..reps {
        let c = rep_mass[r];
        if c > drop_tol {
            sur_pts.extend_from_slice(&rep_points[r * dim..(r + 1) * dim]);
            sur_mass.push(c);
        } else if c < -drop_tol {
            def_pts.extend_from_slice(&rep_points[r * dim..(r + 1) * dim]);
            def_mass.push(-c);
        }
    }
    if sur_mass.is_empty() || def_mass.is_empty() {
        return Ok(0.0);
    }
    // Re-balance the rounding slack symmetrically.
    let s_tot = pairwise_sum(&sur_mass);
    let d_tot = pairwise_sum(&def_mass);
    let target = 0.5 * (s_tot + d_tot);
    for v in &mut sur_mass {
        *v *= target / s_tot;
    }
    for v in &mut def_mass {
        *v *= target / d_tot;
    }

    let value = transport_min_cost(&sur_mass, &def_mass, &|i, j| {
        euclid(
            &sur_pts[i * dim..(i + 1) * dim],
            &def_pts[j * dim..(j + 1) * dim],
        )
        .min(2.0)
    })?;
    Ok(value.min(2.0))
}

/// An n×n grid of fiber measures on the extended phase space.
#[derive(Debug, Clone)]
pub struct FiberedDiscreteMeasure {
    pub n: usize,
    pub fibers: Vec<DiscreteMeasure>,
}

impl FiberedDiscreteMeasure {
    pub fn fiber(&self, i: usize, j: usize) -> &DiscreteMeasure {
        &self.fibers[i * self.n + j]
    }

    /// Replicates each fiber onto a grid refined by `factor`; exact because
    /// fiber measures are piecewise constant in (ξ, ζ) over their cells.
    pub fn refine(&self, factor: usize) -> FiberedDiscreteMeasure {
        assert!(factor >= 1);
        let n2 = self.n * factor;
        let mut fibers = Vec::with_capacity(n2 * n2);
        for i in 0..n2 {
            for j in 0..n2 {
                fibers.push(self.fiber(i / factor, j / factor).clone());
            }
        }
        FiberedDiscreteMeasure { n: n2, fibers }
    }

    /// (1/n²) Σ Σ over fibers of f(ξ_i, ζ_j, atom) integrated per fiber;
    /// the pairing of the fibered measure against a test function.
    pub fn integrate_against(&self, f: &dyn Fn(f64, f64, &[f64]) -> f64) -> f64 {
        let n = self.n;
        let mut vals = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let fiber = self.fiber(i, j);
                let (xi, zeta) = (cell_midpoint(i, n), cell_midpoint(j, n));
                let mut acc = 0.0;
                for k in 0..fiber.len() {
                    acc += fiber.masses[k] * f(xi, zeta, fiber.point(k));
                }
                vals.push(acc);
            }
        }
        pairwise_sum(&vals) / (n * n) as f64
    }

    /// CSV export with columns fiber_i,fiber_j,atom,mass,coordinates...
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        let dim = self.fibers.first().map(|m| m.dim).unwrap_or(0);
        write!(f, "fiber_i,fiber_j,atom,mass")?;
        for k in 0..dim {
            write!(f, ",z_{k}")?;
        }
        writeln!(f)?;
        for i in 0..self.n {
            for j in 0..self.n {
                let fiber = self.fiber(i, j);
                for k in 0..fiber.len() {
                    write!(f, "{i},{j},{k},{}", fiber.masses[k])?;
                    for v in fiber.point(k) {
                        write!(f, ",{v}")?;
                    }
                    writeln!(f)?;
                }
            }
        }
        Ok(())
    }
}

/// d₁ = (1/n²) Σ Σ d_BL(μ^{ij}, ν^{ij}): the midpoint discretization of the
/// fiber-averaged flat distance. Requires matching fiber grids.
pub fn d1_fibered(a: &FiberedDiscreteMeasure, b: &FiberedDiscreteMeasure) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::GridMismatch(format!(
            "fiber grids {} and {} differ",
            a.n, b.n
        )));
    }
    let n2 = a.n * a.n;
    let per_fiber: Vec<Result<f64>> = (0..n2)
        .into_par_iter()
        .map(|f| dbl_discrete(&a.fibers[f], &b.fibers[f]))
        .collect();
    let mut vals = Vec::with_capacity(n2);
    for v in per_fiber {
        vals.push(v?);
    }
    Ok(pairwise_sum(&vals) / n2 as f64)
}

/// d₁ after refining the coarser of two nested fiber grids.
pub fn d1_on_common_grid(
    a: &FiberedDiscreteMeasure,
    b: &FiberedDiscreteMeasure,
) -> Result<f64> {
    if a.n == b.n {
        return d1_fibered(a, b);
    }
    let (coarse, fine) = if a.n < b.n { (a, b) } else { (b, a) };
    if fine.n % coarse.n != 0 {
        return Err(Error::GridMismatch(format!(
            "fiber grids {} and {} are not nested",
            a.n, b.n
        )));
    }
    let refined = coarse.refine(fine.n / coarse.n);
    d1_fibered(&refined, fine)
}

fn triple(x: &[f64], y: &[f64], w: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(x.len() + y.len() + 1);
    p.extend_from_slice(x);
    p.extend_from_slice(y);
    p.push(w);
    p
}

/// Fiberwise Dirac empirical measure of a particle state: fiber (i, j)
/// carries δ_{(x_i, x_j, w_ij)} on the N×N grid.
pub fn empirical_from_particle(state: &ParticleState) -> FiberedDiscreteMeasure {
    let n = state.n;
    let mut fibers = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            fibers.push(DiscreteMeasure::dirac(triple(
                state.x_i(i),
                state.x_i(j),
                state.w_ij(i, j),
            )));
        }
    }
    FiberedDiscreteMeasure { n, fibers }
}

/// The "continuous" empirical measure of a grid solution, discretized on
/// its own n×n grid: fiber (i, j) carries δ_{(x_i, x_j, w_ij)}.
pub fn empirical_from_grid(grid: &GridSolution) -> FiberedDiscreteMeasure {
    let n = grid.n;
    let mut fibers = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            fibers.push(DiscreteMeasure::dirac(triple(
                grid.x_i(i),
                grid.x_i(j),
                grid.w_ij(i, j),
            )));
        }
    }
    FiberedDiscreteMeasure { n, fibers }
}

/// The fiber measures of a sample ensemble (equal masses 1/P).
pub fn fibered_from_ensemble(ens: &FiberedEnsemble) -> FiberedDiscreteMeasure {
    let n = ens.n;
    let mut fibers = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut points = Vec::with_capacity(ens.p * (2 * ens.d + 1));
            for q in 0..ens.p {
                let (sx, sy, sw) = ens.sample(i, j, q);
                points.extend_from_slice(&triple(sx, sy, sw));
            }
            fibers.push(DiscreteMeasure {
                dim: 2 * ens.d + 1,
                points,
                masses: vec![1.0 / ens.p as f64; ens.p],
            });
        }
    }
    FiberedDiscreteMeasure { n, fibers }
}

/// Uniform mixture of matched runs per fiber — the Monte Carlo estimate of
/// the expected empirical measure. Atoms are merged at the canonical
/// tolerance.
pub fn mean_measure(runs: &[FiberedDiscreteMeasure]) -> Result<FiberedDiscreteMeasure> {
    let Some(first) = runs.first() else {
        return Err(Error::domain("mean_measure needs at least one run"));
    };
    let n = first.n;
    if runs.iter().any(|r| r.n != n) {
        return Err(Error::GridMismatch("runs disagree on the fiber grid".into()));
    }
    let inv_r = 1.0 / runs.len() as f64;
    let mut fibers = Vec::with_capacity(n * n);
    for f in 0..n * n {
        let dim = first.fibers[f].dim;
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for run in runs {
            let fiber = &run.fibers[f];
            points.extend_from_slice(&fiber.points);
            masses.extend(fiber.masses.iter().map(|m| m * inv_r));
        }
        fibers.push(DiscreteMeasure { dim, points, masses }.merged(ATOM_MERGE_TOL));
    }
    Ok(FiberedDiscreteMeasure { n, fibers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn dirac3(x: f64, y: f64, w: f64) -> DiscreteMeasure {
        DiscreteMeasure::dirac(vec![x, y, w])
    }

    #[test]
    fn identical_diracs_have_zero_distance() {
        let a = dirac3(0.3, -0.2, 0.9);
        assert_eq!(dbl_discrete(&a, &a.clone()).unwrap(), 0.0);
    }

    #[test]
    fn two_diracs_closed_form() {
        // d_BL(δ_a, δ_b) = min(|a-b|, 2).
        let a = dirac3(0.0, 0.0, 0.0);
        let b = dirac3(1.0, 0.0, 0.0);
        assert!((dbl_discrete(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = dirac3(5.0, 0.0, 0.0);
        assert!((dbl_discrete(&a, &c).unwrap() - 2.0).abs() < 1e-12);
        let mut rng = stream_rng(5, &[1]);
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..=3.0)).collect();
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..=3.0)).collect();
            let dist = p
                .iter()
                .zip(&q)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            let v = dbl_discrete(&DiscreteMeasure::dirac(p), &DiscreteMeasure::dirac(q)).unwrap();
            assert!((v - dist.min(2.0)).abs() <= 1e-9);
        }
    }

    #[test]
    fn atom_permutation_gives_zero() {
        let mu = DiscreteMeasure::new(3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(3, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(dbl_discrete(&mu, &nu).unwrap(), 0.0);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let bad = DiscreteMeasure::new(3, vec![0.0; 3], vec![0.7]).unwrap();
        let ok = dirac3(0.0, 0.0, 0.0);
        assert!(dbl_discrete(&bad, &ok).is_err());
    }

    #[test]
    fn partial_overlap_moves_only_the_difference() {
        // μ = ½δ_a + ½δ_b, ν = ½δ_a + ½δ_c: only ½ unit moves b → c.
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        let c = [1.0, 0.0, 0.8];
        let mu = DiscreteMeasure::new(3, [a, b].concat(), vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(3, [a, c].concat(), vec![0.5, 0.5]).unwrap();
        let v = dbl_discrete(&mu, &nu).unwrap();
        assert!((v - 0.5 * 0.8).abs() <= 1e-12);
    }

    #[test]
    fn d1_requires_matching_grids_and_averages_fibers() {
        let st =
            ParticleState::new(2, 1, 0.0, vec![0.1, 0.4], vec![0.0, 0.3, 0.6, 0.0]).unwrap();
        let a = empirical_from_particle(&st);
        assert_eq!(d1_fibered(&a, &a.clone()).unwrap(), 0.0);
        let refined = a.refine(2);
        assert!(d1_fibered(&a, &refined).is_err());
        assert_eq!(d1_on_common_grid(&a, &refined).unwrap(), 0.0);
    }

    #[test]
    fn uniformly_shifted_fibers_average_to_the_shift() {
        let n = 3;
        let shift = 0.7;
        let mut fa = Vec::new();
        let mut fb = Vec::new();
        let mut rng = stream_rng(9, &[3]);
        for _ in 0..n * n {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let mut q = p.clone();
            q[0] += shift;
            fa.push(DiscreteMeasure::dirac(p));
            fb.push(DiscreteMeasure::dirac(q));
        }
        let a = FiberedDiscreteMeasure { n, fibers: fa.clone() };
        let b = FiberedDiscreteMeasure { n, fibers: fb.clone() };
        let v = d1_fibered(&a, &b).unwrap();
        assert!((v - shift).abs() <= 1e-9);

        // Half the fibers shifted, half identical: average s/2.
        let mut fibers_half = fb.clone();
        for f in 0..(n * n) / 2 + 1 {
            fibers_half[f] = fa[f].clone();
        }
        let hits = (n * n) - ((n * n) / 2 + 1);
        let c = FiberedDiscreteMeasure { n, fibers: fibers_half };
        let v_half = d1_fibered(&a, &c).unwrap();
        let expect = shift * hits as f64 / (n * n) as f64;
        assert!((v_half - expect).abs() <= 1e-9);
    }

    #[test]
    fn particle_and_grid_empirical_measures_coincide_on_shared_arrays() {
        let n = 3;
        let mut rng = stream_rng(8, &[5]);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        let st = ParticleState::new(n, 1, 0.0, x.clone(), w.clone()).unwrap();
        let grid = GridSolution::new(n, 1, 0.0, x, w).unwrap();
        let v = d1_fibered(&empirical_from_particle(&st), &empirical_from_grid(&grid)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn single_particle_empirical_measure_structure() {
        let st = ParticleState::new(1, 1, 0.0, vec![0.4], vec![0.0]).unwrap();
        let m = empirical_from_particle(&st);
        assert_eq!(m.n, 1);
        assert_eq!(m.fiber(0, 0).point(0), &[0.4, 0.4, 0.0]);
    }

    #[test]
    fn pairing_identity_against_polynomial_test_function() {
        // ∫ ψ dμ^N computed through the fibered measure equals the direct
        // double sum (1/N²) Σ ψ(ξ_i, ζ_j, x_i, x_j, w_ij).
        let n = 4;
        let mut rng = stream_rng(12, &[7]);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        for i in 0..n {
            w[i * n + i] = 0.0;
        }
        let st = ParticleState::new(n, 1, 0.0, x.clone(), w.clone()).unwrap();
        let m = empirical_from_particle(&st);
        let psi = |xi: f64, zeta: f64, z: &[f64]| {
            xi * zeta + z[0] * z[0] - 2.0 * z[1] + 0.5 * z[2] * xi
        };
        let via_measure = m.integrate_against(&psi);
        let mut direct = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (xi, zeta) = (cell_midpoint(i, n), cell_midpoint(j, n));
                direct += psi(xi, zeta, &[x[i], x[j], w[i * n + j]]);
            }
        }
        direct /= (n * n) as f64;
        assert!((via_measure - direct).abs() <= 1e-13);
    }

    #[test]
    fn mean_measure_of_identical_runs_is_the_common_measure() {
        let st =
            ParticleState::new(2, 1, 0.0, vec![0.2, -0.1], vec![0.0, 0.9, 0.4, 0.0]).unwrap();
        let e = empirical_from_particle(&st);
        let m = mean_measure(&[e.clone(), e.clone(), e.clone()]).unwrap();
        for f in 0..4 {
            assert_eq!(m.fibers[f].len(), 1);
            assert!((m.fibers[f].masses[0] - 1.0).abs() < 1e-12);
            assert_eq!(m.fibers[f].points, e.fibers[f].points);
        }
    }

    #[test]
    fn mean_measure_of_two_diracs_is_even_mixture() {
        let a = FiberedDiscreteMeasure {
            n: 1,
            fibers: vec![dirac3(0.0, 0.0, 0.0)],
        };
        let b = FiberedDiscreteMeasure {
            n: 1,
            fibers: vec![dirac3(1.0, 0.0, 0.0)],
        };
        let m = mean_measure(&[a, b]).unwrap();
        assert_eq!(m.fibers[0].len(), 2);
        assert!((m.fibers[0].masses[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empirical_mean_approaches_sampling_law_with_more_runs() {
        // Mean of R Diracs at iid uniform points vs a fine deterministic
        // representation of the law: the distance shrinks as R grows.
        let law_nodes = 8;
        let mut pts = Vec::new();
        for a in 0..law_nodes {
            let v = (2 * a + 1) as f64 / (2 * law_nodes) as f64;
            pts.push(v);
        }
        let mut law_points = Vec::new();
        for &a in &pts {
            for &b in &pts {
                for &c in &pts {
                    law_points.extend_from_slice(&[a, b, c]);
                }
            }
        }
        let k = law_nodes * law_nodes * law_nodes;
        let law = DiscreteMeasure::new(3, law_points, vec![1.0 / k as f64; k]).unwrap();
        let sample_mean = |r: usize| {
            let mut rng = stream_rng(31, &[r as u64]);
            let mut points = Vec::new();
            for _ in 0..r {
                for _ in 0..3 {
                    points.push(rng.gen_range(0.0..=1.0));
                }
            }
            DiscreteMeasure::new(3, points, vec![1.0 / r as f64; r]).unwrap()
        };
        let d_small = dbl_discrete(&sample_mean(4), &law).unwrap();
        let d_large = dbl_discrete(&sample_mean(256), &law).unwrap();
        assert!(
            d_large < d_small,
            "R=256 distance {d_large} should beat R=4 distance {d_small}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn metric_axioms_on_random_measures(seed in 0u64..5000) {
            let mut rng = stream_rng(seed, &[0xA11]);
            let gen_measure = |rng: &mut rand_chacha::ChaCha8Rng| {
                let k = rng.gen_range(1usize..=4);
                let points: Vec<f64> =
                    (0..3 * k).map(|_| rng.gen_range(-2.0..=2.0)).collect();
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..=1.0)).collect();
                let tot: f64 = raw.iter().sum();
                DiscreteMeasure::new(3, points, raw.iter().map(|m| m / tot).collect()).unwrap()
            };
            let a = gen_measure(&mut rng);
            let b = gen_measure(&mut rng);
            let c = gen_measure(&mut rng);
            let dab = dbl_discrete(&a, &b).unwrap();
            let dba = dbl_discrete(&b, &a).unwrap();
            let dac = dbl_discrete(&a, &c).unwrap();
            let dbc = dbl_discrete(&b, &c).unwrap();
            prop_assert!(dab >= 0.0 && dab <= 2.0 + 1e-9);
            prop_assert!((dab - dba).abs() <= 1e-9);
            prop_assert!(dac <= dab + dbc + 1e-9);
            prop_assert!(dbl_discrete(&a, &a.clone()).unwrap() <= 1e-12);
        }
    }
}
