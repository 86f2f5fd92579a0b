#![allow(dead_code)]

//! Independent reference implementations used only by the test suite:
//! the potential-form LP for the flat metric (dense tableau simplex and,
//! for tiny instances, exhaustive vertex enumeration) and a series-free
//! tanh oracle. These deliberately share no code with the library's
//! transportation solver.

use adnet::metrics::DiscreteMeasure;

/// tanh via the exponential identity (e^{2x} - 1) / (e^{2x} + 1).
pub fn tanh_oracle(x: f64) -> f64 {
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

struct PotentialLp {
    /// Number of potential variables (atoms of the union support).
    k: usize,
    /// Objective coefficients c_k = μ_k − ν_k.
    c: Vec<f64>,
    /// Constraint rows a·φ ≤ b.
    rows: Vec<(Vec<f64>, f64)>,
}

fn build_potential_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> PotentialLp {
    let k = mu.len() + nu.len();
    let dim = mu.dim;
    let mut points = mu.points.clone();
    points.extend_from_slice(&nu.points);
    let mut c = mu.masses.clone();
    c.extend(nu.masses.iter().map(|m| -m));

    let mut rows = Vec::new();
    for a in 0..k {
        let mut up = vec![0.0; k];
        up[a] = 1.0;
        rows.push((up, 1.0));
        let mut lo = vec![0.0; k];
        lo[a] = -1.0;
        rows.push((lo, 1.0));
    }
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let mut row = vec![0.0; k];
            row[a] = 1.0;
            row[b] = -1.0;
            let d = euclid(&points[a * dim..(a + 1) * dim], &points[b * dim..(b + 1) * dim]);
            rows.push((row, d));
        }
    }
    PotentialLp { k, c, rows }
}

/// Exact value of sup { Σ c_k φ_k : |φ_k| ≤ 1, φ_a − φ_b ≤ d_ab } by a
/// dense tableau simplex with Bland's rule (variables shifted to
/// ψ = φ + 1 ≥ 0; since Σ c_k = 0 the objective is unchanged).
pub fn oracle_dbl_simplex(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let lp = build_potential_lp(mu, nu);
    let k = lp.k;
    // Shift: ψ = φ + 1, so a·ψ ≤ b + a·1.
    let m = lp.rows.len();
    let total_cols = k + m; // structural + slack
    let mut tableau = vec![0.0; (m + 1) * (total_cols + 1)];
    let width = total_cols + 1;
    for (r, (row, b)) in lp.rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            tableau[r * width + j] = *v;
        }
        tableau[r * width + k + r] = 1.0;
        let shift: f64 = row.iter().sum();
        tableau[r * width + total_cols] = b + shift;
    }
    // Objective row: maximize c·ψ → minimize −c·ψ.
    for j in 0..k {
        tableau[m * width + j] = -lp.c[j];
    }
    let mut basis: Vec<usize> = (k..k + m).collect();

    let tol = 1e-11;
    for _ in 0..200_000 {
        // Bland: entering = lowest-index column with negative cost.
        let mut enter = usize::MAX;
        for j in 0..total_cols {
            if tableau[m * width + j] < -tol {
                enter = j;
                break;
            }
        }
        if enter == usize::MAX {
            // Optimal: objective value of the maximization.
            let obj = -tableau[m * width + total_cols];
            // Σ c_k ψ_k = Σ c_k φ_k since Σ c_k = 0; flip sign back.
            return -obj;
        }
        // Min ratio; Bland tie-break on the lowest basis variable index.
        let mut leave = usize::MAX;
        let mut best = f64::INFINITY;
        for r in 0..m {
            let a = tableau[r * width + enter];
            if a > tol {
                let ratio = tableau[r * width + total_cols] / a;
                if ratio < best - 1e-12
                    || ((ratio - best).abs() <= 1e-12
                        && (leave == usize::MAX || basis[r] < basis[leave]))
                {
                    best = ratio;
                    leave = r;
                }
            }
        }
        assert!(leave != usize::MAX, "potential LP is bounded by construction");
        // Pivot.
        let piv = tableau[leave * width + enter];
        for j in 0..=total_cols {
            tableau[leave * width + j] /= piv;
        }
        for r in 0..=m {
            if r == leave {
                continue;
            }
            let f = tableau[r * width + enter];
            if f != 0.0 {
                for j in 0..=total_cols {
                    tableau[r * width + j] -= f * tableau[leave * width + j];
                }
            }
        }
        basis[leave] = enter;
    }
    panic!("oracle simplex failed to terminate");
}

fn solve_square(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-10 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i * n + i]).collect())
}

/// Exhaustive vertex check of the potential LP (unions of at most 4 atoms):
/// every vertex solves k active constraints; feasible vertices are scored
/// directly.
pub fn oracle_dbl_vertices(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let lp = build_potential_lp(mu, nu);
    let k = lp.k;
    assert!(k <= 4, "vertex enumeration is for tiny unions");
    let m = lp.rows.len();
    let mut best = 0.0f64; // φ = 0 is feasible.
    let mut choice = vec![0usize; k];
    enumerate_subsets(m, k, 0, 0, &mut choice, &mut |subset: &[usize]| {
        let mut a = Vec::with_capacity(k * k);
        let mut b = Vec::with_capacity(k);
        for &r in subset {
            a.extend_from_slice(&lp.rows[r].0);
            b.push(lp.rows[r].1);
        }
        if let Some(phi) = solve_square(a, b, k) {
            let feasible = lp
                .rows
                .iter()
                .all(|(row, rhs)| row.iter().zip(&phi).map(|(u, v)| u * v).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                let val: f64 = lp.c.iter().zip(&phi).map(|(u, v)| u * v).sum();
                if val > best {
                    best = val;
                }
            }
        }
    });
    best
}

fn enumerate_subsets(
    m: usize,
    k: usize,
    start: usize,
    depth: usize,
    choice: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        f(choice);
        return;
    }
    for r in start..m {
        choice[depth] = r;
        enumerate_subsets(m, k, r + 1, depth + 1, choice, f);
    }
}
