//! Transportation simplex for the balanced min-cost transport problem.
//!
//! The flat (bounded-Lipschitz) distance between finitely supported
//! measures reduces to optimal transport between the positive and negative
//! parts of μ − ν under the truncated ground cost min(dist, 2): creating
//! and destroying a unit of mass costs 1 + 1, which dominates any move
//! longer than 2, and the potential-LP formulation is exactly the dual of
//! this program. The equivalence is pinned down by the oracle tests, which
//! solve the potential LP directly.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Basic {
    i: usize,
    j: usize,
    flow: f64,
}

enum Pricing {
    Dantzig,
    Bland,
}

/// Minimal cost of a balanced transportation problem. `supply` and
/// `demand` must be positive and sum to the same total (the caller
/// balances); `cost(i, j)` must be finite and nonnegative.
pub(crate) fn transport_min_cost(
    supply: &[f64],
    demand: &[f64],
    cost: &dyn Fn(usize, usize) -> f64,
) -> Result<f64> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Ok(0.0);
    }
    let cost_matrix: Vec<f64> = (0..m * n).map(|idx| cost(idx / n, idx % n)).collect();
    if cost_matrix.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::domain("transport costs must be finite and nonnegative"));
    }

    match solve(supply, demand, &cost_matrix, m, n, Pricing::Dantzig) {
        Ok(v) => Ok(v),
        // Dantzig pricing hit the pivot cap (degenerate cycling); Bland's
        // rule is slower but finite.
        Err(_) => solve(supply, demand, &cost_matrix, m, n, Pricing::Bland),
    }
}

fn solve(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    m: usize,
    n: usize,
    pricing: Pricing,
) -> Result<f64> {
    // Northwest-corner start: exactly m + n - 1 basic cells forming a
    // spanning staircase tree, degenerate zero flows allowed.
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let mut basis: Vec<Basic> = Vec::with_capacity(m + n - 1);
    let mut is_basic = vec![false; m * n];
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let f = s[i].min(d[j]).max(0.0);
        basis.push(Basic { i, j, flow: f });
        is_basic[i * n + j] = true;
        s[i] -= f;
        d[j] -= f;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (s[i] <= d[j] && i < m - 1) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let nodes = m + n;
    let max_cost = cost.iter().fold(0.0f64, |a, b| a.max(*b));
    let tol = 1e-12 * (1.0 + max_cost);
    let cap = match pricing {
        Pricing::Dantzig => 60 * nodes + 4000,
        Pricing::Bland => 2000 * nodes + 200_000,
    };

    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n];
    let mut parent_node = vec![usize::MAX; nodes];
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut queue = Vec::with_capacity(nodes);

    for iter in 0..cap {
        let _ = iter;
        // Tree adjacency and potentials from u_0 = 0.
        for a in adj.iter_mut() {
            a.clear();
        }
        for (idx, b) in basis.iter().enumerate() {
            adj[b.i].push((m + b.j, idx));
            adj[m + b.j].push((b.i, idx));
        }
        for p in parent_node.iter_mut() {
            *p = usize::MAX;
        }
        queue.clear();
        queue.push(0usize);
        parent_node[0] = 0;
        u[0] = 0.0;
        let mut head = 0;
        while head < queue.len() {
            let node = queue[head];
            head += 1;
            for &(next, eidx) in &adj[node] {
                if parent_node[next] != usize::MAX {
                    continue;
                }
                parent_node[next] = node;
                parent_edge[next] = eidx;
                let b = basis[eidx];
                let c = cost[b.i * n + b.j];
                if next >= m {
                    v[next - m] = c - u[b.i];
                } else {
                    u[next] = c - v[node - m];
                }
                queue.push(next);
            }
        }
        debug_assert_eq!(queue.len(), nodes, "basis must span all nodes");

        // Entering cell.
        let mut enter: Option<(usize, usize)> = None;
        match pricing {
            Pricing::Dantzig => {
                let mut best = -tol;
                for ii in 0..m {
                    for jj in 0..n {
                        if is_basic[ii * n + jj] {
                            continue;
                        }
                        let r = cost[ii * n + jj] - u[ii] - v[jj];
                        if r < best {
                            best = r;
                            enter = Some((ii, jj));
                        }
                    }
                }
            }
            Pricing::Bland => {
                'scan: for ii in 0..m {
                    for jj in 0..n {
                        if is_basic[ii * n + jj] {
                            continue;
                        }
                        if cost[ii * n + jj] - u[ii] - v[jj] < -tol {
                            enter = Some((ii, jj));
                            break 'scan;
                        }
                    }
                }
            }
        }
        let Some((ei, ej)) = enter else {
            let value = basis.iter().map(|b| b.flow * cost[b.i * n + b.j]).sum::<f64>();
            return Ok(value.max(0.0));
        };

        // Cycle: tree path from supply node ei to demand node m + ej.
        // Walk both endpoints to the root and splice the paths.
        let path_to_root = |start: usize| -> Vec<usize> {
            let mut p = vec![start];
            let mut cur = start;
            while parent_node[cur] != cur {
                cur = parent_node[cur];
                p.push(cur);
            }
            p
        };
        let pa = path_to_root(ei);
        let pb = path_to_root(m + ej);
        // Trim the shared root tail.
        let mut ka = pa.len();
        let mut kb = pb.len();
        while ka > 1 && kb > 1 && pa[ka - 2] == pb[kb - 2] {
            ka -= 1;
            kb -= 1;
        }
        // Node path ei .. lca .. m+ej.
        let mut node_path: Vec<usize> = pa[..ka].to_vec();
        node_path.extend(pb[..kb - 1].iter().rev());

        // Edges along the path alternate -, +, -, ... (the entering edge
        // carries +θ).
        let mut minus_edges: Vec<usize> = Vec::new();
        let mut plus_edges: Vec<usize> = Vec::new();
        for (step, pair) in node_path.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            let eidx = if parent_node[b] == a {
                parent_edge[b]
            } else {
                parent_edge[a]
            };
            if step % 2 == 0 {
                minus_edges.push(eidx);
            } else {
                plus_edges.push(eidx);
            }
        }
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for &eidx in &minus_edges {
            if basis[eidx].flow < theta {
                theta = basis[eidx].flow;
                leave = eidx;
            }
        }
        debug_assert!(leave != usize::MAX);
        for &eidx in &plus_edges {
            basis[eidx].flow += theta;
        }
        for &eidx in &minus_edges {
            basis[eidx].flow -= theta;
        }
        let old = basis[leave];
        is_basic[old.i * n + old.j] = false;
        is_basic[ei * n + ej] = true;
        basis[leave] = Basic {
            i: ei,
            j: ej,
            flow: theta,
        };
    }
    Err(Error::domain("transportation simplex hit its pivot cap"))
}
