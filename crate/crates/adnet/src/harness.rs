//! Experiment orchestration: equivalence, graph-limit refinement,
//! mean-field rate, coupling error, stability margin and a priori bounds,
//! with log-log rate fits and machine-parsable text reports.

pub mod config;

pub use config::{ExperimentConfig, ExperimentKind};

use crate::continuum::{
    integrate_graph_limit, project_initial, state_l2_distance, weight_l2_distance_offdiag,
    GridSolution,
};
use crate::error::{Error, Result};
use crate::intermediate::{
    coupling_error, coupling_error_components, iid_uniform_state, integrate_intermediate,
    write_coupling_csv, ReplicaEnsemble,
};
use crate::kernels::{KernelCatalog, KernelSpec, WeightDynamicsSpec};
use crate::metrics::{
    d1_fibered, d1_on_common_grid, empirical_from_grid, empirical_from_particle,
    fibered_from_ensemble, mean_measure, DiscreteMeasure, FiberedDiscreteMeasure,
};
use crate::particle::{integrate_particle, Quadrature, SumMode, Trajectory};
use crate::util::{cell_midpoint, integrate_fixed_step, pairwise_sum, subseed};
use crate::vlasov::{
    a_priori_checks, force_w_at, force_x_at, force_w_at_with_moments, integrate_vlasov,
    vlasov_forces, weight_moments, BoundConstants, FiberedEnsemble, SupportBox,
};
use rand::Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Least-squares line through (log N, log err).
#[derive(Debug, Clone, Copy)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual of the fit in log space.
    pub residual: f64,
    /// Standard error of the fitted slope (0 when the fit is exact or has
    /// no spare degrees of freedom).
    pub slope_stderr: f64,
}

/// One pass/fail criterion of a report, traceable by name.
#[derive(Debug, Clone)]
pub struct Flag {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub threshold: f64,
    pub relation: &'static str,
}

impl Flag {
    fn le(name: impl Into<String>, observed: f64, threshold: f64) -> Flag {
        Flag {
            name: name.into(),
            passed: observed <= threshold,
            observed,
            threshold,
            relation: "<=",
        }
    }

    fn ge(name: impl Into<String>, observed: f64, threshold: f64) -> Flag {
        Flag {
            name: name.into(),
            passed: observed >= threshold,
            observed,
            threshold,
            relation: ">=",
        }
    }
}

/// Structured experiment result: stable key/value lines, criterion flags,
/// constants snapshot and wall clock. Everything except the `#`-prefixed
/// wall-clock line is reproducible given (config, seed).
#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: String,
    pub lines: Vec<(String, String)>,
    pub flags: Vec<Flag>,
    pub constants: Option<BoundConstants>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.flags.iter().all(|f| f.passed)
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.lines.push((key.into(), value.into()));
    }

    pub fn push_num(&mut self, key: impl Into<String>, value: f64) {
        self.lines.push((key.into(), format!("{value:.12e}")));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("experiment: {}\n", self.experiment));
        for (k, v) in &self.lines {
            s.push_str(&format!("{k}: {v}\n"));
        }
        if let Some(c) = &self.constants {
            for line in c.render().lines() {
                s.push_str(&format!("constant.{line}\n"));
            }
        }
        for f in &self.flags {
            s.push_str(&format!(
                "flag.{}: {} ({:.12e} {} {:.12e})\n",
                f.name,
                if f.passed { "PASS" } else { "FAIL" },
                f.observed,
                f.relation,
                f.threshold
            ));
        }
        s.push_str(&format!(
            "result: {}\n",
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        s.push_str(&format!("# wall_seconds: {:.3}\n", self.wall_seconds));
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("report_{}.txt", self.experiment));
        let mut f = std::fs::File::create(&path)?;
        f.write_all(self.render().as_bytes())?;
        Ok(path)
    }
}

/// Least-squares slope of log(err) against log(size).
pub fn fit_loglog_slope(sizes: &[usize], errors: &[f64]) -> Result<SlopeFit> {
    if sizes.len() < 3 || sizes.len() != errors.len() {
        return Err(Error::domain("slope fit needs at least three matched points"));
    }
    if errors.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::domain("slope fit needs positive finite errors"));
    }
    let xs: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let sx = pairwise_sum(&xs);
    let sy = pairwise_sum(&ys);
    let mx = sx / n;
    let my = sy / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..xs.len() {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        sxy += (xs[k] - mx) * (ys[k] - my);
    }
    if sxx == 0.0 {
        return Err(Error::domain("slope fit needs at least two distinct sizes"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut rss = 0.0;
    for k in 0..xs.len() {
        let r = ys[k] - (intercept + slope * xs[k]);
        rss += r * r;
    }
    let slope_stderr = if xs.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        residual: (rss / n).sqrt(),
        slope_stderr,
    })
}

/// Builtin deterministic initial profiles (d = 1, Lipschitz).
pub fn initial_profile(
    name: &str,
) -> Result<(
    Box<dyn Fn(f64) -> Vec<f64> + Sync>,
    Box<dyn Fn(f64, f64) -> f64 + Sync>,
)> {
    match name {
        "cosine" => Ok((
            Box::new(|xi| vec![(2.0 * std::f64::consts::PI * xi).cos()]),
            Box::new(|xi, zeta| 0.5 * (1.0 + (2.0 * std::f64::consts::PI * (xi - zeta)).cos())),
        )),
        "linear" => Ok((
            Box::new(|xi| vec![2.0 * xi - 1.0]),
            Box::new(|xi, zeta| xi * zeta),
        )),
        other => Err(Error::config(format!("unknown initial profile '{other}'"))),
    }
}

/// Installs the requested rayon thread count (0 = library default). Safe to
/// call more than once; later calls are ignored by rayon.
pub fn configure_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Runs one experiment kind under a configuration.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    configure_threads(cfg.threads);
    let catalog = KernelCatalog::builtin();
    let phi = catalog.phi(&cfg.kernels.phi)?.clone();
    let lam = catalog.lambda(&cfg.kernels.lambda)?.clone();
    match kind {
        ExperimentKind::Equivalence => run_equivalence(cfg, &phi, &lam),
        ExperimentKind::Graphlimit => run_graphlimit(cfg, &phi, &lam),
        ExperimentKind::Meanfield => run_meanfield(cfg, &phi, &lam),
        ExperimentKind::Coupling => run_coupling(cfg, &phi, &lam),
        ExperimentKind::Stability => run_stability(cfg, &phi, &lam),
        ExperimentKind::Bounds => run_bounds(cfg, &phi, &lam),
    }
}

fn projected_grid(cfg: &ExperimentConfig, n: usize, quad: Quadrature) -> Result<GridSolution> {
    let (x0, w0) = initial_profile(&cfg.init.profile)?;
    let mut grid = project_initial(&*x0, &*w0, n, 1, quad)?;
    for i in 0..n {
        grid.w[i * n + i] = 0.0;
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// equivalence
// ---------------------------------------------------------------------------

fn run_equivalence(
    cfg: &ExperimentConfig,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> Result<RunReport> {
    let start = Instant::now();
    let e = &cfg.equivalence;
    let n = e.grid;
    let grid0 = projected_grid(cfg, n, Quadrature::Midpoint)?;
    let ps0 = grid0.to_particle_state()?;
    let ens0 = FiberedEnsemble::dirac_from_grid(&grid0);

    let pt = integrate_particle(
        &ps0,
        phi,
        lam,
        SumMode::General,
        Quadrature::Midpoint,
        e.horizon,
        e.dt,
        e.record_every,
    )?;
    let gt = integrate_graph_limit(&grid0, phi, lam, e.horizon, e.dt, e.record_every)?;
    let vt = integrate_vlasov(&ens0, phi, lam, e.horizon, e.dt, e.record_every)?;
    if pt.states.len() != gt.states.len() || pt.states.len() != vt.len() {
        return Err(Error::domain("solvers recorded different snapshot counts"));
    }

    let mut gap_pg: f64 = 0.0;
    let mut gap_gv: f64 = 0.0;
    for ((p, g), v) in pt.states.iter().zip(&gt.states).zip(&vt) {
        for (a, b) in p.x.iter().zip(&g.x) {
            gap_pg = gap_pg.max((a - b).abs());
        }
        for (a, b) in p.w.iter().zip(&g.w) {
            gap_pg = gap_pg.max((a - b).abs());
        }
        for i in 0..n {
            for j in 0..n {
                let (sx, sy, sw) = v.sample(i, j, 0);
                gap_gv = gap_gv.max((sx[0] - g.x[i]).abs());
                gap_gv = gap_gv.max((sy[0] - g.x[j]).abs());
                gap_gv = gap_gv.max((sw - g.w[i * n + j]).abs());
            }
        }
    }
    let gap = gap_pg.max(gap_gv);

    let mut rep = RunReport {
        experiment: "equivalence".into(),
        lines: Vec::new(),
        flags: Vec::new(),
        constants: None,
        wall_seconds: 0.0,
    };
    rep.push("grid", format!("{n}"));
    rep.push("horizon", format!("{}", e.horizon));
    rep.push("dt", format!("{}", e.dt));
    rep.push_num("max_gap_particle_grid", gap_pg);
    rep.push_num("max_gap_grid_vlasov", gap_gv);
    rep.push_num("max_gap", gap);
    rep.flags.push(Flag::le("equivalence_gap", gap, e.max_gap));
    rep.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

// ---------------------------------------------------------------------------
// graphlimit
// ---------------------------------------------------------------------------

fn run_graphlimit(
    cfg: &ExperimentConfig,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> Result<RunReport> {
    let start = Instant::now();
    let g = &cfg.graphlimit;
    let n_ref = cfg.reference_grid();
    let quad = Quadrature::Gauss(g.projection_nodes);
    for &n in &g.n_list {
        if n_ref % n != 0 {
            return Err(Error::config(format!(
                "reference grid {n_ref} must be divisible by every N (got {n})"
            )));
        }
    }
    let ref_grid0 = projected_grid(cfg, n_ref, quad)?;
    let ref_term = integrate_graph_limit(&ref_grid0, phi, lam, g.horizon, g.dt, usize::MAX)?
        .terminal()
        .clone();
    let ref_measure = empirical_from_grid(&ref_term);

    let mut l2_gaps = Vec::new();
    let mut d1_gaps = Vec::new();
    for &n in &g.n_list {
        let grid0 = projected_grid(cfg, n, quad)?;
        let ps0 = grid0.to_particle_state()?;
        let term = integrate_particle(
            &ps0,
            phi,
            lam,
            SumMode::General,
            Quadrature::Midpoint,
            g.horizon,
            g.dt,
            usize::MAX,
        )?
        .terminal()
        .clone();
        let as_grid = GridSolution::new(n, 1, term.t, term.x.clone(), term.w.clone())?;
        let lx = state_l2_distance(&as_grid, &ref_term)?;
        let lw = weight_l2_distance_offdiag(&as_grid, &ref_term)?;
        l2_gaps.push((lx * lx + lw * lw).sqrt());
        d1_gaps.push(d1_on_common_grid(
            &empirical_from_particle(&term),
            &ref_measure,
        )?);
    }
    let fit_l2 = fit_loglog_slope(&g.n_list, &l2_gaps)?;
    let fit_d1 = fit_loglog_slope(&g.n_list, &d1_gaps)?;
    let monotone = l2_gaps.windows(2).all(|w| w[1] < w[0]);

    let mut rep = RunReport {
        experiment: "graphlimit".into(),
        lines: Vec::new(),
        flags: Vec::new(),
        constants: None,
        wall_seconds: 0.0,
    };
    rep.push("reference_grid", format!("{n_ref}"));
    for (k, &n) in g.n_list.iter().enumerate() {
        rep.push_num(format!("l2_gap.N{n}"), l2_gaps[k]);
        rep.push_num(format!("d1_gap.N{n}"), d1_gaps[k]);
    }
    rep.push_num("l2_slope", fit_l2.slope);
    rep.push_num("l2_slope_stderr", fit_l2.slope_stderr);
    rep.push_num("l2_residual", fit_l2.residual);
    rep.push_num("d1_slope", fit_d1.slope);
    rep.flags.push(Flag::le("graphlimit_l2_slope", fit_l2.slope, g.slope_max));
    rep.flags.push(Flag::ge(
        "graphlimit_l2_monotone",
        if monotone { 1.0 } else { 0.0 },
        1.0,
    ));
    if cfg.output.write_csv {
        write_size_table(
            &cfg.output.dir,
            "graphlimit",
            &g.n_list,
            &[("l2_gap", &l2_gaps), ("d1_gap", &d1_gaps)],
        )?;
    }
    rep.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

// ---------------------------------------------------------------------------
// meanfield
// ---------------------------------------------------------------------------

struct TracerBlock {
    n: usize,
    runs: usize,
    /// Offset of the block in the joint flat state.
    offset: usize,
}

impl TracerBlock {
    fn per_run(&self) -> usize {
        self.n + self.n * self.n
    }
}

/// The limit flow applied to every run's initial atoms: a pooled
/// self-consistent cloud carries F[μ_t]; the tracers ride along its
/// characteristics without feeding back (they are additional samples of
/// the same fiber-uniform limit measure).
fn integrate_limit_with_tracers(
    pool0: &FiberedEnsemble,
    blocks: &[TracerBlock],
    tracer0: &[f64],
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
    horizon: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let p = pool0.p;
    let pool_len = 3 * p;
    let mut y = Vec::with_capacity(pool_len + tracer0.len());
    y.extend_from_slice(&pool0.x);
    y.extend_from_slice(&pool0.y);
    y.extend_from_slice(&pool0.w);
    y.extend_from_slice(tracer0);

    let mut rhs = |t: f64, state: &[f64], dstate: &mut [f64]| {
        let view = FiberedEnsemble {
            t,
            n: 1,
            p,
            d: 1,
            x: state[..p].to_vec(),
            y: state[p..2 * p].to_vec(),
            w: state[2 * p..3 * p].to_vec(),
            no_loop_diagonal: false,
        };
        let (dpool, dtracer) = dstate.split_at_mut(pool_len);
        let (dx, dyw) = dpool.split_at_mut(p);
        let (dy, dw) = dyw.split_at_mut(p);
        let (fx, fy, fw) = vlasov_forces(&view, phi, lam);
        dx.copy_from_slice(&fx);
        dy.copy_from_slice(&fy);
        dw.copy_from_slice(&fw);

        let moments = weight_moments(&view, lam);
        let tr_state = &state[pool_len..];
        for b in blocks {
            let n = b.n;
            let per = b.per_run();
            let base = b.offset;
            dtracer[base..base + b.runs * per]
                .par_chunks_mut(per)
                .enumerate()
                .for_each(|(run, out)| {
                    let s = &tr_state[base + run * per..base + (run + 1) * per];
                    let (xs, ws) = s.split_at(n);
                    let (dxs, dws) = out.split_at_mut(n);
                    for i in 0..n {
                        dxs[i] = force_x_at(&view, phi, t, 0, &xs[i..i + 1]);
                    }
                    for i in 0..n {
                        let xi = cell_midpoint(i, n);
                        for j in 0..n {
                            if i == j {
                                dws[i * n + j] = 0.0;
                                continue;
                            }
                            let zeta = cell_midpoint(j, n);
                            let (px, py, pw) =
                                (&xs[i..i + 1], &xs[j..j + 1], ws[i * n + j]);
                            dws[i * n + j] = match &moments {
                                Some(m) => {
                                    force_w_at_with_moments(lam, m, xi, zeta, px, py, pw)
                                }
                                None => force_w_at(&view, lam, xi, zeta, px, py, pw),
                            };
                        }
                    }
                });
        }
    };
    integrate_fixed_step(
        &mut y,
        horizon,
        dt,
        usize::MAX,
        &mut rhs,
        &mut |_| {},
        &mut |_, _, _| {},
    )?;
    Ok(y)
}

fn tracer_measure(block: &TracerBlock, tracers: &[f64], run: usize) -> FiberedDiscreteMeasure {
    let n = block.n;
    let per = block.per_run();
    let s = &tracers[block.offset + run * per..block.offset + (run + 1) * per];
    let (xs, ws) = s.split_at(n);
    let mut fibers = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            fibers.push(DiscreteMeasure::dirac(vec![xs[i], xs[j], ws[i * n + j]]));
        }
    }
    FiberedDiscreteMeasure { n, fibers }
}

fn run_meanfield(
    cfg: &ExperimentConfig,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> Result<RunReport> {
    let start = Instant::now();
    let m = &cfg.meanfield;
    let (rx, rm) = (cfg.init.state_radius, cfg.init.weight_max);

    // Shared initial data per (N, run): the particle runs and the limit
    // tracers advect the same atoms (common random numbers).
    let mut initials: Vec<Vec<crate::particle::ParticleState>> = Vec::new();
    for &n in &m.n_list {
        let seed_n = subseed(cfg.seed, &[0x3F, n as u64]);
        let states: Vec<_> = (0..m.runs)
            .map(|r| iid_uniform_state(n, 1, rx, rm, seed_n, r as u64))
            .collect::<Result<_>>()?;
        initials.push(states);
    }

    // Particle runs (restricted mode), terminal snapshot only.
    let mut mean_particle: Vec<FiberedDiscreteMeasure> = Vec::new();
    for k in 0..m.n_list.len() {
        let terms: Vec<Result<FiberedDiscreteMeasure>> = initials[k]
            .par_iter()
            .map(|st| {
                let traj = integrate_particle(
                    st,
                    phi,
                    lam,
                    SumMode::Restricted,
                    Quadrature::Midpoint,
                    m.horizon,
                    m.dt,
                    usize::MAX,
                )?;
                Ok(empirical_from_particle(traj.terminal()))
            })
            .collect();
        let mut runs = Vec::with_capacity(m.runs);
        for t in terms {
            runs.push(t?);
        }
        mean_particle.push(mean_measure(&runs)?);
    }

    // Pooled limit cloud + tracers for every (N, run), one joint clock.
    let pool = FiberedEnsemble::uniform_product_grid(
        1,
        m.pool_nodes_state,
        m.pool_nodes_state,
        m.pool_nodes_weight,
        rx,
        rx,
        (0.0, rm),
    )?;
    let mut blocks = Vec::new();
    let mut tracer0 = Vec::new();
    for (k, &n) in m.n_list.iter().enumerate() {
        let offset = tracer0.len();
        for st in &initials[k] {
            tracer0.extend_from_slice(&st.x);
            tracer0.extend_from_slice(&st.w);
        }
        blocks.push(TracerBlock {
            n,
            runs: m.runs,
            offset,
        });
    }
    let terminal = integrate_limit_with_tracers(
        &pool, &blocks, &tracer0, phi, lam, m.horizon, m.dt,
    )?;
    let tracers_end = &terminal[3 * pool.p..];

    let mut d1_values = Vec::new();
    let mut d1_initial = Vec::new();
    for k in 0..m.n_list.len() {
        let block = &blocks[k];
        let limit_runs: Vec<FiberedDiscreteMeasure> = (0..m.runs)
            .map(|r| tracer_measure(block, tracers_end, r))
            .collect();
        let mean_limit = mean_measure(&limit_runs)?;
        d1_values.push(d1_fibered(&mean_particle[k], &mean_limit)?);

        let init_runs: Vec<FiberedDiscreteMeasure> = (0..m.runs)
            .map(|r| tracer_measure(block, &tracer0, r))
            .collect();
        let mean_limit0 = mean_measure(&init_runs)?;
        let mean_particle0 = mean_measure(
            &initials[k]
                .iter()
                .map(empirical_from_particle)
                .collect::<Vec<_>>(),
        )?;
        d1_initial.push(d1_fibered(&mean_particle0, &mean_limit0)?);
    }
    let fit = fit_loglog_slope(&m.n_list, &d1_values)?;
    let monotone = d1_values.windows(2).all(|w| w[1] < w[0]);

    let support = SupportBox { r_x: rx, r_y: rx, r_m: rm };
    let constants = BoundConstants::from_kernels(phi, lam, &support, m.horizon, 2.0);

    let mut rep = RunReport {
        experiment: "meanfield".into(),
        lines: Vec::new(),
        flags: Vec::new(),
        constants: Some(constants),
        wall_seconds: 0.0,
    };
    rep.push("runs", format!("{}", m.runs));
    rep.push(
        "limit_pool",
        format!(
            "{}x{}x{} midpoint nodes ({} samples)",
            m.pool_nodes_state, m.pool_nodes_state, m.pool_nodes_weight, pool.p
        ),
    );
    for (k, &n) in m.n_list.iter().enumerate() {
        rep.push_num(format!("d1.N{n}"), d1_values[k]);
        rep.push_num(format!("d1_initial.N{n}"), d1_initial[k]);
    }
    rep.push_num("slope", fit.slope);
    rep.push_num("slope_stderr", fit.slope_stderr);
    rep.push_num("residual", fit.residual);
    rep.flags.push(Flag::le("meanfield_slope", fit.slope, m.slope_max));
    rep.flags.push(Flag::ge(
        "meanfield_monotone",
        if monotone { 1.0 } else { 0.0 },
        1.0,
    ));
    if cfg.output.write_csv {
        write_size_table(
            &cfg.output.dir,
            "meanfield",
            &m.n_list,
            &[("d1", &d1_values), ("d1_initial", &d1_initial)],
        )?;
    }
    rep.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

// ---------------------------------------------------------------------------
// coupling
// ---------------------------------------------------------------------------

fn run_coupling(
    cfg: &ExperimentConfig,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> Result<RunReport> {
    let start = Instant::now();
    let c = &cfg.coupling;
    let (rx, rm) = (cfg.init.state_radius, cfg.init.weight_max);
    let mut errors = Vec::new();
    for &n in &c.n_list {
        let seed_n = subseed(cfg.seed, &[0x4C, n as u64]);
        let states: Vec<_> = (0..c.replicas)
            .map(|r| iid_uniform_state(n, 1, rx, rm, seed_n, r as u64))
            .collect::<Result<Vec<_>>>()?;
        let runs: Vec<Result<Trajectory>> = states
            .par_iter()
            .map(|st| {
                integrate_particle(
                    st,
                    phi,
                    lam,
                    SumMode::Restricted,
                    Quadrature::Midpoint,
                    c.horizon,
                    c.dt,
                    usize::MAX,
                )
            })
            .collect();
        let mut particle_runs = Vec::with_capacity(c.replicas);
        for r in runs {
            particle_runs.push(r?);
        }
        let ens = ReplicaEnsemble::from_states(&states, seed_n)?;
        let etraj = integrate_intermediate(
            &ens,
            phi,
            lam,
            Quadrature::Midpoint,
            c.horizon,
            c.dt,
            usize::MAX,
        )?;
        errors.push(coupling_error(&particle_runs, &etraj, c.horizon)?);
        if cfg.output.write_csv {
            let mut rows = Vec::new();
            for snap in &etraj {
                let (ex, ew) = coupling_error_components(&particle_runs, &etraj, snap.t)?;
                rows.push((snap.t, ex, ew));
            }
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_coupling_csv(
                &cfg.output.dir.join(format!("coupling_N{n}.csv")),
                &rows,
                c.replicas,
                n,
                seed_n,
            )?;
        }
    }
    let fit = fit_loglog_slope(&c.n_list, &errors)?;

    let mut rep = RunReport {
        experiment: "coupling".into(),
        lines: Vec::new(),
        flags: Vec::new(),
        constants: None,
        wall_seconds: 0.0,
    };
    rep.push("replicas", format!("{}", c.replicas));
    for (k, &n) in c.n_list.iter().enumerate() {
        rep.push_num(format!("error.N{n}"), errors[k]);
    }
    rep.push_num("slope", fit.slope);
    rep.push_num("slope_stderr", fit.slope_stderr);
    rep.push_num("residual", fit.residual);
    rep.flags
        .push(Flag::ge("coupling_slope_lo", fit.slope, c.slope_window[0]));
    rep.flags
        .push(Flag::le("coupling_slope_hi", fit.slope, c.slope_window[1]));
    if cfg.output.write_csv {
        write_size_table(&cfg.output.dir, "coupling", &c.n_list, &[("error", &errors)])?;
    }
    rep.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

// ---------------------------------------------------------------------------
// stability
// ---------------------------------------------------------------------------

/// Fibered ensemble with iid uniform fiber samples: states in
/// [-rx, rx], weights in [0, rm], fiber-keyed streams.
pub fn uniform_fibered(
    n: usize,
    p: usize,
    rx: f64,
    rm: f64,
    seed: u64,
) -> Result<FiberedEnsemble> {
    let support = SupportBox { r_x: rx, r_y: rx, r_m: rm };
    let sampler = move |_xi: f64,
                        _zeta: f64,
                        rng: &mut rand_chacha::ChaCha8Rng|
          -> (Vec<f64>, Vec<f64>, f64) {
        (
            vec![rng.gen_range(-rx..=rx)],
            vec![rng.gen_range(-rx..=rx)],
            rng.gen_range(0.0..=rm),
        )
    };
    FiberedEnsemble::init_fibered(&sampler, n, p, 1, seed, &support)
}

/// ∬∬ |Λ − Λ̄| dμ̄_s dμ₀: outer atoms over μ₀ with their fiber identities,
/// inner atoms over μ̄_s.
fn lambda_gap_integral(
    mu0: &FiberedEnsemble,
    mubar: &FiberedEnsemble,
    lam: &WeightDynamicsSpec,
    lam_bar: &WeightDynamicsSpec,
) -> f64 {
    let n = mu0.n;
    let inv_outer = 1.0 / mu0.total_samples() as f64;
    let inv_inner = 1.0 / mubar.total_samples() as f64;
    let rows: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|fiber| {
            let (i, j) = (fiber / n, fiber % n);
            let (xi, zeta) = (cell_midpoint(i, n), cell_midpoint(j, n));
            let mut acc = 0.0;
            for q in 0..mu0.p {
                let (x, y, w) = mu0.sample(i, j, q);
                let mut inner = 0.0;
                for b in 0..mubar.total_samples() {
                    let xt = &mubar.x[b..b + 1];
                    let yt = &mubar.y[b..b + 1];
                    let wt = mubar.w[b];
                    inner += (lam.eval_raw(xi, zeta, x, y, w, xt, yt, wt)
                        - lam_bar.eval_raw(xi, zeta, x, y, w, xt, yt, wt))
                    .abs();
                }
                acc += inner * inv_inner;
            }
            acc
        })
        .collect();
    pairwise_sum(&rows) * inv_outer
}

fn run_stability(
    cfg: &ExperimentConfig,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> Result<RunReport> {
    let start = Instant::now();
    let s = &cfg.stability;
    let (rx, rm) = (cfg.init.state_radius, cfg.init.weight_max);
    let base = uniform_fibered(s.fiber_grid, s.samples_per_fiber, rx, rm, cfg.seed)?;
    let base_traj = integrate_vlasov(&base, phi, lam, s.horizon, s.dt, s.record_every)?;

    let max_shift = s.initial_shifts.iter().cloned().fold(0.0, f64::max);
    let max_pert = s
        .dynamics_perturbations
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let constants = BoundConstants::derive(
        rx + max_shift,
        rx + max_shift,
        rm,
        phi.bound,
        phi.lipschitz,
        lam.growth + max_pert,
        lam.lipschitz + max_pert,
        s.horizon,
        None,
        s.chi_gradient,
    );
    let c3 = constants.c3;

    let mut rep = RunReport {
        experiment: "stability".into(),
        lines: Vec::new(),
        flags: Vec::new(),
        constants: Some(constants.clone()),
        wall_seconds: 0.0,
    };
    rep.push(
        "cases",
        format!(
            "{} shifts x {} perturbations",
            s.initial_shifts.len(),
            s.dynamics_perturbations.len()
        ),
    );

    let mut csv_rows: Vec<(String, f64, f64)> = Vec::new();
    for &delta0 in &s.initial_shifts {
        for &delta_l in &s.dynamics_perturbations {
            let mut shifted = base.clone();
            for v in shifted.x.iter_mut().chain(shifted.y.iter_mut()) {
                *v += delta0;
            }
            let lam_bar = if delta_l != 0.0 {
                lam.perturbed(delta_l)
            } else {
                lam.clone()
            };
            let bar_traj =
                integrate_vlasov(&shifted, phi, &lam_bar, s.horizon, s.dt, s.record_every)?;
            if bar_traj.len() != base_traj.len() {
                return Err(Error::domain("stability runs recorded different grids"));
            }

            // Left side d₁(μ_t, μ̄_t) and the Λ-gap integrand per snapshot.
            let mut lefts = Vec::with_capacity(base_traj.len());
            let mut gaps = Vec::with_capacity(base_traj.len());
            for (a, b) in base_traj.iter().zip(&bar_traj) {
                lefts.push(d1_fibered(
                    &fibered_from_ensemble(a),
                    &fibered_from_ensemble(b),
                )?);
                gaps.push(lambda_gap_integral(&base, b, lam, &lam_bar));
            }
            let d1_zero = lefts[0];
            // min over recorded times of right(t) − left(t), with the time
            // integral of the gap quadratured by the trapezoid rule.
            let mut margin = f64::INFINITY;
            let mut integral = 0.0;
            for k in 0..base_traj.len() {
                if k > 0 {
                    let dt_k = base_traj[k].t - base_traj[k - 1].t;
                    integral += 0.5 * dt_k * (gaps[k] + gaps[k - 1]);
                }
                let t = base_traj[k].t;
                let right = (4.0 * c3 * t).exp() * (d1_zero + c3 * integral);
                margin = margin.min(right - lefts[k]);
            }
            let max_left = lefts.iter().cloned().fold(0.0, f64::max);
            let label = format!("d0_{delta0}_dL_{delta_l}");
            rep.push_num(format!("margin.{label}"), margin);
            rep.push_num(format!("left_max.{label}"), max_left);
            rep.flags.push(Flag::ge(format!("stability_margin.{label}"), margin, 0.0));
            if delta0 == 0.0 && delta_l == 0.0 {
                rep.flags.push(Flag::le(
                    "stability_zero_case_left",
                    max_left,
                    s.zero_case_tol,
                ));
            }
            csv_rows.push((label, margin, max_left));
        }
    }
    if cfg.output.write_csv {
        std::fs::create_dir_all(&cfg.output.dir)?;
        let mut f = std::fs::File::create(cfg.output.dir.join("stability.csv"))?;
        writeln!(f, "case,margin,left_max")?;
        for (label, margin, left) in &csv_rows {
            writeln!(f, "{label},{margin:.12e},{left:.12e}")?;
        }
    }
    rep.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

fn run_bounds(
    cfg: &ExperimentConfig,
    phi: &KernelSpec,
    lam: &WeightDynamicsSpec,
) -> Result<RunReport> {
    let start = Instant::now();
    let b = &cfg.bounds;
    let (rx, rm) = (cfg.init.state_radius, cfg.init.weight_max);
    let support = SupportBox { r_x: rx, r_y: rx, r_m: rm };
    let constants = BoundConstants::from_kernels(phi, lam, &support, b.horizon, b.chi_gradient);

    let mut rep = RunReport {
        experiment: "bounds".into(),
        lines: Vec::new(),
        flags: Vec::new(),
        constants: Some(constants.clone()),
        wall_seconds: 0.0,
    };
    let mut min_margin = f64::INFINITY;
    let mut csv_rows = Vec::new();
    for k in 0..b.seeds {
        let seed_k = subseed(cfg.seed, &[0xB0, k as u64]);
        let st = iid_uniform_state(b.particles, 1, rx, rm, seed_k, 0)?;
        let traj = integrate_particle(
            &st,
            phi,
            lam,
            SumMode::Restricted,
            Quadrature::Midpoint,
            b.horizon,
            b.dt,
            10,
        )?;
        let w_margin = crate::particle::weight_bound_margin(&traj, lam.growth)?;

        let ens = uniform_fibered(b.fiber_grid, b.samples_per_fiber, rx, rm, seed_k)?;
        let vtraj = integrate_vlasov(&ens, phi, lam, b.horizon, b.dt, 10)?;
        let apriori = a_priori_checks(&vtraj, &constants)?;

        rep.push_num(format!("weight_bound_margin.seed{k}"), w_margin);
        rep.push_num(format!("support_x_margin.seed{k}"), apriori.support_x_margin);
        rep.push_num(format!("support_y_margin.seed{k}"), apriori.support_y_margin);
        rep.push_num(
            format!("weight_radius_margin.seed{k}"),
            apriori.weight_radius_margin,
        );
        rep.push_num(
            format!("second_moment_margin.seed{k}"),
            apriori.second_moment_margin,
        );
        min_margin = min_margin.min(w_margin).min(apriori.min_margin());
        csv_rows.push((k, w_margin, apriori));
    }
    rep.push_num("min_margin", min_margin);
    rep.flags
        .push(Flag::ge("bounds_min_margin", min_margin, b.margin_floor));
    if cfg.output.write_csv {
        std::fs::create_dir_all(&cfg.output.dir)?;
        let mut f = std::fs::File::create(cfg.output.dir.join("bounds.csv"))?;
        writeln!(
            f,
            "seed,weight_bound,support_x,support_y,weight_radius,second_moment"
        )?;
        for (k, wm, ap) in &csv_rows {
            writeln!(
                f,
                "{k},{wm:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                ap.support_x_margin,
                ap.support_y_margin,
                ap.weight_radius_margin,
                ap.second_moment_margin
            )?;
        }
    }
    rep.wall_seconds = start.elapsed().as_secs_f64();
    Ok(rep)
}

fn write_size_table(
    dir: &Path,
    name: &str,
    sizes: &[usize],
    columns: &[(&str, &Vec<f64>)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join(format!("{name}.csv")))?;
    write!(f, "N")?;
    for (label, _) in columns {
        write!(f, ",{label}")?;
    }
    writeln!(f)?;
    for (k, n) in sizes.iter().enumerate() {
        write!(f, "{n}")?;
        for (_, col) in columns {
            write!(f, ",{:.12e}", col[k])?;
        }
        writeln!(f)?;
    }
    Ok(())
}
