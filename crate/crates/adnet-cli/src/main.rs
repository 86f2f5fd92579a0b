use adnet::continuum::{integrate_graph_limit, project_initial};
use adnet::harness::{
    configure_threads, initial_profile, run_experiment, uniform_fibered, ExperimentConfig,
    ExperimentKind,
};
use adnet::kernels::{DomainBox, KernelCatalog, ValidationOptions};
use adnet::particle::{integrate_particle, write_snapshots_binary, Quadrature, SumMode};
use adnet::vlasov::{
    a_priori_checks, integrate_vlasov, write_trajectory_csv, BoundConstants, SupportBox,
};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "adnet",
    about = "Adaptive-network particle systems, their graph limit and Vlasov-type limit",
    version
)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the time step of the invoked command.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Override the horizon of the invoked command.
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the N-particle system from the configured initial profile
    /// and export CSV (and optionally binary) trajectories.
    Simulate {
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Sum mode: general | restricted.
        #[arg(long, default_value = "general")]
        mode: String,
        /// Also write the documented binary snapshot format.
        #[arg(long)]
        binary: bool,
        #[arg(long, default_value_t = 10)]
        record_every: usize,
    },
    /// Integrate the graph-limit system on an n-cell grid and export CSVs.
    Continuum {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        record_every: usize,
    },
    /// Integrate the fibered Vlasov solver from iid uniform fiber samples
    /// and print the a priori bounds report.
    Vlasov {
        #[arg(long, default_value_t = 4)]
        fibers: usize,
        #[arg(long, default_value_t = 32)]
        samples: usize,
    },
    /// Run one experiment kind (equivalence | graphlimit | meanfield |
    /// coupling | stability | bounds) or "all"; exit code 0 iff every
    /// pass/fail flag passes.
    Experiment {
        kind: String,
        /// Print the effective configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Validate catalog kernels against their declared constants.
    ValidateKernels {
        /// Restrict to one kernel name.
        #[arg(long)]
        kernel: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

fn load_config(cli: &Cli) -> adnet::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(dt) = cli.dt {
        cfg.equivalence.dt = dt;
        cfg.graphlimit.dt = dt;
        cfg.meanfield.dt = dt;
        cfg.coupling.dt = dt;
        cfg.stability.dt = dt;
        cfg.bounds.dt = dt;
    }
    if let Some(t) = cli.horizon {
        cfg.equivalence.horizon = t;
        cfg.graphlimit.horizon = t;
        cfg.meanfield.horizon = t;
        cfg.coupling.horizon = t;
        cfg.stability.horizon = t;
        cfg.bounds.horizon = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> adnet::Result<bool> {
    let cfg = load_config(cli)?;
    configure_threads(cfg.threads);
    let catalog = KernelCatalog::builtin();
    match &cli.cmd {
        Cmd::Simulate {
            n,
            mode,
            binary,
            record_every,
        } => {
            let phi = catalog.phi(&cfg.kernels.phi)?;
            let lam = catalog.lambda(&cfg.kernels.lambda)?;
            let sum_mode = match mode.as_str() {
                "general" => SumMode::General,
                "restricted" => SumMode::Restricted,
                other => {
                    return Err(adnet::Error::config(format!("unknown mode '{other}'")));
                }
            };
            let (x0, w0) = initial_profile(&cfg.init.profile)?;
            let mut grid = project_initial(&*x0, &*w0, *n, 1, Quadrature::Gauss(3))?;
            for i in 0..*n {
                grid.w[i * n + i] = 0.0;
            }
            let state0 = grid.to_particle_state()?;
            let traj = integrate_particle(
                &state0,
                phi,
                lam,
                sum_mode,
                Quadrature::Midpoint,
                cfg.equivalence.horizon,
                cfg.equivalence.dt,
                *record_every,
            )?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            traj.write_states_csv(&cfg.output.dir.join("states.csv"))?;
            traj.write_weights_csv(&cfg.output.dir.join("weights.csv"))?;
            if *binary {
                write_snapshots_binary(&traj.states, &cfg.output.dir.join("snapshots.bin"))?;
            }
            let margin = adnet::particle::weight_bound_margin(&traj, lam.growth)?;
            println!(
                "simulate: N={n} mode={mode} T={} dt={} snapshots={}",
                cfg.equivalence.horizon,
                cfg.equivalence.dt,
                traj.states.len()
            );
            println!("weight_bound_margin: {margin:.6e}");
            println!("wrote {}", cfg.output.dir.display());
            Ok(true)
        }
        Cmd::Continuum { n, record_every } => {
            let phi = catalog.phi(&cfg.kernels.phi)?;
            let lam = catalog.lambda(&cfg.kernels.lambda)?;
            let (x0, w0) = initial_profile(&cfg.init.profile)?;
            let mut grid = project_initial(&*x0, &*w0, *n, 1, Quadrature::Gauss(3))?;
            for i in 0..*n {
                grid.w[i * n + i] = 0.0;
            }
            let traj =
                integrate_graph_limit(&grid, phi, lam, cfg.graphlimit.horizon, cfg.graphlimit.dt, *record_every)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            let end = traj.terminal();
            end.write_csv(
                &cfg.output.dir.join("grid_states.csv"),
                &cfg.output.dir.join("grid_weights.csv"),
            )?;
            println!(
                "continuum: n={n} T={} dt={} snapshots={}",
                cfg.graphlimit.horizon,
                cfg.graphlimit.dt,
                traj.states.len()
            );
            println!("wrote {}", cfg.output.dir.display());
            Ok(true)
        }
        Cmd::Vlasov { fibers, samples } => {
            let phi = catalog.phi(&cfg.kernels.phi)?;
            let lam = catalog.lambda(&cfg.kernels.lambda)?;
            let (rx, rm) = (cfg.init.state_radius, cfg.init.weight_max);
            let support = SupportBox { r_x: rx, r_y: rx, r_m: rm };
            let ens = uniform_fibered(*fibers, *samples, rx, rm, cfg.seed)?;
            let traj = integrate_vlasov(&ens, phi, lam, cfg.bounds.horizon, cfg.bounds.dt, 10)?;
            let constants = BoundConstants::from_kernels(
                phi,
                lam,
                &support,
                cfg.bounds.horizon,
                cfg.bounds.chi_gradient,
            );
            let report = a_priori_checks(&traj, &constants)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            write_trajectory_csv(&traj, &cfg.output.dir.join("ensemble.csv"))?;
            println!(
                "vlasov: fibers={fibers} samples={samples} T={} dt={}",
                cfg.bounds.horizon, cfg.bounds.dt
            );
            print!("{}", constants.render());
            print!("{}", report.render());
            println!("wrote {}", cfg.output.dir.display());
            Ok(report.min_margin() >= cfg.bounds.margin_floor)
        }
        Cmd::Experiment { kind, print_config } => {
            if *print_config {
                print!("{}", cfg.to_toml());
                return Ok(true);
            }
            let kinds: Vec<ExperimentKind> = if kind == "all" {
                ExperimentKind::all().to_vec()
            } else {
                vec![kind.parse()?]
            };
            let mut all_pass = true;
            for k in kinds {
                let report = run_experiment(k, &cfg)?;
                let path = report.write(&cfg.output.dir)?;
                print!("{}", report.render());
                println!("wrote {}", path.display());
                all_pass &= report.passed();
            }
            Ok(all_pass)
        }
        Cmd::ValidateKernels { kernel, samples } => {
            let domain = DomainBox::new(1, 2.0, 2.0, 1.0);
            let opts = ValidationOptions {
                samples: *samples,
                seed: cfg.seed,
                slack: 1e-9,
            };
            let mut all_pass = true;
            let wanted = |name: &str| kernel.as_deref().map_or(true, |k| k == name);
            for name in catalog.phi_names().map(str::to_owned).collect::<Vec<_>>() {
                if wanted(&name) {
                    let rep = catalog.phi(&name)?.validate(&domain, &opts);
                    print!("{}", rep.render());
                    all_pass &= rep.pass;
                }
            }
            for name in catalog.lambda_names().map(str::to_owned).collect::<Vec<_>>() {
                if wanted(&name) {
                    let rep = catalog.lambda(&name)?.validate(&domain, &opts);
                    print!("{}", rep.render());
                    all_pass &= rep.pass;
                }
            }
            Ok(all_pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
