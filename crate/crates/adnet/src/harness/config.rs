//! Experiment configuration: a TOML file with full defaulting, every knob
//! and pass/fail threshold visible. `ExperimentConfig::default()` is the
//! documented desk-scale configuration; an empty file parses to it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Equivalence,
    Graphlimit,
    Meanfield,
    Coupling,
    Stability,
    Bounds,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::Graphlimit => "graphlimit",
            ExperimentKind::Meanfield => "meanfield",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Bounds => "bounds",
        }
    }

    pub fn all() -> [ExperimentKind; 6] {
        [
            ExperimentKind::Equivalence,
            ExperimentKind::Graphlimit,
            ExperimentKind::Meanfield,
            ExperimentKind::Coupling,
            ExperimentKind::Stability,
            ExperimentKind::Bounds,
        ]
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivalence" => Ok(ExperimentKind::Equivalence),
            "graphlimit" => Ok(ExperimentKind::Graphlimit),
            "meanfield" => Ok(ExperimentKind::Meanfield),
            "coupling" => Ok(ExperimentKind::Coupling),
            "stability" => Ok(ExperimentKind::Stability),
            "bounds" => Ok(ExperimentKind::Bounds),
            other => Err(Error::config(format!(
                "unknown experiment kind '{other}' (expected equivalence|graphlimit|meanfield|coupling|stability|bounds)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelsCfg {
    pub phi: String,
    pub lambda: String,
}

impl Default for KernelsCfg {
    fn default() -> Self {
        KernelsCfg {
            phi: "tanh-consensus".into(),
            lambda: "relax-to-H".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitCfg {
    /// R_X = R_Y: states start in [-state_radius, state_radius]^d.
    pub state_radius: f64,
    /// R_M: weights start in [0, weight_max].
    pub weight_max: f64,
    /// Deterministic initial profile for the projected experiments
    /// ("cosine" or "linear").
    pub profile: String,
}

impl Default for InitCfg {
    fn default() -> Self {
        InitCfg {
            state_radius: 1.0,
            weight_max: 1.0,
            profile: "cosine".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceCfg {
    pub grid: usize,
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    /// Pass threshold on the max termwise gap between the three solvers.
    pub max_gap: f64,
}

impl Default for EquivalenceCfg {
    fn default() -> Self {
        EquivalenceCfg {
            grid: 16,
            horizon: 1.0,
            dt: 1e-3,
            record_every: 100,
            max_gap: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphlimitCfg {
    pub n_list: Vec<usize>,
    /// 0 = four times the largest N.
    pub reference_grid: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Gauss nodes per axis for projecting the initial profiles.
    pub projection_nodes: usize,
    /// Pass threshold on the fitted log-log slope of the terminal L² gap.
    pub slope_max: f64,
}

impl Default for GraphlimitCfg {
    fn default() -> Self {
        GraphlimitCfg {
            n_list: vec![8, 16, 32, 64],
            reference_grid: 0,
            horizon: 1.0,
            dt: 1e-2,
            projection_nodes: 3,
            slope_max: -0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanfieldCfg {
    pub n_list: Vec<usize>,
    /// Seeded particle runs per N (the R of the expected empirical measure).
    pub runs: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Midpoint tensor nodes per state axis of the pooled limit cloud.
    pub pool_nodes_state: usize,
    /// Midpoint tensor nodes on the weight axis of the pooled limit cloud.
    pub pool_nodes_weight: usize,
    /// Pass threshold on the fitted log-log slope of d₁ versus N.
    pub slope_max: f64,
}

impl Default for MeanfieldCfg {
    fn default() -> Self {
        MeanfieldCfg {
            n_list: vec![8, 16, 32, 64],
            runs: 200,
            horizon: 0.5,
            dt: 2e-2,
            pool_nodes_state: 16,
            pool_nodes_weight: 8,
            slope_max: -0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingCfg {
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Pass window [lo, hi] for the fitted log-log slope.
    pub slope_window: [f64; 2],
}

impl Default for CouplingCfg {
    fn default() -> Self {
        CouplingCfg {
            n_list: vec![8, 16, 32],
            replicas: 100,
            horizon: 0.5,
            dt: 1e-2,
            slope_window: [-0.8, -0.25],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityCfg {
    pub fiber_grid: usize,
    pub samples_per_fiber: usize,
    pub horizon: f64,
    pub dt: f64,
    pub record_every: usize,
    /// Initial-data shifts δ₀ applied to both state coordinates.
    pub initial_shifts: Vec<f64>,
    /// Dynamics perturbation scales δ_Λ (bounded bump added to Λ).
    pub dynamics_perturbations: Vec<f64>,
    /// Proxy for ‖∇χ_T‖_∞ in the constant chain C₁ → C₂ → C₃.
    pub chi_gradient: f64,
    /// Pass threshold for the unperturbed case's left-hand side.
    pub zero_case_tol: f64,
}

impl Default for StabilityCfg {
    fn default() -> Self {
        StabilityCfg {
            fiber_grid: 4,
            samples_per_fiber: 32,
            horizon: 0.5,
            dt: 1e-2,
            record_every: 10,
            initial_shifts: vec![0.0, 0.05, 0.1],
            dynamics_perturbations: vec![0.0, 0.05],
            chi_gradient: 2.0,
            zero_case_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsCfg {
    pub seeds: usize,
    pub particles: usize,
    pub fiber_grid: usize,
    pub samples_per_fiber: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Margins must stay above this floor.
    pub margin_floor: f64,
    pub chi_gradient: f64,
}

impl Default for BoundsCfg {
    fn default() -> Self {
        BoundsCfg {
            seeds: 10,
            particles: 16,
            fiber_grid: 4,
            samples_per_fiber: 32,
            horizon: 1.0,
            dt: 1e-2,
            margin_floor: -1e-9,
            chi_gradient: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputCfg {
    pub dir: PathBuf,
    pub write_csv: bool,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg {
            dir: PathBuf::from("out"),
            write_csv: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: u64,
    /// 0 = leave the rayon default.
    pub threads: usize,
    pub kernels: KernelsCfg,
    pub init: InitCfg,
    pub equivalence: EquivalenceCfg,
    pub graphlimit: GraphlimitCfg,
    pub meanfield: MeanfieldCfg,
    pub coupling: CouplingCfg,
    pub stability: StabilityCfg,
    pub bounds: BoundsCfg,
    pub output: OutputCfg,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.equivalence.dt, "equivalence.dt")?;
        positive(self.graphlimit.dt, "graphlimit.dt")?;
        positive(self.meanfield.dt, "meanfield.dt")?;
        positive(self.coupling.dt, "coupling.dt")?;
        positive(self.stability.dt, "stability.dt")?;
        positive(self.bounds.dt, "bounds.dt")?;
        positive(self.init.state_radius, "init.state_radius")?;
        positive(self.init.weight_max, "init.weight_max")?;
        for (list, what) in [
            (&self.graphlimit.n_list, "graphlimit.n_list"),
            (&self.meanfield.n_list, "meanfield.n_list"),
            (&self.coupling.n_list, "coupling.n_list"),
        ] {
            if list.is_empty() || list.iter().any(|n| *n == 0) {
                return Err(Error::config(format!("{what} must list positive sizes")));
            }
        }
        if self.equivalence.grid == 0
            || self.stability.fiber_grid == 0
            || self.bounds.fiber_grid == 0
        {
            return Err(Error::config("grid sizes must be positive"));
        }
        if self.meanfield.runs == 0 || self.coupling.replicas == 0 || self.bounds.seeds == 0 {
            return Err(Error::config("run counts must be positive"));
        }
        Ok(())
    }

    /// Reference grid for the graph-limit experiment (0 = auto).
    pub fn reference_grid(&self) -> usize {
        if self.graphlimit.reference_grid > 0 {
            self.graphlimit.reference_grid
        } else {
            4 * self.graphlimit.n_list.iter().copied().max().unwrap_or(64)
        }
    }
}
