//! Interaction functions φ and weight dynamics Λ.
//!
//! A [`KernelSpec`] couples an evaluator `(t, x, y) -> R` with its declared
//! bound and Lipschitz constant; a [`WeightDynamicsSpec`] couples the
//! eight-argument evaluator `(ξ, ζ, x, y, w, x~, y~, w~) -> R` with its
//! sublinear growth constant, Lipschitz constant and structural flags.
//! Declared constants are what the solvers and bound checks consume;
//! [`KernelSpec::validate`] / [`WeightDynamicsSpec::validate`] cross-check
//! them by sampling, since global certification of a black-box evaluator
//! is not possible.

use crate::error::{Error, Result};
use crate::util::{pairwise_sum, stream_rng};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub type PhiFn = dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync;
pub type LambdaFn = dyn Fn(f64, f64, &[f64], &[f64], f64, &[f64], &[f64], f64) -> f64 + Send + Sync;
/// Factor depending on the local arguments (ξ, ζ, x, y, w).
pub type LocalFactorFn = dyn Fn(f64, f64, &[f64], &[f64], f64) -> f64 + Send + Sync;
/// Factor depending on the remote arguments (x~, y~, w~).
pub type RemoteFactorFn = dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync;

/// Interaction function φ with declared constants.
#[derive(Clone)]
pub struct KernelSpec {
    pub name: String,
    /// M_φ: sup |φ|.
    pub bound: f64,
    /// L_φ: |φ(t,x1,y1) − φ(t,x2,y2)| ≤ L_φ (|x1−x2| + |y1−y2|).
    pub lipschitz: f64,
    eval: Arc<PhiFn>,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl KernelSpec {
    pub fn new(
        name: impl Into<String>,
        bound: f64,
        lipschitz: f64,
        eval: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        KernelSpec {
            name: name.into(),
            bound,
            lipschitz,
            eval: Arc::new(eval),
        }
    }

    /// Checked evaluation; rejects non-finite inputs and outputs.
    pub fn eval_phi(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if !t.is_finite()
            || x.iter().any(|v| !v.is_finite())
            || y.iter().any(|v| !v.is_finite())
        {
            return Err(Error::domain("non-finite argument to phi"));
        }
        let v = (self.eval)(t, x, y);
        if !v.is_finite() {
            return Err(Error::domain(format!("phi '{}' returned non-finite value", self.name)));
        }
        Ok(v)
    }

    /// Unchecked evaluation for hot loops; callers validate states per step.
    #[inline]
    pub fn eval_raw(&self, t: f64, x: &[f64], y: &[f64]) -> f64 {
        (self.eval)(t, x, y)
    }

    pub fn validate(&self, domain: &DomainBox, opts: &ValidationOptions) -> ValidationReport {
        validate_phi(self, domain, opts)
    }
}

/// Separable decomposition Λ(ξ,ζ,x,y,w,x~,y~,w~) = Σ_k a_k(ξ,ζ,x,y,w) · b_k(x~,y~,w~).
///
/// Declaring it unlocks the O(N²) weight-force path: the remote moments
/// ⟨b_k⟩ are accumulated once per right-hand-side call.
#[derive(Clone)]
pub struct SeparableForm {
    pub local: Vec<Arc<LocalFactorFn>>,
    pub remote: Vec<Arc<RemoteFactorFn>>,
}

impl SeparableForm {
    pub fn new(local: Vec<Arc<LocalFactorFn>>, remote: Vec<Arc<RemoteFactorFn>>) -> Self {
        assert_eq!(local.len(), remote.len(), "factor lists must pair up");
        SeparableForm { local, remote }
    }

    pub fn terms(&self) -> usize {
        self.local.len()
    }
}

/// Weight dynamics Λ with declared constants and structural flags.
#[derive(Clone)]
pub struct WeightDynamicsSpec {
    pub name: String,
    /// C_Λ: |Λ| ≤ C_Λ (1 + |w|).
    pub growth: f64,
    /// L_Λ: Lipschitz constant in the last six arguments (ℓ¹ combination).
    pub lipschitz: f64,
    /// True when Λ does not depend on the local state x (required by the
    /// restricted particle system and by the intermediate system).
    pub x_independent: bool,
    pub separable: Option<SeparableForm>,
    eval: Arc<LambdaFn>,
}

impl fmt::Debug for WeightDynamicsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightDynamicsSpec")
            .field("name", &self.name)
            .field("growth", &self.growth)
            .field("lipschitz", &self.lipschitz)
            .field("x_independent", &self.x_independent)
            .field("separable", &self.separable.as_ref().map(|s| s.terms()))
            .finish()
    }
}

#[allow(clippy::too_many_arguments)]
impl WeightDynamicsSpec {
    pub fn new(
        name: impl Into<String>,
        growth: f64,
        lipschitz: f64,
        x_independent: bool,
        separable: Option<SeparableForm>,
        eval: impl Fn(f64, f64, &[f64], &[f64], f64, &[f64], &[f64], f64) -> f64
            + Send
            + Sync
            + 'static,
    ) -> Self {
        WeightDynamicsSpec {
            name: name.into(),
            growth,
            lipschitz,
            x_independent,
            separable,
            eval: Arc::new(eval),
        }
    }

    /// Checked evaluation; rejects identities outside the unit interval and
    /// non-finite arguments.
    pub fn eval_lambda(
        &self,
        xi: f64,
        zeta: f64,
        x: &[f64],
        y: &[f64],
        w: f64,
        xt: &[f64],
        yt: &[f64],
        wt: f64,
    ) -> Result<f64> {
        if !(0.0..=1.0).contains(&xi) || !(0.0..=1.0).contains(&zeta) {
            return Err(Error::domain("identity arguments must lie in [0,1]"));
        }
        let finite = w.is_finite()
            && wt.is_finite()
            && x.iter().chain(y).chain(xt).chain(yt).all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("non-finite argument to lambda"));
        }
        let v = (self.eval)(xi, zeta, x, y, w, xt, yt, wt);
        if !v.is_finite() {
            return Err(Error::domain(format!(
                "lambda '{}' returned non-finite value",
                self.name
            )));
        }
        Ok(v)
    }

    #[inline]
    pub fn eval_raw(
        &self,
        xi: f64,
        zeta: f64,
        x: &[f64],
        y: &[f64],
        w: f64,
        xt: &[f64],
        yt: &[f64],
        wt: f64,
    ) -> f64 {
        (self.eval)(xi, zeta, x, y, w, xt, yt, wt)
    }

    pub fn validate(&self, domain: &DomainBox, opts: &ValidationOptions) -> ValidationReport {
        validate_lambda(self, domain, opts)
    }

    /// `Λ + delta · bump` with `bump(x~,y~,w~) = 1/(1 + |x~ − y~|²)`.
    ///
    /// The bump is bounded by 1, Lipschitz and independent of the local
    /// arguments, so the perturbed dynamics keeps the hypotheses with
    /// growth `C_Λ + delta` and Lipschitz `L_Λ + delta`. Used by the
    /// stability experiment.
    pub fn perturbed(&self, delta: f64) -> WeightDynamicsSpec {
        let base = self.eval.clone();
        let separable = self.separable.as_ref().map(|s| {
            let mut local = s.local.clone();
            let mut remote = s.remote.clone();
            local.push(Arc::new(move |_xi, _zeta, _x: &[f64], _y: &[f64], _w| delta));
            remote.push(Arc::new(|xt: &[f64], yt: &[f64], _wt| inverse_quadratic(xt, yt)));
            SeparableForm::new(local, remote)
        });
        WeightDynamicsSpec {
            name: format!("{}+{}*bump", self.name, delta),
            growth: self.growth + delta.abs(),
            lipschitz: self.lipschitz + delta.abs(),
            x_independent: self.x_independent,
            separable,
            eval: Arc::new(move |xi, zeta, x, y, w, xt, yt, wt| {
                base(xi, zeta, x, y, w, xt, yt, wt) + delta * inverse_quadratic(xt, yt)
            }),
        }
    }
}

/// H(a, b) = 1 / (1 + |a − b|²).
pub fn inverse_quadratic(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    1.0 / (1.0 + s)
}

/// Catalog of named kernels, addressable from the CLI and config files.
#[derive(Debug, Clone)]
pub struct KernelCatalog {
    phis: BTreeMap<String, KernelSpec>,
    lambdas: BTreeMap<String, WeightDynamicsSpec>,
}

impl KernelCatalog {
    pub fn empty() -> Self {
        KernelCatalog {
            phis: BTreeMap::new(),
            lambdas: BTreeMap::new(),
        }
    }

    /// The builtin kernels.
    ///
    /// - φ "tanh-consensus": tanh of the summed state difference; M_φ = L_φ = 1.
    /// - φ "zero": no interaction.
    /// - Λ "relax-to-H": H(x~,y~) − w with H the inverse-quadratic affinity;
    ///   relaxation of each weight towards the affinity of the sampled pair.
    ///   C_Λ = L_Λ = 1, independent of x, separable with two terms.
    /// - Λ "zero": static weights.
    pub fn builtin() -> Self {
        let mut cat = KernelCatalog::empty();
        cat.register_phi(KernelSpec::new("tanh-consensus", 1.0, 1.0, |_t, x, y| {
            let mut s = 0.0;
            for k in 0..x.len() {
                s += y[k] - x[k];
            }
            s.tanh()
        }));
        cat.register_phi(KernelSpec::new("zero", 0.0, 0.0, |_t, _x, _y| 0.0));
        cat.register_lambda(relax_to_h());
        cat.register_lambda(WeightDynamicsSpec::new(
            "zero",
            0.0,
            0.0,
            true,
            Some(SeparableForm::new(
                vec![Arc::new(|_, _, _: &[f64], _: &[f64], _| 0.0)],
                vec![Arc::new(|_: &[f64], _: &[f64], _| 0.0)],
            )),
            |_, _, _, _, _, _, _, _| 0.0,
        ));
        cat
    }

    pub fn register_phi(&mut self, spec: KernelSpec) {
        self.phis.insert(spec.name.clone(), spec);
    }

    pub fn register_lambda(&mut self, spec: WeightDynamicsSpec) {
        self.lambdas.insert(spec.name.clone(), spec);
    }

    pub fn phi(&self, name: &str) -> Result<&KernelSpec> {
        self.phis
            .get(name)
            .ok_or_else(|| Error::UnknownKernel(format!("phi '{name}'")))
    }

    pub fn lambda(&self, name: &str) -> Result<&WeightDynamicsSpec> {
        self.lambdas
            .get(name)
            .ok_or_else(|| Error::UnknownKernel(format!("lambda '{name}'")))
    }

    pub fn phi_names(&self) -> impl Iterator<Item = &str> {
        self.phis.keys().map(|s| s.as_str())
    }

    pub fn lambda_names(&self) -> impl Iterator<Item = &str> {
        self.lambdas.keys().map(|s| s.as_str())
    }
}

/// Λ(ξ,ζ,x,y,w,x~,y~,w~) = H(x~,y~) − w, H(a,b) = 1/(1+|a−b|²).
fn relax_to_h() -> WeightDynamicsSpec {
    let separable = SeparableForm::new(
        vec![
            Arc::new(|_xi, _zeta, _x: &[f64], _y: &[f64], _w| 1.0),
            Arc::new(|_xi, _zeta, _x: &[f64], _y: &[f64], w: f64| -w),
        ],
        vec![
            Arc::new(|xt: &[f64], yt: &[f64], _wt| inverse_quadratic(xt, yt)),
            Arc::new(|_xt: &[f64], _yt: &[f64], _wt| 1.0),
        ],
    );
    WeightDynamicsSpec::new(
        "relax-to-H",
        1.0,
        1.0,
        true,
        Some(separable),
        |_xi, _zeta, _x, _y, w, xt, yt, _wt| inverse_quadratic(xt, yt) - w,
    )
}

/// Sampling domain for hypothesis validation.
#[derive(Debug, Clone)]
pub struct DomainBox {
    pub dim: usize,
    /// States sampled uniformly from [-state_radius, state_radius]^dim.
    pub state_radius: f64,
    /// Weights sampled uniformly from [-weight_radius, weight_radius].
    pub weight_radius: f64,
    /// Times sampled uniformly from [0, t_max].
    pub t_max: f64,
}

impl DomainBox {
    pub fn new(dim: usize, state_radius: f64, weight_radius: f64, t_max: f64) -> Self {
        DomainBox {
            dim,
            state_radius,
            weight_radius,
            t_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
    /// Relative slack on sampled Lipschitz quotients and bounds.
    pub slack: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            samples: 10_000,
            seed: 1,
            slack: 1e-9,
        }
    }
}

/// Sampled evidence for/against the declared constants.
///
/// `pass` judges only what the spec declares (bound, Lipschitz constant,
/// x-independence, separable agreement, diagonal vanishing of φ).
/// Structural zeros are reported but do not gate `pass`: builtins may
/// legitimately violate them, the solvers enforce the operational index
/// exclusions directly.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub kernel: String,
    pub samples: usize,
    pub max_abs_value: f64,
    pub max_lipschitz_quotient: f64,
    pub declared_bound: f64,
    pub declared_lipschitz: f64,
    /// φ only: max |φ(t, x, x)| over sampled diagonals.
    pub max_diagonal_abs: Option<f64>,
    /// Λ only: max |Λ| / (1 + |w|).
    pub max_growth_ratio: Option<f64>,
    /// Λ only: max |Λ| over points where two same-type arguments among the
    /// last six coincide.
    pub max_structural_violation: Option<f64>,
    /// Λ declared x-independent: max |Λ(x) − Λ(x′)| under x-perturbations.
    pub max_x_dependence: Option<f64>,
    /// Λ with a separable form: max |Λ − Σ a_k b_k|.
    pub max_separable_mismatch: Option<f64>,
    pub bound_pass: bool,
    pub lipschitz_pass: bool,
    pub structural_zero: Option<bool>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("kernel: {}\n", self.kernel));
        s.push_str(&format!("samples: {}\n", self.samples));
        s.push_str(&format!("max_abs_value: {:.6e}\n", self.max_abs_value));
        s.push_str(&format!(
            "max_lipschitz_quotient: {:.6e}\n",
            self.max_lipschitz_quotient
        ));
        if let Some(v) = self.max_diagonal_abs {
            s.push_str(&format!("max_diagonal_abs: {v:.6e}\n"));
        }
        if let Some(v) = self.max_growth_ratio {
            s.push_str(&format!("max_growth_ratio: {v:.6e}\n"));
        }
        if let Some(v) = self.max_structural_violation {
            s.push_str(&format!("max_structural_violation: {v:.6e}\n"));
        }
        if let Some(v) = self.max_x_dependence {
            s.push_str(&format!("max_x_dependence: {v:.6e}\n"));
        }
        if let Some(v) = self.max_separable_mismatch {
            s.push_str(&format!("max_separable_mismatch: {v:.6e}\n"));
        }
        s.push_str(&format!("pass: {}\n", self.pass));
        s
    }
}

fn sample_state(rng: &mut impl Rng, dim: usize, r: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-r..=r)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn validate_phi(spec: &KernelSpec, domain: &DomainBox, opts: &ValidationOptions) -> ValidationReport {
    let per_sample: Vec<(f64, f64, f64)> = (0..opts.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(opts.seed, &[0xF1, s as u64]);
            let t = rng.gen_range(0.0..=domain.t_max.max(0.0));
            let x1 = sample_state(&mut rng, domain.dim, domain.state_radius);
            let y1 = sample_state(&mut rng, domain.dim, domain.state_radius);
            let x2 = sample_state(&mut rng, domain.dim, domain.state_radius);
            let y2 = sample_state(&mut rng, domain.dim, domain.state_radius);
            let v1 = spec.eval_raw(t, &x1, &y1);
            let v2 = spec.eval_raw(t, &x2, &y2);
            let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
            let dist = norm(&dx) + norm(&dy);
            let quot = if dist > 1e-9 { (v1 - v2).abs() / dist } else { 0.0 };
            let diag = spec.eval_raw(t, &x1, &x1).abs();
            (v1.abs().max(v2.abs()), quot, diag)
        })
        .collect();

    let max_abs = per_sample.iter().map(|p| p.0).fold(0.0, f64::max);
    let max_quot = per_sample.iter().map(|p| p.1).fold(0.0, f64::max);
    let max_diag = per_sample.iter().map(|p| p.2).fold(0.0, f64::max);

    let bound_pass = max_abs <= spec.bound * (1.0 + opts.slack) + opts.slack;
    let lipschitz_pass = max_quot <= spec.lipschitz * (1.0 + opts.slack) + opts.slack;
    let diag_pass = max_diag <= 1e-12 + opts.slack;
    ValidationReport {
        kernel: spec.name.clone(),
        samples: opts.samples,
        max_abs_value: max_abs,
        max_lipschitz_quotient: max_quot,
        declared_bound: spec.bound,
        declared_lipschitz: spec.lipschitz,
        max_diagonal_abs: Some(max_diag),
        max_growth_ratio: None,
        max_structural_violation: None,
        max_x_dependence: None,
        max_separable_mismatch: None,
        bound_pass,
        lipschitz_pass,
        structural_zero: None,
        pass: bound_pass && lipschitz_pass && diag_pass,
    }
}

struct LambdaSampleStats {
    max_abs: f64,
    max_quot: f64,
    max_growth: f64,
    max_struct: f64,
    max_xdep: f64,
    max_sep: f64,
}

fn validate_lambda(
    spec: &WeightDynamicsSpec,
    domain: &DomainBox,
    opts: &ValidationOptions,
) -> ValidationReport {
    let stats: Vec<LambdaSampleStats> = (0..opts.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(opts.seed, &[0xF2, s as u64]);
            let xi = rng.gen_range(0.0..=1.0);
            let zeta = rng.gen_range(0.0..=1.0);
            let d = domain.dim;
            let r = domain.state_radius;
            let rw = domain.weight_radius;
            let x1 = sample_state(&mut rng, d, r);
            let y1 = sample_state(&mut rng, d, r);
            let w1 = rng.gen_range(-rw..=rw);
            let xt1 = sample_state(&mut rng, d, r);
            let yt1 = sample_state(&mut rng, d, r);
            let wt1 = rng.gen_range(-rw..=rw);
            let x2 = sample_state(&mut rng, d, r);
            let y2 = sample_state(&mut rng, d, r);
            let w2 = rng.gen_range(-rw..=rw);
            let xt2 = sample_state(&mut rng, d, r);
            let yt2 = sample_state(&mut rng, d, r);
            let wt2 = rng.gen_range(-rw..=rw);

            let v1 = spec.eval_raw(xi, zeta, &x1, &y1, w1, &xt1, &yt1, wt1);
            let v2 = spec.eval_raw(xi, zeta, &x2, &y2, w2, &xt2, &yt2, wt2);
            let dist = {
                let nd = |a: &[f64], b: &[f64]| {
                    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
                    norm(&d)
                };
                nd(&x1, &x2) + nd(&y1, &y2) + (w1 - w2).abs() + nd(&xt1, &xt2) + nd(&yt1, &yt2)
                    + (wt1 - wt2).abs()
            };
            let quot = if dist > 1e-9 { (v1 - v2).abs() / dist } else { 0.0 };
            let growth = v1.abs() / (1.0 + w1.abs());

            // Hypothesis-3 probes: force a coincidence between two same-type
            // arguments among the last six and evaluate there.
            let mut max_struct: f64 = 0.0;
            let pairs: [(&[f64], &[f64]); 6] = [
                (&x1, &y1),
                (&x1, &xt1),
                (&x1, &yt1),
                (&y1, &xt1),
                (&y1, &yt1),
                (&xt1, &yt1),
            ];
            for (which, _) in pairs.iter().enumerate() {
                let mut args: [Vec<f64>; 4] = [x1.clone(), y1.clone(), xt1.clone(), yt1.clone()];
                let (a, b) = match which {
                    0 => (0, 1),
                    1 => (0, 2),
                    2 => (0, 3),
                    3 => (1, 2),
                    4 => (1, 3),
                    _ => (2, 3),
                };
                args[b] = args[a].clone();
                let v = spec
                    .eval_raw(xi, zeta, &args[0], &args[1], w1, &args[2], &args[3], wt1)
                    .abs();
                max_struct = max_struct.max(v);
            }
            let v_eq_w = spec
                .eval_raw(xi, zeta, &x1, &y1, w1, &xt1, &yt1, w1)
                .abs();
            max_struct = max_struct.max(v_eq_w);

            let xdep = if spec.x_independent {
                let v_alt = spec.eval_raw(xi, zeta, &x2, &y1, w1, &xt1, &yt1, wt1);
                (v1 - v_alt).abs()
            } else {
                0.0
            };

            let sep = if let Some(form) = &spec.separable {
                let mut total = 0.0;
                for k in 0..form.terms() {
                    total += (form.local[k])(xi, zeta, &x1, &y1, w1)
                        * (form.remote[k])(&xt1, &yt1, wt1);
                }
                (total - v1).abs()
            } else {
                0.0
            };

            LambdaSampleStats {
                max_abs: v1.abs().max(v2.abs()),
                max_quot: quot,
                max_growth: growth,
                max_struct,
                max_xdep: xdep,
                max_sep: sep,
            }
        })
        .collect();

    let fold = |f: fn(&LambdaSampleStats) -> f64| stats.iter().map(f).fold(0.0, f64::max);
    let max_abs = fold(|s| s.max_abs);
    let max_quot = fold(|s| s.max_quot);
    let max_growth = fold(|s| s.max_growth);
    let max_struct = fold(|s| s.max_struct);
    let max_xdep = fold(|s| s.max_xdep);
    let max_sep = fold(|s| s.max_sep);

    let bound_pass = max_growth <= spec.growth * (1.0 + opts.slack) + opts.slack;
    let lipschitz_pass = max_quot <= spec.lipschitz * (1.0 + opts.slack) + opts.slack;
    let xdep_pass = !spec.x_independent || max_xdep <= 1e-12;
    let sep_pass = spec.separable.is_none() || max_sep <= 1e-12;
    ValidationReport {
        kernel: spec.name.clone(),
        samples: opts.samples,
        max_abs_value: max_abs,
        max_lipschitz_quotient: max_quot,
        declared_bound: spec.growth,
        declared_lipschitz: spec.lipschitz,
        max_diagonal_abs: None,
        max_growth_ratio: Some(max_growth),
        max_structural_violation: Some(max_struct),
        max_x_dependence: spec.x_independent.then_some(max_xdep),
        max_separable_mismatch: spec.separable.as_ref().map(|_| max_sep),
        bound_pass,
        lipschitz_pass,
        structural_zero: Some(max_struct <= 1e-12),
        pass: bound_pass && lipschitz_pass && xdep_pass && sep_pass,
    }
}

/// Mean of a slice in fixed pairwise order (helper for reports).
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        pairwise_sum(v) / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // tanh(1), frozen from the series oracle in tests/support.
    const TANH_ONE: f64 = 0.7615941559557649;

    #[test]
    fn tanh_consensus_examples() {
        let cat = KernelCatalog::builtin();
        let phi = cat.phi("tanh-consensus").unwrap();
        assert_eq!(phi.eval_phi(0.0, &[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(phi.eval_phi(0.0, &[1.0], &[1.0]).unwrap(), 0.0);
        let v = phi.eval_phi(0.0, &[0.0], &[1.0]).unwrap();
        assert!((v - TANH_ONE).abs() < 1e-15);
    }

    #[test]
    fn phi_rejects_non_finite_input() {
        let cat = KernelCatalog::builtin();
        let phi = cat.phi("tanh-consensus").unwrap();
        assert!(phi.eval_phi(0.0, &[f64::NAN], &[1.0]).is_err());
        assert!(phi.eval_phi(f64::INFINITY, &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn relax_to_h_examples() {
        let cat = KernelCatalog::builtin();
        let lam = cat.lambda("relax-to-H").unwrap();
        // H(0,0) = 1, w = 0.
        let v = lam
            .eval_lambda(0.3, 0.7, &[9.0], &[9.0], 0.0, &[0.0], &[0.0], 0.0)
            .unwrap();
        assert_eq!(v, 1.0);
        // Fixed point w = H(x~, y~).
        let h = inverse_quadratic(&[0.4], &[-0.2]);
        let v = lam
            .eval_lambda(0.0, 0.0, &[0.0], &[0.0], h, &[0.4], &[-0.2], 0.0)
            .unwrap();
        assert_eq!(v, 0.0);
        // H(1,0) = 1/2, w = 0.
        let v = lam
            .eval_lambda(0.0, 0.0, &[0.0], &[0.0], 0.0, &[1.0], &[0.0], 0.0)
            .unwrap();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn lambda_rejects_bad_identity() {
        let cat = KernelCatalog::builtin();
        let lam = cat.lambda("relax-to-H").unwrap();
        assert!(lam
            .eval_lambda(1.5, 0.0, &[0.0], &[0.0], 0.0, &[0.0], &[0.0], 0.0)
            .is_err());
    }

    #[test]
    fn builtins_validate_at_ten_thousand_samples() {
        let cat = KernelCatalog::builtin();
        let domain = DomainBox::new(1, 2.0, 2.0, 1.0);
        let opts = ValidationOptions::default();
        for name in ["tanh-consensus", "zero"] {
            let rep = cat.phi(name).unwrap().validate(&domain, &opts);
            assert!(rep.pass, "phi {name}: {rep:?}");
            assert!(rep.max_abs_value <= 1.0 + 1e-12);
            assert!(rep.max_lipschitz_quotient <= 1.0 + 1e-9);
        }
        for name in ["relax-to-H", "zero"] {
            let rep = cat.lambda(name).unwrap().validate(&domain, &opts);
            assert!(rep.pass, "lambda {name}: {rep:?}");
        }
    }

    #[test]
    fn constant_zero_phi_reports_all_zero() {
        let cat = KernelCatalog::builtin();
        let rep = cat
            .phi("zero")
            .unwrap()
            .validate(&DomainBox::new(1, 2.0, 2.0, 1.0), &ValidationOptions::default());
        assert_eq!(rep.max_abs_value, 0.0);
        assert_eq!(rep.max_lipschitz_quotient, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn relax_to_h_growth_within_declared_constant() {
        let cat = KernelCatalog::builtin();
        let rep = cat
            .lambda("relax-to-H")
            .unwrap()
            .validate(&DomainBox::new(1, 2.0, 2.0, 1.0), &ValidationOptions::default());
        // |H - w| <= 1 + |w| holds analytically since 0 < H <= 1.
        assert!(rep.max_growth_ratio.unwrap() <= 1.0 + 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn separable_form_matches_evaluator_on_random_arguments() {
        let cat = KernelCatalog::builtin();
        let lam = cat.lambda("relax-to-H").unwrap();
        let form = lam.separable.as_ref().unwrap();
        let mut rng = stream_rng(11, &[0xAB]);
        for _ in 0..1000 {
            let xi: f64 = rng.gen_range(0.0..=1.0);
            let zeta: f64 = rng.gen_range(0.0..=1.0);
            let x = [rng.gen_range(-2.0..=2.0)];
            let y = [rng.gen_range(-2.0..=2.0)];
            let w: f64 = rng.gen_range(-2.0..=2.0);
            let xt = [rng.gen_range(-2.0..=2.0)];
            let yt = [rng.gen_range(-2.0..=2.0)];
            let wt: f64 = rng.gen_range(-2.0..=2.0);
            let direct = lam.eval_raw(xi, zeta, &x, &y, w, &xt, &yt, wt);
            let mut sum = 0.0;
            for k in 0..form.terms() {
                sum += (form.local[k])(xi, zeta, &x, &y, w) * (form.remote[k])(&xt, &yt, wt);
            }
            assert!((direct - sum).abs() <= 1e-12);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cat = KernelCatalog::builtin();
        let phi = cat.phi("tanh-consensus").unwrap();
        let a = phi.eval_raw(0.5, &[0.123], &[0.456]);
        let b = phi.eval_raw(0.5, &[0.123], &[0.456]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn perturbed_dynamics_shifts_by_bump() {
        let cat = KernelCatalog::builtin();
        let lam = cat.lambda("relax-to-H").unwrap();
        let pert = lam.perturbed(0.05);
        let args = (0.2, 0.8, [0.1], [0.2], 0.3, [0.4], [0.5], 0.6);
        let base = lam.eval_raw(args.0, args.1, &args.2, &args.3, args.4, &args.5, &args.6, args.7);
        let shifted =
            pert.eval_raw(args.0, args.1, &args.2, &args.3, args.4, &args.5, &args.6, args.7);
        let bump = inverse_quadratic(&args.5, &args.6);
        assert!((shifted - base - 0.05 * bump).abs() < 1e-15);
        assert_eq!(pert.growth, lam.growth + 0.05);
        // Separable form of the perturbation stays consistent.
        let rep = pert.validate(&DomainBox::new(1, 2.0, 2.0, 1.0), &ValidationOptions::default());
        assert!(rep.max_separable_mismatch.unwrap() <= 1e-12);
    }

    #[test]
    fn understated_bound_fails_validation() {
        let mut bad = KernelCatalog::builtin().phi("tanh-consensus").unwrap().clone();
        bad.bound = 0.5;
        let rep = bad.validate(&DomainBox::new(1, 2.0, 2.0, 1.0), &ValidationOptions::default());
        assert!(!rep.bound_pass);
        assert!(!rep.pass);
    }
}
