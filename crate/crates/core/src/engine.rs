//! Path simulation for the approximating SDE
//! dX = [A X + F_α(t, X)] dt + √C dW on the Galerkin truncation.
//!
//! One step is a Lie splitting: an explicit drift increment followed by an
//! exact Ornstein-Uhlenbeck transition of the linear+noise part. The OU flow
//! is sampled from its exact per-mode law, so the zero-drift dynamics carry
//! no time-discretization error at all; splitting bias comes from the
//! nonlinear term only, and dt is chosen against the drift stiffness.
//!
//! Paths are embarrassingly parallel: each derives its RNG stream from
//! (seed, domain, path_id) and results are merged in path_id order, so an
//! ensemble is a pure function of its configuration regardless of threading.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftScratch, DriftSpec};
use crate::error::{Error, Result};
use crate::spectral::{trace_fractional, GalerkinSpace, NoiseSpec};
use crate::streams::{path_rng, StreamDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Drift increment dt·F_α then exact OU step. Requires α > 0 (the raw
    /// superlinear drift would explode an explicit increment).
    ExponentialEulerSplitting,
    /// Drift increment dt·F/(1 + dt·|F|_{L²}) then exact OU step; the
    /// explicit-scheme remedy that admits α = 0 diagnostics.
    TamedEuler,
}

/// Initial law ζ for an ensemble. `Explicit` continues a given list of
/// states (path i starts at states[i]); it is how composed transition
/// kernels are built and how ensembles restart from files.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    GaussianDiag { mean: Vec<f64>, var_diag: Vec<f64> },
    Explicit(Vec<Vec<f64>>),
}

impl InitialLaw {
    pub fn descriptor(&self) -> String {
        match self {
            InitialLaw::Dirac(_) => "dirac".to_string(),
            InitialLaw::GaussianDiag { .. } => "gaussian".to_string(),
            InitialLaw::Explicit(states) => format!("explicit({})", states.len()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub s: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Checkpoint times in [s, t_end]; each must be step-aligned within 1e-9.
    pub checkpoints: Vec<f64>,
    pub n_paths: u64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Record the stochastic convolution W_A(t,s) alongside the state
    /// (same noise increments, zero drift, started from 0).
    #[serde(default)]
    pub record_convolution: bool,
}

/// Step counts resolved from a validated SimConfig.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub n_steps: u64,
    /// Step index of each checkpoint, strictly increasing.
    pub checkpoint_steps: Vec<u64>,
}

const ALIGN_TOL: f64 = 1e-9;

impl SimConfig {
    pub fn uniform_checkpoints(s: f64, t_end: f64, n_cells: usize) -> Vec<f64> {
        (0..=n_cells)
            .map(|j| s + (t_end - s) * j as f64 / n_cells as f64)
            .collect()
    }

    /// Validate step alignment and return the step plan. Checkpoints must
    /// land on step boundaries exactly; no interpolation is ever done.
    pub fn plan(&self) -> Result<StepPlan> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        if !(self.t_end > self.s) {
            return Err(Error::InvalidInput("t_end must exceed s".into()));
        }
        let span = self.t_end - self.s;
        let n_steps = (span / self.dt).round() as u64;
        if n_steps == 0 || (n_steps as f64 * self.dt - span).abs() > ALIGN_TOL {
            return Err(Error::InvalidInput(format!(
                "dt = {} does not divide [s, t_end] of length {span}",
                self.dt
            )));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::InvalidInput("checkpoints must be nonempty".into()));
        }
        let mut checkpoint_steps = Vec::with_capacity(self.checkpoints.len());
        for &c in &self.checkpoints {
            if c < self.s - ALIGN_TOL || c > self.t_end + ALIGN_TOL {
                return Err(Error::InvalidInput(format!(
                    "checkpoint {c} outside [{}, {}]",
                    self.s, self.t_end
                )));
            }
            let k = ((c - self.s) / self.dt).round() as u64;
            if (k as f64 * self.dt - (c - self.s)).abs() > ALIGN_TOL {
                return Err(Error::InvalidInput(format!(
                    "checkpoint {c} not aligned to the step grid (dt = {})",
                    self.dt
                )));
            }
            checkpoint_steps.push(k);
        }
        if checkpoint_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        Ok(StepPlan { n_steps, checkpoint_steps })
    }
}

/// One simulated path: states at every checkpoint unless it exploded, in
/// which case `exploded` carries the first bad time and the path is dropped
/// from the ensemble members.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub path_id: u64,
    /// states[i] is the mode vector at checkpoints[i].
    pub states: Vec<Vec<f64>>,
    pub convolution_states: Option<Vec<Vec<f64>>>,
    pub exploded: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplodedPath {
    pub path_id: u64,
    pub time: f64,
}

/// Weighted (here: uniform) Monte Carlo sample of Galerkin states at the
/// checkpoint times — the computable surrogate for the checkpoint laws.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: SimConfig,
    pub n_modes: usize,
    pub initial_law: String,
    /// Completed paths only, in path_id order.
    pub members: Vec<PathRecord>,
    pub exploded: Vec<ExplodedPath>,
}

/// Exploded-path policy: a run is invalid if more than this fraction of
/// paths left the resolvable range.
pub const MAX_EXPLODED_FRACTION: f64 = 0.001;

impl Ensemble {
    pub fn is_valid(&self) -> bool {
        (self.exploded.len() as f64) <= MAX_EXPLODED_FRACTION * self.config.n_paths as f64
    }

    pub fn exploded_fraction(&self) -> f64 {
        self.exploded.len() as f64 / self.config.n_paths as f64
    }

    pub fn checkpoint_index(&self, t: f64) -> Option<usize> {
        self.config
            .checkpoints
            .iter()
            .position(|&c| (c - t).abs() <= ALIGN_TOL)
    }

    /// States of all members at one checkpoint, in path order.
    pub fn states_at(&self, checkpoint_idx: usize) -> impl Iterator<Item = &[f64]> {
        self.members
            .iter()
            .map(move |p| p.states[checkpoint_idx].as_slice())
    }
}

/// Exact one-step transition of the linear SDE dX_k = λ_k X_k dt + √c_k dβ_k:
/// x'_k = e^{λ_k dt} x_k + σ_k(dt) g_k with σ_k(dt)² = c_k(1-e^{2λ_k dt})/(-2λ_k).
pub fn ou_step(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    x_modes: &[f64],
    dt: f64,
    gauss: &[f64],
) -> Vec<f64> {
    assert_eq!(gauss.len(), space.n_modes());
    let plan = OuPlan::new(space, noise, dt);
    let mut x = x_modes.to_vec();
    plan.apply(&mut x, gauss);
    x
}

/// Precomputed per-mode decay and noise amplitude for a fixed dt.
struct OuPlan {
    decay: Vec<f64>,
    sigma: Vec<f64>,
}

impl OuPlan {
    fn new(space: &GalerkinSpace, noise: &NoiseSpec, dt: f64) -> Self {
        let decay: Vec<f64> = space.eigenvalues().iter().map(|l| (l * dt).exp()).collect();
        let sigma: Vec<f64> = noise
            .convolution_variance(space, dt)
            .iter()
            .map(|q| q.sqrt())
            .collect();
        Self { decay, sigma }
    }

    #[inline]
    fn apply(&self, x: &mut [f64], gauss: &[f64]) {
        for k in 0..x.len() {
            x[k] = self.decay[k] * x[k] + self.sigma[k] * gauss[k];
        }
    }
}

struct PathContext<'a> {
    space: &'a GalerkinSpace,
    drift: Option<&'a DriftSpec>,
    config: &'a SimConfig,
    plan: &'a StepPlan,
    ou: &'a OuPlan,
    domain: StreamDomain,
    initial: &'a InitialLaw,
}

fn simulate_one(ctx: &PathContext<'_>, path_id: u64) -> PathRecord {
    let n = ctx.space.n_modes();
    let cfg = ctx.config;
    let mut rng = path_rng(cfg.seed, ctx.domain, path_id);

    let mut x = match ctx.initial {
        InitialLaw::Dirac(x0) => x0.clone(),
        InitialLaw::GaussianDiag { mean, var_diag } => mean
            .iter()
            .zip(var_diag)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        InitialLaw::Explicit(states) => states[path_id as usize].clone(),
    };
    assert_eq!(x.len(), n, "initial state dimension mismatch");

    let mut conv = cfg.record_convolution.then(|| vec![0.0; n]);
    let has_drift = ctx
        .drift
        .map(|d| !(d.f.is_zero() && d.h.is_zero()))
        .unwrap_or(false);
    let mut scratch = DriftScratch::for_space(ctx.space);
    let mut field = vec![0.0; n];
    let mut gauss = vec![0.0; n];

    let mut states: Vec<Vec<f64>> = Vec::with_capacity(ctx.plan.checkpoint_steps.len());
    let mut conv_states: Vec<Vec<f64>> = Vec::new();
    let mut next_cp = 0usize;
    let mut exploded: Option<f64> = None;

    for step in 0..=ctx.plan.n_steps {
        if next_cp < ctx.plan.checkpoint_steps.len() && ctx.plan.checkpoint_steps[next_cp] == step
        {
            states.push(x.clone());
            if let Some(w) = &conv {
                conv_states.push(w.clone());
            }
            next_cp += 1;
        }
        if step == ctx.plan.n_steps {
            break;
        }
        let t = cfg.s + step as f64 * cfg.dt;

        if let Some(drift) = ctx.drift.filter(|_| has_drift) {
            let evaluated = crate::drift::evaluate_drift_with(
                drift,
                ctx.space,
                t,
                &x,
                drift.alpha,
                &mut scratch,
                &mut field,
            );
            let ok = match (evaluated, cfg.scheme) {
                (Err(_), _) => false,
                (Ok(()), Scheme::ExponentialEulerSplitting) => {
                    for k in 0..n {
                        x[k] += cfg.dt * field[k];
                    }
                    true
                }
                (Ok(()), Scheme::TamedEuler) => {
                    let norm = field.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let tame = cfg.dt / (1.0 + cfg.dt * norm);
                    for k in 0..n {
                        x[k] += tame * field[k];
                    }
                    true
                }
            };
            if !ok || x.iter().any(|v| !v.is_finite()) {
                exploded = Some(t);
                break;
            }
        }

        for g in gauss.iter_mut() {
            *g = rng.sample(StandardNormal);
        }
        ctx.ou.apply(&mut x, &gauss);
        if let Some(w) = conv.as_mut() {
            ctx.ou.apply(w, &gauss);
        }
    }

    PathRecord {
        path_id,
        states,
        convolution_states: (exploded.is_none() && conv.is_some()).then_some(conv_states),
        exploded,
    }
}

/// Simulate one path. Deterministic in (configs, seed, path_id); a repeat
/// call is bit-identical.
pub fn simulate_path(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    drift: &DriftSpec,
    config: &SimConfig,
    x0: &[f64],
    path_id: u64,
) -> Result<PathRecord> {
    validate_engine_inputs(space, noise, drift, config)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("x0 must be finite".into()));
    }
    let plan = config.plan()?;
    let ou = OuPlan::new(space, noise, config.dt);
    let initial = InitialLaw::Dirac(x0.to_vec());
    let ctx = PathContext {
        space,
        drift: Some(drift),
        config,
        plan: &plan,
        ou: &ou,
        domain: StreamDomain::Main,
        initial: &initial,
    };
    Ok(simulate_one(&ctx, path_id))
}

fn validate_engine_inputs(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    drift: &DriftSpec,
    config: &SimConfig,
) -> Result<()> {
    if noise.c_diag().len() != space.n_modes() {
        return Err(Error::InvalidInput("noise dimension mismatch".into()));
    }
    if config.scheme == Scheme::ExponentialEulerSplitting
        && drift.alpha == 0.0
        && !(drift.f.is_zero() && drift.h.is_zero())
    {
        return Err(Error::InvalidInput(
            "exponential_euler_splitting requires alpha > 0; use tamed_euler for exact-drift runs"
                .into(),
        ));
    }
    Ok(())
}

fn run_paths<F>(n_paths: u64, force_serial: bool, f: F) -> Vec<PathRecord>
where
    F: Fn(u64) -> PathRecord + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !force_serial {
            use rayon::prelude::*;
            return (0..n_paths).into_par_iter().map(f).collect();
        }
    }
    let _ = force_serial;
    (0..n_paths).map(f).collect()
}

/// Simulate an ensemble of independent paths under the given stream domain.
/// `force_serial` pins execution to one thread (results are identical either
/// way; the flag exists for benchmarking the fallback).
pub fn simulate_ensemble_in(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    drift: &DriftSpec,
    config: &SimConfig,
    initial_law: &InitialLaw,
    domain: StreamDomain,
    force_serial: bool,
) -> Result<Ensemble> {
    validate_engine_inputs(space, noise, drift, config)?;
    if config.n_paths < 100 {
        return Err(Error::InvalidInput(format!(
            "n_paths = {} below the minimum of 100",
            config.n_paths
        )));
    }
    match initial_law {
        InitialLaw::Dirac(x0) | InitialLaw::GaussianDiag { mean: x0, .. } => {
            if x0.len() != space.n_modes() {
                return Err(Error::InvalidInput("initial law dimension mismatch".into()));
            }
        }
        InitialLaw::Explicit(states) => {
            if (states.len() as u64) < config.n_paths {
                return Err(Error::InvalidInput(
                    "explicit initial law shorter than n_paths".into(),
                ));
            }
        }
    }
    let plan = config.plan()?;
    let ou = OuPlan::new(space, noise, config.dt);
    let ctx = PathContext {
        space,
        drift: Some(drift),
        config,
        plan: &plan,
        ou: &ou,
        domain,
        initial: initial_law,
    };
    let records = run_paths(config.n_paths, force_serial, |pid| simulate_one(&ctx, pid));

    let mut members = Vec::with_capacity(records.len());
    let mut exploded = Vec::new();
    for r in records {
        match r.exploded {
            Some(time) => exploded.push(ExplodedPath { path_id: r.path_id, time }),
            None => members.push(r),
        }
    }
    Ok(Ensemble {
        config: config.clone(),
        n_modes: space.n_modes(),
        initial_law: initial_law.descriptor(),
        members,
        exploded,
    })
}

/// n_paths independent paths from the initial law, Main stream domain.
pub fn simulate_ensemble(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    drift: &DriftSpec,
    config: &SimConfig,
    initial_law: &InitialLaw,
) -> Result<Ensemble> {
    simulate_ensemble_in(space, noise, drift, config, initial_law, StreamDomain::Main, false)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvolutionReport {
    /// max over checkpoints of the ensemble mean of |(-A)^δ W_A(t)|².
    pub estimate: f64,
    pub std_error_at_sup: f64,
    /// ‖C‖ · Tr[(-A)^{-2δ}]; the truncated trace Σ_{k≤N} stands in when the
    /// full series diverges (δ ≤ 1/4), and `trace_truncated` records that.
    pub c_delta: f64,
    pub trace_truncated: bool,
    pub per_checkpoint: Vec<(f64, f64, f64)>,
    pub pass: bool,
}

/// Pure-convolution run (drift absent): estimate sup_t E|(-A)^δ W_A(t)|² and
/// compare against the covariance-trace bound at 3 standard errors.
pub fn convolution_sup_moment(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    delta: f64,
    config: &SimConfig,
) -> Result<ConvolutionReport> {
    if noise.c_diag().len() != space.n_modes() {
        return Err(Error::InvalidInput("noise dimension mismatch".into()));
    }
    if config.n_paths < 100 {
        return Err(Error::InvalidInput("n_paths below minimum of 100".into()));
    }
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::InvalidInput(format!("delta = {delta} outside [0, 1/2]")));
    }
    let plan = config.plan()?;
    let ou = OuPlan::new(space, noise, config.dt);
    let zero = vec![0.0; space.n_modes()];
    let initial = InitialLaw::Dirac(zero);
    let ctx = PathContext {
        space,
        drift: None,
        config,
        plan: &plan,
        ou: &ou,
        domain: StreamDomain::Main,
        initial: &initial,
    };
    let records = run_paths(config.n_paths, false, |pid| simulate_one(&ctx, pid));

    let n_cp = config.checkpoints.len();
    let n = records.len() as f64;
    let mut per_checkpoint = Vec::with_capacity(n_cp);
    let mut sup = f64::NEG_INFINITY;
    let mut sup_se = 0.0;
    for (i, &t) in config.checkpoints.iter().enumerate() {
        let mut mean = 0.0;
        for r in &records {
            mean += space.fractional_norm_sq(delta, &r.states[i]);
        }
        mean /= n;
        let mut var = 0.0;
        for r in &records {
            let d = space.fractional_norm_sq(delta, &r.states[i]) - mean;
            var += d * d;
        }
        let se = (var / (n * (n - 1.0).max(1.0))).sqrt();
        per_checkpoint.push((t, mean, se));
        if mean > sup {
            sup = mean;
            sup_se = se;
        }
    }

    let (trace_value, truncated) = if 4.0 * delta > 1.0 {
        (trace_fractional(delta, 1e-9)?.value, false)
    } else {
        (space.truncated_trace(delta), true)
    };
    let c_delta = noise.c_norm() * trace_value;
    Ok(ConvolutionReport {
        estimate: sup,
        std_error_at_sup: sup_se,
        c_delta,
        trace_truncated: truncated,
        per_checkpoint,
        pass: sup <= c_delta + 3.0 * sup_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::PI;
    use approx::assert_relative_eq;

    fn small_setup() -> (GalerkinSpace, NoiseSpec) {
        let sp = GalerkinSpace::build(4, 8).unwrap();
        let noise = NoiseSpec::identity(4, 1.0).unwrap();
        (sp, noise)
    }

    fn cfg(n_paths: u64, seed: u64) -> SimConfig {
        SimConfig {
            s: 0.0,
            t_end: 0.5,
            dt: 1.0 / 64.0,
            checkpoints: SimConfig::uniform_checkpoints(0.0, 0.5, 8),
            n_paths,
            seed,
            scheme: Scheme::TamedEuler,
            record_convolution: false,
        }
    }

    #[test]
    fn plan_alignment() {
        let c = cfg(100, 1);
        let plan = c.plan().unwrap();
        assert_eq!(plan.n_steps, 32);
        assert_eq!(plan.checkpoint_steps, vec![0, 4, 8, 12, 16, 20, 24, 28, 32]);

        let mut bad = cfg(100, 1);
        bad.checkpoints = vec![0.0, 0.1, 0.5]; // 0.1 not on the 1/64 grid
        assert!(bad.plan().is_err());
        let mut bad_dt = cfg(100, 1);
        bad_dt.dt = 0.3;
        assert!(bad_dt.plan().is_err());
    }

    #[test]
    fn ou_step_noiseless_decay() {
        let (sp, noise) = small_setup();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let out = ou_step(&sp, &noise, &x, 0.1, &[0.0; 4]);
        for k in 0..4 {
            assert_relative_eq!(
                out[k],
                (sp.eigenvalues()[k] * 0.1).exp() * x[k],
                max_relative = 1e-14
            );
        }
    }

    /// Exact OU variance: dt = 0.1, k = 1, c = 1 gives
    /// σ² = (1-e^{-2π²·0.1})/(2π²) ≈ 0.04362; and the large-dt limit is the
    /// stationary variance c_k/(2(kπ)²).
    #[test]
    fn ou_step_variance_formula() {
        let (sp, noise) = small_setup();
        let q = noise.convolution_variance(&sp, 0.1);
        assert!((q[0] - 0.04362).abs() < 5e-6);
        let q_inf = noise.convolution_variance(&sp, 1e3);
        for k in 0..4 {
            let kpi = (k as f64 + 1.0) * PI;
            assert_relative_eq!(q_inf[k], 1.0 / (2.0 * kpi * kpi), max_relative = 1e-12);
        }
    }

    #[test]
    fn path_determinism() {
        let (sp, noise) = small_setup();
        let drift = DriftSpec::cubic(1.0, 0.25, 0.5).unwrap();
        let c = cfg(100, 99);
        let x0 = sp.project_constant(0.5);
        let a = simulate_path(&sp, &noise, &drift, &c, &x0, 3).unwrap();
        let b = simulate_path(&sp, &noise, &drift, &c, &x0, 3).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            for (va, vb) in sa.iter().zip(sb) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
    }

    #[test]
    fn splitting_requires_alpha_or_taming() {
        let (sp, noise) = small_setup();
        let mut c = cfg(100, 1);
        c.scheme = Scheme::ExponentialEulerSplitting;
        let exact = DriftSpec::cubic(0.0, 0.0, 0.5).unwrap();
        assert!(simulate_path(&sp, &noise, &exact, &c, &[0.0; 4], 0).is_err());
        // zero drift is fine under either scheme
        let zero = DriftSpec::zero(0.5);
        assert!(simulate_path(&sp, &noise, &zero, &c, &[0.0; 4], 0).is_ok());
    }

    #[test]
    fn ensemble_prefix_property() {
        let (sp, noise) = small_setup();
        let drift = DriftSpec::cubic(1.0, 0.25, 0.5).unwrap();
        let small = simulate_ensemble(&sp, &noise, &drift, &cfg(100, 7), &InitialLaw::Dirac(vec![0.0; 4])).unwrap();
        let large = simulate_ensemble(&sp, &noise, &drift, &cfg(400, 7), &InitialLaw::Dirac(vec![0.0; 4])).unwrap();
        for (a, b) in small.members.iter().zip(large.members.iter().take(100)) {
            assert_eq!(a.path_id, b.path_id);
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert_eq!(sa, sb);
            }
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let (sp, noise) = small_setup();
        let drift = DriftSpec::cubic(1.0, 0.25, 0.5).unwrap();
        let law = InitialLaw::GaussianDiag { mean: vec![0.1; 4], var_diag: vec![0.01; 4] };
        let par = simulate_ensemble_in(&sp, &noise, &drift, &cfg(200, 5), &law, StreamDomain::Main, false).unwrap();
        let ser = simulate_ensemble_in(&sp, &noise, &drift, &cfg(200, 5), &law, StreamDomain::Main, true).unwrap();
        assert_eq!(par.members.len(), ser.members.len());
        for (a, b) in par.members.iter().zip(&ser.members) {
            assert_eq!(a.path_id, b.path_id);
            for (sa, sb) in a.states.iter().zip(&b.states) {
                for (va, vb) in sa.iter().zip(sb) {
                    assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
        }
    }

    /// Zero drift from 0: ensemble variance per mode at t matches the OU
    /// closed form within 3 standard errors of the variance estimator.
    #[test]
    fn zero_drift_matches_gaussian_law() {
        let (sp, noise) = small_setup();
        let drift = DriftSpec::zero(0.5);
        let mut c = cfg(4000, 11);
        c.scheme = Scheme::ExponentialEulerSplitting;
        let ens = simulate_ensemble(&sp, &noise, &drift, &c, &InitialLaw::Dirac(vec![0.0; 4])).unwrap();
        assert!(ens.is_valid());
        let n = ens.members.len() as f64;
        for (i, &t) in c.checkpoints.iter().enumerate().skip(1) {
            let q = noise.convolution_variance(&sp, t);
            for k in 0..4 {
                let mean: f64 = ens.states_at(i).map(|s| s[k]).sum::<f64>() / n;
                let var: f64 = ens.states_at(i).map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let se = q[k] * (2.0 / (n - 1.0)).sqrt();
                assert!(
                    (var - q[k]).abs() <= 3.5 * se,
                    "mode {k} t {t}: var {var} vs q {}",
                    q[k]
                );
            }
        }
    }

    /// Noise off (c tiny), cubic drift from a projected constant: the L²
    /// norm decays monotonically, tracking a fine-step deterministic
    /// reference integration.
    #[test]
    fn deterministic_cubic_decay() {
        let sp = GalerkinSpace::build(4, 16).unwrap();
        let noise = NoiseSpec::new(vec![1e-30; 4], 1e-31).unwrap();
        let drift = DriftSpec::cubic(0.0, 0.0, 0.5).unwrap();
        let mut c = cfg(100, 1);
        c.dt = 1.0 / 256.0;
        c.checkpoints = SimConfig::uniform_checkpoints(0.0, 0.5, 8);
        let x0 = sp.project_constant(1.0);
        let rec = simulate_path(&sp, &noise, &drift, &c, &x0, 0).unwrap();
        let norms: Vec<f64> = rec
            .states
            .iter()
            .map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0] + 1e-12), "{norms:?}");

        // fine-step reference: same splitting at dt/64 with zero noise
        let mut fine = c.clone();
        fine.dt = c.dt / 64.0;
        let ref_rec = simulate_path(&sp, &noise, &drift, &fine, &x0, 0).unwrap();
        let end = rec.states.last().unwrap();
        let end_ref = ref_rec.states.last().unwrap();
        for (a, b) in end.iter().zip(end_ref) {
            assert!((a - b).abs() < 2e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn exploded_paths_are_flagged_not_fatal() {
        let sp = GalerkinSpace::build(2, 4).unwrap();
        let noise = NoiseSpec::identity(2, 1.0).unwrap();
        // taming keeps increments bounded, so force the explosion through an
        // overflowing function value instead.
        let drift = DriftSpec::new(
            overflow_fn(),
            PointwiseFn::Zero,
            3,
            TimeProfile::Constant(1.0),
            TimeProfile::Constant(0.0),
            TimeProfile::Constant(0.0),
            0.0,
            0.5,
        )
        .unwrap();
        let c = cfg(100, 3);
        let rec = simulate_path(&sp, &noise, &drift, &c, &[1.0, 0.0], 0).unwrap();
        assert!(rec.exploded.is_some());
        let ens = simulate_ensemble(&sp, &noise, &drift, &c, &InitialLaw::Dirac(vec![1.0, 0.0])).unwrap();
        assert!(!ens.is_valid());
        assert_eq!(ens.members.len() + ens.exploded.len(), 100);
    }

    fn overflow_fn() -> PointwiseFn {
        PointwiseFn::Custom(std::sync::Arc::new(|_, _, z: f64| {
            (z.abs() + 1.0) * f64::MAX
        }))
    }

    /// With the convolution recorded on the same noise increments,
    /// X(t) - W_A(t,s) reproduces the deterministic decay e^{(t-s)A} x0 for
    /// a zero-drift run.
    #[test]
    fn convolution_states_track_the_noise_part() {
        let (sp, noise) = small_setup();
        let mut c = cfg(120, 8);
        c.record_convolution = true;
        c.scheme = Scheme::ExponentialEulerSplitting;
        let x0 = vec![0.7, -0.4, 0.2, 0.1];
        let ens = simulate_ensemble(&sp, &noise, &DriftSpec::zero(0.5), &c, &InitialLaw::Dirac(x0.clone())).unwrap();
        for p in &ens.members {
            let conv = p.convolution_states.as_ref().unwrap();
            for (i, &t) in c.checkpoints.iter().enumerate() {
                for k in 0..4 {
                    let expect = (sp.eigenvalues()[k] * t).exp() * x0[k];
                    let got = p.states[i][k] - conv[i][k];
                    assert!((got - expect).abs() < 1e-12, "t={t} k={k}: {got} vs {expect}");
                }
            }
        }
    }

    /// Single mode, c = 1, δ = 0: sup variance ≈ 1/(2π²) with bound
    /// c_δ = Tr[(-A)^0] = N = 1 on the truncation.
    #[test]
    fn convolution_single_mode() {
        let sp = GalerkinSpace::build(1, 4).unwrap();
        let noise = NoiseSpec::identity(1, 1.0).unwrap();
        let mut c = cfg(20_000, 21);
        c.t_end = 2.0;
        c.dt = 1.0 / 32.0;
        c.checkpoints = SimConfig::uniform_checkpoints(0.0, 2.0, 8);
        let rep = convolution_sup_moment(&sp, &noise, 0.0, &c).unwrap();
        assert!(rep.trace_truncated);
        assert_relative_eq!(rep.c_delta, 1.0, max_relative = 1e-12);
        let stat = 1.0 / (2.0 * PI * PI);
        assert!((rep.estimate - stat).abs() < 4.0 * rep.std_error_at_sup + 1e-3);
        assert!(rep.pass);
    }

    /// Covariance scaling: c ×4 scales both the estimate and the bound ×4.
    #[test]
    fn convolution_scales_linearly() {
        let sp = GalerkinSpace::build(2, 4).unwrap();
        let c = cfg(5_000, 33);
        let r1 = convolution_sup_moment(&sp, &NoiseSpec::identity(2, 1.0).unwrap(), 0.3, &c).unwrap();
        let r4 = convolution_sup_moment(&sp, &NoiseSpec::identity(2, 4.0).unwrap(), 0.3, &c).unwrap();
        assert_relative_eq!(r4.c_delta, 4.0 * r1.c_delta, max_relative = 1e-12);
        assert_relative_eq!(r4.estimate, 4.0 * r1.estimate, max_relative = 1e-9);
        assert_eq!(r1.pass, r4.pass);
    }

    use crate::drift::{PointwiseFn, TimeProfile};
}
