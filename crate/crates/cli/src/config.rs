//! Experiment configuration: a TOML schema with strict key checking, whose
//! resolved form (all defaults materialized) is persisted next to every run
//! and round-trips through serialization unchanged.
//!
//! All times (s, t_end, dt, checkpoints, probe samples) share one unit: the
//! reciprocal of the eigenvalue unit, i.e. the unit in which λ₁ = −π².

use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use fplab_core::drift::{DriftSpec, PointwiseFn, SamplingPlan, TimeProfile};
use fplab_core::engine::{InitialLaw, Scheme, SimConfig};
use fplab_core::measure::TestDirectionSet;
use fplab_core::spectral::{GalerkinSpace, NoiseSpec};
use fplab_core::verify::{PhiProfile, Quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Validate,
    Convolution,
    Simulate,
    FpResidual,
    Ck,
    AlphaSweep,
    MomentBound,
}

impl RunKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunKind::Validate => "validate",
            RunKind::Convolution => "convolution",
            RunKind::Simulate => "simulate",
            RunKind::FpResidual => "fp_residual",
            RunKind::Ck => "ck",
            RunKind::AlphaSweep => "alpha_sweep",
            RunKind::MomentBound => "moment_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub n_modes: usize,
    pub grid_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Identity,
    Fractional,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub c_diag: Option<Vec<f64>>,
    #[serde(default)]
    pub c_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftName {
    Zero,
    Linear,
    Cubic,
    CubicTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HName {
    Zero,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HConfig {
    pub name: HName,
    #[serde(default)]
    pub b: Option<f64>,
}

impl Default for HConfig {
    fn default() -> Self {
        Self { name: HName::Zero, b: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub name: DriftName,
    /// cubic: f(z) = -z³ + a·z
    #[serde(default)]
    pub a: Option<f64>,
    /// linear: f(z) = b·z
    #[serde(default)]
    pub b: Option<f64>,
    /// cubic_time: f(t,z) = -c_scale·(1+t)·z³
    #[serde(default)]
    pub c_scale: Option<f64>,
    pub m: u32,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// descending α list for alpha_sweep / moment_bound runs
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    #[serde(default)]
    pub h: HConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRule {
    pub kind: CheckpointKind,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Uniform,
    Explicit,
}

impl Default for CheckpointRule {
    fn default() -> Self {
        Self { kind: CheckpointKind::Uniform, n: Some(16), times: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub s: f64,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub checkpoint_rule: CheckpointRule,
    pub n_paths: u64,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub record_convolution: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLawKind {
    Zero,
    Dirac,
    Constant,
    Gaussian,
    SampleFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub law: InitialLawKind,
    #[serde(default)]
    pub modes: Option<Vec<f64>>,
    /// constant-field value projected onto the truncation
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub var_diag: Option<Vec<f64>>,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub checkpoint_index: Option<usize>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            law: InitialLawKind::Zero,
            modes: None,
            value: None,
            mean: None,
            var_diag: None,
            path: None,
            checkpoint_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub phi_profiles: Vec<String>,
    /// test-function directions: e_1..e_{tf_n_modes} plus their sum
    pub tf_n_modes: usize,
    pub tf_include_sum: bool,
    /// comparison direction set: first dir_n_modes eigenmodes at the given
    /// amplitudes plus dir_n_rand low-discrepancy combinations
    pub dir_n_modes: usize,
    pub dir_amplitudes: Vec<f64>,
    pub dir_n_rand: usize,
    pub dir_h_max: f64,
    pub sigma_level: f64,
    pub exact_tol: f64,
    pub quadrature: QuadratureName,
    /// rerun at dt/2 to measure the splitting-bias allowance
    pub dt_check: bool,
    pub min_pass_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureName {
    Trapezoid,
    Midpoint,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            phi_profiles: vec!["poly1".into(), "poly2".into(), "bump".into()],
            tf_n_modes: 2,
            tf_include_sum: true,
            dir_n_modes: 4,
            dir_amplitudes: vec![1.0, 2.0],
            dir_n_rand: 16,
            dir_h_max: 4.0,
            sigma_level: 3.0,
            exact_tol: 1e-6,
            quadrature: QuadratureName::Trapezoid,
            dt_check: true,
            min_pass_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub n_z: usize,
    pub n_t: usize,
    pub n_xi: usize,
    pub z_range: f64,
    pub n_states: usize,
    pub state_amp: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let d = SamplingPlan::default();
        Self {
            n_z: d.n_z,
            n_t: d.n_t,
            n_xi: d.n_xi,
            z_range: d.z_range,
            n_states: d.n_states,
            state_amp: d.state_amp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    pub delta: f64,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_t_samples")]
    pub t_samples: Vec<f64>,
    #[serde(default)]
    pub probe: ProbeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkSection {
    pub r: f64,
    pub s_mid: f64,
    pub t: f64,
    #[serde(default = "one")]
    pub min_pass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSection {
    /// constant-field values projected onto the truncation as run starts
    pub x_constants: Vec<f64>,
    pub alphas: Vec<f64>,
    #[serde(default = "default_ratio_max")]
    pub ratio_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub write_ensemble: bool,
}

fn one() -> f64 {
    1.0
}
fn default_tail_tol() -> f64 {
    1e-6
}
fn default_ratio_max() -> f64 {
    3.0
}
fn default_t_samples() -> Vec<f64> {
    vec![0.01, 0.1, 0.5, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_kind: RunKind,
    pub space: SpaceConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub drift: Option<DriftConfig>,
    pub sim: SimSection,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub validate: Option<ValidateSection>,
    #[serde(default)]
    pub ck: Option<CkSection>,
    #[serde(default)]
    pub moment: Option<MomentSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).context("config does not match the schema")?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Structural checks beyond what serde enforces, and materialization of
    /// the defaults for the sections this run kind needs.
    pub fn resolve(mut self, seed_override: Option<u64>, workers_override: Option<usize>) -> anyhow::Result<Self> {
        if let Some(seed) = seed_override {
            self.sim.seed = seed;
        }
        if let Some(w) = workers_override {
            self.sim.workers = w;
        }
        match self.run_kind {
            RunKind::Validate | RunKind::Convolution => {
                if self.validate.is_none() {
                    bail!("run_kind {:?} requires a [validate] section", self.run_kind);
                }
            }
            RunKind::Ck => {
                if self.ck.is_none() {
                    bail!("run_kind ck requires a [ck] section");
                }
            }
            RunKind::MomentBound => {
                if self.moment.is_none() {
                    bail!("run_kind moment_bound requires a [moment] section");
                }
            }
            _ => {}
        }
        if self.initial.is_none() {
            self.initial = Some(InitialConfig::default());
        }
        if matches!(
            self.run_kind,
            RunKind::Simulate | RunKind::FpResidual | RunKind::Ck | RunKind::AlphaSweep | RunKind::MomentBound
        ) && self.drift.is_none()
        {
            bail!("run_kind {:?} requires a [drift] section", self.run_kind);
        }
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> anyhow::Result<()> {
        for &v in [self.sim.s, self.sim.t_end, self.sim.dt].iter() {
            if !v.is_finite() {
                bail!("sim times must be finite");
            }
        }
        if !(self.verify.min_pass_fraction >= 0.0 && self.verify.min_pass_fraction <= 1.0) {
            bail!("verify.min_pass_fraction must lie in [0,1]");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing resolved config")
    }

    pub fn build_space(&self) -> anyhow::Result<GalerkinSpace> {
        GalerkinSpace::build(self.space.n_modes, self.space.grid_size)
            .context("building the Galerkin space")
    }

    pub fn build_noise(&self) -> anyhow::Result<NoiseSpec> {
        let n = self.space.n_modes;
        let c = &self.noise;
        let noise = match c.kind {
            NoiseKind::Identity => NoiseSpec::identity(n, c.scale)?,
            NoiseKind::Fractional => {
                let gamma = c.gamma.context("noise.kind = fractional needs gamma")?;
                NoiseSpec::fractional(n, gamma, c.scale)?
            }
            NoiseKind::Explicit => {
                let diag = c.c_diag.clone().context("noise.kind = explicit needs c_diag")?;
                let scaled: Vec<f64> = diag.iter().map(|v| v * c.scale).collect();
                let c_min = c
                    .c_min
                    .unwrap_or_else(|| scaled.iter().cloned().fold(f64::INFINITY, f64::min));
                NoiseSpec::new(scaled, c_min)?
            }
        };
        Ok(noise)
    }

    pub fn build_drift(&self, alpha_override: Option<f64>) -> anyhow::Result<DriftSpec> {
        let d = self.drift.as_ref().context("missing [drift] section")?;
        let horizon = self.sim.t_end.max(self.sim.s + self.sim.dt);
        let alpha = alpha_override.or(d.alpha).unwrap_or(0.0);
        let f = match d.name {
            DriftName::Zero => PointwiseFn::Zero,
            DriftName::Linear => PointwiseFn::Linear { b: d.b.context("linear drift needs b")? },
            DriftName::Cubic => PointwiseFn::Cubic { a: d.a.context("cubic drift needs a")? },
            DriftName::CubicTime => {
                let scale = d.c_scale.context("cubic_time drift needs c_scale")?;
                PointwiseFn::CubicTime {
                    scale: TimeProfile::Custom(Arc::new(move |t| scale * (1.0 + t))),
                }
            }
        };
        let h = match d.h.name {
            HName::Zero => PointwiseFn::Zero,
            HName::Linear => PointwiseFn::Linear { b: d.h.b.context("linear h needs h.b")? },
        };
        Ok(DriftSpec::new(
            f,
            h,
            d.m,
            TimeProfile::Constant(d.c1),
            TimeProfile::Constant(d.c2),
            TimeProfile::Constant(d.c3),
            alpha,
            horizon,
        )?)
    }

    pub fn checkpoints(&self) -> anyhow::Result<Vec<f64>> {
        let rule = &self.sim.checkpoint_rule;
        match rule.kind {
            CheckpointKind::Uniform => {
                let n = rule.n.context("uniform checkpoint rule needs n")?;
                if n == 0 {
                    bail!("checkpoint_rule.n must be positive");
                }
                Ok(SimConfig::uniform_checkpoints(self.sim.s, self.sim.t_end, n))
            }
            CheckpointKind::Explicit => {
                rule.times.clone().context("explicit checkpoint rule needs times")
            }
        }
    }

    pub fn build_sim(&self) -> anyhow::Result<SimConfig> {
        let cfg = SimConfig {
            s: self.sim.s,
            t_end: self.sim.t_end,
            dt: self.sim.dt,
            checkpoints: self.checkpoints()?,
            n_paths: self.sim.n_paths,
            seed: self.sim.seed,
            scheme: self.sim.scheme,
            record_convolution: self.sim.record_convolution,
        };
        cfg.plan().context("sim section invalid")?;
        Ok(cfg)
    }

    pub fn build_initial(&self, space: &GalerkinSpace) -> anyhow::Result<InitialLaw> {
        let n = space.n_modes();
        let init = self.initial.clone().unwrap_or_default();
        Ok(match init.law {
            InitialLawKind::Zero => InitialLaw::Dirac(vec![0.0; n]),
            InitialLawKind::Dirac => {
                let modes = init.modes.context("dirac law needs modes")?;
                if modes.len() != n {
                    bail!("initial.modes must have n_modes entries");
                }
                InitialLaw::Dirac(modes)
            }
            InitialLawKind::Constant => {
                let v = init.value.context("constant law needs value")?;
                InitialLaw::Dirac(space.project_constant(v))
            }
            InitialLawKind::Gaussian => {
                let mean = init.mean.context("gaussian law needs mean")?;
                let var = init.var_diag.context("gaussian law needs var_diag")?;
                if mean.len() != n || var.len() != n {
                    bail!("gaussian law dimensions must match n_modes");
                }
                InitialLaw::GaussianDiag { mean, var_diag: var }
            }
            InitialLawKind::SampleFile => {
                let path = init.path.context("sample_file law needs path")?;
                let cp = init.checkpoint_index.context("sample_file law needs checkpoint_index")?;
                let bin = std::path::PathBuf::from(&path);
                let sidecar = bin.with_extension("json");
                let ens = fplab_core::storage::read_ensemble(&bin, &sidecar)?;
                if cp >= ens.config.checkpoints.len() {
                    bail!("checkpoint_index {cp} out of range");
                }
                let states: Vec<Vec<f64>> =
                    ens.states_at(cp).map(|s| s.to_vec()).collect();
                if states.iter().any(|s| s.len() != n) {
                    bail!("sample file dimension mismatch");
                }
                InitialLaw::Explicit(states)
            }
        })
    }

    pub fn build_directions(&self, space: &GalerkinSpace) -> TestDirectionSet {
        TestDirectionSet::standard(
            space,
            self.verify.dir_n_modes,
            &self.verify.dir_amplitudes,
            self.verify.dir_n_rand,
            self.verify.dir_h_max,
        )
    }

    pub fn tf_directions(&self, space: &GalerkinSpace) -> Vec<(String, Vec<f64>)> {
        let n = space.n_modes();
        let mut dirs = Vec::new();
        for k in 0..self.verify.tf_n_modes.min(n) {
            let mut h = vec![0.0; n];
            h[k] = 1.0;
            dirs.push((format!("e{}", k + 1), h));
        }
        if self.verify.tf_include_sum && n >= 2 {
            let mut h = vec![0.0; n];
            h[0] = 1.0;
            h[1] = 1.0;
            dirs.push(("e1+e2".into(), h));
        }
        dirs
    }

    pub fn phi_profiles(&self) -> anyhow::Result<Vec<PhiProfile>> {
        self.verify
            .phi_profiles
            .iter()
            .map(|name| match name.as_str() {
                "poly1" => Ok(PhiProfile::Poly { p: 1 }),
                "poly2" => Ok(PhiProfile::Poly { p: 2 }),
                "poly3" => Ok(PhiProfile::Poly { p: 3 }),
                "bump" => Ok(PhiProfile::RaisedCosine),
                other => Err(anyhow::anyhow!("unknown phi profile {other}")),
            })
            .collect()
    }

    pub fn quadrature(&self) -> Quadrature {
        match self.verify.quadrature {
            QuadratureName::Trapezoid => Quadrature::Trapezoid,
            QuadratureName::Midpoint => Quadrature::Midpoint,
        }
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        let p = self
            .validate
            .as_ref()
            .map(|v| v.probe.clone())
            .unwrap_or_default();
        SamplingPlan {
            n_z: p.n_z,
            n_t: p.n_t,
            n_xi: p.n_xi,
            z_range: p.z_range,
            n_states: p.n_states,
            state_amp: p.state_amp,
            tolerance: 1e-9,
        }
    }
}
