//! Nemytskii drift F(t,x)(ξ) = f(ξ,t,x(ξ)) + h(ξ,t,x(ξ)), its pointwise
//! regularization F_α = F/(1+α|F|), the Lyapunov weight
//! V(t,x) = 2(c₁(t)+c₃(t))(1 + |x|^m_{L^{2m}}), and deterministic samplers
//! that probe the structural conditions on (f, h) over a stated box.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use crate::sampling::halton_point;
use crate::spectral::GalerkinSpace;

/// Nonnegative scalar coefficient profile on [0,T].
#[derive(Clone)]
pub enum TimeProfile {
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant(c) => *c,
            TimeProfile::Custom(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeProfile::Constant(_))
    }
}

impl fmt::Debug for TimeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeProfile::Constant(c) => write!(f, "Constant({c})"),
            TimeProfile::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// A pointwise reaction term (ξ, t, z) ↦ real.
#[derive(Clone)]
pub enum PointwiseFn {
    Zero,
    /// f(z) = -z³ + a·z
    Cubic { a: f64 },
    /// f(t,z) = -c(t)·z³
    CubicTime { scale: TimeProfile },
    /// f(z) = b·z
    Linear { b: f64 },
    Custom(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
}

impl PointwiseFn {
    #[inline]
    pub fn eval(&self, xi: f64, t: f64, z: f64) -> f64 {
        match self {
            PointwiseFn::Zero => 0.0,
            PointwiseFn::Cubic { a } => -z * z * z + a * z,
            PointwiseFn::CubicTime { scale } => -scale.eval(t) * z * z * z,
            PointwiseFn::Linear { b } => b * z,
            PointwiseFn::Custom(f) => f(xi, t, z),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PointwiseFn::Zero)
    }
}

impl fmt::Debug for PointwiseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointwiseFn::Zero => write!(f, "Zero"),
            PointwiseFn::Cubic { a } => write!(f, "Cubic{{a={a}}}"),
            PointwiseFn::CubicTime { .. } => write!(f, "CubicTime"),
            PointwiseFn::Linear { b } => write!(f, "Linear{{b={b}}}"),
            PointwiseFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// The drift specification: reaction terms, growth/dissipativity constants,
/// polynomial degree m (odd), regularization α, and the horizon T.
/// Immutable; evaluation is reentrant given a per-worker scratch.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub f: PointwiseFn,
    pub h: PointwiseFn,
    pub m: u32,
    pub c1: TimeProfile,
    pub c2: TimeProfile,
    pub c3: TimeProfile,
    /// α ∈ [0,1]; 0 means the exact (unregularized) drift.
    pub alpha: f64,
    pub horizon: f64,
}

impl DriftSpec {
    pub fn new(
        f: PointwiseFn,
        h: PointwiseFn,
        m: u32,
        c1: TimeProfile,
        c2: TimeProfile,
        c3: TimeProfile,
        alpha: f64,
        horizon: f64,
    ) -> Result<Self> {
        if m == 0 || m % 2 == 0 {
            return Err(Error::InvalidInput(format!("m = {m} must be odd")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha = {alpha} outside [0,1]")));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        Ok(Self { f, h, m, c1, c2, c3, alpha, horizon })
    }

    /// Zero drift; V degenerates to 2(c1+c3) which callers usually keep >= 1/2.
    pub fn zero(horizon: f64) -> Self {
        Self::new(
            PointwiseFn::Zero,
            PointwiseFn::Zero,
            3,
            TimeProfile::Constant(0.5),
            TimeProfile::Constant(0.0),
            TimeProfile::Constant(0.0),
            0.0,
            horizon,
        )
        .expect("zero drift spec")
    }

    /// f(z) = -z³ + a z, h = 0, m = 3, with the tight constant choices
    /// c1 = max(1,|a|), c2 = max(0,a), c3 = 0.
    pub fn cubic(a: f64, alpha: f64, horizon: f64) -> Result<Self> {
        Self::new(
            PointwiseFn::Cubic { a },
            PointwiseFn::Zero,
            3,
            TimeProfile::Constant(a.abs().max(1.0)),
            TimeProfile::Constant(a.max(0.0)),
            TimeProfile::Constant(0.0),
            alpha,
            horizon,
        )
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut s = self.clone();
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha = {alpha} outside [0,1]")));
        }
        s.alpha = alpha;
        Ok(s)
    }

    pub fn descriptor(&self) -> String {
        format!(
            "f={:?}, h={:?}, m={}, alpha={}",
            self.f, self.h, self.m, self.alpha
        )
    }
}

/// w / (1 + α|w|). Monotone, 1-Lipschitz, |result| <= min(|w|, 1/α) for α>0.
#[inline]
pub fn regularize_pointwise(w: f64, alpha: f64) -> f64 {
    debug_assert!(alpha >= 0.0);
    w / (1.0 + alpha * w.abs())
}

/// Reusable buffers for one drift evaluation; one per worker.
pub struct DriftScratch {
    grid: Vec<f64>,
}

impl DriftScratch {
    pub fn for_space(space: &GalerkinSpace) -> Self {
        Self { grid: vec![0.0; space.grid_size()] }
    }
}

/// Evaluate the (regularized, when `alpha` > 0) drift field in mode
/// coordinates: synthesize to the grid, apply f+h pointwise, regularize
/// pointwise, analyze back. Errors name the first non-finite grid value.
pub fn evaluate_drift_with(
    spec: &DriftSpec,
    space: &GalerkinSpace,
    t: f64,
    x_modes: &[f64],
    alpha: f64,
    scratch: &mut DriftScratch,
    out_modes: &mut [f64],
) -> Result<()> {
    space.synthesize_into(x_modes, &mut scratch.grid);
    for (q, g) in scratch.grid.iter_mut().enumerate() {
        let xi = space.grid_points()[q];
        let z = *g;
        let mut w = spec.f.eval(xi, t, z) + spec.h.eval(xi, t, z);
        if alpha > 0.0 {
            w = regularize_pointwise(w, alpha);
        }
        if !w.is_finite() {
            return Err(Error::NonFiniteField { t, xi, value: w });
        }
        *g = w;
    }
    space.analyze_into(&scratch.grid, out_modes);
    Ok(())
}

/// Spec-level entry point: uses the spec's own α.
pub fn evaluate_drift(
    spec: &DriftSpec,
    space: &GalerkinSpace,
    t: f64,
    x_modes: &[f64],
) -> Result<Vec<f64>> {
    let mut scratch = DriftScratch::for_space(space);
    let mut out = vec![0.0; space.n_modes()];
    evaluate_drift_with(spec, space, t, x_modes, spec.alpha, &mut scratch, &mut out)?;
    Ok(out)
}

/// |x|^{2m}_{L^{2m}} by collocation quadrature of |x(ξ)|^{2m}.
pub fn l2m_norm_pow(space: &GalerkinSpace, x_modes: &[f64], m: u32) -> f64 {
    let grid = space.synthesize(x_modes);
    let w = space.quad_weight();
    grid.iter().map(|u| u.abs().powi(2 * m as i32)).sum::<f64>() * w
}

/// V(t,x) = 2(c₁(t)+c₃(t))(1 + |x|^m_{L^{2m}}). Every Galerkin state lies in
/// L^{2m}, so this is always finite on the truncation. Note V can drop below
/// 1 when the coefficients degenerate; that is reported, not patched.
pub fn lyapunov_v(spec: &DriftSpec, space: &GalerkinSpace, t: f64, x_modes: &[f64]) -> f64 {
    let pow_2m = l2m_norm_pow(space, x_modes, spec.m);
    // |x|^m_{L^{2m}} = (|x|^{2m}_{L^{2m}})^{1/2}
    2.0 * (spec.c1.eval(t) + spec.c3.eval(t)) * (1.0 + pow_2m.sqrt())
}

/// Sampling plan for the condition probes. `z_range` is the symmetric box
/// half-width for the scalar argument; states are sampled in the mode cube
/// [-state_amp, state_amp]^N. All sampling is low-discrepancy, so reports
/// are reproducible and always relative to the stated box.
#[derive(Debug, Clone, Serialize)]
pub struct SamplingPlan {
    pub n_z: usize,
    pub n_t: usize,
    pub n_xi: usize,
    pub z_range: f64,
    pub n_states: usize,
    pub state_amp: f64,
    pub tolerance: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            n_z: 64,
            n_t: 17,
            n_xi: 9,
            z_range: 4.0,
            n_states: 48,
            state_amp: 2.0,
            tolerance: 1e-9,
        }
    }
}

/// Worst-case sampled ratios/defects for the structural conditions, plus the
/// coefficient integrability quadratures. `passed_*` is always relative to
/// the recorded box.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    /// max |f| / (c1(t)(1+|z|^m)); infinite when c1 vanishes against f != 0.
    pub f1_worst_ratio: f64,
    /// max (f(z2)-f(z1))(z2-z1) - c2(t)|z2-z1|²  (<= 0 when (f2) holds).
    pub f2_worst: f64,
    pub h1_worst_ratio: f64,
    /// max |x|² - V(t,x) over sampled states (<= 0 when the V of the run
    /// qualifies for uniqueness-grade claims).
    pub eq34_worst: f64,
    /// max ⟨F(t,x)-F(t,y), x-y⟩ / |x-y|² over sampled Galerkin pairs
    /// (single-valued quasi-dissipativity probe, unregularized drift).
    pub dissipativity_k_estimate: f64,
    /// max |⟨h, F - F_α⟩| / (α |h| |F|_{L²}) over sampled states, directions
    /// and an α grid; the regularization-gap check with c(h) = |h|.
    /// Violations (> 1) are recorded, not treated as errors.
    pub reg_gap_worst_ratio: f64,
    /// max |⟨h, F_α(t',x') - F_α(t,x)⟩| / (|t'-t| + |x'-x|) over small
    /// sampled perturbations: a continuity modulus, reported as a warning
    /// signal only.
    pub f_alpha_continuity_worst: f64,
    pub c1_l2: f64,
    pub c2_l1: f64,
    pub c3_l2: f64,
    pub coefficients_integrable: bool,
    pub sample_count: usize,
    pub z_range: f64,
    pub t_range: (f64, f64),
    pub passed_f1: bool,
    pub passed_f2: bool,
    pub passed_h1: bool,
    pub passed_eq34: bool,
    pub tolerance: f64,
}

/// Probe (f1), (f2), (h1), the |x|² <= V surrogate, quasi-dissipativity and
/// the regularization-gap bound over deterministic low-discrepancy samples.
/// Failures are report entries, never errors.
pub fn probe_conditions(
    spec: &DriftSpec,
    space: &GalerkinSpace,
    plan: &SamplingPlan,
) -> ConditionReport {
    let horizon = spec.horizon;
    let tol = plan.tolerance;
    let mut f1_worst: f64 = 0.0;
    let mut h1_worst: f64 = 0.0;
    let mut f2_worst: f64 = f64::NEG_INFINITY;
    let mut count = 0usize;

    // pointwise conditions over (ξ, t, z) and pairs (ξ, t, z1, z2)
    for i in 1..=(plan.n_xi * plan.n_t * plan.n_z) {
        let p = halton_point(i as u64, 4);
        let xi = p[0].clamp(1e-6, 1.0 - 1e-6);
        let t = p[1] * horizon;
        let z1 = (2.0 * p[2] - 1.0) * plan.z_range;
        let z2 = (2.0 * p[3] - 1.0) * plan.z_range;
        let c1 = spec.c1.eval(t);
        let c2 = spec.c2.eval(t);
        let c3 = spec.c3.eval(t);

        let fv = spec.f.eval(xi, t, z1);
        let denom_f1 = c1 * (1.0 + z1.abs().powi(spec.m as i32));
        f1_worst = f1_worst.max(ratio_or_inf(fv.abs(), denom_f1));

        let hv = spec.h.eval(xi, t, z1);
        h1_worst = h1_worst.max(ratio_or_inf(hv.abs(), c3 * (1.0 + z1.abs())));

        if (z2 - z1).abs() > 1e-12 {
            let df = spec.f.eval(xi, t, z2) - fv;
            f2_worst = f2_worst.max(df * (z2 - z1) - c2 * (z2 - z1) * (z2 - z1));
        }
        count += 1;
    }

    // state-level probes
    let n = space.n_modes();
    let mut scratch = DriftScratch::for_space(space);
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut eq34_worst = f64::NEG_INFINITY;
    let mut k_est = f64::NEG_INFINITY;
    let mut reg_gap: f64 = 0.0;
    let mut cont_worst: f64 = 0.0;
    let alphas_probe = [1.0, 0.5, 0.25, 0.125];
    let dims = (2 * n + 1).min(16);
    for i in 1..=plan.n_states {
        let p = halton_point(i as u64, dims);
        let t = p[0] * horizon;
        let x: Vec<f64> = (0..n)
            .map(|k| (2.0 * p[1 + (k % (dims - 1))] - 1.0) * plan.state_amp / (k + 1) as f64)
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|k| {
                (2.0 * p[1 + ((k + n) % (dims - 1))] - 1.0) * plan.state_amp / (k + 1) as f64
            })
            .collect();

        let x_l2_sq: f64 = x.iter().map(|v| v * v).sum();
        eq34_worst = eq34_worst.max(x_l2_sq - lyapunov_v(spec, space, t, &x));

        // unregularized drift for the dissipativity probe
        let ok_x = evaluate_drift_with(spec, space, t, &x, 0.0, &mut scratch, &mut fx).is_ok();
        let ok_y = evaluate_drift_with(spec, space, t, &y, 0.0, &mut scratch, &mut fy).is_ok();
        if ok_x && ok_y {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..n {
                num += (fx[k] - fy[k]) * (x[k] - y[k]);
                den += (x[k] - y[k]) * (x[k] - y[k]);
            }
            if den > 1e-12 {
                k_est = k_est.max(num / den);
            }
        }

        if ok_x {
            let f_norm = fx.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut fax = vec![0.0; n];
            for &alpha in &alphas_probe {
                if evaluate_drift_with(spec, space, t, &x, alpha, &mut scratch, &mut fax)
                    .is_err()
                {
                    continue;
                }
                // directions: first two eigenmodes
                for k in 0..n.min(2) {
                    let gap = (fx[k] - fax[k]).abs(); // = |⟨e_k, F - F_α⟩|
                    reg_gap = reg_gap.max(ratio_or_inf(gap, alpha * f_norm));
                }
                // continuity modulus of ⟨e_1, F_α⟩ under a small perturbation
                let eps = 1e-4;
                let tp = (t + eps).min(horizon);
                let mut xp = x.clone();
                xp[0] += eps;
                let mut fap = vec![0.0; n];
                if evaluate_drift_with(spec, space, tp, &xp, alpha, &mut scratch, &mut fap)
                    .is_ok()
                {
                    let d = (fap[0] - fax[0]).abs() / ((tp - t) + eps);
                    cont_worst = cont_worst.max(d);
                }
            }
        }
        count += 1;
    }

    // coefficient integrability by quadrature over [0,T]
    let c1_l2 = adaptive_simpson(|t| spec.c1.eval(t).powi(2), 0.0, horizon, 1e-10).sqrt();
    let c2_l1 = adaptive_simpson(|t| spec.c2.eval(t).abs(), 0.0, horizon, 1e-10);
    let c3_l2 = adaptive_simpson(|t| spec.c3.eval(t).powi(2), 0.0, horizon, 1e-10).sqrt();
    let integrable = c1_l2.is_finite() && c2_l1.is_finite() && c3_l2.is_finite();

    ConditionReport {
        f1_worst_ratio: f1_worst,
        f2_worst: if f2_worst.is_finite() { f2_worst } else { 0.0 },
        h1_worst_ratio: h1_worst,
        eq34_worst: if eq34_worst.is_finite() { eq34_worst } else { 0.0 },
        dissipativity_k_estimate: if k_est.is_finite() { k_est } else { 0.0 },
        reg_gap_worst_ratio: reg_gap,
        f_alpha_continuity_worst: cont_worst,
        c1_l2,
        c2_l1,
        c3_l2,
        coefficients_integrable: integrable,
        sample_count: count,
        z_range: plan.z_range,
        t_range: (0.0, horizon),
        passed_f1: f1_worst <= 1.0 + tol,
        passed_f2: f2_worst <= tol,
        passed_h1: h1_worst <= 1.0 + tol,
        passed_eq34: eq34_worst <= tol,
        tolerance: tol,
    }
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Whether a run qualifies for uniqueness-grade claims: h ≡ 0, constant c₂,
/// 2(c₁+c₃) >= 1 on [0,T] (so |x|² <= V holds), and the sampled |x|² <= V
/// check passed. Anything else is existence-grade only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunGrade {
    Uniqueness,
    Existence,
}

pub fn classify_grade(spec: &DriftSpec, report: &ConditionReport) -> RunGrade {
    let h_zero = spec.h.is_zero();
    let c2_const = spec.c2.is_constant();
    let t_grid: Vec<f64> = (0..=32).map(|i| spec.horizon * i as f64 / 32.0).collect();
    let coeff_floor = t_grid
        .iter()
        .map(|&t| 2.0 * (spec.c1.eval(t) + spec.c3.eval(t)))
        .fold(f64::INFINITY, f64::min);
    if h_zero && c2_const && coeff_floor >= 1.0 && report.passed_eq34 {
        RunGrade::Uniqueness
    } else {
        RunGrade::Existence
    }
}
