//! Verifiers for the measure-level identities the checkpoint laws must
//! satisfy: the weak Fokker-Planck identity against cylindrical test
//! functions, the Chapman-Kolmogorov composition of transition kernels, and
//! the Cauchy-in-α convergence study of the regularized dynamics.
//!
//! Test functions are u(t,x) = φ(t)·e^{i⟨x, h(t)⟩} with φ ∈ C¹, φ(T) = 0 and
//! h piecewise-C¹ into the truncation. The generator image L₀u has the
//! closed form
//!
//!   [φ′ + iφ⟨x,h′⟩ − ½φ⟨Ch,h⟩ + iφ⟨Ah,x⟩ + iφ⟨F,h⟩] e^{i⟨x,h⟩},
//!
//! so the integral identity can be checked from ensemble data alone. The
//! estimator is paired — u and L₀u are evaluated on the same paths — which
//! cancels most of the statistical variance between the two sides.

use num_complex::Complex64;
use serde::Serialize;

use crate::drift::{evaluate_drift_with, DriftScratch, DriftSpec};
use crate::engine::{
    simulate_ensemble_in, Ensemble, InitialLaw, SimConfig,
};
use crate::error::{Error, Result};
use crate::measure::{
    char_functional, measure_distance, moment, FunctionalEstimate, Kahan, MomentKind,
    TestDirectionSet,
};
use crate::spectral::{GalerkinSpace, NoiseSpec};
use crate::streams::StreamDomain;

/// Scalar time profile φ with φ(T) = 0 and a continuous derivative.
#[derive(Debug, Clone, Serialize)]
pub enum PhiProfile {
    /// φ(t) = (T - t)^p, p >= 1
    Poly { p: u32 },
    /// φ(t) = (1 + cos(πt/T))/2: smooth, φ(0) = 1, φ(T) = 0
    RaisedCosine,
}

impl PhiProfile {
    pub fn eval(&self, t: f64, horizon: f64) -> f64 {
        match self {
            PhiProfile::Poly { p } => (horizon - t).powi(*p as i32),
            PhiProfile::RaisedCosine => 0.5 * (1.0 + (std::f64::consts::PI * t / horizon).cos()),
        }
    }

    pub fn deriv(&self, t: f64, horizon: f64) -> f64 {
        match self {
            PhiProfile::Poly { p } => {
                -(*p as f64) * (horizon - t).powi(*p as i32 - 1)
            }
            PhiProfile::RaisedCosine => {
                let w = std::f64::consts::PI / horizon;
                -0.5 * w * (w * t).sin()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            PhiProfile::Poly { p } => format!("poly{p}"),
            PhiProfile::RaisedCosine => "bump".into(),
        }
    }
}

/// Which one-sided derivative of h to use at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivSide {
    Left,
    Right,
}

/// Piecewise-C¹ direction path t ↦ h(t) valued in the truncation.
#[derive(Debug, Clone, Serialize)]
pub enum HPath {
    Constant(Vec<f64>),
    /// Affine interpolation between (times[i], values[i]); times must cover
    /// [0, T] and be strictly increasing.
    PiecewiseAffine { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl HPath {
    fn validate(&self, horizon: f64, n_modes: usize) -> Result<()> {
        match self {
            HPath::Constant(h) => {
                if h.len() != n_modes {
                    return Err(Error::InvalidInput("h dimension mismatch".into()));
                }
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("h must be finite".into()));
                }
            }
            HPath::PiecewiseAffine { times, values } => {
                if times.len() != values.len() || times.len() < 2 {
                    return Err(Error::InvalidInput("need >= 2 breakpoints".into()));
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidInput("breakpoint times must increase".into()));
                }
                if (times[0] - 0.0).abs() > 1e-12 || (times[times.len() - 1] - horizon).abs() > 1e-9
                {
                    return Err(Error::InvalidInput(
                        "breakpoints must cover [0, horizon]".into(),
                    ));
                }
                if values.iter().any(|v| v.len() != n_modes) {
                    return Err(Error::InvalidInput("h dimension mismatch".into()));
                }
            }
        }
        Ok(())
    }

    pub fn h_at(&self, t: f64) -> Vec<f64> {
        match self {
            HPath::Constant(h) => h.clone(),
            HPath::PiecewiseAffine { times, values } => {
                let i = segment_index(times, t);
                let (t0, t1) = (times[i], times[i + 1]);
                let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                values[i]
                    .iter()
                    .zip(&values[i + 1])
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        }
    }

    /// Derivative of h at t from the requested side; the flag reports
    /// whether t sits on an interior breakpoint (one-sided value).
    pub fn h_prime(&self, t: f64, side: DerivSide) -> (Vec<f64>, bool) {
        match self {
            HPath::Constant(h) => (vec![0.0; h.len()], false),
            HPath::PiecewiseAffine { times, values } => {
                let at_break = self.is_breakpoint(t);
                let i = match (at_break, side) {
                    (true, DerivSide::Left) => {
                        let j = segment_index(times, t);
                        j.saturating_sub(if (times[j] - t).abs() <= 1e-12 && j > 0 { 1 } else { 0 })
                    }
                    _ => segment_index(times, t),
                };
                let dt = times[i + 1] - times[i];
                let slope = values[i]
                    .iter()
                    .zip(&values[i + 1])
                    .map(|(a, b)| (b - a) / dt)
                    .collect();
                (slope, at_break)
            }
        }
    }

    pub fn is_breakpoint(&self, t: f64) -> bool {
        match self {
            HPath::Constant(_) => false,
            HPath::PiecewiseAffine { times, .. } => times
                .iter()
                .skip(1)
                .take(times.len().saturating_sub(2))
                .any(|&b| (b - t).abs() <= 1e-12),
        }
    }
}

fn segment_index(times: &[f64], t: f64) -> usize {
    let mut i = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(j) => j,
        Err(j) => j.saturating_sub(1),
    };
    if i + 1 >= times.len() {
        i = times.len() - 2;
    }
    i
}

/// A cylindrical test function u(t,x) = φ(t) e^{i⟨x, h(t)⟩}.
#[derive(Debug, Clone, Serialize)]
pub struct TestFunction {
    pub id: String,
    pub phi: PhiProfile,
    pub h: HPath,
    pub horizon: f64,
}

impl TestFunction {
    pub fn new(id: impl Into<String>, phi: PhiProfile, h: HPath, horizon: f64, n_modes: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        h.validate(horizon, n_modes)?;
        let tf = Self { id: id.into(), phi, h, horizon };
        // φ(T) = 0 to machine precision is structural for both profiles;
        // keep the check so future profiles cannot silently break it.
        if tf.phi.eval(horizon, horizon).abs() > 1e-14 {
            return Err(Error::InvalidInput("phi(T) must vanish".into()));
        }
        Ok(tf)
    }

    pub fn u(&self, t: f64, x_modes: &[f64]) -> Complex64 {
        let h = self.h.h_at(t);
        let theta: f64 = x_modes.iter().zip(&h).map(|(x, hk)| x * hk).sum();
        self.phi.eval(t, self.horizon) * Complex64::new(theta.cos(), theta.sin())
    }

    /// The standard catalog: each φ profile paired with each constant
    /// direction. Labels are "<phi>|<dir>".
    pub fn catalog(
        phis: &[PhiProfile],
        directions: &[(String, Vec<f64>)],
        horizon: f64,
        n_modes: usize,
    ) -> Result<Vec<TestFunction>> {
        let mut out = Vec::new();
        for phi in phis {
            for (label, h) in directions {
                out.push(TestFunction::new(
                    format!("{}|{}", phi.label(), label),
                    phi.clone(),
                    HPath::Constant(h.clone()),
                    horizon,
                    n_modes,
                )?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct L0Eval {
    pub value: Complex64,
    /// true when t sits on an interior h-breakpoint and a one-sided h′ was
    /// used; never silent.
    pub one_sided: bool,
}

/// Closed-form image of the Kolmogorov operator on a test function, with
/// the drift taken regularized (`use_alpha`) or exact.
pub fn apply_l0(
    tf: &TestFunction,
    drift: &DriftSpec,
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    t: f64,
    x_modes: &[f64],
    use_alpha: bool,
    side: DerivSide,
) -> Result<L0Eval> {
    let alpha = if use_alpha { drift.alpha } else { 0.0 };
    let mut scratch = DriftScratch::for_space(space);
    let mut field = vec![0.0; space.n_modes()];
    evaluate_drift_with(drift, space, t, x_modes, alpha, &mut scratch, &mut field)?;
    let coeffs = L0Coeffs::build(tf, space, noise, t, side);
    Ok(coeffs.eval(x_modes, &field))
}

/// Path-independent pieces of L₀u at a fixed (test function, time, side).
struct L0Coeffs {
    phi: f64,
    dphi: f64,
    h: Vec<f64>,
    hp: Vec<f64>,
    /// λ_k h_k, so ⟨Ah, x⟩ = ah · x
    ah: Vec<f64>,
    chh: f64,
    one_sided: bool,
}

impl L0Coeffs {
    fn build(
        tf: &TestFunction,
        space: &GalerkinSpace,
        noise: &NoiseSpec,
        t: f64,
        side: DerivSide,
    ) -> Self {
        let h = tf.h.h_at(t);
        let (hp, one_sided) = tf.h.h_prime(t, side);
        let ah: Vec<f64> = h.iter().zip(space.eigenvalues()).map(|(hk, l)| l * hk).collect();
        let chh: f64 = h
            .iter()
            .zip(noise.c_diag())
            .map(|(hk, ck)| ck * hk * hk)
            .sum();
        Self {
            phi: tf.phi.eval(t, tf.horizon),
            dphi: tf.phi.deriv(t, tf.horizon),
            h,
            hp,
            ah,
            chh,
            one_sided,
        }
    }

    #[inline]
    fn eval(&self, x: &[f64], field: &[f64]) -> L0Eval {
        let mut theta = 0.0;
        let mut xhp = 0.0;
        let mut ahx = 0.0;
        let mut fh = 0.0;
        for k in 0..x.len() {
            theta += x[k] * self.h[k];
            xhp += x[k] * self.hp[k];
            ahx += x[k] * self.ah[k];
            fh += field[k] * self.h[k];
        }
        let bracket = Complex64::new(
            self.dphi - 0.5 * self.phi * self.chh,
            self.phi * (xhp + ahx + fh),
        );
        let phase = Complex64::new(theta.cos(), theta.sin());
        L0Eval { value: bracket * phase, one_sided: self.one_sided }
    }

    #[inline]
    fn u(&self, x: &[f64]) -> Complex64 {
        let theta: f64 = x.iter().zip(&self.h).map(|(xk, hk)| xk * hk).sum();
        self.phi * Complex64::new(theta.cos(), theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The quadrature remainder dominates the statistical error; the check
    /// cannot resolve the identity at this resolution.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    Trapezoid,
    Midpoint,
}

/// One Fokker-Planck residual check: lhs = ⟨u(t,·), μ_t⟩, rhs = ⟨u(s,·), ζ⟩
/// plus the time quadrature of ⟨L₀u, μ⟩, residual = lhs − rhs, all from the
/// same paths.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub test_fn_id: String,
    pub t_eval: f64,
    pub lhs: (f64, f64),
    pub rhs: (f64, f64),
    pub residual: (f64, f64),
    pub residual_abs: f64,
    /// standard error of the paired estimator mean
    pub stat_error: f64,
    pub sigma_level: f64,
    /// Richardson estimate |I_full − I_half|/3 of the checkpoint-quadrature
    /// remainder
    pub quad_remainder: f64,
    /// measured splitting-bias allowance from a dt/2 rerun (0 when absent)
    pub dt_allowance: f64,
    pub error_budget: f64,
    pub verdict: Verdict,
    pub pass: bool,
    pub quadrature: Quadrature,
    /// number of quadrature nodes where a one-sided h′ was used
    pub one_sided_nodes: usize,
    pub n_paths: usize,
}

/// Minimum number of checkpoints in [s, t_eval] for the inner integral to
/// count as resolved.
pub const MIN_QUAD_CHECKPOINTS: usize = 8;

struct TfAccum {
    u_s: Vec<Complex64>,
    quad: Vec<Complex64>,
    quad_coarse: Vec<Complex64>,
    prev_g: Vec<Complex64>,
    prev_even_g: Vec<Complex64>,
    one_sided_nodes: usize,
}

struct RawResidual {
    t_eval: f64,
    mean: Complex64,
    se: f64,
    quad_remainder: f64,
    one_sided_nodes: usize,
}

/// Per-(test function, eligible checkpoint) paired residuals with their
/// quadrature-remainder estimates. One sweep over checkpoints, running
/// prefix quadratures per path.
fn residual_sweep(
    ens: &Ensemble,
    drift: &DriftSpec,
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    tfs: &[TestFunction],
    quadrature: Quadrature,
    use_alpha: bool,
) -> Result<Vec<Vec<RawResidual>>> {
    if !ens.is_valid() {
        return Err(Error::InvalidEnsemble("exploded fraction exceeds policy".into()));
    }
    let cps = &ens.config.checkpoints;
    let n_cp = cps.len();
    if n_cp < MIN_QUAD_CHECKPOINTS {
        return Err(Error::InvalidInput(format!(
            "need >= {MIN_QUAD_CHECKPOINTS} checkpoints, have {n_cp}"
        )));
    }
    let n_paths = ens.members.len();
    let alpha = if use_alpha { drift.alpha } else { 0.0 };
    let zero_drift = drift.f.is_zero() && drift.h.is_zero();

    let mut accums: Vec<TfAccum> = tfs
        .iter()
        .map(|_| TfAccum {
            u_s: vec![Complex64::ZERO; n_paths],
            quad: vec![Complex64::ZERO; n_paths],
            quad_coarse: vec![Complex64::ZERO; n_paths],
            prev_g: vec![Complex64::ZERO; n_paths],
            prev_even_g: vec![Complex64::ZERO; n_paths],
            one_sided_nodes: 0,
        })
        .collect();
    let mut out: Vec<Vec<RawResidual>> = tfs.iter().map(|_| Vec::new()).collect();

    // per-path drift field at the current checkpoint, reused across tfs
    let mut fields = vec![0.0; n_paths * space.n_modes()];
    let mut g_buf = vec![Complex64::ZERO; n_paths]; // g at current node, left side
    let mut g_right_buf = vec![Complex64::ZERO; n_paths];
    let mut d_buf = vec![Complex64::ZERO; n_paths];

    for j in 0..n_cp {
        let t = cps[j];
        let nm = space.n_modes();
        if !zero_drift {
            // members of a valid ensemble stayed finite, so the drift
            // evaluation cannot fail here
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                fields.par_chunks_mut(nm).enumerate().for_each_init(
                    || DriftScratch::for_space(space),
                    |scratch, (p, chunk)| {
                        let x = ens.members[p].states[j].as_slice();
                        evaluate_drift_with(drift, space, t, x, alpha, scratch, chunk)
                            .expect("drift evaluation on a completed path");
                    },
                );
            }
            #[cfg(not(feature = "parallel"))]
            {
                let mut scratch = DriftScratch::for_space(space);
                for (p, chunk) in fields.chunks_mut(nm).enumerate() {
                    let x = ens.members[p].states[j].as_slice();
                    evaluate_drift_with(drift, space, t, x, alpha, &mut scratch, chunk)
                        .expect("drift evaluation on a completed path");
                }
            }
        } else {
            fields.fill(0.0);
        }

        for (i, tf) in tfs.iter().enumerate() {
            let left = L0Coeffs::build(tf, space, noise, t, DerivSide::Left);
            let at_break = left.one_sided;
            let right = if at_break {
                Some(L0Coeffs::build(tf, space, noise, t, DerivSide::Right))
            } else {
                None
            };
            let acc = &mut accums[i];
            if at_break {
                acc.one_sided_nodes += 1;
            }
            for p in 0..n_paths {
                let x = ens.members[p].states[j].as_slice();
                let f = &fields[p * nm..(p + 1) * nm];
                let g_left = left.eval(x, f).value;
                g_buf[p] = g_left;
                g_right_buf[p] = match &right {
                    Some(r) => r.eval(x, f).value,
                    None => g_left,
                };
                if j == 0 {
                    acc.u_s[p] = left.u(x);
                }
            }
            // integrate the cell ending at node j, then snapshot, then roll
            if j > 0 {
                let dt_cell = cps[j] - cps[j - 1];
                match quadrature {
                    Quadrature::Trapezoid => {
                        for p in 0..n_paths {
                            acc.quad[p] += 0.5 * dt_cell * (acc.prev_g[p] + g_buf[p]);
                        }
                    }
                    Quadrature::Midpoint => {
                        if j % 2 == 0 {
                            let wide = cps[j] - cps[j - 2];
                            for p in 0..n_paths {
                                acc.quad[p] += wide * acc.prev_g[p];
                            }
                        }
                    }
                }
                if j % 2 == 0 {
                    let wide = cps[j] - cps[j - 2];
                    for p in 0..n_paths {
                        acc.quad_coarse[p] += 0.5 * wide * (acc.prev_even_g[p] + g_buf[p]);
                    }
                }
            }

            let eligible = j + 1 >= MIN_QUAD_CHECKPOINTS;
            if eligible {
                // complete prefix integrals up to t for odd j on the fly
                let mut mean = (Kahan::default(), Kahan::default());
                let mut mean_quad = (Kahan::default(), Kahan::default());
                let mut mean_coarse = (Kahan::default(), Kahan::default());
                for p in 0..n_paths {
                    let x = ens.members[p].states[j].as_slice();
                    let u_t = left.u(x);
                    let mut quad = acc.quad[p];
                    if quadrature == Quadrature::Midpoint && j % 2 == 1 {
                        quad += 0.5 * (cps[j] - cps[j - 1]) * (acc.prev_g[p] + g_buf[p]);
                    }
                    let mut coarse = acc.quad_coarse[p];
                    if j % 2 == 1 {
                        coarse += 0.5 * (cps[j] - cps[j - 1]) * (acc.prev_even_g[p] + g_buf[p]);
                    }
                    let d = u_t - acc.u_s[p] - quad;
                    d_buf[p] = d;
                    mean.0.add(d.re);
                    mean.1.add(d.im);
                    mean_quad.0.add(quad.re);
                    mean_quad.1.add(quad.im);
                    mean_coarse.0.add(coarse.re);
                    mean_coarse.1.add(coarse.im);
                }
                let nf = n_paths as f64;
                let m = Complex64::new(mean.0.value() / nf, mean.1.value() / nf);
                let mut var = (Kahan::default(), Kahan::default());
                for p in 0..n_paths {
                    var.0.add((d_buf[p].re - m.re).powi(2));
                    var.1.add((d_buf[p].im - m.im).powi(2));
                }
                let se = ((var.0.value() + var.1.value()) / (nf * (nf - 1.0).max(1.0))).sqrt();
                let q_full = Complex64::new(mean_quad.0.value() / nf, mean_quad.1.value() / nf);
                let q_half =
                    Complex64::new(mean_coarse.0.value() / nf, mean_coarse.1.value() / nf);
                out[i].push(RawResidual {
                    t_eval: t,
                    mean: m,
                    se,
                    quad_remainder: (q_full - q_half).norm() / 3.0,
                    one_sided_nodes: acc.one_sided_nodes,
                });
            }

            for p in 0..n_paths {
                acc.prev_g[p] = g_right_buf[p];
                if j % 2 == 0 {
                    acc.prev_even_g[p] = g_right_buf[p];
                }
            }
        }
    }
    Ok(out)
}

/// Fokker-Planck residual checks for a batch of test functions at every
/// eligible checkpoint. When `ens_half_dt` (same checkpoints, half the step)
/// is given, the measured splitting-bias allowance 2·|res − res_half| enters
/// each error budget; otherwise the allowance is zero.
pub fn fp_residual_batch(
    ens: &Ensemble,
    ens_half_dt: Option<&Ensemble>,
    drift: &DriftSpec,
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    tfs: &[TestFunction],
    quadrature: Quadrature,
    sigma_level: f64,
    use_alpha: bool,
) -> Result<Vec<ResidualReport>> {
    let raw = residual_sweep(ens, drift, space, noise, tfs, quadrature, use_alpha)?;
    let raw_half = match ens_half_dt {
        Some(e) => {
            if e.config.checkpoints != ens.config.checkpoints {
                return Err(Error::InvalidInput(
                    "dt/2 rerun must share the checkpoint grid".into(),
                ));
            }
            Some(residual_sweep(e, drift, space, noise, tfs, quadrature, use_alpha)?)
        }
        None => None,
    };
    let mut reports = Vec::new();
    for (i, tf) in tfs.iter().enumerate() {
        for (k, r) in raw[i].iter().enumerate() {
            let dt_allowance = raw_half
                .as_ref()
                .map(|rh| 2.0 * (rh[i][k].mean - r.mean).norm())
                .unwrap_or(0.0);
            let lhs_rhs = r.mean; // residual = lhs − rhs by construction
            let stat = sigma_level * r.se;
            let budget = stat + r.quad_remainder + dt_allowance;
            let abs = lhs_rhs.norm();
            let verdict = if abs <= budget {
                Verdict::Pass
            } else if r.quad_remainder > 10.0 * r.se.max(1e-300) {
                Verdict::Inconclusive
            } else {
                Verdict::Fail
            };
            // lhs and rhs separately, for the report only
            let lhs = ens_mean_u(ens, tf, r.t_eval)?;
            let rhs_c = lhs.value() - lhs_rhs;
            reports.push(ResidualReport {
                test_fn_id: tf.id.clone(),
                t_eval: r.t_eval,
                lhs: (lhs.value_re, lhs.value_im),
                rhs: (rhs_c.re, rhs_c.im),
                residual: (lhs_rhs.re, lhs_rhs.im),
                residual_abs: abs,
                stat_error: r.se,
                sigma_level,
                quad_remainder: r.quad_remainder,
                dt_allowance,
                error_budget: budget,
                verdict,
                pass: verdict == Verdict::Pass,
                quadrature,
                one_sided_nodes: r.one_sided_nodes,
                n_paths: ens.members.len(),
            });
        }
    }
    Ok(reports)
}

/// Ensemble mean of u(t, ·) at a checkpoint, with its own standard error.
pub fn ens_mean_u(ens: &Ensemble, tf: &TestFunction, t: f64) -> Result<FunctionalEstimate> {
    let idx = ens
        .checkpoint_index(t)
        .ok_or_else(|| Error::InvalidInput(format!("t = {t} is not a checkpoint")))?;
    let n = ens.members.len();
    let mut re = Kahan::default();
    let mut im = Kahan::default();
    let mut vals = Vec::with_capacity(n);
    for st in ens.states_at(idx) {
        let v = tf.u(t, st);
        vals.push(v);
        re.add(v.re);
        im.add(v.im);
    }
    let m = Complex64::new(re.value() / n as f64, im.value() / n as f64);
    let mut var = Kahan::default();
    for v in &vals {
        var.add((v.re - m.re).powi(2) + (v.im - m.im).powi(2));
    }
    let se = (var.value() / ((n as f64) * (n as f64 - 1.0).max(1.0))).sqrt();
    Ok(FunctionalEstimate {
        functional_id: format!("u[{}](t={t})", tf.id),
        value_re: m.re,
        value_im: m.im,
        std_error: se,
        n,
    })
}

/// Single-test-function entry point. `t_eval = s` is the degenerate empty
/// integral and returns an exactly-zero residual.
pub fn fp_residual(
    ens: &Ensemble,
    ens_half_dt: Option<&Ensemble>,
    drift: &DriftSpec,
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    tf: &TestFunction,
    t_eval: f64,
    quadrature: Quadrature,
    sigma_level: f64,
) -> Result<ResidualReport> {
    let s = ens.config.s;
    if (t_eval - s).abs() <= 1e-12 {
        let lhs = ens_mean_u(ens, tf, s)?;
        return Ok(ResidualReport {
            test_fn_id: tf.id.clone(),
            t_eval,
            lhs: (lhs.value_re, lhs.value_im),
            rhs: (lhs.value_re, lhs.value_im),
            residual: (0.0, 0.0),
            residual_abs: 0.0,
            stat_error: 0.0,
            sigma_level,
            quad_remainder: 0.0,
            dt_allowance: 0.0,
            error_budget: 0.0,
            verdict: Verdict::Pass,
            pass: true,
            quadrature,
            one_sided_nodes: 0,
            n_paths: ens.members.len(),
        });
    }
    let reports = fp_residual_batch(
        ens,
        ens_half_dt,
        drift,
        space,
        noise,
        std::slice::from_ref(tf),
        quadrature,
        sigma_level,
        true,
    )?;
    reports
        .into_iter()
        .find(|r| (r.t_eval - t_eval).abs() <= 1e-9)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "t_eval = {t_eval} has fewer than {MIN_QUAD_CHECKPOINTS} checkpoints before it"
            ))
        })
}

/// Chapman-Kolmogorov composition check p_{r,s}∘p_{s,t} = p_{r,t} from a
/// Dirac start, compared through characteristic functionals.
#[derive(Debug, Clone, Serialize)]
pub struct CkReport {
    pub x_label: String,
    pub r: f64,
    pub s: f64,
    pub t: f64,
    pub n_paths_direct: usize,
    pub n_paths_composed: usize,
    pub gaps: Vec<crate::measure::DirectionGap>,
    pub max_gap: f64,
    pub pass_fraction: f64,
    pub pass: bool,
}

/// Direct arm: one ensemble over [r,t]. Composed arm: an ensemble over
/// [r,s], then every endpoint continued over [s,t] on a fresh stream
/// domain so the two legs are independent. All three arms use disjoint
/// stream domains.
pub fn ck_check(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    drift: &DriftSpec,
    x: &[f64],
    r: f64,
    s: f64,
    t: f64,
    sim: &SimConfig,
    dirs: &TestDirectionSet,
    sigma_level: f64,
) -> Result<CkReport> {
    if !(r < s && s < t) {
        return Err(Error::InvalidInput("need r < s < t".into()));
    }
    let mk = |s0: f64, t1: f64, n_paths: u64| SimConfig {
        s: s0,
        t_end: t1,
        dt: sim.dt,
        checkpoints: vec![s0, t1],
        n_paths,
        seed: sim.seed,
        scheme: sim.scheme,
        record_convolution: false,
    };
    let direct = simulate_ensemble_in(
        space,
        noise,
        drift,
        &mk(r, t, sim.n_paths),
        &InitialLaw::Dirac(x.to_vec()),
        StreamDomain::CkDirect,
        false,
    )?;
    let leg1 = simulate_ensemble_in(
        space,
        noise,
        drift,
        &mk(r, s, sim.n_paths),
        &InitialLaw::Dirac(x.to_vec()),
        StreamDomain::CkLeg1,
        false,
    )?;
    let endpoint_idx = leg1.config.checkpoints.len() - 1;
    let endpoints: Vec<Vec<f64>> = leg1
        .states_at(endpoint_idx)
        .map(|s| s.to_vec())
        .collect();
    let composed = simulate_ensemble_in(
        space,
        noise,
        drift,
        &mk(s, t, endpoints.len() as u64),
        &InitialLaw::Explicit(endpoints),
        StreamDomain::CkLeg2,
        false,
    )?;
    let dist = measure_distance(&direct, t, &composed, t, dirs, sigma_level)?;
    Ok(CkReport {
        x_label: format!("|x|={:.6}", x.iter().map(|v| v * v).sum::<f64>().sqrt()),
        r,
        s,
        t,
        n_paths_direct: direct.members.len(),
        n_paths_composed: composed.members.len(),
        max_gap: dist.max_abs_gap,
        pass_fraction: dist.pass_fraction,
        pass: dist.pass,
        gaps: dist.per_direction,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaPairGap {
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    pub per_direction: Vec<(String, f64, f64, f64)>, // (label, sup_gap, noise, t_at_sup)
    pub max_gap: f64,
    pub noise_floor: f64,
    pub above_noise: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaMoments {
    pub alpha: f64,
    pub per_checkpoint: Vec<(f64, f64, f64)>, // (t, l2_sq mean, se)
}

/// The Cauchy-in-α surrogate for weak convergence: decreasing consecutive
/// sup-gaps of characteristic functionals, plus the uniform-in-α moment
/// table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub alphas: Vec<f64>,
    pub pairs: Vec<AlphaPairGap>,
    pub moments: Vec<AlphaMoments>,
    /// max over checkpoints of (max_α moment)/(min_α moment)
    pub uniform_moment_ratio: f64,
    pub monotone_above_noise: bool,
    pub final_gap: f64,
    pub final_noise_floor: f64,
    pub final_below_2x_noise: bool,
    pub convergence_evidence: bool,
}

/// Run one independent ensemble per α (descending list) and compare
/// consecutive laws over the direction set, taking the sup over checkpoints
/// per direction. Ensembles use disjoint stream domains, so the per-pair
/// noise floor is the independent-arm threshold sigma_level·(SE_i + SE_j).
/// Non-monotone gaps above noise yield `convergence_evidence = false`, not
/// an error.
pub fn alpha_sweep(
    space: &GalerkinSpace,
    noise: &NoiseSpec,
    drift_base: &DriftSpec,
    alphas: &[f64],
    sim: &SimConfig,
    initial_law: &InitialLaw,
    dirs: &TestDirectionSet,
    sigma_level: f64,
) -> Result<ConvergenceReport> {
    if alphas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidInput("alphas must be strictly decreasing".into()));
    }
    if alphas.len() > 64 {
        return Err(Error::InvalidInput("too many alphas".into()));
    }
    let mut ensembles = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let spec = drift_base.with_alpha(alpha)?;
        ensembles.push(simulate_ensemble_in(
            space,
            noise,
            &spec,
            sim,
            initial_law,
            StreamDomain::Alpha(i as u8),
            false,
        )?);
    }

    let cps = sim.checkpoints.clone();
    let mut moments = Vec::new();
    for (i, ens) in ensembles.iter().enumerate() {
        let mut per_checkpoint = Vec::new();
        for &t in &cps {
            let m = moment(ens, space, t, MomentKind::L2Sq, None)?;
            per_checkpoint.push((t, m.value_re, m.std_error));
        }
        moments.push(AlphaMoments { alpha: alphas[i], per_checkpoint });
    }
    let mut uniform_ratio: f64 = 1.0;
    for (j, _t) in cps.iter().enumerate() {
        let vals: Vec<f64> = moments.iter().map(|m| m.per_checkpoint[j].1).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 1e-12 {
            uniform_ratio = uniform_ratio.max(max / min);
        }
    }

    let mut pairs = Vec::new();
    for w in 0..alphas.len().saturating_sub(1) {
        let (ea, eb) = (&ensembles[w], &ensembles[w + 1]);
        let mut per_direction = Vec::new();
        let mut max_gap: f64 = 0.0;
        let mut noise_floor: f64 = 0.0;
        for (label, h) in &dirs.directions {
            let mut sup_gap = 0.0;
            let mut noise_at_sup = 0.0;
            let mut t_at_sup = cps[0];
            for &t in &cps {
                let a = char_functional(ea, t, h)?;
                let b = char_functional(eb, t, h)?;
                let gap = (a.value() - b.value()).norm();
                if gap > sup_gap {
                    sup_gap = gap;
                    noise_at_sup = sigma_level * (a.std_error + b.std_error);
                    t_at_sup = t;
                }
            }
            max_gap = max_gap.max(sup_gap);
            noise_floor = noise_floor.max(noise_at_sup);
            per_direction.push((label.clone(), sup_gap, noise_at_sup, t_at_sup));
        }
        pairs.push(AlphaPairGap {
            alpha_hi: alphas[w],
            alpha_lo: alphas[w + 1],
            above_noise: max_gap > noise_floor,
            per_direction,
            max_gap,
            noise_floor,
        });
    }

    let mut monotone = true;
    for w in pairs.windows(2) {
        if w[0].above_noise && w[1].above_noise && w[1].max_gap > w[0].max_gap {
            monotone = false;
        }
    }
    let (final_gap, final_noise) = pairs
        .last()
        .map(|p| (p.max_gap, p.noise_floor))
        .unwrap_or((0.0, 0.0));
    let final_ok = final_gap <= 2.0 * final_noise;
    Ok(ConvergenceReport {
        alphas: alphas.to_vec(),
        pairs,
        moments,
        uniform_moment_ratio: uniform_ratio,
        monotone_above_noise: monotone,
        final_gap,
        final_noise_floor: final_noise,
        final_below_2x_noise: final_ok,
        convergence_evidence: monotone && final_ok,
    })
}
