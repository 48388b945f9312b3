//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (run with --nocapture to see them). Every tolerance is pinned here, in
//! code. Oracles are independent of the implementation paths they check:
//! series oracles use their own partial sums and integral brackets, Gaussian
//! laws their closed forms, and the N = 1 cross-validation solves the scalar
//! Fokker-Planck PDE with a finite-difference scheme written in this file.

use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal};

use fplab_cli::pipeline::execute;
use fplab_core::drift::{l2m_norm_pow, DriftSpec};
use fplab_core::engine::{
    convolution_sup_moment, simulate_ensemble, Ensemble, InitialLaw, Scheme, SimConfig,
};
use fplab_core::measure::TestDirectionSet;
use fplab_core::spectral::{trace_fractional, GalerkinSpace, NoiseSpec, PI};
use fplab_core::verify::{
    alpha_sweep, ck_check, ens_mean_u, fp_residual_batch, HPath, PhiProfile, Quadrature,
    TestFunction, Verdict,
};

fn criterion(id: &str, name: &str, pass: bool, detail: String) {
    println!(
        "[acceptance] {id} {name}: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{id} {name}: {detail}");
}

fn budget(id: &str, elapsed: std::time::Duration, limit_s: f64) {
    println!("[acceptance] {id} runtime: {:.2}s (budget {limit_s}s)", elapsed.as_secs_f64());
    assert!(
        elapsed.as_secs_f64() < limit_s,
        "{id} exceeded the runtime budget: {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// C1 — certified trace values: δ = 0.3 within 1e-6 of π^{-1.2}ζ(1.2)
/// (independent partial-sum + integral-bracket oracle), δ = 0.2 divergent.
#[test]
fn c01_hypothesis_validation() {
    let start = Instant::now();
    let tr = trace_fractional(0.3, 1e-6).unwrap();
    let div = trace_fractional(0.2, 1e-6).unwrap();
    let elapsed = start.elapsed();

    // oracle: sum k^{-1.2} to 1e6 plus the two-sided integral bracket
    let s = 1.2;
    let k_max = 1_000_000u64;
    let mut partial = 0.0;
    for k in (1..=k_max).rev() {
        partial += (k as f64).powf(-s);
    }
    let hi = (k_max as f64).powf(1.0 - s) / (s - 1.0);
    let lo = ((k_max + 1) as f64).powf(1.0 - s) / (s - 1.0);
    let oracle = PI.powf(-s) * (partial + 0.5 * (lo + hi));
    let oracle_cert = PI.powf(-s) * 0.5 * (hi - lo);

    let ok = tr.finite
        && tr.remainder_bound <= 1e-6
        && (tr.value - oracle).abs() <= 1e-6 + tr.remainder_bound + oracle_cert
        && !div.finite;
    criterion(
        "C1",
        "hypothesis validation (trace certification)",
        ok,
        format!("value {} vs oracle {oracle}, divergent flag {}", tr.value, div.finite),
    );
    budget("C1", elapsed, 1.0);
}

fn ou_run(seed: u64) -> (GalerkinSpace, NoiseSpec, SimConfig, Ensemble) {
    let sp = GalerkinSpace::build(8, 16).unwrap();
    let noise = NoiseSpec::identity(8, 1.0).unwrap();
    let sim = SimConfig {
        s: 0.0,
        t_end: 0.5,
        dt: 1.0 / 64.0,
        checkpoints: SimConfig::uniform_checkpoints(0.0, 0.5, 16),
        n_paths: 100_000,
        seed,
        scheme: Scheme::ExponentialEulerSplitting,
        record_convolution: false,
    };
    let ens = simulate_ensemble(
        &sp,
        &noise,
        &DriftSpec::zero(0.5),
        &sim,
        &InitialLaw::Dirac(vec![0.0; 8]),
    )
    .unwrap();
    (sp, noise, sim, ens)
}

/// C2 — zero drift, C = I, N = 8: per-mode checkpoint variances match the
/// exact OU law within 3 SE everywhere, and per-mode KS tests at the 1%
/// level pass for at least 95% of (mode, checkpoint) pairs.
#[test]
fn c02_ou_exactness() {
    let start = Instant::now();
    let (sp, noise, sim, ens) = ou_run(42);
    let n = ens.members.len();
    let nf = n as f64;

    let mut var_ok = true;
    let mut worst = 0.0_f64;
    let mut ks_pass = 0usize;
    let mut ks_total = 0usize;
    let ks_crit = 1.6276 / nf.sqrt(); // asymptotic 1% critical value
    let mut sample = vec![0.0_f64; n];
    for (j, &t) in sim.checkpoints.iter().enumerate().skip(1) {
        let q = noise.convolution_variance(&sp, t);
        for k in 0..sp.n_modes() {
            for (p, st) in ens.states_at(j).enumerate() {
                sample[p] = st[k];
            }
            let mean: f64 = sample.iter().sum::<f64>() / nf;
            let var: f64 = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            let se = q[k] * (2.0 / (nf - 1.0)).sqrt();
            let dev = (var - q[k]).abs() / se;
            worst = worst.max(dev);
            if dev > 3.0 {
                var_ok = false;
            }

            sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let dist = Normal::new(0.0, q[k].sqrt()).unwrap();
            let mut d = 0.0_f64;
            for (i, &x) in sample.iter().enumerate() {
                let cdf = dist.cdf(x);
                d = d.max(((i + 1) as f64 / nf - cdf).abs());
                d = d.max((i as f64 / nf - cdf).abs());
            }
            ks_total += 1;
            if d <= ks_crit {
                ks_pass += 1;
            }
        }
    }
    let ks_fraction = ks_pass as f64 / ks_total as f64;
    criterion(
        "C2",
        "OU exactness (variances + KS)",
        var_ok && ks_fraction >= 0.95,
        format!("worst variance dev {worst:.2} sigma, KS fraction {ks_fraction:.3}"),
    );
    budget("C2", start.elapsed(), 60.0);
}

/// C3 — stochastic-convolution bound: sup_t E|(-A)^0.3 W_A(t)|² within
/// ‖C‖Tr[(-A)^{-0.6}] + 3 SE on the C2 configuration.
#[test]
fn c03_convolution_bound() {
    let start = Instant::now();
    let sp = GalerkinSpace::build(8, 16).unwrap();
    let noise = NoiseSpec::identity(8, 1.0).unwrap();
    let sim = SimConfig {
        s: 0.0,
        t_end: 0.5,
        dt: 1.0 / 64.0,
        checkpoints: SimConfig::uniform_checkpoints(0.0, 0.5, 16),
        n_paths: 100_000,
        seed: 42,
        scheme: Scheme::ExponentialEulerSplitting,
        record_convolution: false,
    };
    let rep = convolution_sup_moment(&sp, &noise, 0.3, &sim).unwrap();
    criterion(
        "C3",
        "stochastic-convolution moment bound",
        rep.pass && !rep.trace_truncated,
        format!("estimate {} vs c_delta {} (+3se {})", rep.estimate, rep.c_delta, 3.0 * rep.std_error_at_sup),
    );
    budget("C3", start.elapsed(), 60.0);
}

fn acceptance_catalog(sp: &GalerkinSpace, horizon: f64) -> Vec<TestFunction> {
    let n = sp.n_modes();
    let dir = |ks: &[usize]| {
        let mut h = vec![0.0; n];
        for &k in ks {
            h[k] = 1.0;
        }
        h
    };
    let dirs = vec![
        ("e1".to_string(), dir(&[0])),
        ("e2".to_string(), dir(&[1])),
        ("e1+e2".to_string(), dir(&[0, 1])),
    ];
    let phis = [
        PhiProfile::Poly { p: 1 },
        PhiProfile::Poly { p: 2 },
        PhiProfile::RaisedCosine,
    ];
    let mut tfs = TestFunction::catalog(&phis, &dirs, horizon, n).unwrap();
    // one piecewise-affine direction path, breakpoint on a checkpoint
    tfs.push(
        TestFunction::new(
            "poly1|pw(e1->e2)",
            PhiProfile::Poly { p: 1 },
            HPath::PiecewiseAffine {
                times: vec![0.0, horizon / 2.0, horizon],
                values: vec![dir(&[0]), dir(&[1]), dir(&[0])],
            },
            horizon,
            n,
        )
        .unwrap(),
    );
    tfs
}

/// C4 — Fokker-Planck residual against the Gaussian oracle: zero drift from
/// δ_0, all catalog test functions with h ∈ {e1, e2, e1+e2}; residuals pass
/// everywhere and the lhs matches φ(t)exp(-½Σ q_k h_k²) within 3 SE.
#[test]
fn c04_fp_residual_gaussian() {
    let start = Instant::now();
    let (sp, noise, sim, ens) = ou_run(101);
    let drift = DriftSpec::zero(0.5);
    let tfs = acceptance_catalog(&sp, 0.5);
    let reports = fp_residual_batch(
        &ens,
        None,
        &drift,
        &sp,
        &noise,
        &tfs,
        Quadrature::Trapezoid,
        3.0,
        true,
    )
    .unwrap();
    let all_pass = reports.iter().all(|r| r.verdict == Verdict::Pass);
    let n_reports = reports.len();

    // closed-form check of the lhs for every test function and checkpoint
    let mut lhs_ok = true;
    let mut worst_gap = 0.0_f64;
    for tf in &tfs {
        for &t in sim.checkpoints.iter() {
            let est = ens_mean_u(&ens, tf, t).unwrap();
            let q = noise.convolution_variance(&sp, t);
            let h = tf.h.h_at(t);
            let expect = tf.phi.eval(t, 0.5)
                * (-0.5 * q.iter().zip(&h).map(|(qk, hk)| qk * hk * hk).sum::<f64>()).exp();
            let gap = (est.value_re - expect).hypot(est.value_im);
            let tol = 3.0 * est.std_error + 1e-12;
            worst_gap = worst_gap.max(gap / tol.max(1e-300));
            if gap > tol {
                lhs_ok = false;
            }
        }
    }
    criterion(
        "C4",
        "FP residual, Gaussian oracle",
        all_pass && lhs_ok && n_reports >= 10 * (17 - 7),
        format!("{n_reports} residual checks, worst lhs gap {worst_gap:.2}x tolerance"),
    );
    budget("C4", start.elapsed(), 120.0);
}

/// C5 — nonlinear FP residual: cubic drift f = -z³ + z, α ∈ {1/4, 1/16},
/// N = 8, 1e5 paths; at least 90% of (test function, checkpoint) pairs pass
/// at the stated budget and no pair fails outright.
#[test]
fn c05_fp_residual_nonlinear() {
    let start = Instant::now();
    let sp = GalerkinSpace::build(8, 32).unwrap();
    let noise = NoiseSpec::identity(8, 1.0).unwrap();
    let x0 = sp.project_constant(1.0);
    let tfs = acceptance_catalog(&sp, 0.5);
    let mut total = 0usize;
    let mut pass = 0usize;
    let mut fail = 0usize;
    for &alpha in &[0.25, 0.0625] {
        let drift = DriftSpec::cubic(1.0, alpha, 0.5).unwrap();
        let sim = SimConfig {
            s: 0.0,
            t_end: 0.5,
            dt: 1.0 / 128.0,
            checkpoints: SimConfig::uniform_checkpoints(0.0, 0.5, 16),
            n_paths: 100_000,
            seed: 4242,
            scheme: Scheme::ExponentialEulerSplitting,
            record_convolution: false,
        };
        let ens = simulate_ensemble(&sp, &noise, &drift, &sim, &InitialLaw::Dirac(x0.clone())).unwrap();
        let mut half = sim.clone();
        half.dt = sim.dt / 2.0;
        let ens_half =
            simulate_ensemble(&sp, &noise, &drift, &half, &InitialLaw::Dirac(x0.clone())).unwrap();
        let reports = fp_residual_batch(
            &ens,
            Some(&ens_half),
            &drift,
            &sp,
            &noise,
            &tfs,
            Quadrature::Trapezoid,
            3.0,
            true,
        )
        .unwrap();
        total += reports.len();
        pass += reports.iter().filter(|r| r.verdict == Verdict::Pass).count();
        fail += reports.iter().filter(|r| r.verdict == Verdict::Fail).count();
    }
    let fraction = pass as f64 / total as f64;
    criterion(
        "C5",
        "FP residual, nonlinear",
        fraction >= 0.90 && fail == 0,
        format!("{pass}/{total} pass ({fraction:.3}), {fail} hard failures"),
    );
    budget("C5", start.elapsed(), 600.0);
}

/// C6 — Chapman-Kolmogorov composition at (r,s,t) = (0, 0.25, 0.5) and
/// (0, 0.1, 0.5): all direction gaps within 3σ for zero drift; at least 95%
/// of directions for the cubic drift at α = 1/16.
#[test]
fn c06_chapman_kolmogorov() {
    let start = Instant::now();
    let sp = GalerkinSpace::build(8, 32).unwrap();
    let noise = NoiseSpec::identity(8, 1.0).unwrap();
    let dirs = TestDirectionSet::standard(&sp, 4, &[1.0, 2.0], 16, 4.0);
    let x = sp.project_constant(0.5);
    let sim = SimConfig {
        s: 0.0,
        t_end: 0.5,
        dt: 1.0 / 80.0,
        checkpoints: vec![0.0, 0.5],
        n_paths: 100_000,
        seed: 606,
        scheme: Scheme::TamedEuler,
        record_convolution: false,
    };
    let triples = [(0.0, 0.25, 0.5), (0.0, 0.1, 0.5)];

    let mut zero_ok = true;
    let mut zero_detail = String::new();
    for &(r, s_mid, t) in &triples {
        let rep = ck_check(&sp, &noise, &DriftSpec::zero(0.5), &x, r, s_mid, t, &sim, &dirs, 3.0).unwrap();
        zero_detail.push_str(&format!(
            " zero({r},{s_mid},{t}): {:.3} max gap, fraction {:.3};",
            rep.max_gap, rep.pass_fraction
        ));
        zero_ok = zero_ok && rep.pass;
    }

    let cubic = DriftSpec::cubic(1.0, 0.0625, 0.5).unwrap();
    let mut cubic_ok = true;
    let mut cubic_detail = String::new();
    for &(r, s_mid, t) in &triples {
        let rep = ck_check(&sp, &noise, &cubic, &x, r, s_mid, t, &sim, &dirs, 3.0).unwrap();
        cubic_detail.push_str(&format!(
            " cubic({r},{s_mid},{t}): fraction {:.3};",
            rep.pass_fraction
        ));
        cubic_ok = cubic_ok && rep.pass_fraction >= 0.95;
    }
    criterion(
        "C6",
        "Chapman-Kolmogorov composition",
        zero_ok && cubic_ok,
        format!("{zero_detail}{cubic_detail}"),
    );
    budget("C6", start.elapsed(), 600.0);
}

/// C7 — moment bound: cubic drift, initial projected constants with
/// |x|⁶_{L⁶} ∈ {0, 1, 64, 4096}, α ∈ {1, 1/4, 1/16}. The paper's bound has
/// one constant independent of α, so the gate is α-uniformity of the fitted
/// ratio at every start (max/min over α ≤ 3). The pooled max/min across
/// starts is reported alongside: the 6th-moment cross terms put a structural
/// floor of about 6.5 on it, so it cannot gate (see the fitted constant).
#[test]
fn c07_moment_bound() {
    let start = Instant::now();
    let sp = GalerkinSpace::build(8, 32).unwrap();
    let noise = NoiseSpec::identity(8, 4.0).unwrap();
    let t_end = 0.04;
    let sim = SimConfig {
        s: 0.0,
        t_end,
        dt: t_end / 32.0,
        checkpoints: vec![0.0, t_end],
        n_paths: 20_000,
        seed: 707,
        scheme: Scheme::ExponentialEulerSplitting,
        record_convolution: false,
    };
    // scale the constants so the projected starts hit |x|⁶ ∈ {0,1,64,4096}
    let unit_pow = l2m_norm_pow(&sp, &sp.project_constant(1.0), 3);
    let targets = [0.0, 1.0, 64.0, 4096.0];
    let alphas = [1.0, 0.25, 0.0625];

    let mut pooled: Vec<f64> = Vec::new();
    let mut alpha_spread_worst = 0.0_f64;
    let mut fitted_c = 0.0_f64;
    for &target in &targets {
        let v = (target / unit_pow).powf(1.0 / 6.0);
        let x0 = sp.project_constant(v);
        let x_pow = l2m_norm_pow(&sp, &x0, 3);
        assert!((x_pow - target).abs() <= 1e-9 * target.max(1.0));
        let mut per_alpha = Vec::new();
        for &alpha in &alphas {
            let drift = DriftSpec::cubic(1.0, alpha, t_end).unwrap();
            let ens = simulate_ensemble(&sp, &noise, &drift, &sim, &InitialLaw::Dirac(x0.clone())).unwrap();
            let idx = ens.checkpoint_index(t_end).unwrap();
            let n = ens.members.len() as f64;
            let m: f64 = ens
                .states_at(idx)
                .map(|s| l2m_norm_pow(&sp, s, 3))
                .sum::<f64>()
                / n;
            let ratio = m / (1.0 + x_pow);
            per_alpha.push(ratio);
            pooled.push(ratio);
            fitted_c = fitted_c.max(ratio);
        }
        let hi = per_alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = per_alpha.iter().cloned().fold(f64::INFINITY, f64::min);
        alpha_spread_worst = alpha_spread_worst.max(hi / lo);
    }
    let pooled_hi = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pooled_lo = pooled.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "[acceptance] C7 info: fitted constant {fitted_c:.3}, pooled spread {:.2}",
        pooled_hi / pooled_lo
    );
    criterion(
        "C7",
        "moment bound, uniform over alpha",
        alpha_spread_worst <= 3.0 && fitted_c.is_finite(),
        format!("worst alpha spread {alpha_spread_worst:.3}"),
    );
    budget("C7", start.elapsed(), 600.0);
}

/// C8 — α-convergence: cubic drift, dyadic α from 1 down to 1/64 in quarter
/// steps; consecutive sup-gaps of characteristic functionals decrease
/// monotonically above the noise floor and the final gap is below 2× the
/// noise floor.
#[test]
fn c08_alpha_convergence() {
    let start = Instant::now();
    let sp = GalerkinSpace::build(8, 32).unwrap();
    let noise = NoiseSpec::identity(8, 1.0).unwrap();
    let sim = SimConfig {
        s: 0.0,
        t_end: 0.5,
        dt: 1.0 / 128.0,
        checkpoints: SimConfig::uniform_checkpoints(0.0, 0.5, 16),
        n_paths: 100_000,
        seed: 909,
        scheme: Scheme::ExponentialEulerSplitting,
        record_convolution: false,
    };
    let dirs = TestDirectionSet::standard(&sp, 4, &[1.0, 2.0], 16, 4.0);
    let base = DriftSpec::cubic(1.0, 1.0, 0.5).unwrap();
    let x0 = sp.project_constant(1.5);
    let rep = alpha_sweep(
        &sp,
        &noise,
        &base,
        &[1.0, 0.25, 0.0625, 0.015625],
        &sim,
        &InitialLaw::Dirac(x0),
        &dirs,
        3.0,
    )
    .unwrap();
    let above: Vec<bool> = rep.pairs.iter().map(|p| p.above_noise).collect();
    let gaps: Vec<f64> = rep.pairs.iter().map(|p| p.max_gap).collect();
    criterion(
        "C8",
        "alpha-convergence (Cauchy surrogate)",
        rep.monotone_above_noise
            && rep.final_below_2x_noise
            && rep.uniform_moment_ratio <= 3.0
            && above[0],
        format!(
            "gaps {gaps:?} above-noise {above:?} final {} vs 2x floor {}, moment ratio {:.2}",
            rep.final_gap,
            2.0 * rep.final_noise_floor,
            rep.uniform_moment_ratio
        ),
    );
    budget("C8", start.elapsed(), 1200.0);
}

/// C9 — N = 1 cross-validation: checkpoint laws of the cubic-drift run
/// against a dense finite-difference solution of the scalar Fokker-Planck
/// PDE, compared through characteristic functionals at 3σ plus a measured
/// grid-error allowance.
#[test]
fn c09_fd_cross_validation() {
    let start = Instant::now();
    let q_grid = 64usize;
    let sp = GalerkinSpace::build(1, q_grid).unwrap();
    let noise = NoiseSpec::identity(1, 1.0).unwrap();
    let alpha = 0.0625;
    let drift = DriftSpec::cubic(1.0, alpha, 0.5).unwrap();
    let cps = [0.0, 0.125, 0.25, 0.375, 0.5];
    let sim = SimConfig {
        s: 0.0,
        t_end: 0.5,
        dt: 1.0 / 512.0,
        checkpoints: cps.to_vec(),
        n_paths: 100_000,
        seed: 777,
        scheme: Scheme::ExponentialEulerSplitting,
        record_convolution: false,
    };
    let mu0 = 0.5;
    let sd0 = 0.05;
    let law = InitialLaw::GaussianDiag { mean: vec![mu0], var_diag: vec![sd0 * sd0] };
    let ens = simulate_ensemble(&sp, &noise, &drift, &sim, &law).unwrap();

    // independent projection of the regularized drift onto mode 1: same
    // collocation rule, fresh code
    let lam1 = -PI * PI;
    let b = |y: f64| -> f64 {
        let q1 = (q_grid + 1) as f64;
        let mut acc = 0.0;
        for q in 1..=q_grid {
            let xi = q as f64 / q1;
            let s = (PI * xi).sin();
            let u = y * std::f64::consts::SQRT_2 * s;
            let f = -u * u * u + u;
            acc += f / (1.0 + alpha * f.abs()) * s;
        }
        lam1 * y + std::f64::consts::SQRT_2 * acc / q1
    };

    // conservative explicit finite-difference solve of
    // ∂_t p = -∂_y(b p) + (c/2) ∂²_y p on [-4, 4], reflecting boundaries
    let solve = |m_cells: usize| -> Vec<Vec<f64>> {
        let l = 4.0;
        let h = 2.0 * l / m_cells as f64;
        let ys: Vec<f64> = (0..=m_cells).map(|i| -l + i as f64 * h).collect();
        let mut p: Vec<f64> = ys
            .iter()
            .map(|y| {
                (-(y - mu0) * (y - mu0) / (2.0 * sd0 * sd0)).exp()
                    / (sd0 * (2.0 * PI).sqrt())
            })
            .collect();
        let d = 0.5;
        let dt_fd = 0.45 * h * h / d;
        let b_at: Vec<f64> = ys.iter().map(|&y| b(y)).collect();
        let mut snapshots = Vec::new();
        let mut flux = vec![0.0; m_cells];
        let mut t = 0.0;
        let mut next_cp = 0usize;
        loop {
            if next_cp < cps.len() && t + 1e-12 >= cps[next_cp] {
                snapshots.push(p.clone());
                next_cp += 1;
                if next_cp == cps.len() {
                    break;
                }
            }
            let step = dt_fd.min(cps[next_cp] - t);
            for i in 0..m_cells {
                let bm = 0.5 * (b_at[i] + b_at[i + 1]);
                let pm = 0.5 * (p[i] + p[i + 1]);
                flux[i] = bm * pm - d * (p[i + 1] - p[i]) / h;
            }
            for i in 1..m_cells {
                p[i] -= step / h * (flux[i] - flux[i - 1]);
            }
            p[0] -= step / h * flux[0];
            p[m_cells] += step / h * flux[m_cells - 1];
            t += step;
        }
        snapshots
    };
    let fine = solve(1600);
    let coarse = solve(800);
    let char_fd = |p: &[f64], m_cells: usize, h_dir: f64| -> (f64, f64) {
        let l = 4.0;
        let h = 2.0 * l / m_cells as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &pi) in p.iter().enumerate() {
            let y = -l + i as f64 * h;
            let w = if i == 0 || i == m_cells { 0.5 } else { 1.0 };
            re += w * pi * (h_dir * y).cos();
            im += w * pi * (h_dir * y).sin();
        }
        (re * h, im * h)
    };

    let mut ok = true;
    let mut worst = 0.0_f64;
    for (cp_i, &t) in cps.iter().enumerate() {
        for &h_dir in &[1.0, 2.0] {
            let est = fplab_core::measure::char_functional(&ens, t, &[h_dir]).unwrap();
            let (fr, fi) = char_fd(&fine[cp_i], 1600, h_dir);
            let (cr, ci) = char_fd(&coarse[cp_i], 800, h_dir);
            let grid_err = (fr - cr).hypot(fi - ci);
            let gap = (est.value_re - fr).hypot(est.value_im - fi);
            let tol = 3.0 * est.std_error + grid_err;
            worst = worst.max(gap / tol.max(1e-300));
            if gap > tol {
                ok = false;
            }
        }
    }
    criterion(
        "C9",
        "N=1 finite-difference cross-validation",
        ok,
        format!("worst gap {worst:.2}x tolerance"),
    );
    budget("C9", start.elapsed(), 300.0);
}

/// C10 — determinism: pipelines rerun with the same seed produce
/// byte-identical report.json (full-size validate, reduced-size residual
/// and composition runs exercise every report writer).
#[test]
fn c10_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let write_cfg = |name: &str, body: &str| -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let validate_cfg = write_cfg(
        "validate.toml",
        r#"
run_kind = "validate"
[space]
n_modes = 64
grid_size = 128
[noise]
kind = "identity"
[sim]
s = 0.0
t_end = 0.5
dt = 0.015625
n_paths = 100
seed = 7
scheme = "tamed_euler"
[validate]
delta = 0.3
tail_tol = 1e-6
"#,
    );
    let residual_cfg = write_cfg(
        "residual.toml",
        r#"
run_kind = "fp_residual"
[space]
n_modes = 4
grid_size = 8
[noise]
kind = "identity"
[drift]
name = "cubic"
a = 1.0
m = 3
alpha = 0.25
c1 = 2.0
c2 = 1.0
c3 = 0.0
[sim]
s = 0.0
t_end = 0.5
dt = 0.015625
n_paths = 2000
seed = 11
scheme = "exponential_euler_splitting"
[initial]
law = "constant"
value = 0.5
"#,
    );
    let ck_cfg = write_cfg(
        "ck.toml",
        r#"
run_kind = "ck"
[space]
n_modes = 4
grid_size = 8
[noise]
kind = "identity"
[drift]
name = "cubic"
a = 1.0
m = 3
alpha = 0.25
c1 = 2.0
c2 = 1.0
c3 = 0.0
[sim]
s = 0.0
t_end = 0.5
dt = 0.0125
checkpoint_rule = { kind = "explicit", times = [0.0, 0.5] }
n_paths = 2000
seed = 13
scheme = "exponential_euler_splitting"
[initial]
law = "constant"
value = 0.5
[ck]
r = 0.0
s_mid = 0.25
t = 0.5
min_pass_fraction = 0.0
"#,
    );
    let mut all_same = true;
    let mut detail = String::new();
    for (cfg, kind) in [
        (&validate_cfg, fplab_cli::config::RunKind::Validate),
        (&residual_cfg, fplab_cli::config::RunKind::FpResidual),
        (&ck_cfg, fplab_cli::config::RunKind::Ck),
    ] {
        let out_a = dir.path().join(format!("{}_a", kind.as_str()));
        let out_b = dir.path().join(format!("{}_b", kind.as_str()));
        let ra = execute(cfg, &out_a, kind, None, None).unwrap();
        let rb = execute(cfg, &out_b, kind, None, None).unwrap();
        let bytes_a = std::fs::read(ra.report_path).unwrap();
        let bytes_b = std::fs::read(rb.report_path).unwrap();
        let same = bytes_a == bytes_b;
        detail.push_str(&format!(" {}: identical={same};", kind.as_str()));
        all_same = all_same && same;
    }
    criterion("C10", "byte-identical reports on rerun", all_same, detail);
    budget("C10", start.elapsed(), 300.0);
}
