//! Pipelines behind the CLI subcommands: build the spaces, run the
//! requested study, persist the resolved config, report, manifest, and any
//! ensemble/CSV artifacts, and map the result onto the exit-code contract
//! (0 pass, 2 fail, 3 inconclusive; errors surface as 1 from main).

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use fplab_core::drift::{classify_grade, lyapunov_v, probe_conditions, RunGrade};
use fplab_core::engine::{convolution_sup_moment, simulate_ensemble, Ensemble};
use fplab_core::measure::{moment, MomentKind};
use fplab_core::spectral::validate_hypotheses;
use fplab_core::verify::{
    alpha_sweep, ck_check, fp_residual_batch, TestFunction, Verdict,
};

use crate::config::{ExperimentConfig, RunKind};
use crate::report::{config_hash, now_unix_ms, Manifest, Outcome, Report};

pub struct RunOutcome {
    pub exit_code: i32,
    pub report_path: PathBuf,
}

pub fn execute(
    config_path: &Path,
    out_dir: &Path,
    expected_kind: RunKind,
    seed_override: Option<u64>,
    workers_override: Option<usize>,
) -> anyhow::Result<RunOutcome> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config {}", config_path.display()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    if cfg.run_kind != expected_kind {
        anyhow::bail!(
            "config run_kind = {} does not match the {} subcommand",
            cfg.run_kind.as_str(),
            expected_kind.as_str()
        );
    }
    let cfg = cfg.resolve(seed_override, workers_override)?;
    configure_workers(cfg.sim.workers);

    std::fs::create_dir_all(out_dir)?;
    let resolved = cfg.to_toml()?;
    std::fs::write(out_dir.join("resolved_config.toml"), &resolved)?;
    let hash = config_hash(&resolved);

    let started = now_unix_ms();
    // explosion beyond the exploded-path policy is a failed check (exit 2
    // with diagnostics), not an execution error
    let (outcome, grade, results, mut outputs) = match run_pipeline(&cfg, out_dir) {
        Ok(v) => v,
        Err(err) => match err.downcast_ref::<fplab_core::Error>() {
            Some(fplab_core::Error::InvalidEnsemble(msg)) => (
                Outcome::Fail,
                None,
                serde_json::json!({ "error": format!("numerical explosion beyond policy: {msg}") }),
                vec![],
            ),
            _ => return Err(err),
        },
    };
    let report = Report::new(
        cfg.run_kind.as_str(),
        &hash,
        cfg.sim.seed,
        grade,
        outcome,
        results,
    );
    let report_path = out_dir.join("report.json");
    report.write(&report_path)?;
    outputs.push("report.json".to_string());
    outputs.push("resolved_config.toml".to_string());
    let manifest = Manifest {
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.sim.seed,
        started_unix_ms: started,
        finished_unix_ms: now_unix_ms(),
        outputs,
        outcome,
    };
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(RunOutcome { exit_code: outcome.exit_code(), report_path })
}

fn configure_workers(workers: usize) {
    #[cfg(feature = "parallel")]
    if workers > 0 {
        // ignore the error: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}

type PipelineResult = (Outcome, Option<String>, serde_json::Value, Vec<String>);

fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<PipelineResult> {
    match cfg.run_kind {
        RunKind::Validate => run_validate(cfg),
        RunKind::Convolution => run_convolution(cfg),
        RunKind::Simulate => run_simulate(cfg, out_dir),
        RunKind::FpResidual => run_fp_residual(cfg, out_dir),
        RunKind::Ck => run_ck(cfg, out_dir),
        RunKind::AlphaSweep => run_alpha_sweep(cfg, out_dir),
        RunKind::MomentBound => run_moment_bound(cfg, out_dir),
    }
}

fn to_value<T: Serialize>(v: &T) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn grade_string(g: RunGrade) -> String {
    match g {
        RunGrade::Uniqueness => "uniqueness".into(),
        RunGrade::Existence => "existence".into(),
    }
}

fn run_validate(cfg: &ExperimentConfig) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let v = cfg.validate.as_ref().expect("resolve checked");
    let hyp = validate_hypotheses(&space, &noise, v.delta, v.lambda, &v.t_samples)?;
    let mut passed = hyp.passed;
    let mut results = json!({ "hypotheses": to_value(&hyp)? });
    let mut grade = None;
    if cfg.drift.is_some() {
        let drift = cfg.build_drift(None)?;
        let probe = probe_conditions(&drift, &space, &cfg.sampling_plan());
        passed = passed
            && probe.passed_f1
            && probe.passed_f2
            && probe.passed_h1
            && probe.coefficients_integrable;
        grade = Some(grade_string(classify_grade(&drift, &probe)));
        results["conditions"] = to_value(&probe)?;
    }
    let outcome = if passed { Outcome::Pass } else { Outcome::Fail };
    Ok((outcome, grade, results, vec![]))
}

fn run_convolution(cfg: &ExperimentConfig) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let delta = cfg.validate.as_ref().expect("resolve checked").delta;
    let sim = cfg.build_sim()?;
    let rep = convolution_sup_moment(&space, &noise, delta, &sim)?;
    let outcome = if rep.pass { Outcome::Pass } else { Outcome::Fail };
    Ok((outcome, None, json!({ "convolution": to_value(&rep)? }), vec![]))
}

fn write_ensemble_files(
    out_dir: &Path,
    stem: &str,
    ens: &Ensemble,
    outputs: &mut Vec<String>,
) -> anyhow::Result<()> {
    let bin = out_dir.join(format!("{stem}.fpens"));
    let sidecar = out_dir.join(format!("{stem}.json"));
    fplab_core::storage::write_ensemble(&bin, &sidecar, ens)?;
    outputs.push(format!("{stem}.fpens"));
    outputs.push(format!("{stem}.json"));
    Ok(())
}

fn moment_rows(
    ens: &Ensemble,
    space: &fplab_core::spectral::GalerkinSpace,
) -> anyhow::Result<Vec<serde_json::Value>> {
    let mut rows = Vec::new();
    for &t in &ens.config.checkpoints {
        let m = moment(ens, space, t, MomentKind::L2Sq, None)?;
        rows.push(json!({ "t": t, "l2_sq": m.value_re, "std_error": m.std_error }));
    }
    Ok(rows)
}

/// Flat estimate export: one row per (time, functional).
fn write_estimates_csv(
    out_dir: &Path,
    ens: &Ensemble,
    space: &fplab_core::spectral::GalerkinSpace,
    outputs: &mut Vec<String>,
) -> anyhow::Result<()> {
    let mut csv = String::from("time,functional_id,value_re,value_im,std_error,n\n");
    for &t in &ens.config.checkpoints {
        for kind in [MomentKind::L2Sq, MomentKind::FracSobolevSq(0.25)] {
            let m = moment(ens, space, t, kind, None)?;
            csv.push_str(&format!(
                "{t},{},{},{},{},{}\n",
                m.functional_id, m.value_re, m.value_im, m.std_error, m.n
            ));
        }
        let mut e1 = vec![0.0; space.n_modes()];
        e1[0] = 1.0;
        let c = fplab_core::measure::char_functional(ens, t, &e1)?;
        csv.push_str(&format!(
            "{t},{},{},{},{},{}\n",
            c.functional_id, c.value_re, c.value_im, c.std_error, c.n
        ));
    }
    std::fs::write(out_dir.join("estimates.csv"), csv)?;
    outputs.push("estimates.csv".into());
    Ok(())
}

fn run_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let drift = cfg.build_drift(None)?;
    let sim = cfg.build_sim()?;
    let initial = cfg.build_initial(&space)?;
    let ens = simulate_ensemble(&space, &noise, &drift, &sim, &initial)?;
    let mut outputs = Vec::new();
    write_ensemble_files(out_dir, "ensemble", &ens, &mut outputs)?;
    let valid = ens.is_valid();
    let results = json!({
        "valid": valid,
        "n_members": ens.members.len(),
        "exploded": ens.exploded.len(),
        "exploded_fraction": ens.exploded_fraction(),
        "moments": if valid { moment_rows(&ens, &space)? } else { vec![] },
    });
    if valid {
        write_estimates_csv(out_dir, &ens, &space, &mut outputs)?;
    }
    let outcome = if valid { Outcome::Pass } else { Outcome::Fail };
    Ok((outcome, None, results, outputs))
}

fn catalog(cfg: &ExperimentConfig, space: &fplab_core::spectral::GalerkinSpace) -> anyhow::Result<Vec<TestFunction>> {
    let phis = cfg.phi_profiles()?;
    let dirs = cfg.tf_directions(space);
    Ok(TestFunction::catalog(&phis, &dirs, cfg.sim.t_end, space.n_modes())?)
}

fn run_fp_residual(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let drift = cfg.build_drift(None)?;
    let sim = cfg.build_sim()?;
    let initial = cfg.build_initial(&space)?;
    let tfs = catalog(cfg, &space)?;
    let ens = simulate_ensemble(&space, &noise, &drift, &sim, &initial)?;
    let half = if cfg.verify.dt_check {
        let mut half_sim = sim.clone();
        half_sim.dt = sim.dt / 2.0;
        Some(simulate_ensemble(&space, &noise, &drift, &half_sim, &initial)?)
    } else {
        None
    };
    let reports = fp_residual_batch(
        &ens,
        half.as_ref(),
        &drift,
        &space,
        &noise,
        &tfs,
        cfg.quadrature(),
        cfg.verify.sigma_level,
        true,
    )?;
    let n = reports.len().max(1);
    let n_pass = reports.iter().filter(|r| r.verdict == Verdict::Pass).count();
    let n_fail = reports.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let n_inconclusive = reports.iter().filter(|r| r.verdict == Verdict::Inconclusive).count();
    let probe = probe_conditions(&drift, &space, &cfg.sampling_plan());
    let grade = Some(grade_string(classify_grade(&drift, &probe)));
    let mut outputs = Vec::new();
    if cfg.output.write_ensemble {
        write_ensemble_files(out_dir, "ensemble", &ens, &mut outputs)?;
    }
    let pass_fraction = n_pass as f64 / n as f64;
    let outcome = if n_fail > 0 || pass_fraction < cfg.verify.min_pass_fraction {
        Outcome::Fail
    } else if n_inconclusive > 0 {
        Outcome::Inconclusive
    } else {
        Outcome::Pass
    };
    let results = json!({
        "n_checks": reports.len(),
        "n_pass": n_pass,
        "n_fail": n_fail,
        "n_inconclusive": n_inconclusive,
        "pass_fraction": pass_fraction,
        "residuals": to_value(&reports)?,
    });
    Ok((outcome, grade, results, outputs))
}

fn run_ck(cfg: &ExperimentConfig, _out_dir: &Path) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let drift = cfg.build_drift(None)?;
    let sim = cfg.build_sim()?;
    let ck_cfg = cfg.ck.as_ref().expect("resolve checked");
    let dirs = cfg.build_directions(&space);
    let initial = cfg.build_initial(&space)?;
    let x = match initial {
        fplab_core::engine::InitialLaw::Dirac(x) => x,
        _ => anyhow::bail!("ck runs need a Dirac initial law"),
    };
    let rep = ck_check(
        &space,
        &noise,
        &drift,
        &x,
        ck_cfg.r,
        ck_cfg.s_mid,
        ck_cfg.t,
        &sim,
        &dirs,
        cfg.verify.sigma_level,
    )?;
    let probe = probe_conditions(&drift, &space, &cfg.sampling_plan());
    let grade = Some(grade_string(classify_grade(&drift, &probe)));
    let outcome = if rep.pass_fraction >= ck_cfg.min_pass_fraction {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    Ok((outcome, grade, json!({ "ck": to_value(&rep)? }), vec![]))
}

fn run_alpha_sweep(cfg: &ExperimentConfig, _out_dir: &Path) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let drift_cfg = cfg.drift.as_ref().expect("resolve checked");
    let alphas = drift_cfg
        .alphas
        .clone()
        .context("alpha_sweep needs drift.alphas")?;
    let drift = cfg.build_drift(Some(alphas[0]))?;
    let sim = cfg.build_sim()?;
    let initial = cfg.build_initial(&space)?;
    let dirs = cfg.build_directions(&space);
    let rep = alpha_sweep(
        &space,
        &noise,
        &drift,
        &alphas,
        &sim,
        &initial,
        &dirs,
        cfg.verify.sigma_level,
    )?;
    let probe = probe_conditions(&drift, &space, &cfg.sampling_plan());
    let grade = Some(grade_string(classify_grade(&drift, &probe)));
    let outcome = if rep.convergence_evidence {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    Ok((outcome, grade, json!({ "alpha_sweep": to_value(&rep)? }), vec![]))
}

fn run_moment_bound(cfg: &ExperimentConfig, out_dir: &Path) -> anyhow::Result<PipelineResult> {
    let space = cfg.build_space()?;
    let noise = cfg.build_noise()?;
    let m_cfg = cfg.moment.as_ref().expect("resolve checked");
    let sim = cfg.build_sim()?;
    let drift_m = cfg.drift.as_ref().expect("resolve checked").m;
    let t_end = cfg.sim.t_end;
    let mut rows = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut k_estimate: f64 = 0.0;
    for &x_const in &m_cfg.x_constants {
        let x0 = space.project_constant(x_const);
        let x0_pow = fplab_core::drift::l2m_norm_pow(&space, &x0, drift_m);
        for &alpha in &m_cfg.alphas {
            let drift = cfg.build_drift(Some(alpha))?;
            let ens = simulate_ensemble(
                &space,
                &noise,
                &drift,
                &sim,
                &fplab_core::engine::InitialLaw::Dirac(x0.clone()),
            )?;
            let m_t = moment(&ens, &space, t_end, MomentKind::L2mPow(drift_m), Some(&drift))?;
            let ratio = m_t.value_re / (1.0 + x0_pow);
            ratios.push(ratio);
            let v_end = moment(&ens, &space, t_end, MomentKind::LyapunovSq, Some(&drift))?;
            let v0 = lyapunov_v(&drift, &space, sim.s, &x0).powi(2);
            if v0 > 0.0 {
                k_estimate = k_estimate.max(v_end.value_re / v0);
            }
            rows.push(json!({
                "x_const": x_const,
                "x_l2m_pow": x0_pow,
                "alpha": alpha,
                "moment_2m": m_t.value_re,
                "std_error": m_t.std_error,
                "ratio": ratio,
                "lyapunov_sq_end": v_end.value_re,
            }));
        }
    }
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if min > 0.0 { max / min } else { f64::INFINITY };
    let pass = spread <= m_cfg.ratio_max;
    let results = json!({
        "rows": rows,
        "ratio_max_over_min": spread,
        "ratio_threshold": m_cfg.ratio_max,
        "lyapunov_k_estimate": k_estimate,
    });
    // plot-ready CSV is always cheap to keep next to the report
    let csv_path = out_dir.join("moment_ratio.csv");
    let mut csv = String::from("x_const,x_l2m_pow,alpha,moment_2m,std_error,ratio\n");
    if let Some(arr) = results["rows"].as_array() {
        for r in arr {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r["x_const"], r["x_l2m_pow"], r["alpha"], r["moment_2m"], r["std_error"], r["ratio"]
            ));
        }
    }
    std::fs::write(&csv_path, csv)?;
    let outcome = if pass { Outcome::Pass } else { Outcome::Fail };
    Ok((outcome, None, results, vec!["moment_ratio.csv".into()]))
}

