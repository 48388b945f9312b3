//! Flatten reports into tidy CSV: one row per (time, direction, value,
//! error), consumable by any plotting tool.

use std::path::Path;

use anyhow::{bail, Context};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ResidualVsT,
    CkGaps,
    AlphaGaps,
    MomentRatio,
}

impl PlotKind {
    pub fn parse(name: &str) -> anyhow::Result<Self> {
        Ok(match name {
            "residual_vs_t" => PlotKind::ResidualVsT,
            "ck_gaps" => PlotKind::CkGaps,
            "alpha_gaps" => PlotKind::AlphaGaps,
            "moment_ratio" => PlotKind::MomentRatio,
            other => bail!("unknown plot kind {other}"),
        })
    }

    fn expected_run_kind(self) -> &'static str {
        match self {
            PlotKind::ResidualVsT => "fp_residual",
            PlotKind::CkGaps => "ck",
            PlotKind::AlphaGaps => "alpha_sweep",
            PlotKind::MomentRatio => "moment_bound",
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            PlotKind::ResidualVsT => "residual_vs_t.csv",
            PlotKind::CkGaps => "ck_gaps.csv",
            PlotKind::AlphaGaps => "alpha_gaps.csv",
            PlotKind::MomentRatio => "moment_ratio.csv",
        }
    }
}

pub fn emit_plotdata(kind: PlotKind, report_paths: &[std::path::PathBuf], out_dir: &Path) -> anyhow::Result<std::path::PathBuf> {
    if report_paths.is_empty() {
        bail!("no report files given");
    }
    let mut rows = Vec::new();
    for path in report_paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading report {}", path.display()))?;
        let report: Value = serde_json::from_str(&text).context("parsing report JSON")?;
        let run_kind = report["run_kind"].as_str().unwrap_or("");
        if run_kind != kind.expected_run_kind() {
            bail!(
                "report {} has run_kind {run_kind}, expected {}",
                path.display(),
                kind.expected_run_kind()
            );
        }
        extract_rows(kind, &report, &mut rows)?;
    }
    std::fs::create_dir_all(out_dir)?;
    let out = out_dir.join(kind.file_name());
    let header = match kind {
        PlotKind::ResidualVsT => "t,test_fn,residual_re,residual_im,residual_abs,budget,verdict",
        PlotKind::CkGaps => "direction,gap,threshold,pass",
        PlotKind::AlphaGaps => "alpha_hi,alpha_lo,direction,sup_gap,noise_floor",
        PlotKind::MomentRatio => "x_const,alpha,moment_2m,ratio",
    };
    let mut csv = String::from(header);
    csv.push('\n');
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    std::fs::write(&out, csv)?;
    Ok(out)
}

fn extract_rows(kind: PlotKind, report: &Value, rows: &mut Vec<String>) -> anyhow::Result<()> {
    let results = &report["results"];
    match kind {
        PlotKind::ResidualVsT => {
            let arr = results["residuals"].as_array().context("schema: residuals")?;
            for r in arr {
                rows.push(format!(
                    "{},{},{},{},{},{},{}",
                    r["t_eval"],
                    r["test_fn_id"].as_str().unwrap_or("?"),
                    r["residual"][0],
                    r["residual"][1],
                    r["residual_abs"],
                    r["error_budget"],
                    r["verdict"].as_str().unwrap_or("?"),
                ));
            }
        }
        PlotKind::CkGaps => {
            let arr = results["ck"]["gaps"].as_array().context("schema: ck.gaps")?;
            for g in arr {
                rows.push(format!(
                    "{},{},{},{}",
                    g["label"].as_str().unwrap_or("?"),
                    g["gap"],
                    g["threshold"],
                    g["pass"],
                ));
            }
        }
        PlotKind::AlphaGaps => {
            let arr = results["alpha_sweep"]["pairs"]
                .as_array()
                .context("schema: alpha_sweep.pairs")?;
            for p in arr {
                let dirs = p["per_direction"].as_array().context("schema: per_direction")?;
                for d in dirs {
                    rows.push(format!(
                        "{},{},{},{},{}",
                        p["alpha_hi"],
                        p["alpha_lo"],
                        d[0].as_str().unwrap_or("?"),
                        d[1],
                        d[2],
                    ));
                }
            }
        }
        PlotKind::MomentRatio => {
            let arr = results["rows"].as_array().context("schema: rows")?;
            for r in arr {
                rows.push(format!(
                    "{},{},{},{}",
                    r["x_const"], r["alpha"], r["moment_2m"], r["ratio"],
                ));
            }
        }
    }
    Ok(())
}
