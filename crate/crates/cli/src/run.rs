//! Executes one configuration and writes its artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use qsmfg::coupling::{ergodic_drive, kset_report, run, InitialGuess, KsetReport, LevelRecord, Strategy};
use qsmfg::model::validate::{validate_model, ValidationReport};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSummary {
    pub levels: Vec<LevelRecord>,
    pub direct_lambda_gap: f64,
    pub direct_shape_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub mode: Mode,
    pub strategy: Strategy,
    pub rho: Option<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub final_error: Option<f64>,
    pub contraction_rate: f64,
    pub max_hjb_residual: f64,
    pub max_mu_residual: f64,
    pub max_fp_residual: f64,
    pub max_mass_error: f64,
    /// `rho u(x0)` (discounted) or `lambda` (ergodic) at the first and last
    /// time node.
    pub lambda_first: f64,
    pub lambda_last: f64,
    pub kset: Option<KsetReport>,
    pub ergodic: Option<ErgodicSummary>,
    pub validation_passed: Option<bool>,
    pub seconds: f64,
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), text).with_context(|| format!("writing {}", dir.join(name).display()))
}

pub fn validate(cfg: &RunConfig) -> Result<ValidationReport> {
    let prepared = cfg.prepare()?;
    Ok(validate_model(prepared.spec.as_ref(), &prepared.validate)?)
}

/// Runs `cfg`, writing into `out` (created if missing).
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let prepared = cfg.prepare()?;
    let start = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "config.json", &serde_json::to_string_pretty(cfg)?)?;

    let spec = prepared.spec.as_ref();
    let mut validation_passed = None;
    if cfg.diagnostics.validate {
        let report = validate_model(spec, &prepared.validate)?;
        validation_passed = Some(report.passed());
        write(out, "validation.json", &serde_json::to_string_pretty(&report)?)?;
    }

    let (sol, ergodic) = match cfg.mode {
        Mode::Discounted => (run(spec, &prepared.m0, &prepared.coupling, &InitialGuess::Stationary)?, None),
        Mode::Ergodic => {
            let drive = ergodic_drive(spec, &prepared.m0, &prepared.coupling, &InitialGuess::Stationary)?;
            let mut levels = String::from(
                "level,rho,lambda0,lambda_increment,shape_increment,m_increment,increment,outer_iterations,converged\n",
            );
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
            for l in &drive.levels {
                levels.push_str(&format!(
                    "{},{:.16e},{:.16e},{},{},{},{},{},{}\n",
                    l.level,
                    l.rho,
                    l.lambda0,
                    opt(l.lambda_increment),
                    opt(l.shape_increment),
                    opt(l.m_increment),
                    opt(l.increment),
                    l.outer_iterations,
                    l.converged
                ));
            }
            write(out, "levels.csv", &levels)?;
            let summary = ErgodicSummary {
                levels: drive.levels,
                direct_lambda_gap: drive.direct_lambda_gap,
                direct_shape_gap: drive.direct_shape_gap,
            };
            let mut sol = drive.solution;
            sol.converged = drive.converged;
            (sol, Some(summary))
        }
    };

    write(out, "convergence.csv", &sol.convergence_csv())?;
    write(out, "trajectory.csv", &sol.trajectory_csv())?;
    if cfg.diagnostics.binary {
        let mut w = BufWriter::new(File::create(out.join("densities.bin"))?);
        sol.fp_trajectory().write_binary(&mut w)?;
    }
    let kset = if cfg.diagnostics.kset && sol.slices.len() >= 2 {
        Some(kset_report(spec, &sol, &prepared.coupling.ot)?)
    } else {
        None
    };
    let lambdas = sol.lambdas();
    let summary = Summary {
        model: spec.name().to_string(),
        mode: cfg.mode,
        strategy: sol.strategy,
        rho: sol.rho,
        converged: sol.converged,
        outer_iterations: sol.outer_iterations(),
        final_error: sol.log.last().map(|r| r.error),
        contraction_rate: sol.contraction_rate,
        max_hjb_residual: sol.max_hjb_residual(),
        max_mu_residual: sol.max_mu_residual(),
        max_fp_residual: sol.max_fp_residual(),
        max_mass_error: sol.max_mass_error(),
        lambda_first: lambdas[0],
        lambda_last: *lambdas.last().expect("at least one slice"),
        kset,
        ergodic,
        validation_passed,
        seconds: start.elapsed().as_secs_f64(),
    };
    write(out, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
