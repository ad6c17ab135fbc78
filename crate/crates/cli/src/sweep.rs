//! Cartesian parameter sweeps over a base configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Deserialize;
use serde_json::Value;

use crate::config::{ConfigError, RunConfig};
use crate::run::{execute, Summary};

/// One swept field, addressed by a dotted path into the base config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: Value,
    pub axes: Vec<Axis>,
    pub output_dir: PathBuf,
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    for part in parents {
        node = node
            .get_mut(*part)
            .ok_or_else(|| ConfigError::new(path, format!("no field `{part}` in the base config")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| ConfigError::new(path, "parent is not an object"))?;
    obj.insert((*last).to_string(), value);
    Ok(())
}

/// Expands the Cartesian product of the axes, last axis fastest.
pub fn expand(sweep: &SweepConfig) -> Result<Vec<(Vec<Value>, RunConfig)>, ConfigError> {
    if sweep.axes.iter().any(|a| a.values.is_empty()) {
        return Err(ConfigError::new("axes", "every axis needs at least one value"));
    }
    let total: usize = sweep.axes.iter().map(|a| a.values.len()).product();
    let mut points = Vec::with_capacity(total);
    for k in 0..total {
        let mut rem = k;
        let mut chosen = vec![Value::Null; sweep.axes.len()];
        for (i, axis) in sweep.axes.iter().enumerate().rev() {
            chosen[i] = axis.values[rem % axis.values.len()].clone();
            rem /= axis.values.len();
        }
        let mut cfg = sweep.base.clone();
        for (axis, v) in sweep.axes.iter().zip(&chosen) {
            set_path(&mut cfg, &axis.path, v.clone())?;
        }
        let cfg: RunConfig = serde_json::from_value(cfg)
            .map_err(|e| ConfigError::new(format!("point {k}"), e.to_string()))?;
        points.push((chosen, cfg));
    }
    Ok(points)
}

/// Runs every point into `output_dir/point_k` and writes `sweep.csv`.
/// Returns the summaries in point order.
pub fn run_sweep(sweep: &SweepConfig) -> Result<Vec<Summary>> {
    let points = expand(sweep)?;
    // Validate every point before spending time on any of them.
    for (k, (_, cfg)) in points.iter().enumerate() {
        cfg.prepare()
            .map_err(|e| ConfigError::new(format!("point {k}: {}", e.field), e.reason))?;
    }
    fs::create_dir_all(&sweep.output_dir)?;
    let mut csv = String::from("point");
    for axis in &sweep.axes {
        let _ = write!(csv, ",{}", axis.path);
    }
    csv.push_str(",converged,outer_iterations,final_error,max_hjb_residual,max_mu_residual,lambda_first,seconds\n");
    let mut summaries = Vec::new();
    for (k, (values, cfg)) in points.iter().enumerate() {
        let dir: PathBuf = sweep.output_dir.join(format!("point_{k}"));
        let s = execute(cfg, Path::new(&dir))?;
        let _ = write!(csv, "{k}");
        for v in values {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(
            csv,
            ",{},{},{},{:.6e},{:.6e},{:.16e},{:.3}",
            s.converged,
            s.outer_iterations,
            s.final_error.map_or(String::new(), |e| format!("{e:.6e}")),
            s.max_hjb_residual,
            s.max_mu_residual,
            s.lambda_first,
            s.seconds
        );
        summaries.push(s);
    }
    fs::write(sweep.output_dir.join("sweep.csv"), csv)?;
    Ok(summaries)
}
