//! Persistence: per-seed CSV series, summary and resolved-config JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::run::{RunOutput, RunSummary, Setup};
use crate::engine::MetricsSeries;
use crate::schedules::StepParams;
use crate::{Error, Result};

pub const CSV_HEADER: &str =
    "round,grad_x_sq,grad_y_sq,consensus_sq,delta_c,est_err_sq,est_err_avg_sq,ehat_x_sq,ehat_y_sq,samples_used";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// CSV text of one series; floats carry 17 significant digits.
pub fn series_csv(series: &MetricsSeries) -> String {
    let mut out = String::with_capacity(200 * (series.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &series.rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.round,
            r.grad_x_sq,
            r.grad_y_sq,
            r.consensus_sq,
            r.delta_c,
            r.est_err_sq,
            r.est_err_avg_sq,
            opt(r.ehat_x_sq),
            opt(r.ehat_y_sq),
            r.samples_used
        );
    }
    out
}

/// The resolved configuration together with the step sizes it produced.
#[derive(Debug, Serialize)]
pub struct ResolvedEcho<'a> {
    #[serde(flatten)]
    pub config: &'a RunConfig,
    pub resolved_steps: &'a StepParams,
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidConfig(format!("JSON serialization failed: {e}")))
}

pub fn write_outputs(
    summary: &RunSummary,
    series: &[(u64, MetricsSeries)],
    config: &RunConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for (seed, s) in series {
        let path = dir.join(format!("seed_{seed}.csv"));
        write_file(&path, &series_csv(s))?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    write_file(&path, &(to_json(summary)? + "\n"))?;
    written.push(path);
    let path = dir.join("config.resolved.json");
    let echo = ResolvedEcho {
        config,
        resolved_steps: &summary.steps,
    };
    write_file(&path, &(to_json(&echo)? + "\n"))?;
    written.push(path);
    Ok(written)
}

pub fn write_run(setup: &Setup, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    write_outputs(&out.summary, &out.series, &setup.config, dir)
}

/// Writes `W` as CSV to `dir/mixing.csv`.
pub fn dump_mixing(setup: &Setup, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("mixing.csv");
    write_file(&path, &setup.mixing.to_csv())?;
    Ok(path)
}
