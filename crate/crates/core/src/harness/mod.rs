//! Configuration, experiment orchestration and persistence.

pub mod config;
pub mod output;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};

pub use config::{load_config, parse_config, RunConfig};
pub use output::{write_outputs, write_run};
pub use run::{run_experiment, RunOutput, RunSummary, Setup};
pub use verify::run_invariant_suite;

use serde::Serialize;

use crate::mixing::{mixing_for, Topology};
use crate::problems::{make_quadratic_problem, make_quadratic_problem_with_kappa, MinimaxProblem, QuadraticSpec};
use crate::schedules::{
    schedule_for_mode, shrink_to_conditions, validate_conditions, ConditionReport, ScheduleKnobs, ScheduleMode,
    ScheduleSpec, StepParams,
};
use crate::strategies::{build_strategy, StrategyKind};
use crate::transform::build_transform_bundle;
use crate::{Error, Result};

/// One point of a sweep.
pub struct SweepPoint {
    pub value: String,
    pub summary: RunSummary,
    pub dir: Option<PathBuf>,
}

/// Runs `config_path` once per value of the dotted `key`; with `out`, each point
/// is written to `out/<key>=<value>/`.
pub fn sweep(config_path: &Path, key: &str, values: &[String], out: Option<&Path>) -> Result<Vec<SweepPoint>> {
    let text = std::fs::read_to_string(config_path).map_err(|source| Error::Io {
        path: config_path.to_path_buf(),
        source,
    })?;
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let patched = config::override_key(&text, key, v)?;
        let cfg = parse_config(&patched, config_path)?;
        let setup = Setup::new(cfg)?;
        let run = run::run_setup(&setup)?;
        let dir = match out {
            Some(o) => {
                let d = o.join(format!("{key}={v}"));
                write_run(&setup, &run, &d)?;
                Some(d)
            }
            None => None,
        };
        points.push(SweepPoint {
            value: v.clone(),
            summary: run.summary,
            dir,
        });
    }
    Ok(points)
}

/// Output of the `schedule` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub spec: ScheduleSpec,
    /// Reference setting the conditions are evaluated on.
    pub reference: String,
    pub preset: StepParams,
    pub preset_conditions: ConditionReport,
    /// `None` when the step-size bounds cannot be met by halving.
    pub shrunk: Option<StepParams>,
    pub shrunk_conditions: Option<ConditionReport>,
    /// Name of the most violated condition of the preset, if any.
    pub binding: Option<String>,
}

/// Resolves a preset and evaluates its conditions on a lazy-Metropolis ring of
/// `agents` nodes and the default quadratic (tuned to `kappa` when given).
/// `lambda` overrides the ring's value in the preset formulas only.
pub fn schedule_report(
    mode: ScheduleMode,
    knobs: ScheduleKnobs,
    t: usize,
    agents: usize,
    n: Option<usize>,
    kappa: Option<f64>,
    lambda: Option<f64>,
) -> Result<ScheduleReport> {
    if mode.is_online() == n.is_some() {
        return Err(Error::InvalidConfig(if n.is_some() {
            format!("{mode} is an online mode: N must not be given")
        } else {
            format!("{mode} requires N")
        }));
    }
    let strategy = mode.strategy().unwrap_or(StrategyKind::Ed);
    let w = mixing_for(&Topology::ring(agents), true)?;
    let spec_q = QuadraticSpec::default();
    let problem = match kappa {
        Some(kp) => make_quadratic_problem_with_kappa(agents, n, 1.0, 0, &spec_q, kp)?,
        None => make_quadratic_problem(agents, n, 1.0, 0, &spec_q)?,
    };
    let pc = problem.constants();
    let ops = build_strategy(strategy, &w)?;
    let bundle = build_transform_bundle(&ops, &w)?;
    let spec = ScheduleSpec {
        mode,
        knobs,
        t,
        agents,
        n,
        kappa: pc.kappa,
        lambda: Some(lambda.unwrap_or(w.lambda())),
    };
    let preset = schedule_for_mode(&spec)?;
    let preset_conditions = validate_conditions(preset.mu_x, preset.mu_y, &preset.grace, &pc, &bundle);
    let binding = preset_conditions.binding().map(|c| c.name.clone());
    let (shrunk, shrunk_conditions) = match shrink_to_conditions(preset, &pc, &bundle) {
        Ok((p, r)) => (Some(p), Some(r)),
        Err(e) => {
            log::warn!("{e}");
            (None, None)
        }
    };
    Ok(ScheduleReport {
        spec,
        reference: format!(
            "{strategy} on a lazy-Metropolis ring (K={agents}, lambda={:.6}), quadratic problem \
             (nu={:.6}, L_f={:.6}, kappa={:.6})",
            w.lambda(),
            pc.nu,
            pc.l_f,
            pc.kappa
        ),
        preset,
        preset_conditions,
        binding,
        shrunk,
        shrunk_conditions,
    })
}
