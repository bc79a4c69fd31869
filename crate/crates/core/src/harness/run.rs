//! Experiment orchestration: one engine per seed, deterministic aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ProblemKind, RunConfig, ScheduleChoice};
use crate::engine::{Engine, EngineConfig, MetricsSeries};
use crate::mixing::{mixing_for, MixingMatrix};
use crate::problems::{
    make_quadratic_problem, make_quadratic_problem_with_kappa, make_sinpl_problem, AnyProblem, MinimaxProblem,
    ProblemConstants,
};
use crate::schedules::{
    schedule_for_mode, shrink_to_conditions, theorem_constants, validate_conditions, ConditionReport, ScheduleSpec,
    StepParams, TheoremConstants,
};
use crate::strategies::{build_strategy, StrategyOps};
use crate::transform::{build_transform_bundle, TransformBundle};
use crate::{Error, Result};

/// Everything shared by the seeds of one run.
pub struct Setup {
    pub config: RunConfig,
    pub mixing: MixingMatrix,
    pub problem: AnyProblem,
    pub ops: StrategyOps,
    pub bundle: Option<TransformBundle>,
    pub steps: StepParams,
    pub conditions: Option<ConditionReport>,
    pub theorem: Option<TheoremConstants>,
}

pub fn build_problem(config: &RunConfig) -> Result<AnyProblem> {
    let pc = &config.problem;
    let k = config.topology.agents;
    Ok(match pc.kind {
        ProblemKind::Quadratic => AnyProblem::Quadratic(match pc.kappa {
            Some(kappa) => {
                make_quadratic_problem_with_kappa(k, pc.samples, pc.sigma, pc.seed, &pc.quadratic_spec(), kappa)?
            }
            None => make_quadratic_problem(k, pc.samples, pc.sigma, pc.seed, &pc.quadratic_spec())?,
        }),
        ProblemKind::Sinpl => AnyProblem::SinPl(make_sinpl_problem(k, pc.samples, pc.sigma, pc.seed)?),
    })
}

/// Resolves step sizes for `choice`, shrinking presets when requested.
pub fn resolve_steps(
    choice: &ScheduleChoice,
    t: usize,
    problem: &dyn MinimaxProblem,
    mixing: &MixingMatrix,
    bundle: Option<&TransformBundle>,
) -> Result<StepParams> {
    match choice {
        ScheduleChoice::Explicit { mu_x, mu_y, grace } => Ok(StepParams {
            mu_x: *mu_x,
            mu_y: *mu_y,
            grace: *grace,
            shrinks_x: 0,
            shrinks_y: 0,
        }),
        ScheduleChoice::Preset { mode, knobs, shrink } => {
            let spec = ScheduleSpec {
                mode: *mode,
                knobs: *knobs,
                t,
                agents: problem.agents(),
                n: problem.sample_count(),
                kappa: problem.constants().kappa,
                lambda: Some(mixing.lambda()),
            };
            let steps = schedule_for_mode(&spec)?;
            match (shrink, bundle) {
                (true, Some(b)) => Ok(shrink_to_conditions(steps, &problem.constants(), b)?.0),
                (true, None) => {
                    log::warn!("no spectral constants for this strategy; step sizes not shrunk");
                    Ok(steps)
                }
                (false, _) => Ok(steps),
            }
        }
    }
}

impl Setup {
    pub fn new(config: RunConfig) -> Result<Self> {
        let topo = config.topology.topology()?;
        let lazy = config.topology.lazy.unwrap_or(config.strategy.default_lazy());
        let mixing = mixing_for(&topo, lazy)?;
        let problem = build_problem(&config)?;
        let ops = build_strategy(config.strategy, &mixing)?;
        let bundle = match build_transform_bundle(&ops, &mixing) {
            Ok(b) => Some(b),
            Err(e) => {
                log::warn!("spectral diagnostics unavailable: {e}");
                None
            }
        };
        if config.diagnostics && bundle.is_none() {
            return Err(Error::InvalidConfig(
                "diagnostics requested but the transform bundle could not be built".into(),
            ));
        }
        let steps = resolve_steps(&config.schedule, config.t, &problem, &mixing, bundle.as_ref())?;
        let pc = problem.constants();
        let conditions = bundle
            .as_ref()
            .map(|b| validate_conditions(steps.mu_x, steps.mu_y, &steps.grace, &pc, b));
        let theorem = bundle
            .as_ref()
            .and_then(|b| theorem_constants(&steps.grace, b, &pc, config.t, problem.is_online()).ok());
        Ok(Self {
            config,
            mixing,
            problem,
            ops,
            bundle,
            steps,
            conditions,
            theorem,
        })
    }

    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            strategy: self.config.strategy,
            mu_x: self.steps.mu_x,
            mu_y: self.steps.mu_y,
            grace: self.steps.grace,
            t: self.config.t,
            seed,
            record_transform_diagnostics: self.config.diagnostics,
            x0: self.config.x0.clone(),
            y0: self.config.y0.clone(),
        }
    }

    pub fn run_seed(&self, seed: u64) -> Result<MetricsSeries> {
        let bundle = if self.config.diagnostics { self.bundle.clone() } else { None };
        Engine::with_ops(self.engine_config(seed), &self.problem, self.ops.clone(), bundle)?.run()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation, accumulated in the given order.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedConstants {
    pub nu: f64,
    pub l_f: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub lambda_underline: f64,
    pub rho: Option<f64>,
    pub lam_a: Option<f64>,
    pub lam_b_underline: Option<f64>,
    pub v1_sq: Option<f64>,
    pub v2_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDigest {
    pub pass: bool,
    pub step_sizes_pass: bool,
    pub violated: Vec<String>,
    pub binding: Option<String>,
}

impl ConditionDigest {
    fn of(r: &ConditionReport) -> Self {
        Self {
            pass: r.pass,
            step_sizes_pass: r.step_sizes_pass(),
            violated: r.violated().map(|c| c.name.clone()).collect(),
            binding: r.binding().map(|c| c.name.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub averaged_metric: f64,
    pub final_metric: f64,
    pub final_consensus: f64,
    pub samples_used: u64,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantDigest {
    /// Minimum `Δ_c` over every row of every seed.
    pub delta_c_min: f64,
    pub delta_c_ok: bool,
    /// Consensus bound at every recorded row (diagnostics only).
    pub consensus_bound_ok: Option<bool>,
    pub all_seeds_completed: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub constants: RealizedConstants,
    pub steps: StepParams,
    pub conditions: Option<ConditionDigest>,
    pub theorem_constants: Option<TheoremConstants>,
    /// Mean ± std over surviving seeds of `(1/T) Σ (‖∇_xJ‖² + ‖∇_yJ‖²)`.
    pub averaged_metric: MeanStd,
    pub final_metric: MeanStd,
    pub final_consensus: MeanStd,
    /// Mean over surviving seeds of the cumulative samples per agent.
    pub samples_per_agent: f64,
    pub surviving_seeds: usize,
    pub seeds: Vec<SeedSummary>,
    pub invariants: InvariantDigest,
}

/// Output of [`run_experiment`]: the summary and one series per seed.
pub struct RunOutput {
    pub summary: RunSummary,
    pub series: Vec<(u64, MetricsSeries)>,
}

fn realized(problem: &ProblemConstants, mixing: &MixingMatrix, bundle: Option<&TransformBundle>) -> RealizedConstants {
    RealizedConstants {
        nu: problem.nu,
        l_f: problem.l_f,
        kappa: problem.kappa,
        sigma: problem.sigma,
        lambda: mixing.lambda(),
        lambda_underline: mixing.lambda_min_nonzero(),
        rho: bundle.map(|b| b.rho),
        lam_a: bundle.map(|b| b.lam_a_max),
        lam_b_underline: bundle.map(|b| b.lam_b_underline),
        v1_sq: bundle.map(|b| b.v1_sq),
        v2_sq: bundle.map(|b| b.v2_sq),
    }
}

/// Tolerance on `Δ_c ≥ 0`.
pub const DELTA_C_TOL: f64 = 1e-10;

pub fn summarize(setup: &Setup, series: &[(u64, MetricsSeries)]) -> RunSummary {
    let seeds: Vec<SeedSummary> = series
        .iter()
        .map(|(seed, s)| {
            let last = s.last();
            SeedSummary {
                seed: *seed,
                averaged_metric: s.averaged_stationarity(),
                final_metric: last.map_or(f64::NAN, |r| r.stationarity()),
                final_consensus: last.map_or(f64::NAN, |r| r.consensus_sq),
                samples_used: last.map_or(0, |r| r.samples_used),
                diverged_at: s.divergence.map(|(r, _)| r),
            }
        })
        .collect();
    let surviving: Vec<&SeedSummary> = seeds.iter().filter(|s| s.diverged_at.is_none()).collect();
    if surviving.len() < seeds.len() {
        log::warn!(
            "{} of {} seeds diverged; aggregating over the rest",
            seeds.len() - surviving.len(),
            seeds.len()
        );
    }
    let col = |f: fn(&SeedSummary) -> f64| surviving.iter().map(|s| f(s)).collect::<Vec<f64>>();
    let delta_c_min = series
        .iter()
        .flat_map(|(_, s)| s.rows.iter().map(|r| r.delta_c))
        .fold(f64::INFINITY, f64::min);
    let consensus_bound_ok = setup.config.diagnostics.then(|| {
        series
            .iter()
            .flat_map(|(_, s)| s.rows.iter())
            .all(|r| r.consensus_bound.is_none_or(|c| c.pass))
    });
    let delta_c_ok = delta_c_min >= -DELTA_C_TOL;
    let all_seeds_completed = surviving.len() == seeds.len();
    let samples = col(|s| s.samples_used as f64);
    RunSummary {
        strategy: setup.config.strategy.name().into(),
        t: setup.config.t,
        constants: realized(&setup.problem.constants(), &setup.mixing, setup.bundle.as_ref()),
        steps: setup.steps,
        conditions: setup.conditions.as_ref().map(ConditionDigest::of),
        theorem_constants: setup.theorem,
        averaged_metric: MeanStd::of(&col(|s| s.averaged_metric)),
        final_metric: MeanStd::of(&col(|s| s.final_metric)),
        final_consensus: MeanStd::of(&col(|s| s.final_consensus)),
        samples_per_agent: MeanStd::of(&samples).mean,
        surviving_seeds: surviving.len(),
        invariants: InvariantDigest {
            delta_c_min,
            delta_c_ok,
            consensus_bound_ok,
            all_seeds_completed,
            pass: delta_c_ok && consensus_bound_ok.unwrap_or(true) && all_seeds_completed,
        },
        seeds,
    }
}

/// Runs every seed (in parallel) and aggregates in ascending seed order.
pub fn run_experiment(config: RunConfig) -> Result<RunOutput> {
    let setup = Setup::new(config)?;
    run_setup(&setup)
}

pub fn run_setup(setup: &Setup) -> Result<RunOutput> {
    let mut seeds = setup.config.seeds.clone();
    seeds.sort_unstable();
    let results: Vec<Result<(u64, MetricsSeries)>> =
        seeds.par_iter().map(|&s| setup.run_seed(s).map(|m| (s, m))).collect();
    let series = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(setup, &series);
    Ok(RunOutput { summary, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;
    use std::path::Path;

    fn cfg(seeds: &str) -> RunConfig {
        let text = format!(
            r#"
T = 50
seeds = {seeds}
strategy = "ED"
[topology]
kind = "ring"
K = 4
[problem]
kind = "quadratic"
sigma = 0.5
[schedule]
mode = "STORM_ED"
"#
        );
        parse_config(&text, Path::new("t")).unwrap()
    }

    #[test]
    fn single_seed_has_zero_std() {
        let out = run_experiment(cfg("[3]")).unwrap();
        assert_eq!(out.summary.averaged_metric.std, 0.0);
        assert_eq!(out.summary.averaged_metric.mean, out.summary.seeds[0].averaged_metric);
    }

    #[test]
    fn repeated_seed_has_zero_std() {
        let out = run_experiment(cfg("[5, 5]")).unwrap();
        assert_eq!(out.summary.averaged_metric.std, 0.0);
    }

    #[test]
    fn seeds_are_aggregated_in_order() {
        let out = run_experiment(cfg("[9, 1, 4]")).unwrap();
        let order: Vec<u64> = out.summary.seeds.iter().map(|s| s.seed).collect();
        assert_eq!(order, vec![1, 4, 9]);
        assert!(out.summary.invariants.delta_c_ok);
    }
}
