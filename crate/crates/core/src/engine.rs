//! The DAMA main loop.
//!
//! Per round, with `M_i` the current GRACE estimate:
//!
//! ```text
//! X_{i+1} = A (C X_i − μ_x M_{x,i}) − B D_{x,i}
//! Y_{i+1} = A (C Y_i + μ_y M_{y,i}) − B D_{y,i}
//! D_{i+1} = D_i + B (X_{i+1}, Y_{i+1})
//! M_{i+1} = GRACE(X_{i+1}, X_i; Y_{i+1}, Y_i)
//! ```
//!
//! The estimate for round `i+1` is formed right after the dual step rather than
//! at the top of the next round; the arithmetic is identical, and it lets the
//! metrics of round `i` see `M_i`.

use serde::{Deserialize, Serialize};

use crate::grace::{estimator_error, init_estimator, update_estimator, GraceParams, GraceState};
use crate::mixing::MixingMatrix;
use crate::problems::MinimaxProblem;
use crate::strategies::{apply, build_strategy, BlockVector, StrategyKind, StrategyOps};
use crate::transform::{
    build_transform_bundle, check_consensus_bound, coupled_error_norms, ConsensusCheck, CoupledError, IterateView,
    TransformBundle,
};
use crate::{Error, Result};

/// Any iterate entry above this in magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub strategy: StrategyKind,
    pub mu_x: f64,
    pub mu_y: f64,
    pub grace: GraceParams,
    pub t: usize,
    pub seed: u64,
    pub record_transform_diagnostics: bool,
    /// Common initial point of every agent; zero when absent.
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_x >= 0.0 && self.mu_y >= 0.0) || !self.mu_x.is_finite() || !self.mu_y.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step sizes must be finite and non-negative (mu_x = {}, mu_y = {})",
                self.mu_x, self.mu_y
            )));
        }
        if self.t == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        self.grace.validate()
    }
}

#[derive(Debug, Clone)]
pub struct EngineState {
    pub x: BlockVector,
    pub y: BlockVector,
    pub d_x: BlockVector,
    pub d_y: BlockVector,
    pub grace: GraceState,
    pub round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub grad_x_sq: f64,
    pub grad_y_sq: f64,
    pub consensus_sq: f64,
    pub delta_c: f64,
    pub est_err_sq: f64,
    pub est_err_avg_sq: f64,
    pub ehat_x_sq: Option<f64>,
    pub ehat_y_sq: Option<f64>,
    /// Cumulative samples drawn per agent, including the initial batch.
    pub samples_used: u64,
    /// Outcome of the consensus bound check (diagnostics only).
    #[serde(skip)]
    pub consensus_bound: Option<ConsensusCheck>,
}

impl RoundMetrics {
    pub fn stationarity(&self) -> f64 {
        self.grad_x_sq + self.grad_y_sq
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    /// Requested round budget.
    pub t: usize,
    /// Rows for rounds `0..=T` (fewer after divergence).
    pub rows: Vec<RoundMetrics>,
    /// `(round, max |entry|)` when the run diverged.
    pub divergence: Option<(usize, f64)>,
}

impl MetricsSeries {
    /// `(1/T) Σ_{i<T} (‖∇_xJ‖² + ‖∇_yJ‖²)` at the centroid; over the available
    /// rows if the run stopped early.
    pub fn averaged_stationarity(&self) -> f64 {
        let rows: Vec<&RoundMetrics> = self.rows.iter().filter(|r| r.round < self.t).collect();
        if rows.is_empty() {
            return f64::NAN;
        }
        rows.iter().map(|r| r.stationarity()).sum::<f64>() / rows.len() as f64
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rows.last()
    }

    pub fn completed(&self) -> bool {
        self.divergence.is_none()
    }
}

pub struct Engine<'a, P: MinimaxProblem + ?Sized> {
    config: EngineConfig,
    problem: &'a P,
    ops: StrategyOps,
    bundle: Option<TransformBundle>,
    state: EngineState,
}

fn initial_block(agents: usize, dim: usize, v: &Option<Vec<f64>>, what: &str) -> Result<BlockVector> {
    match v {
        None => Ok(BlockVector::zeros(agents, dim)),
        Some(v) if v.len() == dim => Ok(BlockVector::replicate(agents, v)),
        Some(v) => Err(Error::ShapeMismatch(format!(
            "{what} has length {}, problem dimension is {dim}",
            v.len()
        ))),
    }
}

impl<'a, P: MinimaxProblem + ?Sized> Engine<'a, P> {
    pub fn new(config: EngineConfig, problem: &'a P, w: &MixingMatrix) -> Result<Self> {
        let ops = build_strategy(config.strategy, w)?;
        let bundle = if config.record_transform_diagnostics {
            Some(build_transform_bundle(&ops, w)?)
        } else {
            None
        };
        Self::with_ops(config, problem, ops, bundle)
    }

    /// Builds an engine from prepared operators (and optionally a bundle).
    pub fn with_ops(
        config: EngineConfig,
        problem: &'a P,
        ops: StrategyOps,
        bundle: Option<TransformBundle>,
    ) -> Result<Self> {
        config.validate()?;
        let k = problem.agents();
        if ops.agents() != k {
            return Err(Error::ShapeMismatch(format!(
                "network has {} agents, problem has {k}",
                ops.agents()
            )));
        }
        let (d1, d2) = problem.dims();
        let x = initial_block(k, d1, &config.x0, "x0")?;
        let y = initial_block(k, d2, &config.y0, "y0")?;
        let grace = init_estimator(problem, &config.grace, &x, &y, config.seed)?;
        let state = EngineState {
            d_x: BlockVector::zeros(k, d1),
            d_y: BlockVector::zeros(k, d2),
            x,
            y,
            grace,
            round: 0,
        };
        Ok(Self {
            config,
            problem,
            ops,
            bundle,
            state,
        })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut EngineState {
        &mut self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn ops(&self) -> &StrategyOps {
        &self.ops
    }

    pub fn bundle(&self) -> Option<&TransformBundle> {
        self.bundle.as_ref()
    }

    /// Advances one round.
    pub fn step(&mut self) -> Result<()> {
        let ops = &self.ops;
        let s = &mut self.state;
        let (mu_x, mu_y) = (self.config.mu_x, self.config.mu_y);

        let mut inner_x = apply(&ops.c, &s.x)?;
        inner_x.axpy(-mu_x, &s.grace.m_x);
        let mut x_next = apply(&ops.a, &inner_x)?;
        x_next.axpy(-1.0, &apply(&ops.b, &s.d_x)?);

        let mut inner_y = apply(&ops.c, &s.y)?;
        inner_y.axpy(mu_y, &s.grace.m_y);
        let mut y_next = apply(&ops.a, &inner_y)?;
        y_next.axpy(-1.0, &apply(&ops.b, &s.d_y)?);

        s.d_x.axpy(1.0, &apply(&ops.b, &x_next)?);
        s.d_y.axpy(1.0, &apply(&ops.b, &y_next)?);

        let round = s.round + 1;
        let max_abs = [&x_next, &y_next, &s.d_x, &s.d_y]
            .iter()
            .map(|v| if v.is_finite() { v.max_abs() } else { f64::INFINITY })
            .fold(0.0, f64::max);
        if max_abs > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { round, max_abs });
        }

        update_estimator(&mut s.grace, &self.config.grace, &x_next, &y_next, self.problem, round)?;
        s.x = x_next;
        s.y = y_next;
        s.round = round;
        Ok(())
    }

    /// Coupled error of the current state (requires diagnostics).
    pub fn coupled_error(&self) -> Option<Result<CoupledError>> {
        let b = self.bundle.as_ref()?;
        let s = &self.state;
        Some(coupled_error_norms(
            IterateView {
                x: &s.x,
                y: &s.y,
                m_x: &s.grace.m_x,
                m_y: &s.grace.m_y,
                d_x: &s.d_x,
                d_y: &s.d_y,
            },
            b,
            self.config.mu_x,
            self.config.mu_y,
        ))
    }

    /// Metrics of the current state (before this round's update).
    pub fn metrics(&self) -> Result<RoundMetrics> {
        let s = &self.state;
        let xc = s.x.mean();
        let yc = s.y.mean();
        let (gx, gy) = self.problem.grad(xc.as_slice(), yc.as_slice());
        let (_, p_val) = self.problem.maximize(xc.as_slice())?;
        let delta_c = p_val - self.problem.value(xc.as_slice(), yc.as_slice());
        let err = estimator_error(&s.grace, self.problem, &s.x, &s.y);
        let (ehat_x_sq, ehat_y_sq, consensus_bound) = match self.coupled_error() {
            Some(ce) => {
                let ce = ce?;
                let check = check_consensus_bound(&s.x, &s.y, &ce, self.bundle.as_ref().expect("bundle present"));
                (Some(ce.ehat_x_sq()), Some(ce.ehat_y_sq()), Some(check))
            }
            None => (None, None, None),
        };
        Ok(RoundMetrics {
            round: s.round,
            grad_x_sq: gx.norm_squared(),
            grad_y_sq: gy.norm_squared(),
            consensus_sq: s.x.consensus_sq() + s.y.consensus_sq(),
            delta_c,
            est_err_sq: err.block_x + err.block_y,
            est_err_avg_sq: err.centroid_x + err.centroid_y,
            ehat_x_sq,
            ehat_y_sq,
            samples_used: s.grace.samples_used(),
            consensus_bound,
        })
    }

    /// Runs the remaining rounds up to `T`, recording metrics before each update
    /// and after the last one.
    pub fn run(&mut self) -> Result<MetricsSeries> {
        let t = self.config.t;
        let mut rows = Vec::with_capacity(t + 1);
        let mut divergence = None;
        rows.push(self.metrics()?);
        while self.state.round < t {
            match self.step() {
                Ok(()) => rows.push(self.metrics()?),
                Err(Error::Divergence { round, max_abs }) => {
                    log::warn!("run diverged at round {round} (max |entry| = {max_abs:e})");
                    divergence = Some((round, max_abs));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(MetricsSeries { t, rows, divergence })
    }
}

/// Builds an engine for `config` on `problem` over mixing matrix `w` and runs it.
pub fn run_and_measure<P: MinimaxProblem + ?Sized>(
    config: &EngineConfig,
    problem: &P,
    w: &MixingMatrix,
) -> Result<MetricsSeries> {
    Engine::new(config.clone(), problem, w)?.run()
}
