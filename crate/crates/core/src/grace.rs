//! The GRACE gradient estimator.
//!
//! Each round one Bernoulli(`p`) switch `π` is drawn from a dedicated stream and
//! shared by every agent and by both the `x` and `y` sides:
//!
//! - `π = 1`: batch refresh at the current iterate (full local batch offline,
//!   `B` fresh samples online);
//! - `π = 0`: `g ← (1−β)(g − ∇̄Q(prev; ℰ)) + ∇̄Q(cur; ℰ)` where the same minibatch
//!   `ℰ` of size `b` is evaluated at both points.
//!
//! `β = 1, p = 0` is plain minibatch SGD, `p = 0` is STORM, `β = 0` is PAGE /
//! loopless SARAH.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problems::{MinimaxProblem, Sample};
use crate::strategies::BlockVector;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraceMode {
    #[serde(rename = "STORM")]
    Storm,
    #[serde(rename = "PAGE")]
    Page,
    #[serde(rename = "LOOPLESS_SARAH")]
    LooplessSarah,
    #[serde(rename = "CUSTOM")]
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraceParams {
    pub beta: f64,
    pub p: f64,
    /// Recursive-branch minibatch size.
    pub b: usize,
    /// Online refresh batch size.
    pub big_b: usize,
    /// Initialization batch size.
    pub b0: usize,
    pub mode: GraceMode,
}

impl GraceParams {
    /// Checks ranges and mode-tag consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p must lie in [0, 1], got {}", self.p));
        }
        if self.b == 0 || self.big_b == 0 || self.b0 == 0 {
            return bad("batch sizes b, big_b and b0 must be at least 1".into());
        }
        match self.mode {
            GraceMode::Storm if self.p != 0.0 || self.beta <= 0.0 => {
                bad(format!("STORM requires p = 0 and beta > 0 (p = {}, beta = {})", self.p, self.beta))
            }
            GraceMode::Page | GraceMode::LooplessSarah if self.beta != 0.0 || self.p <= 0.0 => bad(format!(
                "{:?} requires beta = 0 and p > 0 (p = {}, beta = {})",
                self.mode, self.p, self.beta
            )),
            _ => Ok(()),
        }
    }

    /// `β̄ = p + β − pβ`.
    pub fn beta_bar(&self) -> f64 {
        self.p + self.beta - self.p * self.beta
    }

    /// `β′ = p + β²`.
    pub fn beta_prime(&self) -> f64 {
        self.p + self.beta * self.beta
    }
}

/// Constant factors in front of the order-of-magnitude presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleKnobs {
    pub c_beta: f64,
    pub c_p: f64,
    pub c_b: f64,
}

impl Default for ScaleKnobs {
    fn default() -> Self {
        Self {
            c_beta: 1.0,
            c_p: 1.0,
            c_b: 1.0,
        }
    }
}

/// `⌈x⌉` that ignores rounding noise just above an integer, floored at 1.
pub(crate) fn ceil_batch(x: f64) -> usize {
    let r = x.round();
    let c = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    if c.is_finite() && c >= 1.0 {
        c as usize
    } else {
        1
    }
}

pub(crate) fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Preset estimator parameters for STORM, offline PAGE and offline loopless SARAH.
pub fn preset_params(
    mode: GraceMode,
    n: Option<usize>,
    agents: usize,
    t: Option<usize>,
    knobs: &ScaleKnobs,
) -> Result<GraceParams> {
    let k = agents as f64;
    match mode {
        GraceMode::Storm => {
            let t = t.ok_or_else(|| Error::InvalidConfig("STORM preset requires T".into()))? as f64;
            Ok(GraceParams {
                beta: clip01(knobs.c_beta * k.cbrt() / (t.cbrt() * t.cbrt())),
                p: 0.0,
                b: 1,
                big_b: 1,
                b0: ceil_batch(knobs.c_b * t.cbrt() / (k.cbrt() * k.cbrt())),
                mode,
            })
        }
        GraceMode::Page => {
            let n = n.ok_or_else(|| Error::InvalidConfig("offline PAGE preset requires N".into()))?;
            let nf = n as f64;
            let b = ceil_batch(knobs.c_b * (nf / k).sqrt());
            Ok(GraceParams {
                beta: 0.0,
                p: clip01(knobs.c_p / (k * nf).sqrt()),
                b,
                big_b: n,
                b0: b,
                mode,
            })
        }
        GraceMode::LooplessSarah => {
            let n = n.ok_or_else(|| Error::InvalidConfig("offline loopless SARAH preset requires N".into()))?;
            let nf = n as f64;
            Ok(GraceParams {
                beta: 0.0,
                p: clip01(knobs.c_p * k / nf),
                b: 1,
                big_b: ceil_batch(nf / k),
                b0: ceil_batch(knobs.c_b * nf.sqrt() / k),
                mode,
            })
        }
        GraceMode::Custom => Err(Error::InvalidConfig(
            "CUSTOM estimator parameters have no preset; give them explicitly".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Init,
    Refresh,
    Recursive,
}

/// What one agent did in one estimator call.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLog {
    pub branch_x: Branch,
    pub branch_y: Branch,
    /// Sample labels evaluated at the previous iterate (recursive branch only).
    pub prev_samples: Vec<String>,
    /// Sample labels evaluated at the current iterate.
    pub cur_samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub agents: Vec<AgentLog>,
}

/// Squared estimator errors against the exact local gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorError {
    pub block_x: f64,
    pub block_y: f64,
    pub centroid_x: f64,
    pub centroid_y: f64,
}

#[derive(Debug, Clone)]
pub struct GraceState {
    pub m_x: BlockVector,
    pub m_y: BlockVector,
    pub prev_x: BlockVector,
    pub prev_y: BlockVector,
    switch_rng: ChaCha8Rng,
    agent_rngs: Vec<ChaCha8Rng>,
    samples_used: u64,
    log: Option<Vec<RoundLog>>,
}

/// Seeds the dedicated switch stream for run seed `seed`.
pub fn switch_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Seeds agent `k`'s sampling stream for run seed `seed`.
pub fn agent_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1))
}

/// Scratch space for accumulating per-agent gradients.
struct Accum {
    gx: Vec<f64>,
    gy: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
}

impl Accum {
    fn new(d1: usize, d2: usize) -> Self {
        Self {
            gx: vec![0.0; d1],
            gy: vec![0.0; d2],
            sx: vec![0.0; d1],
            sy: vec![0.0; d2],
        }
    }

    fn clear(&mut self) {
        self.sx.iter_mut().for_each(|v| *v = 0.0);
        self.sy.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `∇Q(x, y; s)` to the running sums.
    fn add<P: MinimaxProblem + ?Sized>(
        &mut self,
        problem: &P,
        k: usize,
        s: &Sample,
        x: &[f64],
        y: &[f64],
    ) -> Result<()> {
        problem.grad_sample(k, s, x, y, &mut self.gx, &mut self.gy)?;
        if !self.gx.iter().chain(&self.gy).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                agent: k,
                sample: s.label(),
            });
        }
        for (a, g) in self.sx.iter_mut().zip(&self.gx) {
            *a += g;
        }
        for (a, g) in self.sy.iter_mut().zip(&self.gy) {
            *a += g;
        }
        Ok(())
    }
}

/// Draws `n` samples for agent `k`; offline indices are sorted so that sums run in
/// ascending sample-index order.
fn draw_batch<P: MinimaxProblem + ?Sized>(
    problem: &P,
    k: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    let mut batch: Vec<Sample> = (0..n).map(|_| problem.draw_sample(k, rng)).collect();
    if !problem.is_online() {
        batch.sort_by_key(|s| match s {
            Sample::Index(i) => *i,
            Sample::Fresh(_) => 0,
        });
    }
    batch
}

fn check_finite(v: &[f64], k: usize, what: &str) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient {
            agent: k,
            sample: what.into(),
        })
    }
}

impl GraceState {
    pub fn samples_used(&self) -> u64 {
        self.samples_used
    }

    /// Turns on per-round branch / sample logging.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> Option<&[RoundLog]> {
        self.log.as_deref()
    }

    /// Computes the batch mean at `(x, y)` for agent `k` into `(out_x, out_y)`.
    /// Offline batches of size `≥ N` use the exact local gradient.
    #[allow(clippy::too_many_arguments)]
    fn batch_mean<P: MinimaxProblem + ?Sized>(
        problem: &P,
        k: usize,
        n: usize,
        x: &[f64],
        y: &[f64],
        rng: &mut ChaCha8Rng,
        acc: &mut Accum,
        labels: Option<&mut Vec<String>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let full = problem.sample_count().is_some_and(|cap| n >= cap);
        if full {
            let (mut gx, mut gy) = (vec![0.0; x.len()], vec![0.0; y.len()]);
            problem.local_grad(k, x, y, &mut gx, &mut gy);
            check_finite(&gx, k, "full batch")?;
            check_finite(&gy, k, "full batch")?;
            if let Some(l) = labels {
                l.push("full".into());
            }
            return Ok((gx, gy));
        }
        acc.clear();
        let batch = draw_batch(problem, k, n, rng);
        for s in &batch {
            acc.add(problem, k, s, x, y)?;
        }
        if let Some(l) = labels {
            l.extend(batch.iter().map(Sample::label));
        }
        let inv = 1.0 / n as f64;
        Ok((
            acc.sx.iter().map(|v| v * inv).collect(),
            acc.sy.iter().map(|v| v * inv).collect(),
        ))
    }

    /// Draws the shared switch for the next round without touching agent streams.
    fn draw_switch(&mut self, p: f64) -> bool {
        // draw unconditionally so the stream position never depends on p
        let u: f64 = self.switch_rng.random();
        u < p
    }

    pub fn update<P: MinimaxProblem + ?Sized>(
        &mut self,
        params: &GraceParams,
        cur_x: &BlockVector,
        cur_y: &BlockVector,
        problem: &P,
        round: usize,
    ) -> Result<()> {
        update_estimator(self, params, cur_x, cur_y, problem, round)
    }
}

/// Initial estimate: per-agent minibatch of size `b0` at `(X₀, Y₀)`.
pub fn init_estimator<P: MinimaxProblem + ?Sized>(
    problem: &P,
    params: &GraceParams,
    x0: &BlockVector,
    y0: &BlockVector,
    seed: u64,
) -> Result<GraceState> {
    params.validate()?;
    let k_agents = problem.agents();
    let (d1, d2) = problem.dims();
    if x0.agents() != k_agents || y0.agents() != k_agents || x0.dim() != d1 || y0.dim() != d2 {
        return Err(Error::ShapeMismatch(format!(
            "initial iterates are {}x{} / {}x{}, problem expects {k_agents} agents with dims ({d1}, {d2})",
            x0.agents(),
            x0.dim(),
            y0.agents(),
            y0.dim()
        )));
    }
    let mut b0 = params.b0;
    if let Some(n) = problem.sample_count() {
        if b0 > n {
            log::warn!("initial batch b0 = {b0} exceeds N = {n}; using the full local batch");
            b0 = n;
        }
    }
    let mut state = GraceState {
        m_x: BlockVector::zeros(k_agents, d1),
        m_y: BlockVector::zeros(k_agents, d2),
        prev_x: x0.clone(),
        prev_y: y0.clone(),
        switch_rng: switch_rng(seed),
        agent_rngs: (0..k_agents).map(|k| agent_rng(seed, k)).collect(),
        samples_used: b0 as u64,
        log: None,
    };
    let mut acc = Accum::new(d1, d2);
    for k in 0..k_agents {
        let (gx, gy) = GraceState::batch_mean(
            problem,
            k,
            b0,
            x0.agent(k),
            y0.agent(k),
            &mut state.agent_rngs[k],
            &mut acc,
            None,
        )?;
        state.m_x.agent_mut(k).copy_from_slice(&gx);
        state.m_y.agent_mut(k).copy_from_slice(&gy);
    }
    Ok(state)
}

/// Same as [`init_estimator`] but records the round-0 log entry.
pub fn init_estimator_logged<P: MinimaxProblem + ?Sized>(
    problem: &P,
    params: &GraceParams,
    x0: &BlockVector,
    y0: &BlockVector,
    seed: u64,
) -> Result<GraceState> {
    // replay the draws with labels recorded; streams end in the same position
    let mut state = init_estimator(problem, params, x0, y0, seed)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..problem.agents()).map(|k| agent_rng(seed, k)).collect();
    let b0 = problem.sample_count().map_or(params.b0, |n| params.b0.min(n));
    let (d1, d2) = problem.dims();
    let mut acc = Accum::new(d1, d2);
    let mut agents = Vec::with_capacity(problem.agents());
    for (k, rng) in rngs.iter_mut().enumerate() {
        let mut labels = Vec::new();
        GraceState::batch_mean(problem, k, b0, x0.agent(k), y0.agent(k), rng, &mut acc, Some(&mut labels))?;
        agents.push(AgentLog {
            branch_x: Branch::Init,
            branch_y: Branch::Init,
            prev_samples: Vec::new(),
            cur_samples: labels,
        });
    }
    state.log = Some(vec![RoundLog { round: 0, agents }]);
    Ok(state)
}

/// One GRACE step at iterate `(cur_X, cur_Y)`; afterwards the previous iterates are
/// overwritten with the current ones.
pub fn update_estimator<P: MinimaxProblem + ?Sized>(
    state: &mut GraceState,
    params: &GraceParams,
    cur_x: &BlockVector,
    cur_y: &BlockVector,
    problem: &P,
    round: usize,
) -> Result<()> {
    let k_agents = problem.agents();
    let (d1, d2) = problem.dims();
    let offline_n = problem.sample_count();
    if let Some(n) = offline_n {
        if params.b > n {
            return Err(Error::InvalidConfig(format!(
                "minibatch b = {} exceeds the local sample count N = {n}",
                params.b
            )));
        }
    }
    let refresh = state.draw_switch(params.p);
    let refresh_n = offline_n.unwrap_or(params.big_b);
    let logging = state.log.is_some();
    let mut agent_logs = Vec::new();
    let mut acc = Accum::new(d1, d2);
    let one_minus_beta = 1.0 - params.beta;

    for k in 0..k_agents {
        let mut prev_labels = Vec::new();
        let mut cur_labels = Vec::new();
        let rng = &mut state.agent_rngs[k];
        if refresh {
            let (gx, gy) = GraceState::batch_mean(
                problem,
                k,
                refresh_n,
                cur_x.agent(k),
                cur_y.agent(k),
                rng,
                &mut acc,
                logging.then_some(&mut cur_labels),
            )?;
            state.m_x.agent_mut(k).copy_from_slice(&gx);
            state.m_y.agent_mut(k).copy_from_slice(&gy);
        } else {
            let batch = draw_batch(problem, k, params.b, rng);
            acc.clear();
            for s in &batch {
                acc.add(problem, k, s, state.prev_x.agent(k), state.prev_y.agent(k))?;
            }
            let (px, py) = (acc.sx.clone(), acc.sy.clone());
            acc.clear();
            for s in &batch {
                acc.add(problem, k, s, cur_x.agent(k), cur_y.agent(k))?;
            }
            if logging {
                prev_labels.extend(batch.iter().map(Sample::label));
                cur_labels.extend(batch.iter().map(Sample::label));
            }
            let inv = 1.0 / params.b as f64;
            for (i, m) in state.m_x.agent_mut(k).iter_mut().enumerate() {
                *m = one_minus_beta * (*m - px[i] * inv) + acc.sx[i] * inv;
            }
            for (i, m) in state.m_y.agent_mut(k).iter_mut().enumerate() {
                *m = one_minus_beta * (*m - py[i] * inv) + acc.sy[i] * inv;
            }
        }
        if logging {
            let branch = if refresh { Branch::Refresh } else { Branch::Recursive };
            agent_logs.push(AgentLog {
                branch_x: branch,
                branch_y: branch,
                prev_samples: prev_labels,
                cur_samples: cur_labels,
            });
        }
    }
    state.samples_used += if refresh { refresh_n as u64 } else { params.b as u64 };
    state.prev_x.clone_from(cur_x);
    state.prev_y.clone_from(cur_y);
    if let Some(log) = state.log.as_mut() {
        log.push(RoundLog {
            round,
            agents: agent_logs,
        });
    }
    Ok(())
}

/// Exact local gradients `(∇_x 𝒥, ∇_y 𝒥)` stacked per agent.
pub fn exact_local_gradients<P: MinimaxProblem + ?Sized>(
    problem: &P,
    x: &BlockVector,
    y: &BlockVector,
) -> (BlockVector, BlockVector) {
    let mut gx = BlockVector::zeros(x.agents(), x.dim());
    let mut gy = BlockVector::zeros(y.agents(), y.dim());
    let mut tx = vec![0.0; x.dim()];
    let mut ty = vec![0.0; y.dim()];
    for k in 0..x.agents() {
        problem.local_grad(k, x.agent(k), y.agent(k), &mut tx, &mut ty);
        gx.agent_mut(k).copy_from_slice(&tx);
        gy.agent_mut(k).copy_from_slice(&ty);
    }
    (gx, gy)
}

/// `(‖S_x‖², ‖S_y‖², ‖s^x_c‖², ‖s^y_c‖²)` at `(cur_X, cur_Y)`.
pub fn estimator_error<P: MinimaxProblem + ?Sized>(
    state: &GraceState,
    problem: &P,
    cur_x: &BlockVector,
    cur_y: &BlockVector,
) -> EstimatorError {
    let (gx, gy) = exact_local_gradients(problem, cur_x, cur_y);
    let sx = state.m_x.sub(&gx);
    let sy = state.m_y.sub(&gy);
    EstimatorError {
        block_x: sx.norm_sq(),
        block_y: sy.norm_sq(),
        centroid_x: sx.mean().norm_squared(),
        centroid_y: sy.mean().norm_squared(),
    }
}
