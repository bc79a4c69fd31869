//! Hyperparameter schedules and the step-size / estimator conditions.
//!
//! The presets fix only orders of magnitude; every constant factor is a knob
//! (`c_mu`, `c_beta`, `c_p`, `c_b`, all 1 by default).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grace::{ceil_batch, clip01, GraceMode, GraceParams};
use crate::problems::ProblemConstants;
use crate::strategies::StrategyKind;
use crate::transform::TransformBundle;
use crate::{Error, Result};

/// Upper limit on geometric step-size halvings.
pub const MAX_SHRINKS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScheduleMode {
    StormEd,
    StormExtra,
    StormAtcgt,
    PageOffline,
    PageOnline,
    LsarahOffline,
}

impl ScheduleMode {
    pub const ALL: [ScheduleMode; 6] = [
        ScheduleMode::StormEd,
        ScheduleMode::StormExtra,
        ScheduleMode::StormAtcgt,
        ScheduleMode::PageOffline,
        ScheduleMode::PageOnline,
        ScheduleMode::LsarahOffline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleMode::StormEd => "STORM_ED",
            ScheduleMode::StormExtra => "STORM_EXTRA",
            ScheduleMode::StormAtcgt => "STORM_ATCGT",
            ScheduleMode::PageOffline => "PAGE_OFFLINE",
            ScheduleMode::PageOnline => "PAGE_ONLINE",
            ScheduleMode::LsarahOffline => "LSARAH_OFFLINE",
        }
    }

    /// The strategy a STORM mode is tied to; PAGE / SARAH modes work with any.
    pub fn strategy(self) -> Option<StrategyKind> {
        match self {
            ScheduleMode::StormEd => Some(StrategyKind::Ed),
            ScheduleMode::StormExtra => Some(StrategyKind::Extra),
            ScheduleMode::StormAtcgt => Some(StrategyKind::AtcGt),
            _ => None,
        }
    }

    pub fn is_online(self) -> bool {
        matches!(
            self,
            ScheduleMode::StormEd | ScheduleMode::StormExtra | ScheduleMode::StormAtcgt | ScheduleMode::PageOnline
        )
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown schedule mode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleKnobs {
    pub c_mu: f64,
    pub c_beta: f64,
    pub c_p: f64,
    pub c_b: f64,
}

impl Default for ScheduleKnobs {
    fn default() -> Self {
        Self {
            c_mu: 1.0,
            c_beta: 1.0,
            c_p: 1.0,
            c_b: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub knobs: ScheduleKnobs,
    pub t: usize,
    pub agents: usize,
    pub n: Option<usize>,
    pub kappa: f64,
    /// Second-largest eigenvalue of `W`.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub grace: GraceParams,
    /// Number of ×0.5 halvings applied to `μ_x`.
    pub shrinks_x: usize,
    /// Number of ×0.5 halvings applied to `μ_y`.
    pub shrinks_y: usize,
}

fn require_n(spec: &ScheduleSpec) -> Result<usize> {
    spec.n
        .ok_or_else(|| Error::InvalidConfig(format!("{} requires the local sample count N", spec.mode)))
}

fn require_lambda(spec: &ScheduleSpec) -> Result<f64> {
    let l = spec
        .lambda
        .ok_or_else(|| Error::InvalidConfig(format!("{} requires the mixing constant lambda", spec.mode)))?;
    if !(0.0..1.0).contains(&l) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1), got {l}")));
    }
    Ok(l)
}

/// Preset step sizes and estimator parameters, before any shrinking.
pub fn schedule_for_mode(spec: &ScheduleSpec) -> Result<StepParams> {
    if spec.t == 0 || spec.agents == 0 {
        return Err(Error::InvalidConfig("T and K must be at least 1".into()));
    }
    if !(spec.kappa > 0.0) {
        return Err(Error::InvalidConfig(format!("kappa must be positive, got {}", spec.kappa)));
    }
    let kn = &spec.knobs;
    let t = spec.t as f64;
    let k = spec.agents as f64;
    let k2 = spec.kappa * spec.kappa;
    let (mu_y, grace) = match spec.mode {
        ScheduleMode::StormEd | ScheduleMode::StormExtra | ScheduleMode::StormAtcgt => {
            let (kc, tc) = (k.cbrt(), t.cbrt());
            (
                kn.c_mu * kc * kc / tc,
                GraceParams {
                    beta: clip01(kn.c_beta * kc / (tc * tc)),
                    p: 0.0,
                    b: 1,
                    big_b: 1,
                    b0: ceil_batch(kn.c_b * tc / (kc * kc)),
                    mode: GraceMode::Storm,
                },
            )
        }
        ScheduleMode::PageOffline => {
            let n = require_n(spec)?;
            let gap = 1.0 - require_lambda(spec)?;
            let nf = n as f64;
            let b = ceil_batch(kn.c_b * (nf / k).sqrt());
            (
                kn.c_mu * gap.powf(1.5),
                GraceParams {
                    beta: 0.0,
                    p: clip01(kn.c_p / (k * nf).sqrt()),
                    b,
                    big_b: n,
                    b0: b,
                    mode: GraceMode::Page,
                },
            )
        }
        ScheduleMode::PageOnline => {
            let gap = 1.0 - require_lambda(spec)?;
            let b = ceil_batch(kn.c_b * gap.powf(0.75) * t.sqrt() / k);
            (
                kn.c_mu * gap.powf(1.5),
                GraceParams {
                    beta: 0.0,
                    p: clip01(kn.c_p / (gap.powf(0.75) * t.sqrt())),
                    b,
                    big_b: ceil_batch(gap.powf(1.5) * t / k),
                    b0: b,
                    mode: GraceMode::Page,
                },
            )
        }
        ScheduleMode::LsarahOffline => {
            let n = require_n(spec)?;
            let nf = n as f64;
            (
                kn.c_mu * k / nf.sqrt(),
                GraceParams {
                    beta: 0.0,
                    p: clip01(kn.c_p * k / nf),
                    b: 1,
                    big_b: ceil_batch(nf / k),
                    b0: ceil_batch(kn.c_b * nf.sqrt() / k),
                    mode: GraceMode::LooplessSarah,
                },
            )
        }
    };
    Ok(StepParams {
        mu_x: mu_y / k2,
        mu_y,
        grace,
        shrinks_x: 0,
        shrinks_y: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionGroup {
    /// Upper bounds on `μ_x`.
    StepX,
    /// Upper bounds on `μ_y`.
    StepY,
    /// Constraints on `β`, `p`, `b`.
    Estimator,
}

/// One inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub group: ConditionGroup,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `lhs / rhs`; at most 1 when satisfied.
    pub ratio: f64,
}

impl Condition {
    pub fn upper(name: &str, lhs: f64, rhs: f64) -> Self {
        Self::grouped(name, ConditionGroup::StepY, lhs, rhs)
    }

    pub fn grouped(name: &str, group: ConditionGroup, lhs: f64, rhs: f64) -> Self {
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            name: name.into(),
            group,
            lhs,
            rhs,
            satisfied: lhs <= rhs,
            ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<Condition>,
    pub pass: bool,
}

impl ConditionReport {
    fn new(conditions: Vec<Condition>) -> Self {
        let pass = conditions.iter().all(|c| c.satisfied);
        Self { conditions, pass }
    }

    /// Whether every step-size upper bound holds.
    pub fn step_sizes_pass(&self) -> bool {
        self.conditions
            .iter()
            .filter(|c| c.group != ConditionGroup::Estimator)
            .all(|c| c.satisfied)
    }

    pub fn violated(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.satisfied)
    }

    /// The violated condition with the largest `lhs / rhs`.
    pub fn binding(&self) -> Option<&Condition> {
        self.violated().max_by(|a, b| a.ratio.total_cmp(&b.ratio))
    }
}

/// Evaluates every step-size and estimator condition against the realized
/// network and problem constants.
pub fn validate_conditions(
    mu_x: f64,
    mu_y: f64,
    grace: &GraceParams,
    pc: &ProblemConstants,
    bundle: &TransformBundle,
) -> ConditionReport {
    use ConditionGroup::*;
    let k = bundle.agents() as f64;
    let b = grace.b as f64;
    let bb = grace.beta_bar();
    let (beta, p) = (grace.beta, grace.p);
    let lf = pc.l_f;
    let kappa = pc.kappa;
    let l_env = pc.envelope_smoothness();
    let (v1, v2) = (bundle.v1(), bundle.v2());
    let lam_a = bundle.lam_a_max;
    let lb = bundle.lam_b_underline;
    let gap = 1.0 - bundle.rho;
    let net = gap * lb / (lf * v1 * v2 * lam_a);
    let kbb = k * b * bb;

    let c = vec![
        Condition::grouped("mu_x <= 1/(32 L)", StepX, mu_x, 1.0 / (32.0 * l_env)),
        Condition::grouped("mu_x <= mu_y/(16 kappa^2)", StepX, mu_x, mu_y / (16.0 * kappa * kappa)),
        Condition::grouped(
            "mu_x <= sqrt(K b beta_bar)/(24 sqrt(3) kappa L_f)",
            StepX,
            mu_x,
            kbb.sqrt() / (24.0 * 3f64.sqrt() * kappa * lf),
        ),
        Condition::grouped("mu_y <= 1/nu", StepY, mu_y, 1.0 / pc.nu),
        Condition::grouped("mu_y <= 1/(2 L_f)", StepY, mu_y, 1.0 / (2.0 * lf)),
        Condition::grouped("mu_y <= sqrt(K b beta_bar)/(12 L_f)", StepY, mu_y, kbb.sqrt() / (12.0 * lf)),
        Condition::grouped(
            "mu_y <= (1-rho) lb_b / (sqrt(620) L_f v1 v2 lam_a)",
            StepY,
            mu_y,
            net / 620f64.sqrt(),
        ),
        Condition::grouped("mu_y <= (1-rho) lb_b / (12 L_f v1 v2 lam_a)", StepY, mu_y, net / 12.0),
        Condition::grouped(
            "mu_y <= (1-rho) lb_b / (24 L_f v1 v2 lam_a) sqrt(b beta_bar/(p+beta^2))",
            StepY,
            mu_y,
            net / 24.0 * (b * bb / grace.beta_prime()).sqrt(),
        ),
        Condition::grouped(
            "mu_y <= (1-rho)^(2/3) lb_b^(2/3) (b K beta_bar)^(1/3) / (90 L_f kappa^(1/3) (v1 v2 lam_a)^(2/3))",
            StepY,
            mu_y,
            (gap * lb).powf(2.0 / 3.0) * kbb.cbrt() / (90.0 * lf * kappa.cbrt() * (v1 * v2 * lam_a).powf(2.0 / 3.0)),
        ),
        Condition::grouped("beta_bar <= nu mu_y / 2", Estimator, bb, pc.nu * mu_y / 2.0),
        Condition::grouped("b beta_bar <= 1/K", Estimator, b * bb, 1.0 / k),
        Condition::grouped("p + beta <= 1", Estimator, p + beta, 1.0),
        Condition::grouped("beta + b p <= b", Estimator, beta + b * p, b),
        Condition::grouped("b >= 1", Estimator, 1.0, b),
        Condition::grouped("beta_bar <= 1", Estimator, bb, 1.0),
        Condition::grouped("beta <= 1", Estimator, beta, 1.0),
    ];
    ConditionReport::new(c)
}

/// Halves `μ_x` while a bound on `μ_x` is violated and `μ_y` while a bound on
/// `μ_y` is violated, until every step-size bound holds.
///
/// Only the step-size groups are targeted: the estimator constraint
/// `β̄ ≤ νμ_y/2` is a lower bound on `μ_y` and cannot be repaired by shrinking.
pub fn shrink_to_conditions(
    params: StepParams,
    pc: &ProblemConstants,
    bundle: &TransformBundle,
) -> Result<(StepParams, ConditionReport)> {
    let mut p = params;
    for _ in 0..=MAX_SHRINKS {
        let rep = validate_conditions(p.mu_x, p.mu_y, &p.grace, pc, bundle);
        if rep.step_sizes_pass() {
            return Ok((p, rep));
        }
        let bad = |g| rep.violated().any(|c| c.group == g);
        if bad(ConditionGroup::StepX) {
            p.mu_x *= 0.5;
            p.shrinks_x += 1;
        }
        if bad(ConditionGroup::StepY) {
            p.mu_y *= 0.5;
            p.shrinks_y += 1;
        }
    }
    Err(Error::InvalidConfig(format!(
        "step sizes still violate their bounds after {MAX_SHRINKS} halvings"
    )))
}

/// Bound bookkeeping of the main convergence result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub a_prime: f64,
    pub b_prime: f64,
    pub c_prime: f64,
    pub d_prime: f64,
    pub e_prime: f64,
    pub f_prime: f64,
    pub beta_prime: f64,
    pub beta_bar: f64,
    pub rho: f64,
    pub lam_a: f64,
    pub lam_b_underline: f64,
}

pub fn theorem_constants(
    grace: &GraceParams,
    bundle: &TransformBundle,
    pc: &ProblemConstants,
    t: usize,
    online: bool,
) -> Result<TheoremConstants> {
    let bb = grace.beta_bar();
    if bb <= 0.0 {
        return Err(Error::ZeroBetaBar);
    }
    let bp = grace.beta_prime();
    let k = bundle.agents() as f64;
    let b = grace.b as f64;
    let b0 = grace.b0 as f64;
    let big_b = grace.big_b as f64;
    let lf2 = pc.l_f * pc.l_f;
    let la2 = bundle.lam_a_sq();
    let lb2 = bundle.lam_b_underline_sq();
    let gap = 1.0 - bundle.rho;
    let ind = if online { 1.0 } else { 0.0 };
    let beta2 = grace.beta * grace.beta;
    Ok(TheoremConstants {
        a_prime: lf2 / (b * k * bb * gap * lb2),
        b_prime: lf2 * la2 * bp / (b * b0 * k * bb * bb * gap * gap * lb2),
        c_prime: lf2 * lf2 * la2 * bp / (b * b * k * bb * bb * gap * gap * lb2 * lb2),
        d_prime: lf2 * la2 / (b * k * bb * gap * gap * lb2) * (grace.p / big_b * ind + beta2 / b),
        e_prime: 1.0 / (b0 * bb * k * t as f64) + beta2 / (k * b * bb) + grace.p / (k * big_b * bb) * ind,
        f_prime: lf2 / (b * k * bb * lb2),
        beta_prime: bp,
        beta_bar: bb,
        rho: bundle.rho,
        lam_a: bundle.lam_a_max,
        lam_b_underline: bundle.lam_b_underline,
    })
}
