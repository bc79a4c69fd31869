//! TOML run configuration.
//!
//! ```toml
//! T = 2000
//! seeds = [0, 1, 2]          # default [0]
//! strategy = "ED"            # optional when the schedule mode names one
//! diagnostics = false        # record coupled-error norms
//! output_dir = "runs/ed"     # optional, overridden by --out
//! x0 = [0.0, 0.0, 0.0]       # optional common initial point
//!
//! [topology]
//! kind = "ring"              # ring | path | star | complete | random
//! K = 8
//! lazy = true                # default: true for ED / EXTRA / ATC_GT
//! edge_prob = 0.4            # random only
//! seed = 0                   # random only
//!
//! [problem]
//! kind = "quadratic"         # quadratic | sinpl
//! N = 1024                   # local samples; omit for online sampling
//! sigma = 1.0
//! seed = 0
//! d1 = 3                     # quadratic only: d1, d2, x_curvature, nu_target,
//! d2 = 3                     #   s_max, coupling, heterogeneity, linear_scale,
//! kappa = 10.0               #   kappa (tunes nu_target so that L_f / nu = kappa)
//!
//! [schedule]                 # either a preset ...
//! mode = "STORM_ED"
//! c_mu = 1.0
//! shrink = true
//! # ... or explicit values:
//! # mu_x = 1e-3, mu_y = 1e-2, beta = 0.1, p = 0.0, b = 1, B = 1, b0 = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grace::{GraceMode, GraceParams};
use crate::mixing::{Topology, TopologyKind};
use crate::problems::QuadraticSpec;
use crate::schedules::{ScheduleKnobs, ScheduleMode};
use crate::strategies::StrategyKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: String,
    #[serde(rename = "K")]
    pub agents: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lazy: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TopologyConfig {
    pub fn topology(&self) -> Result<Topology> {
        let kind = match self.kind.to_ascii_lowercase().as_str() {
            "ring" => TopologyKind::Ring,
            "path" => TopologyKind::Path,
            "star" => TopologyKind::Star,
            "complete" => TopologyKind::Complete,
            "random" => TopologyKind::Random {
                edge_prob: self
                    .edge_prob
                    .ok_or_else(|| Error::InvalidConfig("topology.edge_prob is required for random graphs".into()))?,
                seed: self.seed.unwrap_or(0),
            },
            other => return Err(Error::InvalidConfig(format!("unknown topology kind '{other}'"))),
        };
        if !matches!(kind, TopologyKind::Random { .. }) && (self.edge_prob.is_some() || self.seed.is_some()) {
            return Err(Error::InvalidConfig(
                "topology.edge_prob and topology.seed only apply to random graphs".into(),
            ));
        }
        Ok(Topology::new(kind, self.agents))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Sinpl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heterogeneity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_scale: Option<f64>,
    /// Quadratic only: adjust `nu_target` (used as the starting guess) until
    /// `L_f / ν` equals this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

fn default_sigma() -> f64 {
    1.0
}

impl ProblemConfig {
    pub fn quadratic_spec(&self) -> QuadraticSpec {
        let d = QuadraticSpec::default();
        QuadraticSpec {
            d1: self.d1.unwrap_or(d.d1),
            d2: self.d2.unwrap_or(d.d2),
            x_curvature: self.x_curvature.unwrap_or(d.x_curvature),
            nu_target: self.nu_target.unwrap_or(d.nu_target),
            s_max: self.s_max.unwrap_or(d.s_max),
            coupling: self.coupling.unwrap_or(d.coupling),
            heterogeneity: self.heterogeneity.unwrap_or(d.heterogeneity),
            linear_scale: self.linear_scale.unwrap_or(d.linear_scale),
        }
    }

    fn has_quadratic_knobs(&self) -> bool {
        self.d1.is_some()
            || self.d2.is_some()
            || self.x_curvature.is_some()
            || self.nu_target.is_some()
            || self.s_max.is_some()
            || self.coupling.is_some()
            || self.heterogeneity.is_some()
            || self.linear_scale.is_some()
            || self.kappa.is_some()
    }

    /// Fills in every quadratic default so the echo is complete.
    fn resolve(&mut self) {
        if self.kind == ProblemKind::Quadratic {
            let s = self.quadratic_spec();
            self.d1 = Some(s.d1);
            self.d2 = Some(s.d2);
            self.x_curvature = Some(s.x_curvature);
            self.nu_target = Some(s.nu_target);
            self.s_max = Some(s.s_max);
            self.coupling = Some(s.coupling);
            self.heterogeneity = Some(s.heterogeneity);
            self.linear_scale = Some(s.linear_scale);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScheduleMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shrink: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub big_b: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<GraceMode>,
}

/// How step sizes and estimator parameters are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ScheduleChoice {
    Preset {
        mode: ScheduleMode,
        knobs: ScheduleKnobs,
        shrink: bool,
    },
    Explicit {
        mu_x: f64,
        mu_y: f64,
        grace: GraceParams,
    },
}

impl ScheduleConfig {
    fn choice(&self) -> Result<ScheduleChoice> {
        let explicit_fields = self.mu_x.is_some()
            || self.mu_y.is_some()
            || self.beta.is_some()
            || self.p.is_some()
            || self.b.is_some()
            || self.big_b.is_some()
            || self.b0.is_some()
            || self.estimator.is_some();
        match self.mode {
            Some(mode) => {
                if explicit_fields {
                    return Err(Error::InvalidConfig(
                        "schedule.mode cannot be combined with explicit mu_x/mu_y/beta/p/b/B/b0/estimator".into(),
                    ));
                }
                let d = ScheduleKnobs::default();
                Ok(ScheduleChoice::Preset {
                    mode,
                    knobs: ScheduleKnobs {
                        c_mu: self.c_mu.unwrap_or(d.c_mu),
                        c_beta: self.c_beta.unwrap_or(d.c_beta),
                        c_p: self.c_p.unwrap_or(d.c_p),
                        c_b: self.c_b.unwrap_or(d.c_b),
                    },
                    shrink: self.shrink.unwrap_or(true),
                })
            }
            None => {
                if self.c_mu.is_some() || self.c_beta.is_some() || self.c_p.is_some() || self.c_b.is_some() {
                    return Err(Error::InvalidConfig("scale knobs c_* require schedule.mode".into()));
                }
                if self.shrink.is_some() {
                    return Err(Error::InvalidConfig("schedule.shrink requires schedule.mode".into()));
                }
                let need = |v: Option<f64>, name: &str| {
                    v.ok_or_else(|| Error::InvalidConfig(format!("schedule.{name} is required without schedule.mode")))
                };
                let grace = GraceParams {
                    beta: need(self.beta, "beta")?,
                    p: need(self.p, "p")?,
                    b: self.b.unwrap_or(1),
                    big_b: self.big_b.unwrap_or(1),
                    b0: self.b0.unwrap_or(1),
                    mode: self.estimator.unwrap_or(GraceMode::Custom),
                };
                grace.validate()?;
                Ok(ScheduleChoice::Explicit {
                    mu_x: need(self.mu_x, "mu_x")?,
                    mu_y: need(self.mu_y, "mu_y")?,
                    grace,
                })
            }
        }
    }
}

/// Configuration exactly as written (unknown keys rejected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    pub topology: TopologyConfig,
    pub problem: ProblemConfig,
    pub schedule: ScheduleConfig,
}

/// Fully defaulted configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub seeds: Vec<u64>,
    pub strategy: StrategyKind,
    pub diagnostics: bool,
    pub output_dir: Option<PathBuf>,
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub topology: TopologyConfig,
    pub problem: ProblemConfig,
    pub schedule: ScheduleChoice,
}

impl RawConfig {
    pub fn resolve(self) -> Result<RunConfig> {
        if self.t == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        let schedule = self.schedule.choice()?;
        let strategy = match (&schedule, self.strategy) {
            (ScheduleChoice::Preset { mode, .. }, s) => match (mode.strategy(), s) {
                (Some(m), Some(s)) if m != s => {
                    return Err(Error::InvalidConfig(format!(
                        "schedule mode {mode} is tied to strategy {m}, but strategy = {s}"
                    )))
                }
                (Some(m), _) => m,
                (None, Some(s)) => s,
                (None, None) => return Err(Error::InvalidConfig("strategy is required".into())),
            },
            (ScheduleChoice::Explicit { .. }, Some(s)) => s,
            (ScheduleChoice::Explicit { .. }, None) => {
                return Err(Error::InvalidConfig("strategy is required".into()))
            }
        };
        if let ScheduleChoice::Preset { mode, .. } = &schedule {
            let offline_mode = matches!(mode, ScheduleMode::PageOffline | ScheduleMode::LsarahOffline);
            if offline_mode && self.problem.samples.is_none() {
                return Err(Error::InvalidConfig(format!(
                    "schedule mode {mode} needs an offline problem: set problem.N"
                )));
            }
            if !offline_mode && self.problem.samples.is_some() {
                return Err(Error::InvalidConfig(format!(
                    "schedule mode {mode} is for online sampling: remove problem.N"
                )));
            }
        }
        if self.problem.kind == ProblemKind::Sinpl && self.problem.has_quadratic_knobs() {
            return Err(Error::InvalidConfig("quadratic problem knobs given for the sinpl problem".into()));
        }
        // validate the topology description eagerly
        self.topology.topology()?;
        let mut topology = self.topology;
        topology.lazy.get_or_insert(strategy.default_lazy());
        let mut problem = self.problem;
        problem.resolve();
        let seeds = self.seeds.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        Ok(RunConfig {
            t: self.t,
            seeds,
            strategy,
            diagnostics: self.diagnostics.unwrap_or(false),
            output_dir: self.output_dir,
            x0: self.x0,
            y0: self.y0,
            topology,
            problem,
            schedule,
        })
    }
}

/// Parses and resolves TOML text; `origin` names the source in errors.
pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    raw.resolve()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// Parses `text` as a TOML table and sets the dotted `key` to `value`
/// (integer, float, boolean or string, tried in that order).
pub fn override_key(text: &str, key: &str, value: &str) -> Result<String> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        path: PathBuf::from("<sweep>"),
        message: e.to_string(),
    })?;
    let parsed = if let Ok(i) = value.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = value.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = value.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(value.to_string())
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts
        .split_last()
        .ok_or_else(|| Error::InvalidConfig("empty sweep key".into()))?;
    let mut cur = &mut table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("sweep key '{key}': '{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    toml::to_string(&table).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
}
