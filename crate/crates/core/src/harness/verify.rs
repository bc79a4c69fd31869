//! Built-in invariant suite behind the `verify` subcommand.

use serde::Serialize;

use crate::engine::{Engine, EngineConfig};
use crate::grace::{GraceMode, GraceParams};
use crate::mixing::{mixing_for, MixingMatrix, Topology, TopologyKind};
use crate::problems::{make_quadratic_problem, MinimaxProblem, QuadraticSpec};
use crate::strategies::{build_strategy, verify_strategy_assumptions, StrategyKind};
use crate::transform::build_transform_bundle;
use crate::Result;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn failed(name: impl Into<String>, err: crate::Error) -> CheckResult {
    check(name, false, format!("error: {err}"))
}

fn topologies(k: usize) -> Vec<Topology> {
    vec![
        Topology::ring(k),
        Topology::new(TopologyKind::Path, k),
        Topology::new(TopologyKind::Star, k),
        Topology::new(TopologyKind::Complete, k),
        Topology::new(TopologyKind::Random { edge_prob: 0.4, seed: 7 }, k),
    ]
}

fn mixing_checks(out: &mut Vec<CheckResult>) {
    for topo in topologies(8) {
        let name = format!("mixing/{:?}", topo.kind);
        match mixing_for(&topo, true) {
            Ok(w) => {
                let m = w.matrix();
                let k = w.size();
                let sym = (m - m.transpose()).amax();
                let rows = (0..k).map(|i| (m.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
                let lead = (w.eigvals()[0] - 1.0).abs();
                let pass = sym <= 1e-12 && rows <= 1e-12 && lead <= 1e-10 && w.is_psd() && w.lambda() < 1.0;
                out.push(check(
                    name,
                    pass,
                    format!("asym={sym:.1e} rowsum={rows:.1e} lambda={:.6}", w.lambda()),
                ));
            }
            Err(e) => out.push(failed(name, e)),
        }
    }
}

fn strategy_checks(out: &mut Vec<CheckResult>, w: &MixingMatrix) {
    for kind in StrategyKind::ALL {
        let name = format!("strategy/{kind}");
        match build_strategy(kind, w) {
            Ok(ops) => {
                let r = verify_strategy_assumptions(&ops);
                out.push(check(
                    name,
                    r.passes,
                    format!(
                        "A1={:.1e} C1={:.1e} 1B={:.1e} B2={:?}",
                        r.a_preserves_ones, r.c_preserves_ones, r.b_annihilates_ones, r.b_squared_residual
                    ),
                ));
            }
            Err(e) => out.push(failed(name, e)),
        }
    }
}

fn transform_checks(out: &mut Vec<CheckResult>) {
    for topo in topologies(8) {
        let Ok(w) = mixing_for(&topo, true) else { continue };
        let lam = w.lambda();
        for kind in [StrategyKind::Ed, StrategyKind::Extra, StrategyKind::AtcGt] {
            let name = format!("transform/{kind}/{:?}", topo.kind);
            let res = build_strategy(kind, &w).and_then(|ops| build_transform_bundle(&ops, &w));
            match res {
                Ok(b) => {
                    let (rho_ok, v_ok) = if kind == StrategyKind::AtcGt {
                        (
                            b.rho <= (1.0 + lam) / 2.0 + 1e-8,
                            b.v1_sq <= 3.0 + 1e-8 && b.v2_sq <= 9.0 + 1e-8,
                        )
                    } else {
                        (
                            (b.rho - lam.sqrt()).abs() <= 1e-8,
                            b.v1_sq <= 4.0 + 1e-8 && b.v2_sq <= 2.0 / b.lambda_underline + 1e-8,
                        )
                    };
                    let pass = rho_ok && v_ok && b.similarity_residual <= 1e-8 && b.rho < 1.0;
                    out.push(check(
                        name,
                        pass,
                        format!(
                            "rho={:.6} v1^2={:.3} v2^2={:.3} resid={:.1e}",
                            b.rho, b.v1_sq, b.v2_sq, b.similarity_residual
                        ),
                    ));
                }
                Err(e) => out.push(failed(name, e)),
            }
        }
    }
}

fn engine_config(strategy: StrategyKind, grace: GraceParams, t: usize, diag: bool) -> EngineConfig {
    EngineConfig {
        strategy,
        mu_x: 0.002,
        mu_y: 0.02,
        grace,
        t,
        seed: 11,
        record_transform_diagnostics: diag,
        x0: None,
        y0: None,
    }
}

fn storm() -> GraceParams {
    GraceParams {
        beta: 0.3,
        p: 0.0,
        b: 1,
        big_b: 1,
        b0: 2,
        mode: GraceMode::Storm,
    }
}

/// Largest per-round violation of the centroid recursions over `rounds`.
pub fn centroid_residual<P: MinimaxProblem + ?Sized>(engine: &mut Engine<'_, P>, rounds: usize) -> Result<f64> {
    let k = engine.state().x.agents() as f64;
    let (mu_x, mu_y) = (engine.config().mu_x, engine.config().mu_y);
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        let s = engine.state();
        let px = &s.x.mean() - s.grace.m_x.sum() * (mu_x / k);
        let py = &s.y.mean() + s.grace.m_y.sum() * (mu_y / k);
        engine.step()?;
        let s = engine.state();
        worst = worst
            .max((s.x.mean() - px).amax())
            .max((s.y.mean() - py).amax());
    }
    Ok(worst)
}

fn engine_checks(out: &mut Vec<CheckResult>, w: &MixingMatrix) {
    let problem = match make_quadratic_problem(w.size(), None, 0.5, 1, &QuadraticSpec::default()) {
        Ok(p) => p,
        Err(e) => return out.push(failed("engine/problem", e)),
    };
    for kind in StrategyKind::ALL {
        let name = format!("engine/centroid/{kind}");
        let res = Engine::new(engine_config(kind, storm(), 200, false), &problem, w)
            .and_then(|mut e| centroid_residual(&mut e, 200));
        match res {
            Ok(r) => out.push(check(name, r <= 1e-10, format!("max residual {r:.2e}"))),
            Err(e) => out.push(failed(name, e)),
        }
    }
    for kind in [StrategyKind::Ed, StrategyKind::Extra, StrategyKind::AtcGt] {
        let name = format!("engine/consensus-bound/{kind}");
        let res = Engine::new(engine_config(kind, storm(), 100, true), &problem, w).and_then(|mut e| e.run());
        match res {
            Ok(s) => {
                let bad = s
                    .rows
                    .iter()
                    .filter(|r| !r.consensus_bound.is_some_and(|c| c.pass))
                    .count();
                out.push(check(name, bad == 0, format!("{bad} violating rounds of {}", s.rows.len())));
            }
            Err(e) => out.push(failed(name, e)),
        }
    }
    let name = "engine/dual-conservation";
    let res = Engine::new(engine_config(StrategyKind::Ed, storm(), 2000, false), &problem, w).and_then(|mut e| {
        for _ in 0..2000 {
            e.step()?;
        }
        Ok(e.state().d_x.sum().amax().max(e.state().d_y.sum().amax()))
    });
    match res {
        Ok(r) => out.push(check(name, r <= 1e-9, format!("|1ᵀD| = {r:.2e}"))),
        Err(e) => out.push(failed(name, e)),
    }
}

fn single_agent_checks(out: &mut Vec<CheckResult>) {
    let name = "engine/single-agent";
    let w = match mixing_for(&Topology::ring(1), false) {
        Ok(w) => w,
        Err(e) => return out.push(failed(name, e)),
    };
    let problem = match make_quadratic_problem(1, Some(64), 0.5, 3, &QuadraticSpec::default()) {
        Ok(p) => p,
        Err(e) => return out.push(failed(name, e)),
    };
    let grace = GraceParams {
        beta: 0.2,
        p: 0.1,
        b: 2,
        big_b: 1,
        b0: 4,
        mode: GraceMode::Custom,
    };
    let mut trajectories = Vec::new();
    for kind in StrategyKind::ALL {
        match Engine::new(engine_config(kind, grace, 300, false), &problem, &w) {
            Ok(mut e) => {
                let mut traj = Vec::with_capacity(300);
                for _ in 0..300 {
                    if let Err(err) = e.step() {
                        return out.push(failed(name, err));
                    }
                    traj.push((e.state().x.clone(), e.state().y.clone()));
                }
                trajectories.push(traj);
            }
            Err(err) => return out.push(failed(name, err)),
        }
    }
    let mut worst: f64 = 0.0;
    for t in &trajectories[1..] {
        for ((x, y), (x0, y0)) in t.iter().zip(&trajectories[0]) {
            worst = worst.max(x.sub(x0).max_abs()).max(y.sub(y0).max_abs());
        }
    }
    out.push(check(name, worst <= 1e-12, format!("max deviation {worst:.2e}")));
}

/// Runs every check; the caller decides how to report failures.
pub fn run_invariant_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    mixing_checks(&mut out);
    match mixing_for(&Topology::ring(8), true) {
        Ok(w) => {
            strategy_checks(&mut out, &w);
            transform_checks(&mut out);
            engine_checks(&mut out, &w);
        }
        Err(e) => out.push(failed("mixing/lazy-ring-8", e)),
    }
    single_agent_checks(&mut out);
    out
}
