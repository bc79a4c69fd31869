//! Acceptance suite. Each test prints one line
//! `criterion N PASS|FAIL | title | runtime | detail` straight to stdout (not
//! captured by the test harness) and then asserts the outcome.
//!
//! Criteria run one at a time behind a lock so the runtime budgets are measured
//! without contention from the other criteria.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dama::engine::{Engine, EngineConfig, MetricsSeries};
use dama::grace::{init_estimator, update_estimator, GraceMode, GraceParams};
use dama::harness::output::series_csv;
use dama::harness::run::run_setup;
use dama::harness::{parse_config, write_run, Setup};
use dama::mixing::{mixing_for, MixingMatrix, Topology, TopologyKind};
use dama::problems::{
    make_quadratic_problem, make_sinpl_problem, maximize_by_ascent, MinimaxProblem, QuadraticAgent,
    QuadraticMinimaxProblem, QuadraticSpec,
};
use dama::schedules::{shrink_to_conditions, StepParams};
use dama::strategies::{build_strategy, BlockVector, StrategyKind};
use dama::transform::build_transform_bundle;

static SERIAL: Mutex<()> = Mutex::new(());

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion(n: u32, title: &str, budget_s: f64, body: impl FnOnce() -> Outcome) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let out = body();
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = out.pass && elapsed < budget_s;
    let line = format!(
        "criterion {n:>2} {} | {title} | {elapsed:.2}s of {budget_s}s | {}",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{line}");
    let _ = stdout.flush();
    assert!(pass, "{line}");
}

fn lazy_ring(k: usize) -> MixingMatrix {
    mixing_for(&Topology::ring(k), true).unwrap()
}

fn min_delta_c(series: &MetricsSeries) -> f64 {
    series.rows.iter().map(|r| r.delta_c).fold(f64::INFINITY, f64::min)
}

fn engine_config(strategy: StrategyKind, mu_x: f64, mu_y: f64, grace: GraceParams, t: usize, diag: bool) -> EngineConfig {
    EngineConfig {
        strategy,
        mu_x,
        mu_y,
        grace,
        t,
        seed: 5,
        record_transform_diagnostics: diag,
        x0: None,
        y0: None,
    }
}

fn custom(beta: f64, p: f64, b: usize, big_b: usize, b0: usize) -> GraceParams {
    GraceParams {
        beta,
        p,
        b,
        big_b,
        b0,
        mode: GraceMode::Custom,
    }
}

/// PSD square root through nalgebra's symmetric eigensolver. Eigenvalues at
/// rounding level are exact zeros (the null vector of `I − W`), and must not
/// contribute `√1e-16 = 1e-8`.
fn oracle_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let roots = e.eigenvalues.map(|v| if v.abs() < 1e-12 { 0.0 } else { v.sqrt() });
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// Eigenvalues of a symmetric matrix in descending order (nalgebra).
fn oracle_eigvals(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn c01_strategy_matrices() {
    criterion(1, "design-matrix fidelity, lazy ring K=8", 1.0, || {
        let k = 8;
        let w = lazy_ring(k);
        // lazy Metropolis on a ring: self weight (1 + 1/3)/2, neighbors 1/6
        let wo = DMatrix::from_fn(k, k, |i, j| {
            let d = (i + k - j) % k;
            match d {
                0 => 2.0 / 3.0,
                1 => 1.0 / 6.0,
                _ if d == k - 1 => 1.0 / 6.0,
                _ => 0.0,
            }
        });
        let id = DMatrix::<f64>::identity(k, k);
        let lap = &id - &wo;
        let root = oracle_sqrt(&lap);
        let ones = DVector::from_element(k, 1.0);
        let mut worst_w = (w.matrix() - &wo).amax();
        let mut ok = worst_w <= 1e-15;
        let mut parts = Vec::new();
        for kind in StrategyKind::ALL {
            let ops = build_strategy(kind, &w).unwrap();
            let (a, b, c) = match kind {
                StrategyKind::Ed => (wo.clone(), root.clone(), id.clone()),
                StrategyKind::Extra => (id.clone(), root.clone(), wo.clone()),
                StrategyKind::AtcGt => (&wo * &wo, lap.clone(), id.clone()),
                StrategyKind::SemiAtcGt => (wo.clone(), lap.clone(), wo.clone()),
                StrategyKind::NonAtcGt => (id.clone(), lap.clone(), &wo * &wo),
            };
            let table = (&ops.a - a).amax().max((&ops.b - b).amax()).max((&ops.c - c).amax());
            let a1 = (&ops.a * &ones - &ones).amax();
            let c1 = (&ops.c * &ones - &ones).amax();
            let b1 = (ones.transpose() * &ops.b).amax();
            let b2 = match kind {
                StrategyKind::Ed | StrategyKind::Extra => (&ops.b * &ops.b - &lap).norm(),
                _ => 0.0,
            };
            worst_w = worst_w.max(table);
            ok &= table <= 1e-10 && a1 <= 1e-12 && c1 <= 1e-12 && b1 <= 1e-12 && b2 <= 1e-10;
            parts.push(format!("{kind}: A1={a1:.0e} C1={c1:.0e} 1B={b1:.0e} B2={b2:.0e}"));
        }
        Outcome {
            pass: ok,
            detail: format!("max deviation from table {worst_w:.1e}; {}", parts.join(", ")),
        }
    });
}

#[test]
fn c02_centroid_identity() {
    criterion(2, "centroid recursion, 200 rounds, GRACE active", 5.0, || {
        let w = lazy_ring(8);
        let problem = make_quadratic_problem(8, None, 1.0, 3, &QuadraticSpec::default()).unwrap();
        let grace = custom(0.3, 0.2, 2, 4, 4);
        let (mu_x, mu_y) = (0.01, 0.05);
        let mut worst: f64 = 0.0;
        let mut refreshes = 0;
        for kind in StrategyKind::ALL {
            let mut e = Engine::new(engine_config(kind, mu_x, mu_y, grace, 200, false), &problem, &w).unwrap();
            let mut last_samples = e.state().grace.samples_used();
            for _ in 0..200 {
                let s = e.state();
                let want_x = s.x.mean() - s.grace.m_x.sum() * (mu_x / 8.0);
                let want_y = s.y.mean() + s.grace.m_y.sum() * (mu_y / 8.0);
                e.step().unwrap();
                let s = e.state();
                worst = worst.max((s.x.mean() - want_x).amax()).max((s.y.mean() - want_y).amax());
                let used = s.grace.samples_used();
                if used - last_samples == 4 {
                    refreshes += 1;
                }
                last_samples = used;
            }
        }
        Outcome {
            pass: worst <= 1e-10 && refreshes > 0,
            detail: format!("max residual {worst:.2e} over 5 strategies ({refreshes} refresh rounds)"),
        }
    });
}

#[test]
fn c03_spectral_constants() {
    criterion(3, "spectral constants on random graphs", 10.0, || {
        let mut ok = true;
        let mut worst = 0.0f64;
        let mut count = 0;
        let mut max_v = [0.0f64; 4];
        for &k in &[4usize, 8, 16] {
            for g in 0..20u64 {
                let topo = Topology::new(
                    TopologyKind::Random {
                        edge_prob: 0.4,
                        seed: 1000 * k as u64 + g,
                    },
                    k,
                );
                let w = mixing_for(&topo, true).unwrap();
                let ev = oracle_eigvals(w.matrix());
                let lam = ev[1];
                let lam_min = ev[k - 1];
                for kind in [StrategyKind::Ed, StrategyKind::Extra, StrategyKind::AtcGt] {
                    let b = build_transform_bundle(&build_strategy(kind, &w).unwrap(), &w).unwrap();
                    let (la, lb) = match kind {
                        StrategyKind::Ed => (lam.max(lam_min.abs()), (1.0 - lam).sqrt()),
                        StrategyKind::Extra => (1.0, (1.0 - lam).sqrt()),
                        _ => (lam.max(lam_min.abs()).powi(2), 1.0 - lam),
                    };
                    let dev = (b.lam_a_max - la).abs().max((b.lam_b_underline - lb).abs());
                    worst = worst.max(dev);
                    let (rho_ok, v_ok) = if kind == StrategyKind::AtcGt {
                        max_v[2] = max_v[2].max(b.v1_sq);
                        max_v[3] = max_v[3].max(b.v2_sq);
                        (b.rho <= (1.0 + lam) / 2.0 + 1e-8, b.v1_sq <= 3.0 + 1e-8 && b.v2_sq <= 9.0 + 1e-8)
                    } else {
                        let lam_under = ev.iter().copied().filter(|v| *v > 1e-9).fold(f64::INFINITY, f64::min);
                        max_v[0] = max_v[0].max(b.v1_sq);
                        max_v[1] = max_v[1].max(b.v2_sq * lam_under / 2.0);
                        (
                            (b.rho - lam.sqrt()).abs() <= 1e-8,
                            b.v1_sq <= 4.0 + 1e-8 && b.v2_sq <= 2.0 / lam_under + 1e-8,
                        )
                    };
                    ok &= rho_ok && v_ok && dev <= 1e-8 && b.similarity_residual <= 1e-8;
                    count += 1;
                }
            }
        }
        Outcome {
            pass: ok,
            detail: format!(
                "{count} bundles; max |lam_a|,|lb_b| deviation {worst:.1e}; ED/EXTRA max v1^2={:.3} (<=4), max v2^2 lam/2={:.3} (<=1); ATC max v1^2={:.3} (<=3), v2^2={:.3} (<=9)",
                max_v[0], max_v[1], max_v[2], max_v[3]
            ),
        }
    });
}

#[test]
fn c04_consensus_bound() {
    criterion(4, "consensus bound, 500 rounds", 10.0, || {
        let w = lazy_ring(8);
        let problem = make_quadratic_problem(8, None, 1.0, 4, &QuadraticSpec::default()).unwrap();
        let grace = GraceParams {
            beta: 0.3,
            p: 0.0,
            b: 1,
            big_b: 1,
            b0: 2,
            mode: GraceMode::Storm,
        };
        let mut ok = true;
        let mut parts = Vec::new();
        for kind in [StrategyKind::Ed, StrategyKind::Extra, StrategyKind::AtcGt] {
            let mut e = Engine::new(engine_config(kind, 0.01, 0.05, grace, 500, true), &problem, &w).unwrap();
            let s = e.run().unwrap();
            let b = e.bundle().unwrap();
            let scale = 8.0 * b.v1_sq * b.v2_sq;
            let mut bad = 0;
            let mut tightest = 0.0f64;
            for r in &s.rows {
                let rhs = scale * (r.ehat_x_sq.unwrap() + r.ehat_y_sq.unwrap());
                if r.consensus_sq > rhs + 1e-9 * rhs.max(1.0) {
                    bad += 1;
                }
                if rhs > 0.0 {
                    tightest = tightest.max(r.consensus_sq / rhs);
                }
            }
            ok &= bad == 0 && s.rows.len() == 501 && min_delta_c(&s) >= -1e-10;
            parts.push(format!("{kind}: {bad} violations, max lhs/rhs {tightest:.3}"));
        }
        Outcome {
            pass: ok,
            detail: parts.join("; "),
        }
    });
}

#[test]
fn c05_deterministic_convergence() {
    criterion(5, "deterministic convergence with condition-compliant steps", 30.0, || {
        let w = lazy_ring(8);
        let problem = make_quadratic_problem(8, Some(64), 1.0, 0, &QuadraticSpec::default()).unwrap();
        let pc = problem.constants();
        let grace = GraceParams {
            beta: 0.0,
            p: 1.0,
            b: 1,
            big_b: 64,
            b0: 64,
            mode: GraceMode::Page,
        };
        let t = 5000;
        let mut ok = pc.kappa <= 10.0;
        let mut parts = vec![format!("kappa={:.3}", pc.kappa)];
        for kind in [StrategyKind::Ed, StrategyKind::Extra, StrategyKind::AtcGt] {
            let bundle = build_transform_bundle(&build_strategy(kind, &w).unwrap(), &w).unwrap();
            let start = StepParams {
                mu_x: 1.0,
                mu_y: 1.0,
                grace,
                shrinks_x: 0,
                shrinks_y: 0,
            };
            let (steps, report) = shrink_to_conditions(start, &pc, &bundle).unwrap();
            let cfg = engine_config(kind, steps.mu_x, steps.mu_y, grace, t, false);
            let s = Engine::new(cfg, &problem, &w).unwrap().run().unwrap();
            let avg = s.averaged_stationarity();
            let cons = s.last().unwrap().consensus_sq;
            ok &= report.step_sizes_pass() && avg <= 1e-6 && cons <= 1e-8 && min_delta_c(&s) >= -1e-10;
            parts.push(format!(
                "{kind}: mu_x={:.2e} mu_y={:.2e} averaged={avg:.3e} (<=1e-6) consensus={cons:.1e} (<=1e-8) round0={:.3e}",
                steps.mu_x,
                steps.mu_y,
                s.rows[0].stationarity()
            ));
        }
        Outcome {
            pass: ok,
            detail: parts.join("; "),
        }
    });
}

#[test]
fn c06_single_agent_reduction() {
    criterion(6, "K=1 equals centralized GDA with GRACE, 1000 rounds", 5.0, || {
        let w = mixing_for(&Topology::ring(1), false).unwrap();
        let problem = make_quadratic_problem(1, Some(64), 0.5, 9, &QuadraticSpec::default()).unwrap();
        let grace = custom(0.2, 0.1, 2, 1, 4);
        let (mu_x, mu_y) = (0.05, 0.2);
        let (d1, d2) = problem.dims();
        let rounds = 1000;

        // centralized reference: x ← x − μ_x g_x, y ← y + μ_y g_y
        let mut x = BlockVector::zeros(1, d1);
        let mut y = BlockVector::zeros(1, d2);
        let mut st = init_estimator(&problem, &grace, &x, &y, 5).unwrap();
        let mut reference = Vec::with_capacity(rounds);
        for i in 0..rounds {
            let nx = x.sub(&st.m_x.scaled(mu_x));
            let ny = y.add(&st.m_y.scaled(mu_y));
            update_estimator(&mut st, &grace, &nx, &ny, &problem, i + 1).unwrap();
            x = nx;
            y = ny;
            reference.push((x.clone(), y.clone()));
        }

        let mut worst = 0.0f64;
        for kind in StrategyKind::ALL {
            let mut e = Engine::new(engine_config(kind, mu_x, mu_y, grace, rounds, false), &problem, &w).unwrap();
            for (rx, ry) in &reference {
                e.step().unwrap();
                worst = worst.max(e.state().x.sub(rx).max_abs()).max(e.state().y.sub(ry).max_abs());
            }
        }
        Outcome {
            pass: worst <= 1e-12,
            detail: format!("max deviation {worst:.2e} over 5 strategies"),
        }
    });
}

#[test]
fn c07_grace_degenerations() {
    criterion(7, "GRACE degenerations", 2.0, || {
        let w = lazy_ring(4);
        // (a) p = 1 offline with full initial batch: exact every round
        let offline = make_quadratic_problem(4, Some(32), 1.0, 2, &QuadraticSpec::default()).unwrap();
        let cfg = engine_config(StrategyKind::Ed, 0.01, 0.05, custom(0.0, 1.0, 1, 32, 32), 200, false);
        let sa = Engine::new(cfg, &offline, &w).unwrap().run().unwrap();
        let a = sa.rows.iter().map(|r| r.est_err_sq).fold(0.0, f64::max);

        // (b) β = 1, p = 0, σ = 0: the fresh minibatch is the exact gradient
        let noiseless = make_quadratic_problem(4, None, 0.0, 2, &QuadraticSpec::default()).unwrap();
        let cfg = engine_config(StrategyKind::Extra, 0.01, 0.05, custom(1.0, 0.0, 1, 1, 1), 200, false);
        let sb = Engine::new(cfg, &noiseless, &w).unwrap().run().unwrap();
        let b = sb.rows.iter().map(|r| r.est_err_sq).fold(0.0, f64::max);

        // (c) J = ½x², SARAH step from x = 1 (g = 1) to x = 0.5:
        //     g = 1 − ∇Q(1) + ∇Q(0.5) = 1 − 1 + 0.5
        let hand = 1.0 - 1.0 + 0.5;
        let scalar = QuadraticMinimaxProblem::from_agents(
            vec![QuadraticAgent {
                q: DMatrix::identity(1, 1),
                r: DMatrix::zeros(1, 1),
                s: DMatrix::identity(1, 1),
                a: DVector::zeros(1),
                b: DVector::zeros(1),
            }],
            Some(4),
            0.0,
            0,
        )
        .unwrap();
        let params = custom(0.0, 0.0, 1, 1, 1);
        let y0 = BlockVector::zeros(1, 1);
        let mut st = init_estimator(&scalar, &params, &BlockVector::replicate(1, &[1.0]), &y0, 0).unwrap();
        let g0 = st.m_x.agent(0)[0];
        update_estimator(&mut st, &params, &BlockVector::replicate(1, &[0.5]), &y0, &scalar, 1).unwrap();
        let c = st.m_x.agent(0)[0];

        let dc = min_delta_c(&sa).min(min_delta_c(&sb));
        Outcome {
            pass: a == 0.0 && b <= 1e-20 && g0 == 1.0 && c == hand && dc >= -1e-10,
            detail: format!("(a) max est_err_sq {a:e}; (b) max est_err_sq {b:e}; (c) g = {c} (hand {hand})"),
        }
    });
}

fn config_text(body: &str) -> String {
    body.lines().map(str::trim_start).collect::<Vec<_>>().join("\n")
}

fn seeds(n: u64) -> String {
    (0..n).map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
}

fn run_config(text: &str) -> dama::harness::RunOutput {
    let setup = Setup::new(parse_config(text, Path::new("acceptance")).unwrap()).unwrap();
    run_setup(&setup).unwrap()
}

fn all_delta_c(out: &dama::harness::RunOutput) -> f64 {
    out.series.iter().map(|(_, s)| min_delta_c(s)).fold(f64::INFINITY, f64::min)
}

#[test]
fn c08_storm_rate_scaling() {
    criterion(8, "STORM schedule rate scaling T=500 vs T=4000", 600.0, || {
        let run = |t: usize| {
            run_config(&config_text(&format!(
                r#"T = {t}
                seeds = [{}]
                [topology]
                kind = "ring"
                K = 8
                [problem]
                kind = "quadratic"
                [schedule]
                mode = "STORM_ED"
                shrink = false"#,
                seeds(32)
            )))
        };
        let short = run(500);
        let long = run(4000);
        let ratio = short.summary.averaged_metric.mean / long.summary.averaged_metric.mean;
        let predicted = (4000.0f64 / 500.0).powf(2.0 / 3.0);
        let (lo, hi) = (predicted / 2.0, 2.0 * predicted);
        let all = short.summary.surviving_seeds == 32 && long.summary.surviving_seeds == 32;
        let dc = all_delta_c(&short).min(all_delta_c(&long));
        Outcome {
            pass: all && (lo..=hi).contains(&ratio) && dc >= -1e-10,
            detail: format!(
                "metric(500) = {:.4e} ± {:.1e}, metric(4000) = {:.4e} ± {:.1e}, ratio {ratio:.3} in [{lo:.3}, {hi:.3}]",
                short.summary.averaged_metric.mean,
                short.summary.averaged_metric.std,
                long.summary.averaged_metric.mean,
                long.summary.averaged_metric.std
            ),
        }
    });
}

#[test]
fn c09_page_offline_accounting() {
    criterion(9, "PAGE offline sample accounting and 1/T decay", 300.0, || {
        let (n, k) = (1024usize, 4usize);
        let run = |t: usize| {
            run_config(&config_text(&format!(
                r#"T = {t}
                seeds = [{}]
                strategy = "ED"
                [topology]
                kind = "ring"
                K = {k}
                [problem]
                kind = "quadratic"
                N = {n}
                [schedule]
                mode = "PAGE_OFFLINE"
                shrink = false"#,
                seeds(8)
            )))
        };
        let t = 10_000;
        let first = run(t);
        let second = run(2 * t);
        let g = first.summary.steps.grace;
        let p = 1.0 / ((k * n) as f64).sqrt();
        let b = ((n / k) as f64).sqrt();
        let params_ok = g.p == p && g.b as f64 == b && g.b0 as f64 == b && g.big_b == n;
        let expected = p * n as f64 + (1.0 - p) * b;
        let per_round: Vec<f64> = first
            .series
            .iter()
            .map(|(_, s)| (s.last().unwrap().samples_used - s.rows[0].samples_used) as f64 / t as f64)
            .collect();
        let measured = per_round.iter().sum::<f64>() / per_round.len() as f64;
        let rel = (measured / expected - 1.0).abs();
        let ratio = first.summary.averaged_metric.mean / second.summary.averaged_metric.mean;
        let dc = all_delta_c(&first).min(all_delta_c(&second));
        Outcome {
            pass: params_ok && rel <= 0.10 && (1.4..=2.6).contains(&ratio) && dc >= -1e-10,
            detail: format!(
                "p={} b={} B={}; samples/round {measured:.3} vs {expected:.3} ({:.2}% off); metric(T)/metric(2T) = {ratio:.3}",
                g.p,
                g.b,
                g.big_b,
                100.0 * rel
            ),
        }
    });
}

fn fd_rel_error<P: MinimaxProblem>(problem: &P, points: usize, seed: u64) -> f64 {
    let (d1, d2) = problem.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..d1).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..d2).map(|_| rng.random_range(-2.0..2.0)).collect();
        for k in 0..problem.agents() {
            let mut gx = vec![0.0; d1];
            let mut gy = vec![0.0; d2];
            problem.local_grad(k, &x, &y, &mut gx, &mut gy);
            let mut diff = 0.0;
            for i in 0..d1 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (problem.local_value(k, &xp, &y) - problem.local_value(k, &xm, &y)) / (2.0 * h);
                diff += (fd - gx[i]).powi(2);
            }
            for i in 0..d2 {
                let (mut yp, mut ym) = (y.clone(), y.clone());
                yp[i] += h;
                ym[i] -= h;
                let fd = (problem.local_value(k, &x, &yp) - problem.local_value(k, &x, &ym)) / (2.0 * h);
                diff += (fd - gy[i]).powi(2);
            }
            let norm = gx.iter().chain(&gy).map(|g| g * g).sum::<f64>().sqrt();
            worst = worst.max(diff.sqrt() / norm.max(1e-12));
        }
    }
    worst
}

#[test]
fn c10_gradient_correctness() {
    criterion(10, "gradients, maximizer and optimality gap", 10.0, || {
        let quad = make_quadratic_problem(4, None, 1.0, 8, &QuadraticSpec::default()).unwrap();
        let sinpl = make_sinpl_problem(4, None, 1.0, 8).unwrap();
        let fd_q = fd_rel_error(&quad, 50, 1);
        let fd_s = fd_rel_error(&sinpl, 50, 2);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d1, d2) = quad.dims();
        let mut max_gap = 0.0f64;
        for _ in 0..50 {
            let x: Vec<f64> = (0..d1).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (y_c, p_c) = quad.maximize(&x).unwrap();
            let (y_a, p_a) = maximize_by_ascent(&quad, &x, &vec![0.0; d2]).unwrap();
            max_gap = max_gap.max((p_c - p_a).abs()).max((y_c - y_a).amax());
        }

        let w = lazy_ring(4);
        let grace = custom(0.3, 0.1, 2, 4, 4);
        let mut dc = f64::INFINITY;
        for kind in StrategyKind::ALL {
            let cfg = engine_config(kind, 0.005, 0.02, grace, 200, false);
            dc = dc.min(min_delta_c(&Engine::new(cfg.clone(), &quad, &w).unwrap().run().unwrap()));
            dc = dc.min(min_delta_c(&Engine::new(cfg, &sinpl, &w).unwrap().run().unwrap()));
        }
        Outcome {
            pass: fd_q <= 1e-6 && fd_s <= 1e-6 && max_gap <= 1e-8 && dc >= -1e-10,
            detail: format!(
                "FD rel. error quadratic {fd_q:.1e}, sinpl {fd_s:.1e}; ascent vs closed form {max_gap:.1e}; min delta_c {dc:.2e}"
            ),
        }
    });
}

#[test]
fn c11_determinism() {
    criterion(11, "byte-identical outputs across reruns and thread counts", 5.0, || {
        let text = config_text(
            r#"T = 300
            seeds = [3, 1, 4, 5, 9]
            strategy = "EXTRA"
            diagnostics = true
            [topology]
            kind = "random"
            K = 6
            edge_prob = 0.5
            seed = 2
            [problem]
            kind = "quadratic"
            [schedule]
            mu_x = 0.005
            mu_y = 0.05
            beta = 0.2
            p = 0.1
            b = 2
            B = 4
            b0 = 4"#,
        );
        let setup = Setup::new(parse_config(&text, Path::new("acceptance")).unwrap()).unwrap();
        let csvs = |out: &dama::harness::RunOutput| -> Vec<String> { out.series.iter().map(|(_, s)| series_csv(s)).collect() };
        let parallel = run_setup(&setup).unwrap();
        let again = run_setup(&setup).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_setup(&setup).unwrap());
        let sequential: Vec<String> = {
            let mut seeds = setup.config.seeds.clone();
            seeds.sort_unstable();
            seeds.iter().map(|&s| series_csv(&setup.run_seed(s).unwrap())).collect()
        };
        let reference = csvs(&parallel);
        let same_csv = reference == csvs(&again) && reference == csvs(&single) && reference == sequential;

        let dir = tempfile::tempdir().unwrap();
        write_run(&setup, &parallel, &dir.path().join("a")).unwrap();
        write_run(&setup, &single, &dir.path().join("b")).unwrap();
        let mut files = 0;
        let mut same_files = true;
        for entry in std::fs::read_dir(dir.path().join("a")).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
            same_files &= a == b;
            files += 1;
        }
        Outcome {
            pass: same_csv && same_files && files >= 3 && all_delta_c(&parallel) >= -1e-10,
            detail: format!(
                "{} seed CSVs identical across parallel / rerun / 1-thread / sequential: {same_csv}; {files} output files identical: {same_files}",
                reference.len()
            ),
        }
    });
}
