//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown.
//! Set `ACCEPTANCE_ONLY=1,2,10` to run a subset.

mod common;

use std::time::{Duration, Instant};

use common::*;
use ddmpc::{BoxSet, ControllerError};
use ddmpc::hankel::{persistence_order_check, stacked_hankel, validate_trajectory, Sequence, DEFAULT_RANK_TOLERANCE};
use ddmpc::harness::*;
use ddmpc::lti_mpc::{DataBuffer, LtiController, LtiControllerConfig};
use ddmpc::plant::{random_lti, LtiSystem, NoiseModel};
use ddmpc::qp::{self, kkt, QpProblem, QpSettings};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

// Pinned tolerances.
const C1_VALIDATE_TOL: f64 = 1e-8;
const C1_REALIZE_TOL: f64 = 1e-6;
const C1_MIN_SYSTEMS: usize = 50;
const C2_INPUT_TOL: f64 = 1e-6;
const C2_DECAY_TOL: f64 = 1e-4;
const C3_SET_TOL: f64 = 1e-6;
const C10_KKT_TOL: f64 = 1e-6;
const C10_GAP_TOL: f64 = 1e-6;
const C10_ORACLE_TOL: f64 = 1e-6;

/// Criteria that currently fail with the reference tuning. The reasons are
/// in the README under "Known reproduction gaps". They still run and print
/// FAIL; only an unexpected failure aborts the suite.
const KNOWN_GAPS: &[u32] = &[5, 6, 7, 8, 9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "trajectory parametrization oracle", c1),
        (2, "nominal scheme matches model-based MPC", c2),
        (3, "recursive feasibility and constraints", c3),
        (4, "robust error band monotone in noise level", c4),
        (5, "four-tank reference tuning", c5),
        (6, "lambda_alpha sweep shape", c6),
        (7, "parameter range spot checks", c7),
        (8, "frozen-data ablation", c8),
        (9, "perturbed plant and setpoint change", c9),
        (10, "QP solver correctness", c10),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let out = run();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {tag}: {name} [{:.1} s] {}",
            started.elapsed().as_secs_f64(),
            out.detail
        );
        if !out.pass && !KNOWN_GAPS.contains(&id) {
            unexpected.push(id);
        }
        if out.pass && KNOWN_GAPS.contains(&id) {
            println!("  note: criterion {id} now passes; drop it from KNOWN_GAPS");
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1. Every held-out trajectory lies in the Hankel span and every element of
//    the span is a system trajectory.

fn c1() -> Outcome {
    let started = Instant::now();
    let depth = 6;
    let (mut systems, mut worst_valid, mut worst_real, mut not_pe) = (0, 0.0f64, 0.0f64, 0);
    for seed in 0..60u64 {
        let mut r = rng(10_000 + seed);
        let (n, m, p) = (r.gen_range(1..=4), r.gen_range(1..=2), r.gen_range(1..=2));
        let (sys, _) = random_lti(n, m, p, 0.95, seed).expect("random system");
        let len = (m + 1) * (depth + n) - 1 + 20;
        let x0 = DVector::from_fn(n, |_, _| r.gen_range(-1.0..=1.0));
        let u = uniform_inputs(&mut r, m, len, 1.0);
        let (y, _) = sys.simulate(&x0, &u);
        let (us, ys) = (Sequence::from_vectors(&u).unwrap(), Sequence::from_vectors(&y).unwrap());
        if !persistence_order_check(&us, depth + n, DEFAULT_RANK_TOLERANCE).unwrap().is_pe {
            not_pe += 1;
            continue;
        }
        systems += 1;
        for _ in 0..3 {
            let x = DVector::from_fn(n, |_, _| r.gen_range(-2.0..=2.0));
            let ut = uniform_inputs(&mut r, m, depth, 2.0);
            let (yt, _) = sys.simulate(&x, &ut);
            let check = validate_trajectory(
                &us,
                &ys,
                &Sequence::from_vectors(&ut).unwrap(),
                &Sequence::from_vectors(&yt).unwrap(),
            )
            .unwrap();
            worst_valid = worst_valid.max(check.residual);
        }
        let h = stacked_hankel(&us, &ys, depth).unwrap();
        for _ in 0..3 {
            let alpha = DVector::from_fn(h.ncols(), |_, _| r.gen_range(-1.0..=1.0));
            let w = &h * alpha;
            let (wu, wy) = (w.rows(0, m * depth).into_owned(), w.rows(m * depth, p * depth).into_owned());
            worst_real = worst_real.max(realization_residual(&sys, &wu, &wy));
        }
    }
    let elapsed = started.elapsed();
    outcome(
        systems >= C1_MIN_SYSTEMS && worst_valid < C1_VALIDATE_TOL && worst_real < C1_REALIZE_TOL && within(elapsed, 30),
        format!("systems={systems} (skipped {not_pe} not PE) max validation residual={worst_valid:.2e} max realization residual={worst_real:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Applied inputs coincide with a model-based MPC using the true matrices.

struct LtiRun {
    sys: LtiSystem,
    ctrl: LtiController,
    x: DVector<f64>,
}

/// Collects `len` excitation samples (uniform on `[-amp, amp]`) from `sys` and hands the last `order`
/// of them to a fresh controller as its initial window.
fn start_lti(sys: LtiSystem, cfg: LtiControllerConfig, len: usize, seed: u64, amp: f64) -> Result<LtiRun, ControllerError> {
    let mut r = rng(seed);
    let m = sys.b.ncols();
    let u = uniform_inputs(&mut r, m, len, amp);
    let x0 = DVector::zeros(sys.a.nrows());
    let (y, xs) = sys.simulate(&x0, &u);
    let x = sys.next_state(xs.last().unwrap(), u.last().unwrap());
    let data = DataBuffer::new(Sequence::from_vectors(&u).unwrap(), Sequence::from_vectors(&y).unwrap())?;
    let order = cfg.order;
    let mut ctrl = LtiController::nominal(cfg, &data)?;
    for k in len - order..len {
        ctrl.observe(u[k].clone(), y[k].clone());
    }
    Ok(LtiRun { sys, ctrl, x })
}

fn c2() -> Outcome {
    let started = Instant::now();
    let (mut worst_gap, mut worst_final, mut instances, mut failures) = (0.0f64, 0.0f64, 0, 0);
    for seed in 0..10u64 {
        let mut r = rng(20_000 + seed);
        let (n, m, p) = (r.gen_range(1..=3), r.gen_range(1..=2), r.gen_range(1..=2));
        let (sys, _) = random_lti(n, m, p, 0.9, 100 + seed).expect("random system");
        let horizon = 8;
        let u_s = DVector::from_fn(m, |_, _| r.gen_range(-1.0..=1.0));
        let (_, y_s) = sys.equilibrium(&u_s).expect("equilibrium");
        let mut cfg = LtiControllerConfig::new(horizon, n, m, p);
        cfg.u_setpoint = u_s.clone();
        cfg.y_setpoint = y_s.clone();
        let len = cfg.min_data_length() + 20;
        let oracle_sys = sys.clone();
        let oracle = ModelMpc {
            sys: &oracle_sys,
            horizon,
            order: n,
            q: cfg.q.clone(),
            r: cfg.r.clone(),
            u_s,
            y_s: y_s.clone(),
        };
        let mut run = match start_lti(sys, cfg, len, seed, 1.0) {
            Ok(run) => run,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        instances += 1;
        let mut err = f64::INFINITY;
        for t in 0..50 {
            let u = match run.ctrl.next_input() {
                Ok(u) => u,
                Err(_) => {
                    failures += 1;
                    break;
                }
            };
            if t < 30 {
                let expected = oracle.solve(&run.x).expect("oracle feasible");
                worst_gap = worst_gap.max((&u - &expected[0]).amax());
            }
            let y = run.sys.output_at(&run.x, &u);
            err = (&y - &y_s).amax();
            run.x = run.sys.next_state(&run.x, &u);
            run.ctrl.observe(u, y);
        }
        worst_final = worst_final.max(err);
    }
    outcome(
        instances >= 10 && failures == 0 && worst_gap < C2_INPUT_TOL && worst_final < C2_DECAY_TOL && within(started.elapsed(), 60),
        format!("instances={instances} failures={failures} max input gap={worst_gap:.2e} max error at t=50: {worst_final:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 3. Feasible at the start implies feasible forever, with u in U and y in Y.

fn c3() -> Outcome {
    let started = Instant::now();
    let (mut feasible, mut skipped, mut events, mut worst_u, mut worst_y) = (0, 0, 0, 0.0f64, 0.0f64);
    // Steps with an input or output on its bound, to show the sets matter.
    let mut active = 0;
    let mut seed = 0u64;
    while feasible < 20 && seed < 200 {
        seed += 1;
        let mut r = rng(30_000 + seed);
        let (n, m, p) = (r.gen_range(1..=3), r.gen_range(1..=2), r.gen_range(1..=2));
        let (sys, _) = random_lti(n, m, p, 0.9, 300 + seed).expect("random system");
        let mut cfg = LtiControllerConfig::new(3 * n + 3, n, m, p);
        // Setpoint near the edge of the sets so the transient runs into them.
        let u_s = DVector::from_fn(m, |_, _| r.gen_range(-1.0..=1.0));
        let (_, y_s) = sys.equilibrium(&u_s).expect("equilibrium");
        let u_max = 1.25 * u_s.amax() + 0.1;
        let y_max = 1.25 * y_s.amax() + 0.1;
        cfg.u_setpoint = u_s;
        cfg.y_setpoint = y_s;
        cfg.input_box = BoxSet::uniform(m, -u_max, u_max);
        cfg.output_box = BoxSet::uniform(p, -y_max, y_max);
        let len = cfg.min_data_length() + 10;
        let Ok(mut run) = start_lti(sys, cfg.clone(), len, seed, 3.0) else {
            skipped += 1;
            continue;
        };
        // Instances infeasible at the first step do not meet the premise.
        if run.ctrl.solve().is_err() {
            skipped += 1;
            continue;
        }
        feasible += 1;
        for _ in 0..100 {
            let u = match run.ctrl.next_input() {
                Ok(u) => u,
                Err(_) => {
                    events += 1;
                    break;
                }
            };
            let y = run.sys.output_at(&run.x, &u);
            worst_u = worst_u.max(violation(&cfg.input_box, &u));
            worst_y = worst_y.max(violation(&cfg.output_box, &y));
            active += usize::from(on_bound(&cfg.input_box, &u) || on_bound(&cfg.output_box, &y));
            run.x = run.sys.next_state(&run.x, &u);
            run.ctrl.observe(u, y);
        }
    }
    outcome(
        feasible >= 20 && events == 0 && worst_u <= C3_SET_TOL && worst_y <= C3_SET_TOL,
        format!(
            "instances={feasible} (skipped {skipped} infeasible at start) steps on a bound={active} infeasibility events={events} max violation u={worst_u:.1e} y={worst_y:.1e} [{:.1} s]",
            started.elapsed().as_secs_f64()
        ),
    )
}

fn on_bound(b: &BoxSet, v: &DVector<f64>) -> bool {
    (0..v.len()).any(|i| (v[i] - b.lower[i]).abs() < 1e-6 || (v[i] - b.upper[i]).abs() < 1e-6)
}

fn violation(b: &BoxSet, v: &DVector<f64>) -> f64 {
    (0..v.len())
        .map(|i| (b.lower[i] - v[i]).max(v[i] - b.upper[i]).max(0.0))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// 4. Smaller noise bound, smaller asymptotic error.

fn c4() -> Outcome {
    let started = Instant::now();
    let base = builtin_config("lti_robust").expect("builtin");
    let mut bands = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let mut cfg = base.clone();
        cfg.t_end = cfg.excitation.steps + 300;
        cfg.cost.t_end = cfg.t_end - 1;
        cfg.noise.model = NoiseModel::UniformInf { eps_bar: eps };
        if let ControllerConfig::Robust(s) = &mut cfg.controller {
            s.eps_bar = eps;
        }
        let log = run_experiment(&cfg).expect("robust run");
        let tail = &log.records[log.records.len() - 100..];
        bands.push(tail.iter().map(|r| (&r.y - &r.y_target).amax()).fold(0.0, f64::max));
    }
    let strictly = bands.windows(2).all(|w| w[1] < w[0]);
    outcome(
        strictly && within(started.elapsed(), 120),
        format!("final-100-step max error for eps 1e-2/1e-3/1e-4: {:.3e} / {:.3e} / {:.3e}", bands[0], bands[1], bands[2]),
    )
}

// ---------------------------------------------------------------------------
// Four-tank experiments.

struct TankRun {
    cost: f64,
    error: f64,
    converged: bool,
}

fn tank(cfg: &ExperimentConfig, seed: u64) -> TankRun {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let log = run_experiment(&cfg).expect("four-tank run");
    TankRun {
        cost: log.summary.cost,
        error: log.summary.steady_state_error,
        converged: log.summary.converged,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn reference() -> ExperimentConfig {
    builtin_config("fourtank_eq6").expect("builtin")
}

fn c5() -> Outcome {
    let started = Instant::now();
    let runs: Vec<TankRun> = (0..10).map(|s| tank(&reference(), s)).collect();
    let j = median(runs.iter().map(|r| r.cost).collect());
    let errors: Vec<f64> = runs.iter().map(|r| r.error).collect();
    let converged = runs.iter().filter(|r| r.converged).count();
    let err = median(errors.clone());
    let pass = j <= GOOD_COST && err <= CONVERGENCE_BAND && within(started.elapsed(), 600);
    outcome(
        pass,
        format!(
            "median J={j:.3e} (limit {GOOD_COST:.1e}) converged {converged}/10, median final-50 error={err:.2} cm, max={:.2} cm",
            errors.iter().copied().fold(0.0, f64::max)
        ),
    )
}

fn c6() -> Outcome {
    let started = Instant::now();
    let grid = [1e-6, 1e-5, 2e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
    let result = sweep(&reference(), SweepParam::LambdaAlpha, &grid, &[0, 1, 2], 0).expect("sweep");
    let inside_ok = result
        .rows
        .iter()
        .filter(|r| (2e-5..=1e-2).contains(&r.value))
        .all(|r| r.median_cost <= GOOD_COST);
    let low_bad = result.rows.iter().any(|r| r.value <= 2e-6 && r.median_cost > GOOD_COST);
    let high_bad = result.rows.iter().any(|r| r.value >= 0.1 && r.median_cost > GOOD_COST);
    let table: Vec<String> = result.rows.iter().map(|r| format!("{:.0e}:{:.2e}", r.value, r.median_cost)).collect();
    outcome(
        inside_ok && low_bad && high_bad && within(started.elapsed(), 1800),
        format!("inside range ok={inside_ok} low end exceeds={low_bad} high end exceeds={high_bad}; median J {}", table.join(" ")),
    )
}

fn c7() -> Outcome {
    let started = Instant::now();
    let mut lines = Vec::new();
    let mut all_good = true;
    for (n_data, horizon, order) in [(130, 35, 3), (159, 35, 3), (150, 32, 3), (150, 41, 3), (150, 35, 2), (150, 35, 4)] {
        let cfg = configure(n_data, horizon, order);
        let j = median((0..3).map(|s| tank(&cfg, s).cost).collect());
        all_good &= j <= GOOD_COST;
        lines.push(format!("({n_data},{horizon},{order}):{j:.2e}"));
    }
    let long = tank(&configure(190, 40, 10), 0);
    outcome(
        all_good && long.converged,
        format!(
            "median J {}; (190,40,10) final-50 error={:.2} cm converged={} [{:.0} s]",
            lines.join(" "),
            long.error,
            long.converged,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn configure(n_data: usize, horizon: usize, order: usize) -> ExperimentConfig {
    let cfg = apply_parameter(&reference(), SweepParam::DataLen, n_data as f64).unwrap();
    let cfg = apply_parameter(&cfg, SweepParam::Horizon, horizon as f64).unwrap();
    apply_parameter(&cfg, SweepParam::Order, order as f64).unwrap()
}

fn c8() -> Outcome {
    let frozen_cfg = builtin_config("fourtank_frozen").expect("builtin");
    let mut ratios = Vec::new();
    let mut lines = Vec::new();
    for seed in 0..3 {
        let live = tank(&reference(), seed);
        let frozen = tank(&frozen_cfg, seed);
        ratios.push(frozen.error / live.error);
        lines.push(format!("seed {seed}: {:.2}/{:.2} cm", frozen.error, live.error));
    }
    outcome(
        ratios.iter().all(|&r| r >= 5.0),
        format!("frozen/updating final-50 error {}; min ratio {:.2} (need 5)", lines.join(", "), ratios.iter().copied().fold(f64::INFINITY, f64::min)),
    )
}

fn c9() -> Outcome {
    let started = Instant::now();
    let mut converged = 0;
    let mut errors = Vec::new();
    for seed in 0..10u64 {
        let mut cfg = reference();
        // The shifted plant is also integrated more finely than the nominal model.
        if let PlantConfig::FourTank { perturbation, substeps, .. } = &mut cfg.plant {
            *perturbation = Some(Perturbation { spread: 0.15, seed });
            *substeps = 10;
        }
        let run = tank(&cfg, seed);
        converged += usize::from(run.converged);
        errors.push(run.error);
    }
    let two = builtin_config("fourtank_two_setpoints").expect("builtin");
    let log = run_experiment(&two).expect("two-setpoint run");
    let change = two.schedule[1].start;
    let band = |lo: usize, hi: usize| {
        let tail: Vec<f64> = log.records[lo..hi].iter().map(|r| (&r.y - &r.y_target).amax()).collect();
        mean(&tail)
    };
    let before = band(change - CONVERGENCE_STEPS, change);
    let after = band(log.records.len() - CONVERGENCE_STEPS, log.records.len());
    let switch_ok = before <= CONVERGENCE_BAND && after <= CONVERGENCE_BAND;
    outcome(
        converged >= 8 && switch_ok,
        format!(
            "perturbed plants converged {converged}/10 (need 8), median final-50 error={:.2} cm; setpoint change: error before={before:.2} after={after:.2} cm [{:.0} s]",
            median(errors),
            started.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Solver output checked by the KKT verifier and an independent oracle.

fn random_qp(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> QpProblem {
    let k = r.gen_range(0..=n / 2);
    let mhalf = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..=1.0));
    let h = mhalf.transpose() * &mhalf + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| r.gen_range(-5.0..=5.0));
    let a = DMatrix::from_fn(k, n, |_, _| r.gen_range(-1.0..=1.0));
    let lower = DVector::from_fn(n, |_, _| if r.gen_bool(0.2) { f64::NEG_INFINITY } else { r.gen_range(-2.0..=-0.1) });
    let upper = DVector::from_fn(n, |_, _| if r.gen_bool(0.2) { f64::INFINITY } else { r.gen_range(0.1..=2.0) });
    // Equality right-hand side from a point inside the box keeps it feasible.
    let inside = DVector::from_fn(n, |i, _| {
        let (lo, hi) = (lower[i].max(-2.0), upper[i].min(2.0));
        r.gen_range(lo..=hi) * 0.9
    });
    let b = &a * inside;
    QpProblem::new(h, f, a, b, lower, upper).expect("valid QP")
}

fn c10() -> Outcome {
    let started = Instant::now();
    let settings = QpSettings::default();
    let mut r = rng(40_000);
    let (mut kkt_fail, mut gap_fail, mut not_optimal) = (0, 0, 0);
    for _ in 0..1000 {
        let n = r.gen_range(2..=12);
        let p = random_qp(&mut r, n);
        let sol = qp::solve(&p, &settings);
        if !sol.is_optimal() {
            not_optimal += 1;
            continue;
        }
        let report = kkt::verify(&p, &sol.z, &sol.eq_multipliers, &sol.box_multipliers);
        kkt_fail += usize::from(!report.passes(C10_KKT_TOL));
        gap_fail += usize::from(!report.gap_within(C10_GAP_TOL));
    }
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.gen_range(2..=6);
        let p = random_qp(&mut r, n);
        let sol = qp::solve(&p, &settings);
        let z = projected_gradient_qp(p.h(), p.f(), p.a_eq(), p.b_eq(), p.lower(), p.upper());
        worst = worst.max((&sol.z - z).amax());
    }
    outcome(
        not_optimal == 0 && kkt_fail == 0 && gap_fail == 0 && worst <= C10_ORACLE_TOL && within(started.elapsed(), 120),
        format!("1000 QPs: not optimal={not_optimal} KKT failures={kkt_fail} gap failures={gap_fail}; oracle max gap={worst:.2e}"),
    )
}
