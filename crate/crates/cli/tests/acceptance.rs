//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use serde_json::Value;

use cofc_core::crl::{Critics, GaussianPolicy, Mlp, Rng};
use cofc_core::cvpo::{dual_objective, solve_duals, variational_weights, CvpoParams, QSamples};
use cofc_core::drive_cycle::DriveCycle;
use cofc_core::env::{corridor_limits, fuel_economy, soc_cost, SocCorridor};
use cofc_core::lagrangian::{cost_limit, pid_dual_update, PidDualState, PidGains};
use cofc_core::oracle::{dp_solve, enumerate_solve, DpGrid};
use cofc_core::powertrain::Powertrain;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() <= limit_s
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// Criterion 1 -----------------------------------------------------------

/// Piecewise corridor written from the definition, without sharing code
/// with the library.
fn reference_limits(t: f64, c: &SocCorridor) -> (f64, f64) {
    let (bl, br, ts) = (c.bl as f64, c.br as f64, c.ts as f64);
    let line = |edge: f64| {
        if t <= bl {
            (edge - c.balance) / bl * t + c.balance
        } else if t > br {
            (edge - c.balance) / (br - ts) * (t - ts) + c.balance
        } else {
            edge
        }
    };
    (line(c.high), line(c.low))
}

fn corridor_math() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let balance = rng.random_range(0.2..0.8);
        let high = rng.random_range(balance + 0.01..=1.0);
        let low = rng.random_range(0.0..balance - 0.01);
        let ts = rng.random_range(3..3000usize);
        let bl = rng.random_range(1..ts - 1);
        let br = rng.random_range(bl..ts);
        let c = SocCorridor::new(high, low, balance, bl, br, ts).unwrap();
        let t = rng.random_range(0..=ts);
        let soc = rng.random_range(0.0..=1.0);
        let (u, l) = corridor_limits(t, &c).unwrap();
        let (ru, rl) = reference_limits(t as f64, &c);
        let rc = if soc > ru { soc - ru } else { 0.0 } + if soc < rl { rl - soc } else { 0.0 };
        let cost = soc_cost(soc, t, &c).unwrap();
        worst = worst
            .max((u - ru).abs())
            .max((l - rl).abs())
            .max((cost - rc).abs());
    }
    let el = start.elapsed();
    outcome(
        worst <= 1e-12 && within(el, 1.0),
        format!(
            "10^4 random triples, max deviation {worst:.1e} (limit 1e-12), {:.2} s (limit 1 s)",
            el.as_secs_f64()
        ),
    )
}

// Criterion 2 -----------------------------------------------------------

fn pid_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(2);
    let mut violations = 0usize;
    for _ in 0..100_000 {
        let len = rng.random_range(2..12);
        let eps1 = rng.random_range(0.0..2.0);
        let gains = PidGains {
            kp: rng.random_range(0.0..3.0),
            ki: rng.random_range(0.0..3.0),
            kd: rng.random_range(0.0..3.0),
        };
        let mut full = PidDualState::new(gains).unwrap();
        let mut d_only = PidDualState::new(PidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 1.0,
        })
        .unwrap();
        let mut i_only = PidDualState::new(PidGains {
            kp: 0.0,
            ki: gains.ki,
            kd: 0.0,
        })
        .unwrap();
        let mut integral: f64 = 0.0;
        let mut prev: Option<f64> = None;
        for _ in 0..len {
            let jc = rng.random_range(-1.0..4.0);
            full = pid_dual_update(&full, jc, eps1);
            d_only = pid_dual_update(&d_only, jc, eps1);
            let before = i_only.lambda;
            i_only = pid_dual_update(&i_only, jc, eps1);
            integral = (integral + jc - eps1).max(0.0);
            if full.lambda < 0.0 || full.integral < 0.0 {
                violations += 1;
            }
            if prev.is_some_and(|p| jc < p) && d_only.lambda != 0.0 {
                violations += 1;
            }
            if (i_only.lambda - gains.ki * integral).abs() > 1e-12 {
                violations += 1;
            }
            if gains.ki > 0.0 && jc > eps1 && prev.is_some() && i_only.lambda <= before {
                violations += 1;
            }
            prev = Some(jc);
        }
    }
    let el = start.elapsed();
    outcome(
        violations == 0 && within(el, 5.0),
        format!(
            "10^5 random cost sequences, {violations} invariant violations, {:.2} s (limit 5 s)",
            el.as_secs_f64()
        ),
    )
}

// Criterion 3 -----------------------------------------------------------

fn budget_suite() -> Outcome {
    let mut rng = Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let eps = rng.random_range(0.0..5.0);
        let t = rng.random_range(1..5000usize);
        let g: f64 = rng.random_range(0.9..0.9999);
        let direct = eps * (1.0 - g.powi(t as i32)) / (t as f64 * (1.0 - g));
        worst = worst.max((cost_limit(eps, t, g).unwrap() - direct).abs());
    }
    let limit_one = cost_limit(1.5, 3000, 1.0).unwrap();
    let desk = cost_limit(1.5, 3000, 0.99).unwrap();
    // cost_limit grows with gamma; bisect for the discount giving 0.06.
    let (mut lo, mut hi) = (0.985, 0.995);
    let f = |g: f64| cost_limit(1.5, 3000, g).unwrap() - 0.06;
    let bracketed = f(lo) < 0.0 && f(hi) > 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g06 = 0.5 * (lo + hi);
    let pass = worst <= 1e-12 && limit_one == 1.5 && (desk - 0.05).abs() <= 1e-4 && bracketed;
    outcome(
        pass,
        format!(
            "max deviation {worst:.1e} (limit 1e-12); gamma=1 gives {limit_one}; T=3000, gamma=0.99 gives {desk:.5} (0.0500 +/- 1e-4); 0.06 reached at gamma={g06:.5} in [0.985, 0.995]"
        ),
    )
}

// Criterion 4 -----------------------------------------------------------

fn grad_check(net: &mut Mlp, rng: &mut Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p: Vec<f64> = (0..net.num_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        net.set_params(&p).unwrap();
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let up: Vec<f64> = (0..net.output_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (g, dx) = net.gradient(&x, &up).unwrap();
        let f = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(y, u)| y * u)
                .sum()
        };
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-2);
        for k in 0..net.num_params() {
            let v = net.params()[k];
            net.params_mut()[k] = v + h;
            let fp = f(net, &x);
            net.params_mut()[k] = v - h;
            let fm = f(net, &x);
            net.params_mut()[k] = v;
            worst = worst.max(rel(g[k], (fp - fm) / (2.0 * h)));
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            worst = worst.max(rel(dx[k], (f(net, &xp) - f(net, &xm)) / (2.0 * h)));
        }
    }
    worst
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(4);
    let policy = GaussianPolicy::mlp(3, &[64, 64], -0.5, (0.0, 57.0), &mut rng).unwrap();
    let critics = Critics::new(3, &[64, 64], 1e-3, 0.01, &mut rng);
    let mut nets = [
        ("policy mean 3-64-64-1", policy.mean.clone()),
        ("reward critic 4-64-64-1", critics.q_r.clone()),
        ("cost critic 4-64-64-1", critics.q_c.clone()),
        (
            "bandit policy 1-16-16-1",
            GaussianPolicy::mlp(1, &[16, 16], -1.0, (-1.0, 1.0), &mut rng)
                .unwrap()
                .mean,
        ),
        (
            "bandit critic 2-16-16-1",
            Critics::new(1, &[16, 16], 1e-3, 0.01, &mut rng).q_r,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (_, net) in nets.iter_mut() {
        worst = worst.max(grad_check(net, &mut rng));
    }
    let el = start.elapsed();
    let names: Vec<&str> = nets.iter().map(|n| n.0).collect();
    outcome(
        worst <= 1e-4 && within(el, 30.0),
        format!(
            "{}: max relative error {worst:.1e} (limit 1e-4), {:.1} s (limit 30 s)",
            names.join(", "),
            el.as_secs_f64()
        ),
    )
}

// Criterion 5 -----------------------------------------------------------

fn random_batch(rng: &mut Rng) -> QSamples {
    let m = rng.random_range(2..10);
    let n = rng.random_range(1..20);
    let q_r = (0..m * n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let q_c = (0..m * n).map(|_| rng.random_range(0.0..3.0)).collect();
    QSamples::new(m, q_r, q_c).unwrap()
}

/// Dense grid search of the dual, independent of the solver.
fn grid_oracle(q: &QSamples, eps1: f64, eps2: f64) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=400 {
        let eta = 10f64.powf(-4.0 + 6.0 * i as f64 / 400.0);
        for j in 0..=400 {
            let lambda = 3.0 * j as f64 / 400.0;
            best = best.min(dual_objective(eta, lambda, q, eps1, eps2));
        }
    }
    best
}

/// Primal solution of a single two-action state by scanning `q = [p, 1 - p]`:
/// maximise `E_q[Q_r]` subject to `E_q[Q_c] <= eps1` and `KL(q || uniform) <= eps2`.
fn primal_two_actions(qr: [f64; 2], qc: [f64; 2], eps1: f64, eps2: f64) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let n = 1_000_000;
    for k in 0..=n {
        let p = k as f64 / n as f64;
        let kl: f64 = [p, 1.0 - p]
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * (2.0 * x).ln())
            .sum();
        let cost = p * qc[0] + (1.0 - p) * qc[1];
        if kl <= eps2 && cost <= eps1 + 1e-12 {
            let r = p * qr[0] + (1.0 - p) * qr[1];
            if r > best.0 {
                best = (r, p);
            }
        }
    }
    best
}

fn cvpo_dual_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::seed_from_u64(5);
    let mut notes = Vec::new();
    let mut pass = true;

    let mut convex_gap: f64 = f64::NEG_INFINITY;
    for _ in 0..100 {
        let q = random_batch(&mut rng);
        let (e1, e2) = (rng.random_range(0.0..2.0), rng.random_range(0.01..1.0));
        let a = (rng.random_range(1e-3..5.0), rng.random_range(0.0..5.0));
        let b = (rng.random_range(1e-3..5.0), rng.random_range(0.0..5.0));
        let mid = dual_objective(0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1), &q, e1, e2);
        let avg =
            0.5 * (dual_objective(a.0, a.1, &q, e1, e2) + dual_objective(b.0, b.1, &q, e1, e2));
        convex_gap = convex_gap.max(mid - avg);
    }
    pass &= convex_gap <= 1e-9;
    notes.push(format!("convexity gap {convex_gap:.1e}"));

    let (mut norm_err, mut shift_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let m = rng.random_range(2..20);
        let qr: Vec<f64> = (0..m).map(|_| rng.random_range(-50.0..50.0)).collect();
        let qc: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..10.0)).collect();
        let (eta, lambda) = (rng.random_range(1e-3..10.0), rng.random_range(0.0..10.0));
        let w = variational_weights(eta, lambda, &qr, &qc);
        norm_err = norm_err.max((w.iter().sum::<f64>() - 1.0).abs());
        pass &= w.iter().all(|v| *v >= 0.0 && v.is_finite());
        let shifted: Vec<f64> = qr.iter().map(|v| v + 7.25).collect();
        let ws = variational_weights(eta, lambda, &shifted, &qc);
        shift_err = w
            .iter()
            .zip(&ws)
            .map(|(a, b)| (a - b).abs())
            .fold(shift_err, f64::max);
    }
    pass &= norm_err <= 1e-9 && shift_err <= 1e-12;
    notes.push(format!(
        "normalisation error {norm_err:.1e}, shift error {shift_err:.1e}"
    ));

    let params = CvpoParams {
        dual_max_iters: 5000,
        dual_tol: 1e-9,
        ..CvpoParams::default()
    };
    let mut zero_cost_ok = true;
    for _ in 0..20 {
        let q = random_batch(&mut rng);
        let zero = QSamples::new(
            q.samples(),
            (0..q.states()).flat_map(|i| q.row(i).0.to_vec()).collect(),
            vec![0.0; q.states() * q.samples()],
        )
        .unwrap();
        let sol = solve_duals(&zero, 0.3, 0.1, &params, (1.0, 2.0)).unwrap();
        zero_cost_ok &= sol.lambda == 0.0;
    }
    pass &= zero_cost_ok;
    notes.push(format!("Q_c = 0 gives lambda* = 0: {zero_cost_ok}"));

    let q = QSamples::new(2, vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
    let sol = solve_duals(&q, 0.3, 1.0, &params, (1.0, 0.0)).unwrap();
    let w = variational_weights(sol.eta, sol.lambda, &[1.0, 0.0], &[1.0, 0.0]);
    let grid_min = grid_oracle(&q, 0.3, 1.0);
    let (primal_value, p) = primal_two_actions([1.0, 0.0], [1.0, 0.0], 0.3, 1.0);
    let ok = w[0] <= 0.3 + 0.02
        && (w[0] - p).abs() <= 0.05
        && (w[1] - (1.0 - p)).abs() <= 0.05
        && sol.value <= grid_min + 1e-6
        && (sol.value - primal_value).abs() <= 1e-3;
    pass &= ok;
    notes.push(format!(
        "binding instance E_q[Q_c]={:.4} (<= 0.32), weights [{:.4}, {:.4}] vs primal [{p:.4}, {:.4}]; dual value {:.5}, grid minimum {grid_min:.5}, primal optimum {primal_value:.5}",
        w[0], w[0], w[1], 1.0 - p, sol.value
    ));

    let el = start.elapsed();
    pass &= within(el, 60.0);
    notes.push(format!("{:.1} s (limit 60 s)", el.as_secs_f64()));
    outcome(pass, notes.join("; "))
}

// Criterion 6 -----------------------------------------------------------

fn snapped_instance(decisions: usize, actions: usize) -> DpGrid {
    let interval = 20;
    let steps = decisions * interval;
    let speeds: Vec<f64> = (0..=steps)
        .map(|k| {
            let t = k as f64;
            (t * 0.4).min(14.0) + 2.0 * (t / 15.0).sin().abs()
        })
        .collect();
    let cycle = Arc::new(DriveCycle::from_speeds(speeds, 1.0).unwrap());
    let bl = (steps / 3).max(1);
    let br = (2 * steps / 3).max(bl);
    let corridor = SocCorridor::new(0.65, 0.35, 0.5, bl, br, steps).unwrap();
    let mut g = DpGrid::new(cycle, corridor, Arc::new(Powertrain::default()))
        .with_levels(301, actions)
        .with_decision_interval(interval)
        .snapped(true);
    g.soc_range = (0.2, 0.8);
    // Snapping makes exact balance unreachable with a handful of actions.
    g.slack = Some(0.05);
    g
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut mismatches = Vec::new();
    let mut feasible = 0;
    let mut count = 0;
    for decisions in 1..=6 {
        for actions in 2..=4 {
            let g = snapped_instance(decisions, actions);
            let dp = dp_solve(&g).map(|s| s.min_fuel);
            let en = enumerate_solve(&g);
            count += 1;
            if dp.is_ok() {
                feasible += 1;
            }
            if dp != en {
                pass = false;
                mismatches.push(format!("{decisions}x{actions}: {dp:?} vs {en:?}"));
            }
        }
    }

    // Agreement on infeasible instances alone would say nothing.
    pass &= feasible * 2 >= count;

    let cycle = Arc::new(DriveCycle::desk_trapezoid(1.0).unwrap());
    let mut coarse = DpGrid::new(
        cycle,
        SocCorridor::trapezoid_default(),
        Arc::new(Powertrain::default()),
    )
    .with_levels(401, 3)
    .with_decision_interval(20);
    coarse.soc_range = (0.4, 0.6);
    coarse.slack = Some(0.01);
    let interp = dp_solve(&coarse).map(|s| s.min_fuel);
    let exact = enumerate_solve(&coarse);
    let rel = match (&interp, &exact) {
        (Ok(a), Ok(b)) => (a - b).abs() / b,
        _ => f64::INFINITY,
    };
    pass &= rel <= 0.01;
    let el = start.elapsed();
    pass &= within(el, 120.0);
    outcome(
        pass,
        format!(
            "snapped: {count} instances up to 6 decisions x 4 actions ({feasible} feasible), {} mismatches {:?}; trapezoid 3-action: dp {:?} vs enumeration {:?}, relative gap {rel:.2e} (limit 1%); {:.1} s (limit 120 s)",
            mismatches.len(),
            mismatches,
            interp,
            exact,
            el.as_secs_f64()
        ),
    )
}

// Criteria 7 and 9 run the CLI -------------------------------------------

fn cofc(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cofc"))
        .args(args)
        .env_remove("COFC_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn desk_training(dp_fuel: Option<f64>, config: &str, scratch: &Path) -> Outcome {
    let Some(dp) = dp_fuel else {
        return outcome(false, "no oracle reference");
    };
    let cfg = repo_root().join("configs").join(config);
    let out = scratch.join(config.trim_end_matches(".toml"));
    let start = Instant::now();
    let res = cofc(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    let el = start.elapsed();
    let s = match res {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("train failed: {e}")),
    };
    let cost = s["cost"].as_f64().unwrap_or(f64::NAN);
    let soc = s["final_soc"].as_f64().unwrap_or(f64::NAN);
    let fuel = s["fuel_g"].as_f64().unwrap_or(f64::NAN);
    let a = cost <= 1.5;
    let b = (soc - 0.5).abs() <= 0.03;
    let c = fuel <= 1.15 * dp;
    let t = within(el, 1200.0);
    outcome(
        a && b && c && t,
        format!(
            "{} best epoch {}: (a) cost {cost:.3} <= 1.5 {}; (b) final SOC {soc:.4} in 0.5 +/- 0.03 {}; (c) fuel {fuel:.2} g <= 1.15 x {dp:.2} g {}; {:.0} s (limit 1200 s) {}",
            s["algorithm"].as_str().unwrap_or("?"),
            s["best_epoch"],
            verdict(a),
            verdict(b),
            verdict(c),
            el.as_secs_f64(),
            verdict(t)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISSED"
    }
}

fn determinism(scratch: &Path) -> Outcome {
    let cfg = repo_root().join("configs/trapezoid.toml");
    let mut traces = Vec::new();
    let start = Instant::now();
    for run in ["det_a", "det_b"] {
        let out = scratch.join(run);
        if let Err(e) = cofc(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--epochs",
            "40",
            "--out",
            out.to_str().unwrap(),
        ]) {
            return outcome(false, format!("train failed: {e}"));
        }
        traces.push(fs::read(out.join("trace.csv")).unwrap_or_default());
    }
    let same = !traces[0].is_empty() && traces[0] == traces[1];
    outcome(
        same,
        format!(
            "two 40-epoch runs, traces of {} bytes, identical: {same}, {:.0} s total",
            traces[0].len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// Criterion 8 -----------------------------------------------------------

fn unit_mapping() -> Outcome {
    // (approach, reward, reported L/100km)
    let rows = [
        ("Random", -1792.76, 22.76),
        ("CVPO", -333.91, 4.24),
        ("lr-DDPG", -311.43, 3.95),
        ("lr-SAC", -805.78, 10.23),
        ("lr-FOCOPS", 0.00, 0.00),
        ("lr-PPO", -338.73, 4.30),
        ("lr-TRPO", 0.00, 0.00),
        ("lr-CPO", -326.76, 4.15),
    ];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (_, reward, l) in rows {
        worst = worst.max((fuel_economy(-reward, 10.93).unwrap() - l).abs());
    }
    let el = start.elapsed();
    outcome(
        worst <= 0.03 && within(el, 1.0),
        format!(
            "{} table rows, max |error| {worst:.4} L/100km (limit 0.03)",
            rows.len()
        ),
    )
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!(
            "criterion {n} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    record(1, "corridor math", corridor_math());
    record(2, "PID dual", pid_suite());
    record(3, "cost budget", budget_suite());
    record(4, "gradient checks", gradient_checks());
    record(5, "CVPO dual", cvpo_dual_suite());
    record(6, "oracle equivalence", oracle_equivalence());

    let oracle = cofc(&[
        "oracle",
        "--config",
        repo_root().join("configs/trapezoid.toml").to_str().unwrap(),
        "--out",
        scratch.path().join("oracle").to_str().unwrap(),
    ]);
    let dp = oracle.as_ref().ok().and_then(|v| v["min_fuel_g"].as_f64());
    if let Err(e) = &oracle {
        println!("oracle run failed: {e}");
    }
    record(
        7,
        "desk training, PID Lagrangian",
        desk_training(dp, "trapezoid.toml", scratch.path()),
    );
    record(
        7,
        "desk training, CVPO",
        desk_training(dp, "trapezoid_cvpo.toml", scratch.path()),
    );
    record(8, "unit mapping", unit_mapping());
    record(9, "determinism", determinism(scratch.path()));

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
