//! Acceptance suite. Runs without the libtest harness so that each
//! criterion prints exactly one PASS or FAIL line; the process fails if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqdp_core::bench::{generate_instance, BenchmarkParams};
use sqdp_core::model::{MspInstance, Vector};
use sqdp_core::oracle::{grid_min, subtree_value};
use sqdp_core::qcsc::{
    complexity_bound, gap_contraction, gap_recursion_excess, run_qcsc, run_qcsc_reformulated,
    PiecewiseQuadratic, QuadBranch, RunStatus, SubgradientOracle,
};
use sqdp_core::qp::{kkt_residuals, solve_qp};
use sqdp_core::sqdp::{run, CutMode, RunReport, SolverConfig, TerminationStatus};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Lower-bound checks on every engine run made by the suite, summarized by
/// criterion 5.
static LB_LEDGER: Mutex<(usize, Vec<String>)> = Mutex::new((0, Vec::new()));

fn engine_run(label: &str, inst: &MspInstance, config: &SolverConfig, ext: f64) -> RunReport {
    let report = run(inst, config).unwrap_or_else(|e| panic!("{label}: {e}"));
    let mut ledger = LB_LEDGER.lock().unwrap();
    ledger.0 += 1;
    if let Err(msg) = lb_soundness(&report, ext) {
        ledger.1.push(format!("{label}: {msg}"));
    }
    report
}

fn criterion_1() -> Outcome {
    let f = PiecewiseQuadratic::kinked_1d();
    let start = Instant::now();
    let r = run_qcsc(&f, &Vector::from_element(1, 8.0), 1e-3, 100).unwrap();
    let elapsed = start.elapsed();

    let converged_at = r.gaps.iter().position(|&t| t <= 1e-3).map(|k| k + 1);
    let gap_ok = converged_at.is_some_and(|k| k <= 10);
    // Last iteration whose incumbent moved by 1e-6 or more.
    let stabilized_after = r
        .incumbent_values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[1] - w[0]).abs() >= 1e-6)
        .map(|(i, _)| i + 2)
        .next_back()
        .unwrap_or(1);
    let last_change = r
        .incumbent_values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .rfind(|d| *d >= 1e-6)
        .unwrap_or(0.0);
    let stable_ok = stabilized_after <= 6;

    let (xg, vg) = grid_min(|x| f.value(x), f.domain(), 1e-5).unwrap();
    let grid_ok = (r.best_value - vg).abs() <= 1e-3;
    // The two steep branches cross at the minimizer.
    let x_star = -(9.0 + 6.0 / 1000.0) / 18.0;
    let f_star = f.value(&Vector::from_element(1, x_star));
    let exact_ok = (r.best_value - f_star).abs() <= 1e-3;
    let time_ok = elapsed < Duration::from_secs(1);

    Outcome::new(
        gap_ok && stable_ok && grid_ok && time_ok,
        format!(
            "gap<=1e-3 at iteration {:?} (limit 10): {}; incumbent last moved by {last_change:.2e} at \
             iteration {stabilized_after} (limit 6): {}; value {:.9} vs 1e-5 grid {vg:.9} at x={:.5}, \
             diff {:.2e} (limit 1e-3): {}; vs exact minimum {f_star:.9} at x={x_star:.8}, diff {:.2e}: {}; \
             {:.2} ms: {}",
            converged_at,
            ok(gap_ok),
            ok(stable_ok),
            r.best_value,
            xg[0],
            (r.best_value - vg).abs(),
            ok(grid_ok),
            (r.best_value - f_star).abs(),
            ok(exact_ok),
            elapsed.as_secs_f64() * 1e3,
            ok(time_ok),
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0_f64;
    let mut runs = 0;
    for i in 0..20 {
        let (f, x0) = composite(&mut rng, i % 5 == 0);
        let c = f.constants().unwrap();
        for eps in [1e-1, 1e-2] {
            let bound = complexity_bound(c.m, c.l, c.mu, c.d, eps).unwrap() as usize;
            let r = run_qcsc(&f, &x0, eps, bound + 1).unwrap();
            runs += 1;
            worst_ratio = worst_ratio.max(r.iterations() as f64 / bound as f64);
            if r.status != RunStatus::Converged || r.iterations() > bound {
                failures.push(format!(
                    "instance {i} eps {eps}: {} iterations, bound {bound}",
                    r.iterations()
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let time_ok = elapsed < Duration::from_secs(30);
    Outcome::new(
        failures.is_empty() && time_ok,
        format!(
            "{runs} runs, largest iterations/bound {worst_ratio:.3}, {} over the bound{}; {:.1} s (limit 30 s)",
            failures.len(),
            if failures.is_empty() { String::new() } else { format!(" ({})", failures.join("; ")) },
            elapsed.as_secs_f64()
        ),
    )
}

fn random_piecewise(rng: &mut ChaCha8Rng) -> (PiecewiseQuadratic, Vector) {
    let n = rng.gen_range(1..=3);
    let k = rng.gen_range(2..=4);
    let branches = (0..k)
        .map(|_| QuadBranch {
            a: uniform(rng, 0.5, 5.0),
            b: random_vector(rng, n, -5.0, 5.0),
            c: uniform(rng, -3.0, 3.0),
        })
        .collect();
    let domain = sqdp_core::model::BaseSet::boxed(
        Vector::from_element(n, -2.0),
        Vector::from_element(n, 2.0),
    )
    .unwrap();
    let x0 = random_vector(rng, n, -2.0, 2.0);
    (PiecewiseQuadratic::new(branches, domain, None).unwrap(), x0)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for i in 0..10 {
        let (a, b) = match i {
            0 => {
                let f = PiecewiseQuadratic::kinked_1d();
                let x0 = Vector::from_element(1, 8.0);
                (
                    run_qcsc(&f, &x0, 1e-3, 200),
                    run_qcsc_reformulated(&f, &x0, 1e-3, 200),
                )
            }
            1..=4 => {
                let (f, x0) = random_piecewise(&mut rng);
                (
                    run_qcsc(&f, &x0, 1e-4, 500),
                    run_qcsc_reformulated(&f, &x0, 1e-4, 500),
                )
            }
            _ => {
                let (f, x0) = composite(&mut rng, false);
                (
                    run_qcsc(&f, &x0, 1e-3, 500),
                    run_qcsc_reformulated(&f, &x0, 1e-3, 500),
                )
            }
        };
        let (a, b) = (a.unwrap(), b.unwrap());
        if a.iterates.len() != b.iterates.len() {
            failures.push(format!(
                "instance {i}: {} vs {} iterates",
                a.iterates.len(),
                b.iterates.len()
            ));
            continue;
        }
        for (xa, xb) in a.iterates.iter().zip(&b.iterates) {
            for (u, v) in xa.iter().zip(xb) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    let pass = failures.is_empty() && worst <= 1e-8;
    Outcome::new(
        pass,
        format!(
            "10 instances, largest coordinate difference {worst:.2e} (limit 1e-8){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checks = 0usize;
    let mut cuts = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for i in 0..50 {
        let inst = desk_msp(&mut rng, i);
        let ext = extensive(&inst);
        let mode = if i % 2 == 0 {
            CutMode::Quadratic
        } else {
            CutMode::Affine
        };
        let config = SolverConfig {
            max_iter: 3,
            ub_window: 1000,
            seed: i as u64,
            cut_mode: mode,
            ..SolverConfig::default()
        };
        let report = engine_run(&format!("cut-validity MSP {i}"), &inst, &config, ext);
        for t in 2..=inst.num_stages() {
            let base = inst.base_set(t - 1).clone();
            for cut in report.final_models.get(t).cuts() {
                cuts += 1;
                for _ in 0..100 {
                    let x = base.sample(inst.n(), &mut rng);
                    let q = subtree_value(&inst, t, &x, 100_000).unwrap();
                    let c = cut.eval(&x).unwrap();
                    checks += 1;
                    worst = worst.max(c - q);
                    if c > q + 1e-6 && failures.len() < 5 {
                        failures.push(format!("MSP {i} stage {t}: cut {c} > Q {q}"));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let time_ok = elapsed < Duration::from_secs(300);
    Outcome::new(
        failures.is_empty() && time_ok && cuts > 0,
        format!(
            "50 MSPs, {cuts} cuts, {checks} points, largest cut - Q {worst:.2e} (limit 1e-6){}; {:.1} s (limit 300 s)",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) },
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let ledger = LB_LEDGER.lock().unwrap();
    Outcome::new(
        ledger.0 > 0 && ledger.1.is_empty(),
        format!(
            "{} engine runs checked, {} violations{}",
            ledger.0,
            ledger.1.len(),
            if ledger.1.is_empty() {
                String::new()
            } else {
                format!(": {}", ledger.1.join("; "))
            }
        ),
    )
}

fn desk_benchmark(lambda0: f64, seed: u64) -> MspInstance {
    generate_instance(&BenchmarkParams::new(3, 5, 3, lambda0, seed)).unwrap()
}

fn criterion_6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda0 in [1.0, 1e3] {
        let inst = desk_benchmark(lambda0, 1);
        let ext = extensive(&inst);
        let mut lbs = Vec::new();
        for mode in [CutMode::Quadratic, CutMode::Affine] {
            let config = SolverConfig {
                cut_mode: mode,
                seed: 1,
                ..SolverConfig::default()
            };
            let start = Instant::now();
            let r = engine_run(
                &format!("desk lambda0={lambda0} {}", mode.method()),
                &inst,
                &config,
                ext,
            );
            let secs = start.elapsed().as_secs_f64();
            let ub = r.ub.unwrap_or(f64::NAN);
            let gap = r.relative_gap().unwrap_or(f64::INFINITY);
            let row_ok = r.status == TerminationStatus::Converged
                && gap <= 0.1
                && ext >= r.lb - 1e-6
                && ext <= ub * 1.05
                && secs < 120.0;
            pass &= row_ok;
            lbs.push(r.lb);
            parts.push(format!(
                "l0={lambda0} {}: {} iters, LB {:.10} UB {ub:.10} ext {ext:.10} gap {gap:.2e}, {secs:.2} s {}",
                mode.method(),
                r.iterations,
                r.lb,
                ok(row_ok)
            ));
        }
        let rel = (lbs[0] - lbs[1]).abs() / lbs[0].abs().max(lbs[1].abs());
        let agree = rel <= 0.01;
        pass &= agree;
        parts.push(format!("l0={lambda0} LB agreement {rel:.2e} {}", ok(agree)));
    }
    Outcome::new(pass, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances: Vec<MspInstance> = (0..9).map(|i| desk_msp(&mut rng, i)).collect();
    instances.push(desk_benchmark(1.0, 1));
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for inst in &instances {
        for t in 2..=inst.num_stages() {
            let alpha = inst.aggregated_alpha(t);
            let base = inst.base_set(t - 1).clone();
            let q = |x: &Vector| subtree_value(inst, t, x, 100_000).unwrap();
            for _ in 0..50 {
                let x = base.sample(inst.n(), &mut rng);
                let y = base.sample(inst.n(), &mut rng);
                let mid = (&x + &y) * 0.5;
                let excess =
                    q(&mid) - (0.5 * q(&x) + 0.5 * q(&y) - alpha / 8.0 * (&x - &y).norm_squared());
                worst = worst.max(excess);
                checks += 1;
            }
        }
    }
    Outcome::new(
        worst <= 1e-6,
        format!(
            "{} instances, {checks} pairs, largest midpoint excess {worst:.2e} (limit 1e-6)",
            instances.len()
        ),
    )
}

/// First iteration whose LB is within `1e-6` relative of `ext`.
fn lb_hit(r: &RunReport, ext: f64) -> Option<usize> {
    r.records
        .iter()
        .find(|rec| rec.lb >= ext - 1e-6 * ext.abs().max(1.0))
        .map(|rec| rec.iter)
}

fn criterion_8() -> Outcome {
    let mut parts = Vec::new();
    let mut trend = true;
    for seed in [1, 2] {
        let inst = desk_benchmark(1e5, seed);
        let ext = extensive(&inst);
        let mut iters = Vec::new();
        let mut hits = Vec::new();
        for mode in [CutMode::Quadratic, CutMode::Affine] {
            let config = SolverConfig {
                cut_mode: mode,
                seed,
                ..SolverConfig::default()
            };
            let r = engine_run(
                &format!("desk lambda0=1e5 seed {seed} {}", mode.method()),
                &inst,
                &config,
                ext,
            );
            iters.push(r.iterations);
            hits.push(lb_hit(&r, ext));
        }
        trend &= iters[0] <= iters[1];
        parts.push(format!(
            "seed {seed}: SQDP {} iters vs SDDP {} (LB reaches the optimum at {:?} vs {:?})",
            iters[0], iters[1], hits[0], hits[1]
        ));
    }
    parts.push(format!(
        "trend SQDP <= SDDP {}",
        if trend { "holds" } else { "does not hold" }
    ));
    // Reported, not asserted.
    Outcome::new(true, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_kkt = 0.0_f64;
    let mut worst_sens = 0.0_f64;
    let mut failures = Vec::new();
    for i in 0..200 {
        let p = random_qp(&mut rng);
        let sol = solve_qp(&p, 1e-8).unwrap();
        let kkt = kkt_residuals(&p, &sol).max();
        worst_kkt = worst_kkt.max(kkt);
        if kkt > 1e-8 {
            failures.push(format!("QP {i}: KKT residual {kkt:.2e}"));
        }

        // Central difference along a right-hand-side direction aligned with
        // the multipliers.
        let h = 1e-5;
        let dir = |m: f64, rng: &mut ChaCha8Rng| {
            h * if m < 0.0 { -1.0 } else { 1.0 } * uniform(rng, 0.5, 1.0)
        };
        let d_eq =
            Vector::from_iterator(p.num_eq(), sol.lambda_eq.iter().map(|&l| dir(l, &mut rng)));
        let d_in =
            Vector::from_iterator(p.num_ineq(), sol.mu_ineq.iter().map(|&l| dir(l, &mut rng)));
        let predicted = -(sol.lambda_eq.dot(&d_eq) + sol.mu_ineq.dot(&d_in));
        let value_at = |s: f64| {
            let mut q = p.clone();
            q.b_eq += &d_eq * s;
            q.b_ineq += &d_in * s;
            solve_qp(&q, 1e-10).unwrap().value
        };
        let dv = 0.5 * (value_at(1.0) - value_at(-1.0));
        let err = if predicted.abs() > 1e-9 {
            (dv - predicted).abs() / predicted.abs()
        } else {
            (dv - predicted).abs() / 1e-9
        };
        worst_sens = worst_sens.max(err);
        if err > 1e-4 {
            failures.push(format!(
                "QP {i}: predicted {predicted:.6e}, observed {dv:.6e}"
            ));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "200 QPs, largest KKT residual {worst_kkt:.2e} (limit 1e-8), largest sensitivity error {worst_sens:.2e} (limit 1e-4){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    let mut steps = 0;
    for _ in 0..20 {
        let (f, x0) = composite(&mut rng, true);
        let c = f.constants().unwrap();
        for eps in [1e-1, 1e-2, 1e-3] {
            let r = run_qcsc(&f, &x0, eps, 10_000).unwrap();
            let tau = gap_contraction(c.m, c.l, c.mu, eps);
            if r.gaps.len() >= 2 {
                worst = worst.max(gap_recursion_excess(&r, tau));
                steps += r.gaps.len() - 1;
            }
            runs += 1;
        }
    }
    Outcome::new(
        worst <= 1e-9,
        format!(
            "{runs} runs, {steps} consecutive gap pairs, largest excess {worst:.2e} (limit 1e-9)"
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "QCSC on the 1-D piecewise quadratic", criterion_1),
        (
            2,
            "iteration counts within the complexity bound",
            criterion_2,
        ),
        (
            3,
            "QCSC and its reformulation give identical iterates",
            criterion_3,
        ),
        (4, "cuts lower-bound the cost-to-go", criterion_4),
        (6, "bound sandwich on the desk benchmark", criterion_6),
        (7, "cost-to-go strong convexity", criterion_7),
        (
            8,
            "SQDP vs SDDP iteration trend at lambda0=1e5",
            criterion_8,
        ),
        (9, "QP certification and dual sensitivity", criterion_9),
        (10, "gap recursion", criterion_10),
        (
            5,
            "lower bounds monotone and below the optimum",
            criterion_5,
        ),
    ];
    let mut failed = Vec::new();
    for (id, title, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {id:>2} {}: {title}: {} [{:.1} s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        if !outcome.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        failed.sort_unstable();
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
