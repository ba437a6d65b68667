//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Every threshold below is fixed; nothing is calibrated at
//! run time.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use matchscore::equilibrium::POST_SOLVE_TOL;
use matchscore::estimator::{objective_grid, GridAxis};
use matchscore::market::ProductionSpec;
use matchscore::montecarlo::{lambda_sweep, run_experiment, Scenario};
use matchscore::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const MC_SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

// 1. Closed-form row counts for every (matched, unmatched buyers, unmatched sellers) in {0..6}^3.
fn counting_identity() -> Verdict {
    let start = Instant::now();
    let perm2 = |n: u64| n * n.saturating_sub(1);
    let comb2 = |n: u64| if n < 2 { 0 } else { n * (n - 1) / 2 };
    let mut mismatches = 0;
    let mut cases = 0;
    for m in 0..=6usize {
        for ub in 0..=6usize {
            for us in 0..=6usize {
                let size = (m + ub).max(m + us).max(1);
                let market = generate_market(size, 1).unwrap();
                let matched_pairs: Vec<_> = (0..m).map(|i| (i, i)).collect();
                let outcome = MatchingOutcome {
                    transfers: matched_pairs.iter().map(|&p| (p, 0.0)).collect(),
                    matched_pairs,
                    unmatched_buyers: (m..m + ub).collect(),
                    unmatched_sellers: (m..m + us).collect(),
                    buyer_duals: vec![0.0; m + ub],
                    seller_duals: vec![0.0; m + us],
                    total_value: 0.0,
                    dual_selection: matchscore::equilibrium::DualSelection::BuyerOptimal,
                };
                let mut counts = HashMap::new();
                for model in Model::ALL {
                    let data = ObservedData::new(&market, &outcome, model.has_unmatched(), model.has_transfers());
                    let set = build_inequalities(&data, &ScoreConfig::new(model, false, 1.0).unwrap()).unwrap();
                    let pool = if model.has_unmatched() { m + ub + us } else { m } as u64;
                    let expected = if model.has_transfers() { perm2(pool) } else { comb2(pool) };
                    let got = set.pairwise().count() as u64;
                    counts.insert(model, got);
                    cases += 1;
                    if got != expected {
                        mismatches += 1;
                    }
                }
                if counts[&Model::UT] != 2 * counts[&Model::U] || counts[&Model::T] != 2 * counts[&Model::None] {
                    mismatches += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && within(Duration::from_secs(1), elapsed),
        format!("{cases} regime/size cases, {mismatches} mismatches, {elapsed:.2?} (limit 1s)"),
    )
}

fn brute_force(values: &DMatrix<f64>) -> f64 {
    fn go(values: &DMatrix<f64>, b: usize, used: u32) -> f64 {
        if b == values.nrows() {
            return 0.0;
        }
        let mut best = go(values, b + 1, used);
        for s in 0..values.ncols() {
            if used & (1 << s) == 0 {
                best = best.max(values[(b, s)] + go(values, b + 1, used | (1 << s)));
            }
        }
        best
    }
    go(values, 0, 0)
}

// 2. Assignment total equals brute force over partial matchings; solution is integral.
fn assignment_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut non_integral = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=7);
        let values = DMatrix::from_fn(n, n, |_, _| rng.random_range(-3.0..=3.0));
        let o = solve_assignment(&values).unwrap();
        worst = worst.max((o.total_value - brute_force(&values)).abs());
        let mut x = DMatrix::<u8>::zeros(n, n);
        for &(b, s) in &o.matched_pairs {
            x[(b, s)] += 1;
        }
        let rows_ok = (0..n).all(|b| x.row(b).iter().map(|&v| v as u32).sum::<u32>() <= 1);
        let cols_ok = (0..n).all(|s| x.column(s).iter().map(|&v| v as u32).sum::<u32>() <= 1);
        if !(rows_ok && cols_ok && o.check_structure().is_ok()) {
            non_integral += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && non_integral == 0 && within(Duration::from_secs(30), elapsed),
        format!("max |LP - brute| = {worst:.2e} (tol 1e-9), {non_integral} non-integral, {elapsed:.2?} (limit 30s)"),
    )
}

// 3. Zero stability violations (pairwise and IR) at 1e-7 on 200 solved markets.
fn equilibrium_stability() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut ir_rows = 0;
    for i in 0..200u64 {
        let n = rng.random_range(1..=30);
        let beta2 = rng.random_range(-3.0..1.0);
        let spec = if i % 2 == 0 {
            ProductionSpec::case2(0.5, beta2, 8.0).unwrap()
        } else {
            ProductionSpec::case1(0.5, beta2)
        };
        let market = generate_market(n, 10_000 + i).unwrap();
        let values = value_matrix(&spec, &market);
        let o = solve_assignment(&values).unwrap();
        let report = verify_stability(&o, &values);
        violations += report.violations.len();
        ir_rows += report.ir_rows;
        let transfers = extract_transfers(&o, &values).unwrap();
        violations += transfers.iter().filter(|(&(b, s), &p)| values[(b, s)] - p < -POST_SOLVE_TOL).count();
    }
    let elapsed = start.elapsed();
    verdict(
        violations == 0 && within(Duration::from_secs(60), elapsed),
        format!("{violations} violations over 200 markets ({ir_rows} IR rows), {elapsed:.2?} (limit 60s)"),
    )
}

fn observed_case2(n: usize, seed: u64, model: Model, use_ir: bool, lambda: f64) -> Objective {
    let spec = ProductionSpec::case2(0.5, -2.0, 8.0).unwrap();
    let market = generate_market(n, seed).unwrap();
    let outcome = solve_assignment(&value_matrix(&spec, &market)).unwrap();
    let data = ObservedData::new(&market, &outcome, model.has_unmatched(), model.has_transfers());
    let set = build_inequalities(&data, &ScoreConfig::new(model, use_ir, lambda).unwrap()).unwrap();
    Objective::compile(&set, &spec, &market)
}

// 4. Matched-only regimes: score identical across beta2 in {-10,-5,0,5,10}.
fn matched_only_invariance() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut differing = 0;
    let mut checks = 0;
    for model in [Model::T, Model::None] {
        for m in 0..20u64 {
            let obj = observed_case2(30, 400 + m, model, false, 1.0);
            for _ in 0..5 {
                let b1 = rng.random_range(-10.0..10.0);
                let scores: Vec<ScoreValue> =
                    [-10.0, -5.0, 0.0, 5.0, 10.0].iter().map(|&b2| obj.score(Candidate::new(b1, b2))).collect();
                checks += 1;
                if scores.iter().any(|s| *s != scores[0]) {
                    differing += 1;
                }
            }
        }
    }
    verdict(differing == 0, format!("{differing}/{checks} (market, beta1) pairs vary in beta2 (regimes t, none)"))
}

fn monotone_columns(model: Model) -> (usize, usize) {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut broken = 0;
    let mut checks = 0;
    for m in 0..20u64 {
        let obj = observed_case2(30, 500 + m, model, false, 1.0);
        for _ in 0..5 {
            let b1 = rng.random_range(-10.0..10.0);
            let col: Vec<u64> =
                (0..41).map(|k| obj.score(Candidate::new(b1, -10.0 + 0.5 * k as f64)).pairwise_satisfied).collect();
            checks += 1;
            if col.windows(2).any(|w| w[1] > w[0]) {
                broken += 1;
            }
        }
    }
    (broken, checks)
}

// 5. Unmatched data without IR: score non-increasing along an ascending 41-point beta2 grid.
fn unmatched_monotonicity() -> Verdict {
    let (broken_u, checks) = monotone_columns(Model::U);
    let (broken_ut, _) = monotone_columns(Model::UT);
    verdict(
        broken_u == 0,
        format!(
            "regime u: {broken_u}/{checks} columns increase somewhere; regime ut (informational): {broken_ut}/{checks}"
        ),
    )
}

// 6. IR with lambda = 100 keeps every argmax strictly inside (-10, 10); lambda = 0.01 lets it reach -10.
fn ir_weight_boundedness() -> Verdict {
    let b1 = GridAxis::new(-1.0, 2.0, 61).unwrap();
    let b2 = GridAxis::new(-10.0, 10.0, 201).unwrap();
    let mut interior = 0;
    let mut reaches_floor = 0;
    for m in 0..20u64 {
        let obj = observed_case2(50, 600 + m, Model::U, true, 100.0);
        let grid = objective_grid(&obj, b1, b2).unwrap();
        let last = grid.beta2.len() - 1;
        if grid.argmax.iter().all(|&(_, j)| j > 0 && j < last) {
            interior += 1;
        }
        let weak = objective_grid(&obj.with_lambda(0.01), b1, b2).unwrap();
        if weak.argmax.iter().any(|&(_, j)| j == 0) {
            reaches_floor += 1;
        }
    }
    verdict(
        interior == 20 && reaches_floor >= 1,
        format!("lambda=100: {interior}/20 markets interior (need 20); lambda=0.01: {reaches_floor}/20 reach beta2=-10 (need >= 1)"),
    )
}

// 7. Case 2, n=50, beta2=-2, model u, IR, lambda=100, 20 replications.
fn desk_scale_cost_recovery() -> Verdict {
    let start = Instant::now();
    let s = Scenario::case2(50, -2.0, Model::U, true, 20, MC_SEED);
    let sum = run_experiment(&s, &DeConfig::default()).unwrap();
    let elapsed = start.elapsed();
    verdict(
        sum.beta2.bias.abs() <= 0.5 && sum.beta2.rmse <= 1.2 && sum.n_errors == 0 && within(Duration::from_secs(900), elapsed),
        format!(
            "bias(beta2) = {:.3} (|.| <= 0.5), rmse(beta2) = {:.3} (<= 1.2), mean unmatched {:.2}, {elapsed:.1?} (limit 15 min)",
            sum.beta2.bias, sum.beta2.rmse, sum.mean_unmatched
        ),
    )
}

// 8. Case 2, n=100, beta2=-1, model u, IR: bias at lambda=1 at least 0.8 below bias at lambda=100.
fn desk_scale_lambda_contrast() -> Verdict {
    let s = Scenario::case2(100, -1.0, Model::U, true, 20, MC_SEED);
    let sweep = lambda_sweep(&s, &DeConfig::default(), &[1.0, 100.0]).unwrap();
    let (low, high) = (sweep[0].beta2.bias, sweep[1].beta2.bias);
    verdict(
        low <= high - 0.8,
        format!(
            "bias(beta2) lambda=1: {low:.3}, lambda=100: {high:.3}, gap {:.3} (need >= 0.8); mean unmatched {:.2}",
            high - low,
            sweep[0].mean_unmatched
        ),
    )
}

// 9. DE on a smooth stub: within 1e-3 of (1, -2) for 10 seeds; traces non-decreasing.
fn de_sanity() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut non_monotone = 0;
    for seed in 0..10 {
        let cfg = DeConfig { seed, ..DeConfig::default() };
        let run = maximize(|x| -(x[0] - 1.0).powi(2) - (x[1] + 2.0).powi(2), &cfg).unwrap();
        worst = worst.max(((run.best[0] - 1.0).powi(2) + (run.best[1] + 2.0).powi(2)).sqrt());
        if run.trace.windows(2).any(|w| w[1] < w[0]) {
            non_monotone += 1;
        }
    }
    verdict(
        worst <= 1e-3 && non_monotone == 0,
        format!("max distance to optimum {worst:.2e} (tol 1e-3), {non_monotone} non-monotone traces"),
    )
}

fn run_cli(dir: &Path, args: &[&str], jobs: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_matchscore"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("MATCHSCORE_JOBS", jobs)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

// 10. Every command, rerun with the same config and seed, writes byte-identical files.
fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "seed = 9\n[market]\nn = 14\ncase = \"case2\"\n[score]\nmodel = \"ut\"\n[de]\npopulation = 30\nmax_generations = 20\n")
        .unwrap();
    let config = config.to_string_lossy().into_owned();
    let small = ["--population", "20", "--generations", "10"];
    let mut commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--n", "12", "--case", "case2", "--beta2", "-2", "--seed", "1"]),
        (
            "estimate",
            vec!["estimate", "--n", "15", "--seed", "2", "--grid", "beta1=-1:2:61", "beta2=-10:2:121", "--inequalities"],
        ),
        ("estimate-config", vec!["estimate", "--config", &config]),
        ("grid", vec!["grid", "--n", "15", "--seed", "2", "--model", "none", "--ir", "false"]),
        (
            "experiment",
            vec![
                "experiment", "--case", "case1,case2", "--n", "10", "--beta2", "-2", "--model", "u,none", "--ir", "true,false",
                "--replications", "3", "--sweep", "lambda=1,100", "--scan", "unmatched-threshold", "--seed", "4",
            ],
        ),
        ("sweep", vec!["sweep", "--case", "case2", "--n", "10", "--model", "u", "--ir", "true", "--replications", "2"]),
        ("scan", vec!["scan", "--n", "12", "--replications", "2", "--seed", "6"]),
    ];
    for (name, args) in commands.iter_mut() {
        match *name {
            "estimate" => args.extend(["--population", "30", "--generations", "20"]),
            "experiment" | "sweep" | "scan" => args.extend(small),
            _ => {}
        }
    }
    let mut identical = 0;
    let mut problems = Vec::new();
    for (name, args) in &commands {
        let a = tmp.path().join(format!("{name}-a"));
        let b = tmp.path().join(format!("{name}-b"));
        if !run_cli(&a, args, "1") || !run_cli(&b, args, "2") {
            problems.push(format!("{name}: command failed"));
            continue;
        }
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        if sa.is_empty() || sa != sb {
            problems.push(format!("{name}: outputs differ"));
        } else {
            identical += 1;
        }
    }
    verdict(
        problems.is_empty(),
        format!("{identical}/{} commands byte-identical across reruns (1 vs 2 workers){}", commands.len(), if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("inequality counting identity", counting_identity),
        ("assignment vs brute force", assignment_oracle),
        ("equilibrium stability", equilibrium_stability),
        ("matched-only invariance in beta2", matched_only_invariance),
        ("unmatched-data monotonicity in beta2", unmatched_monotonicity),
        ("IR weight boundedness", ir_weight_boundedness),
        ("desk-scale cost recovery", desk_scale_cost_recovery),
        ("desk-scale lambda contrast", desk_scale_lambda_contrast),
        ("DE smooth-stub sanity", de_sanity),
        ("CLI determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {:>2} {} {name}: {} [{:.1?}]",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed()
        );
        if !v.pass {
            failed.push(i + 1);
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
