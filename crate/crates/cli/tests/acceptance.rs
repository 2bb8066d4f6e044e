//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//! Runtime limits are part of each gate.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use stopbed::env::convdiff::{precompute_fields, ConvDiffConfig, ConvDiffEnv};
use stopbed::env::lingauss::{LinGaussConfig, LinGaussEnv};
use stopbed::exec::Execution;
use stopbed::mdp::{Belief, CostFn};
use stopbed::train::{train, Curriculum, TrainConfig, TrainOutcome};
use stopbed_cli::verify::{self, Check, VerifyOptions};

const EXEC: Execution = Execution::Parallel;

/// Published utility table: `(cost, [n = 1, 2, 3, 4])`.
const TABLE: [(f64, [f64; 4]); 3] = [
    (0.0, [2.203, 2.547, 2.749, 2.892]),
    (-0.5, [1.703, 1.547, 1.249, 0.892]),
    (-0.25, [1.953, 2.047, 1.999, 1.892]),
];

struct Outcome {
    passed: bool,
    detail: String,
}

fn combine(checks: &[Check]) -> Outcome {
    Outcome {
        passed: checks.iter().all(|c| c.passed),
        detail: checks
            .iter()
            .map(|c| format!("[{}] {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join(" "),
    }
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let mut buf = Vec::new();
    let code = stopbed_cli::run(std::iter::once("stopbed").chain(args.iter().copied()), &mut buf);
    (code, String::from_utf8(buf).expect("utf-8 output"))
}

fn criterion_1() -> Outcome {
    let (code, csv) = run_cli(&["oracle", "--cost", "0", "--cost", "-0.5", "--cost", "-0.25"]);
    let mut worst = 0.0f64;
    let mut flags = Vec::new();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (n, c, u): (usize, f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
        let want = TABLE.iter().find(|(tc, _)| *tc == c).expect("known cost").1[n - 1];
        worst = worst.max((u - want).abs());
        if f[3] == "true" {
            flags.push((c, n));
        }
        rows += 1;
    }
    Outcome {
        passed: code == 0 && rows == 12 && worst <= 5e-4 && flags == [(0.0, 4), (-0.5, 1), (-0.25, 2)],
        detail: format!("{rows} rows, max |Δ| {worst:.1e}, optimal (c, n) {flags:?}"),
    }
}

fn criterion_2() -> Outcome {
    let opts = VerifyOptions::default();
    combine(&[verify::oracle_stopping_sets(&opts), verify::oracle_policy(&opts, EXEC)])
}

fn criterion_3() -> Outcome {
    let opts = VerifyOptions::default();
    combine(&[
        verify::equivalence_gaussian(&opts, Belief::kl, EXEC),
        verify::equivalence_grid(&opts, Belief::kl, EXEC),
    ])
}

fn criterion_4() -> Outcome {
    combine(&[verify::gradcheck(&VerifyOptions::default())])
}

fn desk(seed: u64, curriculum: Curriculum) -> TrainConfig {
    TrainConfig {
        seed,
        curriculum,
        ..TrainConfig::desk()
    }
}

fn tail(out: &TrainOutcome) -> (f64, f64) {
    (
        out.record.tail_mean(10, |r| r.avg_reward),
        out.record.tail_mean(10, |r| r.avg_stop_stage),
    )
}

/// Every seed must pass on its own.
fn criterion_5() -> Outcome {
    type Gate = fn(f64, f64) -> bool;
    let cases: [(&str, usize, f64, Curriculum, Gate); 4] = [
        ("N=3 c=0 curriculum", 3, 0.0, Curriculum::default(), |r, t| (2.8..=3.0).contains(&t) && r >= 2.55),
        ("N=3 c=-0.5 curriculum", 3, -0.5, Curriculum::default(), |r, t| (1.0..=1.3).contains(&t) && r >= 1.50),
        ("N=3 c=-0.5 vanilla", 3, -0.5, Curriculum::Vanilla, |r, t| (1.0..=1.3).contains(&t) && r >= 1.50),
        ("N=4 c=-0.25 curriculum", 4, -0.25, Curriculum::default(), |r, _| r >= 1.85),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, n, c, cur, gate) in cases {
        let cfg = LinGaussConfig::with_horizon_and_cost(n, c);
        let env = LinGaussEnv::new(cfg.clone()).expect("valid env");
        let mut runs = Vec::new();
        for seed in 1..=3 {
            match train(&env, &cfg.cost, &desk(seed, cur), EXEC) {
                Ok(out) => {
                    let (r, t) = tail(&out);
                    passed &= gate(r, t);
                    runs.push(format!("R={r:.3} τ={t:.2}"));
                }
                Err(e) => {
                    passed = false;
                    runs.push(format!("error {e}"));
                }
            }
        }
        parts.push(format!("{name}: {}", runs.join(", ")));
    }
    Outcome {
        passed,
        detail: parts.join("; "),
    }
}

/// Seed-averaged final reward, curriculum against vanilla.
fn criterion_6() -> Outcome {
    let cfg = ConvDiffConfig {
        fv_resolution: 48,
        theta_grid: 25,
        cost: CostFn::Constant { value: -0.8 },
        ..Default::default()
    };
    let env = match precompute_fields(&cfg, EXEC).and_then(|c| ConvDiffEnv::new(cfg.clone(), Arc::new(c))) {
        Ok(e) => e,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("env: {e}"),
            }
        }
    };
    let mut mean = [0.0; 2];
    let mut parts = Vec::new();
    for (i, (name, cur)) in [("curriculum", Curriculum::default()), ("vanilla", Curriculum::Vanilla)]
        .into_iter()
        .enumerate()
    {
        let mut runs = Vec::new();
        for seed in 1..=3 {
            let t = TrainConfig {
                episodes_per_iter: 100,
                ..desk(seed, cur)
            };
            match train(&env, &cfg.cost, &t, EXEC) {
                Ok(out) => {
                    let (r, s) = tail(&out);
                    mean[i] += r / 3.0;
                    runs.push(format!("R={r:.3} τ={s:.2}"));
                }
                Err(e) => {
                    return Outcome {
                        passed: false,
                        detail: format!("{name} seed {seed}: {e}"),
                    }
                }
            }
        }
        parts.push(format!("{name}: {}", runs.join(", ")));
    }
    Outcome {
        passed: mean[0] >= mean[1],
        detail: format!(
            "mean final reward curriculum {:.4} vs vanilla {:.4}; {}",
            mean[0],
            mean[1],
            parts.join("; ")
        ),
    }
}

fn criterion_7() -> Outcome {
    let opts = VerifyOptions::default();
    combine(&[verify::fv_mass(), verify::fv_refinement(&opts), verify::fv_zero_source()])
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_default()
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = |s: &str| dir.path().join(s);
    let cache = d("fields.bin");
    let (a, b, c, p, q) = (d("a"), d("b"), d("c"), d("pde_a"), d("pde_b"));
    let lin = ["train", "--env", "lingauss", "--horizon", "3", "--cost", "0", "--mode", "curriculum", "--iters", "20", "--episodes", "50", "--seed", "42", "--verbosity", "warn", "--out"];
    let pde_cfg = d("pde.toml");
    let pde = stopbed_cli::config::RunConfig {
        out: p.clone(),
        field_cache: Some(cache),
        verbosity: "warn".into(),
        env: stopbed_cli::config::EnvConfig::Convdiff(ConvDiffConfig {
            fv_resolution: 32,
            theta_grid: 8,
            cost: CostFn::Constant { value: -0.1 },
            ..Default::default()
        }),
        train: TrainConfig {
            iterations: 3,
            episodes_per_iter: 10,
            ..TrainConfig::desk()
        },
    };
    std::fs::write(&pde_cfg, pde.to_toml().expect("toml")).expect("write config");

    let mut codes = Vec::new();
    for out in [&a, &b] {
        let mut args = lin.to_vec();
        args.push(out.to_str().unwrap());
        codes.push(run_cli(&args).0);
    }
    let manifest = a.join("manifest.toml");
    codes.push(run_cli(&["train", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]).0);
    codes.push(run_cli(&["train", "--config", pde_cfg.to_str().unwrap()]).0);
    codes.push(run_cli(&["train", "--config", pde_cfg.to_str().unwrap(), "--out", q.to_str().unwrap()]).0);

    let csv = |x: &Path| read(&x.join("convergence.csv"));
    let lin_same = !csv(&a).is_empty() && csv(&a) == csv(&b) && csv(&a) == csv(&c);
    let pde_same = !csv(&p).is_empty() && csv(&p) == csv(&q);
    Outcome {
        passed: codes.iter().all(|c| *c == 0) && lin_same && pde_same,
        detail: format!(
            "exit codes {codes:?}; lingauss CSVs identical across flags and manifest: {lin_same}; convdiff CSVs identical: {pde_same}"
        ),
    }
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("oracle table exactness", 1.0, criterion_1),
        ("oracle-policy evaluation", 30.0, criterion_2),
        ("formulation equivalence", 120.0, criterion_3),
        ("gradient correctness", 30.0, criterion_4),
        ("desk-scale training (linear-Gaussian)", 600.0, criterion_5),
        ("curriculum vs vanilla (PDE)", 1800.0, criterion_6),
        ("finite-volume audits", 300.0, criterion_7),
        ("determinism", f64::INFINITY, criterion_8),
    ];
    let mut failures = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        let passed = out.passed && secs <= *limit;
        failures += usize::from(!passed);
        let budget = if limit.is_finite() { format!(" of {limit:.0}s") } else { String::new() };
        println!(
            "criterion {} {name}: {} | {} | {secs:.1}s{budget}",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
