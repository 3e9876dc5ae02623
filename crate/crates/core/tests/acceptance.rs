//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.
//!
//! Criterion 5 is slow and runs only with `--ignored`, `--include-ignored`
//! or `SSDR_SLOW=1`. Criterion 9 needs the Boston Housing CSV, located via
//! `SSDR_BOSTON_CSV` or `data/BostonHousing.csv` at the workspace root.
//! Positional arguments filter criteria by substring.

#![allow(clippy::needless_range_loop)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use common::{normal_data, normal_matrix, rng, single_index};
use ssdr::assoc::{bcov_sq, bcov_sq_naive, dcov_sq, mdd_sq, AssocKind};
use ssdr::data::DataMatrix;
use ssdr::io::{filter_rows, read_csv, RowFilter};
use ssdr::manifold::{
    estimate_dimension, gradient_analytic, gradient_fd, solve_sdr, whiten, ProjectionBasis,
    SolverConfig,
};
use ssdr::record::{execute, DataSource, ResultRecord, RunConfig};
use ssdr::sim::{run_study, Profile, Study, StudySpec};
use ssdr::svs::{theta_grid, SvsConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs().max(b.abs()))
}

// 1

fn bcov_oracle() -> Outcome {
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = 3 + case % 6;
        let dx = 1 + case % 2;
        let dy = 1 + (case / 2) % 2;
        // Integer-valued draws produce ties, the hard case for ball counts.
        let draw = |r: &mut rand_chacha::ChaCha8Rng, d: usize| {
            let m = if case % 3 == 0 {
                DMatrix::from_fn(n, d, |_, _| r.random_range(-2..=2) as f64)
            } else {
                normal_matrix(r, n, d)
            };
            DataMatrix::new(m).unwrap()
        };
        let x = draw(&mut r, dx);
        let y = draw(&mut r, dy);
        let fast = bcov_sq(&x, &y).unwrap();
        let slow = bcov_sq_naive(&x, &y).unwrap();
        worst = worst.max((fast - slow).abs());
        if !close(fast, slow, 1e-12) {
            return Outcome::Fail(format!("case {case}: fast {fast:e} vs naive {slow:e}"));
        }
    }
    Outcome::Pass(format!("50 instances, max |diff| {worst:.1e}"))
}

// 2

fn dist(m: &DMatrix<f64>, k: usize, l: usize) -> f64 {
    (m.row(k) - m.row(l)).norm()
}

/// Literal double centering and average of products.
fn naive_energy(a: &dyn Fn(usize, usize) -> f64, b: &dyn Fn(usize, usize) -> f64, n: usize) -> f64 {
    let center = |f: &dyn Fn(usize, usize) -> f64| {
        let mut row = vec![0.0; n];
        let mut col = vec![0.0; n];
        let mut all = 0.0;
        for k in 0..n {
            for l in 0..n {
                let v = f(k, l);
                row[k] += v / n as f64;
                col[l] += v / n as f64;
                all += v / (n * n) as f64;
            }
        }
        DMatrix::from_fn(n, n, |k, l| f(k, l) - row[k] - col[l] + all)
    };
    let ca = center(a);
    let cb = center(b);
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            s += ca[(k, l)] * cb[(k, l)];
        }
    }
    s / (n * n) as f64
}

fn energy_oracle() -> Outcome {
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = 2 + case % 19;
        let x = normal_matrix(&mut r, n, 1 + case % 3);
        let y = normal_matrix(&mut r, n, 1 + (case / 3) % 2);
        let xd = DataMatrix::new(x.clone()).unwrap();
        let yd = DataMatrix::new(y.clone()).unwrap();
        let d_fast = dcov_sq(&xd, &yd).unwrap();
        let d_slow = naive_energy(&|k, l| dist(&x, k, l), &|k, l| dist(&y, k, l), n).max(0.0);
        let m_fast = mdd_sq(&yd, &xd).unwrap();
        let m_slow = naive_energy(
            &|k, l| dist(&x, k, l),
            &|k, l| 0.5 * dist(&y, k, l).powi(2),
            n,
        )
        .max(0.0);
        worst = worst
            .max((d_fast - d_slow).abs())
            .max((m_fast - m_slow).abs());
        if !close(d_fast, d_slow, 1e-12) || !close(m_fast, m_slow, 1e-12) {
            return Outcome::Fail(format!(
                "case {case}: dcov {d_fast:e}/{d_slow:e}, mdd {m_fast:e}/{m_slow:e}"
            ));
        }
    }
    Outcome::Pass(format!("50 instances, max |diff| {worst:.1e}"))
}

// 3

fn gradient_check() -> Outcome {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    for point in 0..20 {
        let h = 1 + point % 2;
        let kind = if point < 10 {
            AssocKind::Dcov
        } else {
            AssocKind::Mdd
        };
        let x = normal_data(&mut r, 40, 5);
        let y = DataMatrix::new(
            x.as_matrix().columns(0, 1).map(|v| v.sin()) + normal_matrix(&mut r, 40, 1) * 0.3,
        )
        .unwrap();
        let frame = whiten(&x).unwrap();
        let w = normal_matrix(&mut r, 5, h).qr().q();
        let b = ProjectionBasis::new(frame.to_basis(&w));
        let analytic = gradient_analytic(kind, &x, &y, &b).unwrap().unwrap();
        // Pairs with nearly tied projections put a kink within reach of
        // larger steps; 1e-6 keeps the difference on one side of it.
        let fd = gradient_fd(kind, &x, &y, &b, 1e-6).unwrap();
        let rel = (&analytic - &fd).norm() / fd.norm().max(1e-300);
        worst = worst.max(rel);
    }
    verdict(
        worst <= 1e-4,
        format!("20 points, max relative error {worst:.2e} (limit 1e-4)"),
    )
}

// 4

fn feasibility_and_ascent() -> Outcome {
    let mut runs = 0;
    let mut worst_res = 0.0f64;
    let mut check = |kind, x: &DataMatrix, y: &DataMatrix, h, seed| -> Option<String> {
        let cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        let fit = solve_sdr(kind, x, y, h, &cfg, None).unwrap();
        runs += 1;
        let res = fit.basis.constraint_residual(x);
        worst_res = worst_res.max(res);
        if res > 1e-6 {
            return Some(format!("{kind} h={h} seed {seed}: residual {res:e}"));
        }
        if fit.trace.windows(2).any(|w| w[1] < w[0]) {
            return Some(format!("{kind} h={h} seed {seed}: objective decreased"));
        }
        None
    };
    for seed in 0..4 {
        let (x, y) = single_index(seed);
        for kind in [AssocKind::Dcov, AssocKind::Mdd] {
            for h in 1..=2 {
                if let Some(e) = check(kind, &x, &y, h, seed) {
                    return Outcome::Fail(e);
                }
            }
        }
        let d = ssdr::sim::generate(&StudySpec::new(Study::A, 40, 6, seed)).unwrap();
        for kind in AssocKind::ALL {
            if let Some(e) = check(kind, &d.x, &d.y, 2, seed) {
                return Outcome::Fail(e);
            }
        }
    }
    Outcome::Pass(format!("{runs} solves, max residual {worst_res:.1e}"))
}

// 5, 6, 7

fn mean_f1_fpr(
    study: Study,
    kind: AssocKind,
    n: usize,
    p: usize,
    step: f64,
    reps: usize,
) -> (f64, f64) {
    let cfg = SvsConfig {
        theta_grid: theta_grid(0.0, 0.5, step),
        ..SvsConfig::default()
    };
    let s = run_study(
        &StudySpec::new(study, n, p, 1),
        &[kind],
        reps,
        &cfg,
        2,
        None,
    )
    .unwrap();
    let m = &s.methods[0];
    assert_eq!(m.failures, 0, "{:?}", m.failure_reasons);
    (m.f1.unwrap().mean, m.fpr.unwrap().mean)
}

fn paper_scale_recovery() -> Outcome {
    let p = Profile::Paper;
    let (f1, fpr) = mean_f1_fpr(Study::A, AssocKind::Dcov, p.n(), p.p(Study::A), 0.01, 10);
    verdict(
        f1 >= 0.70,
        format!("mean F1 {f1:.3} (≥ 0.70), mean FPR {fpr:.3}"),
    )
}

fn desk_scale_recovery() -> Outcome {
    let (f1, fpr) = mean_f1_fpr(Study::A, AssocKind::Dcov, 80, 12, 0.1, 10);
    verdict(
        f1 >= 0.75 && fpr <= 0.15,
        format!("mean F1 {f1:.3} (≥ 0.75), mean FPR {fpr:.3} (≤ 0.15)"),
    )
}

fn mdd_ordering() -> Outcome {
    let (mdd, _) = mean_f1_fpr(Study::B, AssocKind::Mdd, 80, 12, 0.1, 10);
    let (dcov, _) = mean_f1_fpr(Study::B, AssocKind::Dcov, 80, 12, 0.1, 10);
    verdict(
        mdd >= dcov - 0.05,
        format!("MDD F1 {mdd:.3}, DCOV F1 {dcov:.3}"),
    )
}

// 8

fn dimension_estimation() -> Outcome {
    let mut hits = 0;
    let mut picks = Vec::new();
    for trial in 0..10u64 {
        let (x, y) = single_index(800 + trial);
        // 153 solves per trial; one informed start each keeps this in minutes.
        let cfg = SolverConfig {
            seed: trial,
            restarts: 1,
            ..SolverConfig::default()
        };
        let est = estimate_dimension(AssocKind::Dcov, &x, &y, 3, 50, &cfg).unwrap();
        picks.push(est.h);
        hits += usize::from(est.h == 1);
    }
    verdict(
        hits >= 8,
        format!("ĥ = 1 in {hits}/10 trials (≥ 8), picks {picks:?}"),
    )
}

// 9

fn boston_path() -> PathBuf {
    std::env::var_os("SSDR_BOSTON_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/BostonHousing.csv")
        })
}

fn boston_trim() -> Outcome {
    let path = boston_path();
    if !path.is_file() {
        return Outcome::Skip(format!("dataset not found at {}", path.display()));
    }
    let data = read_csv(&path, "medv").unwrap();
    let f: RowFilter = "crim:gt:3.2".parse().unwrap();
    let kept = filter_rows(&data, &f).unwrap();
    verdict(
        data.nrows() == 506 && kept.nrows() == 374,
        format!(
            "{} of {} rows remain (expected 374 of 506)",
            kept.nrows(),
            data.nrows()
        ),
    )
}

// 10

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("study_a.csv");
    let small = SolverConfig {
        restarts: 2,
        seed: 5,
        ..SolverConfig::default()
    };
    let svs = SvsConfig {
        theta_grid: theta_grid(0.0, 0.5, 0.1),
        solver: small.clone(),
        ..SvsConfig::default()
    };
    let src = DataSource::new(&csv, "y");
    let configs = vec![
        RunConfig::Generate {
            spec: StudySpec::new(Study::A, 60, 8, 5),
            out: csv.clone(),
        },
        RunConfig::Stats {
            x: csv.clone(),
            y: csv.clone(),
            stat: AssocKind::Bcov,
        },
        RunConfig::Fit {
            data: src.clone(),
            stat: AssocKind::Mdd,
            h: 2,
            solver: small.clone(),
        },
        RunConfig::Svs {
            data: src.clone(),
            stat: AssocKind::Dcov,
            h: 2,
            svs: svs.clone(),
        },
        RunConfig::EstimateDim {
            data: src.clone(),
            stat: AssocKind::Dcov,
            h_max: 2,
            boot: 5,
            solver: small.clone(),
        },
        RunConfig::Predict {
            data: src.clone(),
            stat: AssocKind::Dcov,
            h: 2,
            svs: svs.clone(),
            test_fraction: 22.0 / 71.0,
            split_seed: 9,
        },
        RunConfig::Simulate {
            spec: StudySpec::new(Study::C, 40, 12, 3),
            reps: 2,
            h: 2,
            methods: vec![AssocKind::Dcov, AssocKind::Mdd],
            svs,
            bcov_n_cap: None,
        },
    ];
    for cfg in &configs {
        let first = execute(cfg).unwrap();
        let line = first.to_json_line().unwrap();
        let parsed = ResultRecord::from_json(&line).unwrap();
        if parsed.to_json_line().unwrap() != line {
            return Outcome::Fail(format!("{}: record does not round-trip", cfg.name()));
        }
        let again = execute(&parsed.config).unwrap().to_json_line().unwrap();
        if again != line {
            return Outcome::Fail(format!("{}: re-run differs from record", cfg.name()));
        }
    }

    // Through the binary: emit a record, then replay it.
    let out = dir.path().join("svs.jsonl");
    let bin = env!("CARGO_BIN_EXE_ssdr");
    let status = Command::new(bin)
        .args([
            "svs",
            csv.to_str().unwrap(),
            "--response",
            "y",
            "--stat",
            "dcov",
        ])
        .args([
            "--h",
            "2",
            "--seed",
            "7",
            "--theta-grid",
            "0:0.1:0.5",
            "--restarts",
            "2",
        ])
        .args(["--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    if !status.success() {
        return Outcome::Fail("svs command failed".into());
    }
    let replay = Command::new(bin).arg("replay").arg(&out).output().unwrap();
    let original = std::fs::read_to_string(&out).unwrap();
    let replayed = String::from_utf8(replay.stdout).unwrap();
    verdict(
        replay.status.success() && replayed == original,
        format!(
            "{} library commands and a CLI replay reproduce bit-for-bit",
            configs.len()
        ),
    )
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let slow = args
        .iter()
        .any(|a| a == "--ignored" || a == "--include-ignored")
        || std::env::var_os("SSDR_SLOW").is_some();
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();

    let criteria: [(usize, &str, Check, bool); 10] = [
        (1, "bcov_fast_matches_naive", bcov_oracle, false),
        (2, "dcov_mdd_match_loop_oracles", energy_oracle, false),
        (3, "analytic_gradient_matches_fd", gradient_check, false),
        (
            4,
            "solver_feasible_and_ascending",
            feasibility_and_ascent,
            false,
        ),
        (
            5,
            "full_scale_study_a_recovery",
            paper_scale_recovery,
            true,
        ),
        (6, "desk_scale_study_a_recovery", desk_scale_recovery, false),
        (7, "mdd_not_worse_on_study_b", mdd_ordering, false),
        (
            8,
            "bootstrap_picks_single_index",
            dimension_estimation,
            false,
        ),
        (9, "boston_trim_leaves_374_rows", boston_trim, false),
        (10, "records_replay_bit_for_bit", determinism, false),
    ];

    let mut failed = 0;
    for (id, name, check, is_slow) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        if is_slow && !slow {
            println!("criterion {id:>2} {name}: IGNORED (slow; pass --ignored or set SSDR_SLOW=1)");
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("criterion {id:>2} {name}: PASS ({d}; {secs:.1}s)"),
            Outcome::Skip(d) => println!("criterion {id:>2} {name}: SKIPPED ({d})"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({d}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
