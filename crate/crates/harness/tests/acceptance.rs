//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines show up in `cargo test` output.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use dlf_core::scenario::{run_scenario, ScenarioConfig};
use dlf_harness::check::{self, CheckOutcome};
use dlf_harness::sweep::{sweep, CellSummary};
use dlf_harness::{config, output};

const REPLICATES: u64 = 5;

struct Criterion {
    id: usize,
    passed: bool,
    detail: String,
}

fn from_checks(id: usize, checks: &[CheckOutcome]) -> Criterion {
    Criterion {
        id,
        passed: checks.iter().all(|c| c.passed),
        detail: checks
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect::<Vec<_>>()
            .join(" | "),
    }
}

fn cell(base: &ScenarioConfig, xi: f64, tau: f64) -> CellSummary {
    let table = sweep(base, &[xi], &[tau], REPLICATES).expect("preset scenario runs");
    table.cells.into_iter().next().expect("one cell")
}

fn preset_cells() -> Vec<(&'static str, ScenarioConfig, f64, f64)> {
    let one = ScenarioConfig::problem_one();
    let two = ScenarioConfig::problem_two();
    vec![
        ("I (1, 1)", one.clone(), 1.0, 1.0),
        ("I (1/5, 1/10)", one, 0.2, 0.1),
        ("II (1, 1/10)", two.clone(), 1.0, 0.1),
        ("II (1/4, 1)", two.clone(), 0.25, 1.0),
        ("II (1/4, 1/10)", two, 0.25, 0.1),
    ]
}

fn relative_l2() -> Criterion {
    let cfg = ScenarioConfig::problem_one().with_sampling(1.0, 1.0);
    let run = run_scenario(&cfg).expect("problem I runs");
    let (mut num, mut den) = (0.0, 0.0);
    for (k, d) in run.kf.iter().zip(&run.dlf) {
        num += (&k.mean - &d.mean).norm_squared();
        den += k.mean.norm_squared();
    }
    let rel = (num / den).sqrt();
    Criterion {
        id: 4,
        passed: rel <= 0.05,
        detail: format!(
            "problem I, xi=1, tau=1: relative L2 distance KF vs DLF {rel:.3e} (limit 5e-2)"
        ),
    }
}

fn uncertainty(cells: &[(&str, CellSummary)]) -> Criterion {
    let picked: Vec<_> = cells
        .iter()
        .filter(|(l, _)| *l == "I (1/5, 1/10)" || *l == "II (1/4, 1/10)")
        .collect();
    let passed = picked
        .iter()
        .all(|(_, c)| c.stat("final_trace_dlf").median <= c.stat("final_trace_kf").median);
    let detail = picked
        .iter()
        .map(|(l, c)| {
            format!(
                "{l}: median final trace DLF {:.4} vs KF {:.4}",
                c.stat("final_trace_dlf").median,
                c.stat("final_trace_kf").median
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Criterion {
        id: 5,
        passed,
        detail,
    }
}

fn phase(cells: &[(&str, CellSummary)]) -> Criterion {
    let picked: Vec<_> = cells.iter().filter(|(l, _)| l.starts_with("II")).collect();
    let passed = picked
        .iter()
        .all(|(_, c)| c.stat("com_err_dlf").median <= c.stat("com_err_kf").median);
    let detail = picked
        .iter()
        .map(|(l, c)| {
            format!(
                "{l}: median com error DLF {:.4} vs KF {:.4}",
                c.stat("com_err_dlf").median,
                c.stat("com_err_kf").median
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Criterion {
        id: 6,
        passed,
        detail,
    }
}

fn model_inferiority(cells: &[(&str, CellSummary)]) -> Criterion {
    let passed = cells.iter().all(|(_, c)| {
        let m = c.stat("rmse_model").median;
        m >= c.stat("rmse_kf").median && m >= c.stat("rmse_dlf").median
    });
    let detail = cells
        .iter()
        .map(|(l, c)| {
            format!(
                "{l}: median rmse model {:.3} KF {:.3} DLF {:.3}",
                c.stat("rmse_model").median,
                c.stat("rmse_kf").median,
                c.stat("rmse_dlf").median
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Criterion {
        id: 7,
        passed,
        detail,
    }
}

fn files_identical(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.expect("dir entry").file_name())
        .collect();
    names.sort();
    for name in &names {
        let x = fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(name)).map_err(|e| format!("{name:?}: {e}"))?;
        if x != y {
            return Err(format!("{name:?} differs"));
        }
    }
    Ok(names.len())
}

fn determinism() -> Criterion {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut details = Vec::new();
    let mut passed = true;
    for (label, cfg) in [
        (
            "I (1/5, 1/10)",
            ScenarioConfig::problem_one().with_sampling(0.2, 0.1),
        ),
        (
            "II (1/4, 1/10)",
            ScenarioConfig::problem_two()
                .with_sampling(0.25, 0.1)
                .replicate(3),
        ),
    ] {
        let first = tmp.path().join(format!("{label}-a"));
        let second = tmp.path().join(format!("{label}-b"));
        let run = run_scenario(&cfg).expect("scenario runs");
        output::write_outputs(&run, &first, true).expect("outputs written");
        let again =
            config::load_config(&first.join(output::MANIFEST_FILE)).expect("manifest loads");
        let rerun = run_scenario(&again).expect("scenario runs");
        output::write_outputs(&rerun, &second, true).expect("outputs written");
        match files_identical(&first, &second) {
            Ok(n) => details.push(format!("{label}: {n} files byte-identical")),
            Err(e) => {
                passed = false;
                details.push(format!("{label}: {e}"));
            }
        }
    }
    Criterion {
        id: 12,
        passed,
        detail: format!("re-run from manifest: {}", details.join("; ")),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results = vec![
        from_checks(1, &[check::gaussian_conditioning(50, 11)]),
        from_checks(
            2,
            &[
                check::kf_gain_optimality(20, 100, 12),
                check::dlf_gain_optimality(20, 100, 13),
            ],
        ),
        from_checks(3, &[check::dense_reduction()]),
        relative_l2(),
    ];

    let cells: Vec<(&str, CellSummary)> = preset_cells()
        .into_iter()
        .map(|(label, base, xi, tau)| (label, cell(&base, xi, tau)))
        .collect();
    results.push(uncertainty(&cells));
    results.push(phase(&cells));
    results.push(model_inferiority(&cells));

    results.push(from_checks(8, &[check::moment_checks(100_000, 14)]));
    results.push(from_checks(9, &[check::lax_friedrichs_shift(100, 15)]));
    results.push(from_checks(10, &[check::semi_lagrangian_exactness(100)]));
    results.push(from_checks(
        11,
        &[
            check::rank_order_bruteforce(1000, 16),
            check::rank_order_schematic(),
        ],
    ));
    results.push(determinism());

    // Desk-scale budget: one full scenario of each problem.
    let mut slowest: f64 = 0.0;
    for cfg in [
        ScenarioConfig::problem_one().with_sampling(0.2, 0.1),
        ScenarioConfig::problem_two().with_sampling(0.25, 0.1),
    ] {
        let t = Instant::now();
        run_scenario(&cfg).expect("scenario runs");
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }

    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:>2}: {}", r.id, r.detail);
    }
    let total = start.elapsed().as_secs_f64();
    let budget_ok = slowest < 5.0 && total < 120.0;
    println!(
        "[{}] budget: slowest scenario {slowest:.2} s (limit 5), suite {total:.1} s (limit 120)",
        if budget_ok { "PASS" } else { "FAIL" }
    );
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 && budget_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
