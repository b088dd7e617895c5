//! Acceptance checks at the scale of the shipped presets. Prints one
//! PASS/FAIL line per criterion and exits non-zero when a gating check fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use mtssl::config::ExperimentConfig;
use mtssl::datasets::{read_csv, write_csv};
use mtssl::harness::{self, ComparisonRow, GridMetric, HistogramRow, ImbalanceRow, RunSummary};
use mtssl::metrics::RunLog;
use mtssl::snapshot::ModelSnapshot;

struct Outcome {
    pass: bool,
    /// Whether a failure should fail the run.
    gating: bool,
    detail: String,
}

fn preset(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn oracles() -> Outcome {
    let grad = common::gradient_check(1, 10);
    let edge = common::edge_sum_check(7, 100);
    let mean = common::running_mean_check(5, 3000);
    let cases = common::fixed_point_cases(6, 5);
    let fixed = cases.iter().filter(|c| c.ok()).count();
    let pass = grad < 1e-5 && edge <= 1e-10 && mean <= 1e-12 && fixed == cases.len();
    Outcome {
        pass,
        gating: true,
        detail: format!(
            "gradient rel err {grad:.1e}, edge-sum gap {edge:.1e}, running-mean gap {mean:.1e}, fixed point {fixed}/{}",
            cases.len()
        ),
    }
}

fn two_moons(runs: &[mtssl::harness::OnlineRun]) -> (Outcome, Outcome) {
    let n = runs.len();
    let low = runs
        .iter()
        .filter(|r| r.summary.post_transition_error.is_some_and(|e| e <= 0.05))
        .count();
    let separated = runs
        .iter()
        .filter(|r| r.summary.shared_channels == 0)
        .count();
    let worst = runs
        .iter()
        .map(|r| r.summary.post_transition_error.unwrap_or(1.0))
        .fold(0.0, f64::max);
    let moons = Outcome {
        pass: low * 10 >= 9 * n && separated * 10 >= 9 * n,
        gating: true,
        detail: format!(
            "post-transition error <= 5% in {low}/{n} (worst {worst:.4}), no shared channel in {separated}/{n}"
        ),
    };

    let agreement: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.summary.rule_agreement)
        .collect();
    let min = agreement.iter().copied().fold(1.0, f64::min);
    let rules = Outcome {
        pass: agreement.len() == n && min >= 0.9,
        gating: true,
        detail: format!(
            "clipped/tanh sign agreement min {min:.4} over {} repeats",
            agreement.len()
        ),
    };
    (moons, rules)
}

fn chessboard_grid() -> Outcome {
    let cfg = preset("chessboard_coarse.cfg");
    let cells = harness::grid_search(&cfg, &cfg.grid).unwrap();
    let mut by_count: BTreeMap<usize, Vec<&harness::GridCell>> = BTreeMap::new();
    for c in &cells {
        let count = c
            .params
            .iter()
            .find(|(k, _)| k == "labels.count")
            .map(|(_, v)| v.parse().unwrap())
            .unwrap();
        by_count.entry(count).or_default().push(c);
    }
    let mut pass = by_count.len() == 3;
    let mut parts = Vec::new();
    for (count, group) in &by_count {
        let ssl = harness::best_cell(group.iter().copied(), GridMetric::Ssl)
            .unwrap()
            .ssl_stream_error;
        let lr = harness::best_cell(group.iter().copied(), GridMetric::Logreg)
            .unwrap()
            .logreg_stream_error;
        pass &= ssl < lr;
        parts.push(format!(
            "{count} labels: network {ssl:.4} vs logistic {lr:.4}"
        ));
    }
    Outcome {
        pass,
        gating: true,
        detail: format!(
            "best over the grid, {} repeats; {}",
            cfg.repeats,
            parts.join("; ")
        ),
    }
}

fn online_vs_offline() -> Outcome {
    let cfg = preset("chessboard_coarse.cfg")
        .with_overrides(&[("experiment.eval_every".into(), "100".into())])
        .unwrap();
    let rows = harness::run_comparison_repeats(&cfg).unwrap();
    let means = harness::comparison_means(&rows);
    let early: Vec<&(usize, f64, Option<f64>)> = means.iter().filter(|m| m.0 <= 1200).collect();
    let ahead = early
        .iter()
        .filter(|m| m.2.is_some_and(|off| m.1 <= off))
        .count();
    let closest = early
        .iter()
        .filter_map(|m| m.2.map(|off| (m.0, m.1 - off)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let &(last, on, off) = means.last().unwrap();
    let off = off.unwrap_or(f64::NAN);
    let final_ok = (on - off).abs() <= 0.10;
    let per_repeat = rows
        .iter()
        .filter(|r| {
            r.step <= 1200
                && r.offline_test_error
                    .is_some_and(|off| r.online_test_error <= off)
        })
        .count();
    Outcome {
        pass: ahead > 0 && final_ok,
        gating: !final_ok,
        detail: format!(
            "eval points <= 1200 with online <= offline (mean of {} repeats): {ahead}/{} (closest at step {}, gap {:+.4}; \
             {per_repeat} single-repeat points favour online); final step {last}: online {on:.4}, offline {off:.4}",
            cfg.repeats,
            early.len(),
            closest.0,
            closest.1
        ),
    }
}

fn square() -> Outcome {
    let cfg = preset("square.cfg");
    let runs = harness::run_square_imbalance(&cfg).unwrap();
    let rows: Vec<ImbalanceRow> = runs.iter().map(|r| r.row.clone()).collect();
    let net = median(rows.iter().map(|r| r.network).collect());
    let svm = median(rows.iter().map(|r| r.laplacian_svm).collect());
    let hist = harness::histogram(&rows);
    let monotone = |f: fn(&HistogramRow) -> usize| hist.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
    let net_mono = monotone(|h| h.network);
    let svm_mono = monotone(|h| h.laplacian_svm);
    let counts = |f: fn(&HistogramRow) -> usize| {
        hist.iter()
            .map(f)
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    Outcome {
        pass: net < 0.75 && svm < 0.75 && net_mono && svm_mono,
        gating: true,
        detail: format!(
            "{} repeats; median network {net:.3}, laplacian svm {svm:.3}; bins network [{}], svm [{}]",
            rows.len(),
            counts(|h| h.network),
            counts(|h| h.laplacian_svm)
        ),
    }
}

fn tree(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(tree(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn export_everything(dir: &Path) {
    let moons = preset("two_moons.cfg")
        .with_overrides(&[("experiment.repeats".into(), "2".into())])
        .unwrap();
    harness::export_dataset(&moons, &dir.join("gen")).unwrap();
    harness::export_online(&moons, &dir.join("run")).unwrap();
    harness::export_probe(&moons, &dir.join("probe"), 21).unwrap();
    let grid = moons
        .with_overrides(&[("grid.ssl.mu".into(), "10, 1000".into())])
        .unwrap();
    harness::export_grid(&grid, &dir.join("grid")).unwrap();
    let board = preset("chessboard_coarse.cfg")
        .with_overrides(&[
            ("experiment.repeats".into(), "1".into()),
            ("dataset.size".into(), "600".into()),
            ("test.size".into(), "300".into()),
            ("tiling.m".into(), "60".into()),
            ("experiment.eval_every".into(), "200".into()),
        ])
        .unwrap();
    harness::export_comparison(&board, &dir.join("compare")).unwrap();
    let square = preset("square.cfg")
        .with_overrides(&[("experiment.repeats".into(), "3".into())])
        .unwrap();
    harness::export_square(&square, &dir.join("square")).unwrap();
}

fn round_trips(dir: &Path) -> Result<usize, String> {
    let bytes = |rel: &str| fs::read(dir.join(rel)).map_err(|e| format!("{rel}: {e}"));
    let same = |rel: &str, again: Vec<u8>| -> Result<(), String> {
        if again == bytes(rel)? {
            Ok(())
        } else {
            Err(format!("{rel} does not round-trip"))
        }
    };
    fn rows<T: serde::Serialize + for<'de> serde::Deserialize<'de>>(raw: &[u8]) -> Vec<u8> {
        let parsed: Vec<T> = harness::read_rows(raw).unwrap();
        let mut out = Vec::new();
        harness::write_rows(&mut out, &parsed).unwrap();
        out
    }
    let mut checked = 0;
    for rel in ["gen/dataset.csv", "gen/test.csv"] {
        if dir.join(rel).exists() {
            let mut out = Vec::new();
            write_csv(&mut out, &read_csv(bytes(rel)?.as_slice()).unwrap()).unwrap();
            same(rel, out)?;
            checked += 1;
        }
    }
    for r in 0..2 {
        let base = format!("run/repeat_{r:03}");
        let log = RunLog::read_csv(
            bytes(&format!("{base}/runlog.csv"))?.as_slice(),
            bytes(&format!("{base}/weights.csv"))?.as_slice(),
        )
        .unwrap();
        let (mut rec, mut wts) = (Vec::new(), Vec::new());
        log.write_records_csv(&mut rec).unwrap();
        log.write_weights_csv(&mut wts).unwrap();
        same(&format!("{base}/runlog.csv"), rec)?;
        same(&format!("{base}/weights.csv"), wts)?;
        let model =
            ModelSnapshot::read_from(bytes(&format!("{base}/model.txt"))?.as_slice()).unwrap();
        let mut text = Vec::new();
        model.write_to(&mut text).unwrap();
        same(&format!("{base}/model.txt"), text)?;
        checked += 3;
    }
    same(
        "run/summary.csv",
        rows::<RunSummary>(&bytes("run/summary.csv")?),
    )?;
    same(
        "compare/comparison.csv",
        rows::<ComparisonRow>(&bytes("compare/comparison.csv")?),
    )?;
    same(
        "square/imbalance.csv",
        rows::<ImbalanceRow>(&bytes("square/imbalance.csv")?),
    )?;
    same(
        "square/histogram.csv",
        rows::<HistogramRow>(&bytes("square/histogram.csv")?),
    )?;
    let cells = harness::read_grid_csv(bytes("grid/grid.csv")?.as_slice()).unwrap();
    let mut out = Vec::new();
    harness::write_grid_csv(&mut out, &cells).unwrap();
    same("grid/grid.csv", out)?;
    let (points, responses) =
        harness::read_probe_csv(bytes("probe/probe.csv")?.as_slice()).unwrap();
    let mut out = Vec::new();
    harness::write_probe_csv(&mut out, &points, &responses).unwrap();
    same("probe/probe.csv", out)?;
    Ok(checked + 6)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    export_everything(a.path());
    export_everything(b.path());
    let (fa, fb) = (tree(a.path()), tree(b.path()));
    let mut differing = Vec::new();
    for (x, y) in fa.iter().zip(&fb) {
        if x.strip_prefix(a.path()) != y.strip_prefix(b.path())
            || fs::read(x).unwrap() != fs::read(y).unwrap()
        {
            differing.push(x.strip_prefix(a.path()).unwrap().display().to_string());
        }
    }
    let identical = fa.len() == fb.len() && differing.is_empty();
    let trips = round_trips(a.path());
    Outcome {
        pass: identical && trips.is_ok(),
        gating: true,
        detail: format!(
            "{} files byte-identical across two runs{}; {}",
            fa.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" except {}", differing.join(", "))
            },
            match trips {
                Ok(n) => format!("{n} CSV/snapshot files round-trip"),
                Err(e) => e,
            }
        ),
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let mut o = f();
        o.detail = format!("{} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        results.push((n, name, o));
    };

    timed(1, "gradient and oracle suite", &mut oracles);
    let moons = harness::run_online_repeats(&preset("two_moons.cfg")).unwrap();
    let (c2, c6) = two_moons(&moons);
    let mut c2 = Some(c2);
    let mut c6 = Some(c6);
    timed(2, "two moons", &mut || c2.take().unwrap());
    timed(3, "chessboard semi vs supervised", &mut chessboard_grid);
    timed(4, "online vs offline", &mut online_vs_offline);
    timed(5, "square imbalance", &mut square);
    timed(6, "rule agreement", &mut || c6.take().unwrap());
    timed(7, "determinism and IO", &mut determinism);

    let mut gate_failed = false;
    for (n, name, o) in &results {
        println!(
            "{} {n} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        gate_failed |= !o.pass && o.gating;
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!(
        "acceptance: {passed}/{} passed in {:.0}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if gate_failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
