use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use zeno_cli::config::{ExperimentConfig, GammaSpec, OneOrMany};
use zeno_cli::{parse_config, run_suite, CliError};
use zeno_core::{DataMode, FaultKind, Rule};

fn config(json: &str) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::from_json(json, Path::new("test.json"))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

const SMALL: &str = r#"{"task": "logistic", "T": 50, "repeats": 2, "m": 6, "n": 10, "b": 1,
                       "dimension": 3, "num_points": 200, "test_points": 100}"#;

#[test]
fn minimal_config_gets_defaults() {
    let cfg = config(r#"{"task": "quadratic", "T": 100}"#).unwrap();
    assert_eq!(cfg.iterations, 100);
    assert_eq!(cfg.gamma, GammaSpec::Value(0.1));
    assert_eq!(cfg.rho, OneOrMany::One(0.0005));
    assert_eq!(cfg.n_r, OneOrMany::One(4));
    assert_eq!(cfg.n, 100);
    assert_eq!(cfg.m, 20);
    assert_eq!(cfg.epoch_length, 25);
    assert_eq!(cfg.repeats, 10);
    assert_eq!(cfg.aggregator, OneOrMany::One(Rule::Zeno));
    assert_eq!(cfg.b, OneOrMany::One(4));
    assert_eq!(cfg.data_mode, DataMode::Iid);
    assert_eq!(cfg.fault_kind(), FaultKind::None);
    assert_eq!(cfg.combinations().len(), 1);

    let alias = config(r#"{"task": "quadratic", "iterations": 100}"#).unwrap();
    assert_eq!(alias, cfg);
}

fn field_error(json: &str) -> (String, String) {
    match config(json) {
        Err(CliError::Field { field, reason }) => (field, reason),
        other => panic!("expected a field error, got {other:?}"),
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let (field, reason) =
        field_error(r#"{"task": "logistic", "T": 10, "aggregator": "krum", "m": 20, "b": 10}"#);
    assert_eq!(field, "b");
    assert!(reason.contains("krum cardinality violated"), "{reason}");

    let (field, _) = field_error(r#"{"task": "logistic", "T": 10, "q": 21}"#);
    assert_eq!(field, "q");
    let (field, _) = field_error(
        r#"{"task": "logistic", "T": 10, "q": 21, "fault": {"kind": "bit_flip"}, "aggregator": "mean"}"#,
    );
    assert_eq!(field, "q");
    let (field, _) = field_error(r#"{"task": "logistic", "T": 10, "repeats": 0}"#);
    assert_eq!(field, "repeats");
    let (field, _) = field_error(r#"{"task": "logistic", "T": 10, "gamma": -1}"#);
    assert_eq!(field, "gamma");
    let (field, _) = field_error(r#"{"task": "logistic", "T": 10, "aggregator": []}"#);
    assert_eq!(field, "aggregator");
    let (field, _) =
        field_error(r#"{"task": "quadratic", "T": 10, "q": 2, "fault": {"kind": "label_flip"}}"#);
    assert_eq!(field, "fault.kind");
    let (field, _) = field_error(r#"{"task": "logistic", "T": 10, "rho": 0.1, "beta": 1}"#);
    assert_eq!(field, "beta");

    assert!(matches!(
        config(r#"{"task": "logistic"}"#),
        Err(CliError::Parse { .. })
    ));
    assert!(matches!(
        config(r#"{"task": "logistic", "T": 5, "typo": 1}"#),
        Err(CliError::Parse { .. })
    ));
    assert!(matches!(
        config(r#"{"task": "cifar", "T": 5}"#),
        Err(CliError::Parse { .. })
    ));
    assert!(matches!(
        parse_config(Path::new("/nonexistent/zeno.json")),
        Err(CliError::ReadConfig { .. })
    ));
}

#[test]
fn one_combination_writes_traces_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL).unwrap();
    let report = run_suite(&cfg, dir.path()).unwrap();
    assert_eq!(report.traces.len(), 2);
    assert_eq!(report.summaries.len(), 1);
    assert_eq!(csv_files(dir.path()).len(), 3);

    let header = fs::read_to_string(&report.traces[0]).unwrap();
    assert!(header.starts_with(
        "t,epoch,train_loss,grad_norm,test_accuracy,diverged,aggregator,q,b,n_r,rho,gamma,seed,wallclock_ns\n"
    ));
    for (r, trace) in report.traces.iter().enumerate() {
        let rows = rows(trace);
        assert_eq!(rows.len(), 50);
        assert_eq!(rows[0][0], "1");
        assert_eq!(rows[24][1], "1");
        assert_eq!(rows[25][1], "2");
        assert_eq!(rows[0][12], r.to_string());
        assert_eq!(rows[0][13], "0");
    }
    assert_eq!(rows(&report.summaries[0]).len(), 2);
}

#[test]
fn summary_matches_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL).unwrap();
    cfg.iterations = 60; // last epoch is partial
    cfg.repeats = 3;
    let report = run_suite(&cfg, dir.path()).unwrap();
    let traces: Vec<Vec<Vec<String>>> = report.traces.iter().map(|p| rows(p)).collect();
    let summary = rows(&report.summaries[0]);
    assert_eq!(summary.len(), 3);
    for row in &summary {
        let t: usize = row[1].parse().unwrap();
        for (col, trace_col) in [(2, 2), (3, 3), (4, 4)] {
            let mean = traces
                .iter()
                .map(|tr| tr[t - 1][trace_col].parse::<f64>().unwrap())
                .sum::<f64>()
                / 3.0;
            let got: f64 = row[col].parse().unwrap();
            assert!((got - mean).abs() <= 1e-12, "t={t} col={col}: {got} vs {mean}");
        }
    }
    assert_eq!(summary[2][1], "60");
}

#[test]
fn runs_are_byte_identical() {
    let cfg = config(SMALL).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_suite(&cfg, a.path()).unwrap();
    run_suite(&cfg, b.path()).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn aggregator_sweep_doubles_file_count() {
    let mut cfg = config(SMALL).unwrap();
    let single = tempfile::tempdir().unwrap();
    let n = run_suite(&cfg, single.path()).unwrap();
    cfg.aggregator = OneOrMany::Many(vec![Rule::Mean, Rule::Zeno]);
    let swept = tempfile::tempdir().unwrap();
    let m = run_suite(&cfg, swept.path()).unwrap();
    assert_eq!(csv_files(swept.path()).len(), 2 * csv_files(single.path()).len());
    assert_eq!(m.traces.len(), 2 * n.traces.len());
}

#[test]
fn floats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL).unwrap();
    cfg.repeats = 1;
    cfg.iterations = 5;
    let report = run_suite(&cfg, dir.path()).unwrap();
    let sim = cfg.sim_config(&cfg.combinations()[0], 0).unwrap();
    let trace = zeno_core::run_experiment(&sim).unwrap();
    for (row, record) in rows(&report.traces[0]).iter().zip(&trace.records) {
        assert_eq!(
            row[2].parse::<f64>().unwrap().to_bits(),
            record.train_loss.to_bits()
        );
        assert_eq!(
            row[3].parse::<f64>().unwrap().to_bits(),
            record.grad_norm.to_bits()
        );
    }
}

#[test]
fn output_dir_precedence() {
    let mut cfg = config(r#"{"task": "quadratic", "T": 1, "output_dir": "from-config"}"#).unwrap();
    assert_eq!(
        cfg.resolve_output_dir(Some(Path::new("flag"))),
        PathBuf::from("flag")
    );
    assert_eq!(cfg.resolve_output_dir(None), PathBuf::from("from-config"));
    cfg.output_dir = None;
    assert_eq!(
        cfg.resolve_output_dir(Some(Path::new("flag"))),
        PathBuf::from("flag")
    );
}

fn zeno(args: &[&str], env_out: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_zeno"));
    cmd.args(args).env_remove("ZENO_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("ZENO_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, SMALL).unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"task": "logistic", "T": 10, "aggregator": "krum", "b": 10}"#,
    )
    .unwrap();
    let (good, bad) = (good.to_str().unwrap(), bad.to_str().unwrap());

    assert_eq!(zeno(&["validate", "--config", good], None).status.code(), Some(0));
    let out = zeno(&["validate", "--config", bad], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("krum cardinality violated"));
    assert_eq!(
        zeno(&["validate", "--config", "/nonexistent.json"], None)
            .status
            .code(),
        Some(1)
    );

    // ZENO_OUT_DIR is the fallback when neither --out nor output_dir is set.
    let env_dir = dir.path().join("env");
    let out = zeno(
        &["run", "--config", good, "--quiet", "--seed", "7"],
        Some(&env_dir),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stderr.is_empty());
    let traces = csv_files(&env_dir);
    assert_eq!(traces.len(), 3);
    assert_eq!(rows(&traces[0])[0][12], "7");

    let flag_dir = dir.path().join("flag");
    let out = zeno(
        &["run", "--config", good, "--out", flag_dir.to_str().unwrap()],
        Some(&env_dir),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(csv_files(&flag_dir).len(), 3);

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = zeno(
        &[
            "run",
            "--config",
            good,
            "--quiet",
            "--out",
            blocker.join("sub").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn timing_with_one_m_gives_one_row_per_rule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        config(r#"{"task": "quadratic", "T": 1, "timing": {"m": [10], "dimension": 100, "iterations": 5}}"#)
            .unwrap();
    let (path, rows) = zeno_cli::emit_timing(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    let text = fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("rule,m,d,iterations,median_ns"));
    assert_eq!(text.lines().count(), 3);
    assert!(matches!(
        config(r#"{"task": "quadratic", "T": 1, "timing": {"m": [2]}}"#),
        Err(CliError::Field { .. })
    ));
}
