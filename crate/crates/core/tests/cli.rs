use std::path::Path;
use std::process::{Command, Output};

use ergolab::cocycle::lyapunov_report;
use ergolab::experiment::{lyapunov_table, read_lyapunov_csv, run, Command as Cmd, ExperimentConfig};
use ergolab::space::Point;
use ergolab::systems::SystemSpec;
use serde_json::Value;

fn ergolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergolab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("valid JSON on stdout")
}

#[test]
fn doubling_inequality_holds() {
    let out = ergolab(&["inequality", "--system", "doubling", "--samples", "20", "--n", "1000000", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let records = v["result"]["report"]["records"].as_array().unwrap();
    assert_eq!(records.len(), 20);
    for r in records {
        assert_eq!(r["main_theorem_ok"], Value::Bool(true));
        assert_eq!(r["ruelle_ok"], Value::Bool(true));
    }
}

#[test]
fn counterexample_certifies() {
    let out = ergolab(&["counterexample", "--r", "2", "--lambda", "2", "--n0", "5", "--nmax", "12", "--certify"]);
    assert_eq!(out.status.code(), Some(0));
    let cert = &json(&out)["result"]["certification"];
    assert_eq!(cert["passed"], Value::Bool(true));
    let e = cert["exponent"].as_f64().unwrap();
    assert!((e - 0.3466).abs() / 0.3466 < 0.05, "{e}");
}

#[test]
fn failed_certification_exits_2() {
    // stages 5..8 alone leave the exponent 17% short of its limit
    let out = ergolab(&["counterexample", "--nmax", "8", "--certify"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["result"]["certification"]["passed"], Value::Bool(false));
}

#[test]
fn rotation_has_no_exponent() {
    let out = ergolab(&["lyapunov", "--system", "rotation", "theta=0.3", "--n", "1000"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], Value::from(1));
    assert_eq!(v["result"]["reports"][0]["sigma_chi_plus"].as_f64(), Some(0.0));
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        &["frobnicate"][..],
        &["lyapunov", "--system", "nosuchmap"],
        &["lyapunov", "--n", "zero"],
        &["entropy", "--partition", "voronoi"],
        &["admissible"],
        &["simulate", "--format", "xml"],
    ] {
        let out = ergolab(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(ergolab(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# orbit settings\nsystem = rotation theta=0.25\nn = 8\nx = 0.5\n").unwrap();
    let path = cfg.to_str().unwrap();
    let out = ergolab(&["simulate", "--config", path, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.lines().nth(2).unwrap().ends_with(",0.75"));

    let out = ergolab(&["simulate", "--config", path, "--n", "3", "--format", "csv"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 5);

    std::fs::write(&cfg, "n = 8\ncolour = blue\n").unwrap();
    let out = ergolab(&["simulate", "--config", path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn output_file_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("orbit.csv");
    let out = ergolab(&[
        "simulate",
        "--system",
        "cat",
        "--x",
        "0.1,0.2",
        "--n",
        "4",
        "--format",
        "csv",
        "--output",
        file.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,x0,x1"));
    assert_eq!(lines.next(), Some("0,0.1,0.2"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn csv_row_counts() {
    let mut buf = Vec::new();
    lyapunov_table(&[], 2).write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "n,sigma_chi_plus,chi_1,chi_2,x_1,x_2\n");

    let rep = lyapunov_report(&SystemSpec::cat(), &Point::new(&[0.3, 0.6]), 100).unwrap();
    let mut buf = Vec::new();
    lyapunov_table(&[rep], 2).write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
}

#[test]
fn lyapunov_json_csv_round_trip() {
    let sys = SystemSpec::<f64>::cat();
    let reports: Vec<_> = [[0.3, 0.6], [0.123456789, 0.987654321], [0.0, 0.5]]
        .iter()
        .map(|x| lyapunov_report(&sys, &Point::new(x), 777).unwrap())
        .collect();
    let text = serde_json::to_string(&reports).unwrap();
    let from_json: Vec<ergolab::LyapunovReportF64> = serde_json::from_str(&text).unwrap();
    let mut buf = Vec::new();
    lyapunov_table(&reports, 2).write_csv(&mut buf).unwrap();
    let from_csv = read_lyapunov_csv(buf.as_slice()).unwrap();
    for back in [&from_json, &from_csv] {
        assert_eq!(back.len(), reports.len());
        for (a, b) in reports.iter().zip(back.iter()) {
            assert_eq!(a.n, b.n);
            assert!((a.sigma_chi_plus - b.sigma_chi_plus).abs() <= 1e-15);
            for (u, v) in a.chi.iter().zip(&b.chi).chain(a.x.coords().iter().zip(b.x.coords())) {
                assert!((u - v).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn identical_runs_give_identical_bytes() {
    let args = ["physical-like", "--system", "cat", "--samples", "6", "--n", "4000", "--seed", "3"];
    let a = ergolab(&args);
    let b = ergolab(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);

    let mut cfg = ExperimentConfig::new(Cmd::Kozlovski);
    cfg.set("system", "logistic mu=3.9").unwrap();
    cfg.set("samples", "300").unwrap();
    let one = run(&cfg).unwrap().render_json().unwrap();
    assert_eq!(one, run(&cfg).unwrap().render_json().unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let args = ["inequality", "--system", "cat", "--samples", "5", "--n", "20000", "--m-list", "1,2,3"];
    let run_with = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_ergolab"))
            .args(args)
            .env("ERGOLAB_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run_with("1");
    let four = run_with("4");
    assert_eq!(one.status.code(), four.status.code());
    assert!(!one.stdout.is_empty());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(run_with("many").status.code(), Some(1));
}

/// Runs every `ergolab …` line inside the README's `sh` code blocks.
#[test]
fn readme_examples_run() {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(readme).expect("README.md at the workspace root");
    let dir = tempfile::tempdir().unwrap();
    let mut in_block = false;
    let mut shell = false;
    let mut ran = 0;
    for line in text.lines() {
        if let Some(lang) = line.trim_start().strip_prefix("```") {
            in_block = !in_block;
            shell = in_block && lang.trim() == "sh";
            continue;
        }
        let Some(cmd) = line.trim().strip_prefix("ergolab ").filter(|_| shell) else {
            continue;
        };
        let args: Vec<&str> = cmd.split_whitespace().collect();
        let out = Command::new(env!("CARGO_BIN_EXE_ergolab"))
            .args(&args)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(
            matches!(out.status.code(), Some(0)),
            "`{cmd}` exited with {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        ran += 1;
    }
    assert!(ran >= 5, "only {ran} README examples found");
}
