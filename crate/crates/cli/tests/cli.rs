//! End-to-end checks of the `darkprobe` binary: exit codes, output trees and
//! a few tables recomputed by hand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HEADER: &str = "timestamp,src_ip,dst_ip,src_port,dst_port,flags";

fn darkprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darkprobe")).args(args).output().expect("spawn darkprobe")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn small_log(dir: &Path) -> PathBuf {
    // Three SYNs to 23, two to 80, plus a SYN-ACK and a RST that the default
    // policy drops.
    let rows = [
        "1415836800.0,203.0.113.7,192.0.2.10,40000,23,2",
        "1415836801.0,203.0.113.7,192.0.2.11,40001,80,2",
        "1415836802.0,198.51.100.4,192.0.2.12,40002,23,2",
        "1415836803.0,198.51.100.4,192.0.2.13,40003,80,18",
        "1415836804.0,198.51.100.4,192.0.2.14,40004,23,2",
        "1415836805.0,203.0.113.9,192.0.2.15,40005,80,2",
        "1415836806.0,203.0.113.9,192.0.2.16,40006,443,4",
    ];
    write(dir, "log.csv", &format!("{HEADER}\n{}\n", rows.join("\n")))
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&darkprobe(&["--help"])), 0);
    assert_eq!(code(&darkprobe(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&darkprobe(&[])), 1);
    assert_eq!(code(&darkprobe(&["frobnicate"])), 1);
    assert_eq!(code(&darkprobe(&["stats", "--rate-span", "forever", "x.csv"])), 1);
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    // No input files at all.
    assert_eq!(code(&darkprobe(&["stats", "--out", out.to_str().unwrap()])), 1);
}

#[test]
fn stats_ranks_syn_ports() {
    let tmp = TempDir::new().unwrap();
    let log = small_log(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&["stats", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let ports = fs::read_to_string(out.join("ports.csv")).unwrap();
    assert_eq!(ports, "rank,port,count,share\n1,23,3,0.6\n2,80,2,0.4\n");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["ingest"]["probes"], 5);
    // Only the stats stage ran.
    assert!(!out.join("graphs").exists());
    assert!(!out.join("series").exists());
}

#[test]
fn syn_ack_policy_include_counts_them() {
    let tmp = TempDir::new().unwrap();
    let log = small_log(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&[
        "stats",
        "--syn-ack-policy",
        "include",
        "--out",
        out.to_str().unwrap(),
        log.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    let ports = fs::read_to_string(out.join("ports.csv")).unwrap();
    assert!(ports.contains("\n1,23,3,0.5\n2,80,3,0.5\n"), "{ports}");
}

#[test]
fn malformed_input_is_a_data_error_unless_skipped() {
    let tmp = TempDir::new().unwrap();
    let log = write(
        tmp.path(),
        "bad.csv",
        &format!("{HEADER}\n1415836800.0,203.0.113.7,192.0.2.10,40000,23,2\nnot,a,valid,row\n"),
    );
    let out = tmp.path().join("out");
    let res = darkprobe(&["stats", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    let res = darkprobe(&["stats", "--skip-invalid", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["ingest"]["skipped_invalid"], 1);
}

#[test]
fn missing_input_file_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let res = darkprobe(&["stats", "--out", out.to_str().unwrap(), tmp.path().join("nope.csv").to_str().unwrap()]);
    assert_eq!(code(&res), 2);
}

#[test]
fn empty_log_runs_with_a_warning() {
    let tmp = TempDir::new().unwrap();
    let log = write(tmp.path(), "empty.csv", &format!("{HEADER}\n"));
    let out = tmp.path().join("out");
    let res = darkprobe(&["run", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read_to_string(out.join("ports.csv")).unwrap(), "rank,port,count,share\n");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let warnings = manifest["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("no events")), "{warnings:?}");
}

#[test]
fn json_format_switches_tables() {
    let tmp = TempDir::new().unwrap();
    let log = small_log(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&["stats", "--format", "json", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let ports: serde_json::Value = serde_json::from_slice(&fs::read(out.join("ports.json")).unwrap()).unwrap();
    assert_eq!(ports["entries"][0]["key"], 23);
    assert_eq!(ports["entries"][0]["count"], 3);
    assert!(!out.join("ports.csv").exists());
}

#[test]
fn ingest_writes_probe_table() {
    let tmp = TempDir::new().unwrap();
    let log = small_log(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&["ingest", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let probes = fs::read_to_string(out.join("probes.csv")).unwrap();
    let lines: Vec<&str> = probes.lines().collect();
    assert_eq!(lines[0], "timestamp,src_ip,dst_port");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].ends_with(",203.0.113.7,23"), "{}", lines[1]);
}

fn ar_series(dir: &Path) -> PathBuf {
    // y(t) = 1 + 0.9·y(t−1), hourly, with a second column that is a shifted copy.
    let mut y = vec![50.0f64];
    for t in 1..200 {
        y.push(1.0 + 0.9 * y[t - 1]);
    }
    let mut body = String::from("bucket_start,port_23,port_80\n");
    for (t, v) in y.iter().enumerate() {
        body.push_str(&format!("{},{},{}\n", 1_415_836_800 + 3600 * t as i64, v, v + 3.0));
    }
    write(dir, "series.csv", &body)
}

#[test]
fn forecast_on_noiseless_ar_series() {
    let tmp = TempDir::new().unwrap();
    let series = ar_series(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&[
        "forecast",
        "--series",
        series.to_str().unwrap(),
        "--target-port",
        "23",
        "--p",
        "1",
        "--window",
        "20",
        "--full-span",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let r2 = report["r2"].as_f64().unwrap();
    assert!((r2 - 1.0).abs() < 1e-9, "R² = {r2}");
    let predictions = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + 180);
}

#[test]
fn forecast_flag_errors() {
    let tmp = TempDir::new().unwrap();
    let series = ar_series(tmp.path());
    let out = tmp.path().join("out");
    let s = series.to_str().unwrap();
    let o = out.to_str().unwrap();
    // Missing --p/--window.
    assert_eq!(code(&darkprobe(&["forecast", "--series", s, "--target-port", "23", "--out", o])), 1);
    // Port not in the file.
    assert_eq!(code(&darkprobe(&["forecast", "--series", s, "--target-port", "22", "--p", "1", "--window", "20", "--out", o])), 1);
    // Feature selection only makes sense for VAR.
    assert_eq!(
        code(&darkprobe(&["forecast", "--series", s, "--target-port", "23", "--p", "1", "--window", "20", "--select-features", "--out", o])),
        1
    );
    // Series file that is not a series file.
    let bad = write(tmp.path(), "bad.csv", "when,port_23\n0,1\n");
    assert_eq!(
        code(&darkprobe(&["forecast", "--series", bad.to_str().unwrap(), "--target-port", "23", "--p", "1", "--window", "2", "--out", o])),
        2
    );
}

#[test]
fn forecast_grid_search_writes_grid() {
    let tmp = TempDir::new().unwrap();
    let series = ar_series(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&[
        "forecast",
        "--series",
        series.to_str().unwrap(),
        "--target-port",
        "80",
        "--model",
        "var",
        "--grid-search",
        "--p-max",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert!(grid.starts_with("p,window,r2\n"));
    assert!(grid.lines().count() > 2);
}

#[test]
fn graph_writes_dot_files() {
    let tmp = TempDir::new().unwrap();
    let log = small_log(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&[
        "graph",
        "--threshold",
        "0.5",
        "--format",
        "dot",
        "--out",
        out.to_str().unwrap(),
        log.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let dots: Vec<_> = fs::read_dir(out.join("graphs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "dot"))
        .collect();
    assert!(!dots.is_empty());
    for dot in dots {
        assert!(fs::read_to_string(dot).unwrap().starts_with("digraph"));
    }
    // Row-normalized matrix rows sum to one (or zero for ports never left).
    let matrix = fs::read_to_string(out.join("matrix_all.csv")).unwrap();
    for line in matrix.lines().skip(1) {
        let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12, "{line}");
    }
}

#[test]
fn series_drop_partial_tail() {
    let tmp = TempDir::new().unwrap();
    let log = small_log(tmp.path());
    let out = tmp.path().join("out");
    let res = darkprobe(&["series", "--resolution", "1h", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    // The whole log sits inside one unfinished hour.
    let text = fs::read_to_string(out.join("series/series_1h.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "{text}");
}
