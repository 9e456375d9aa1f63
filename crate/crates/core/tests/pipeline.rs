//! Full pipeline runs on synthetic traffic, checked against counts taken
//! straight from the generated packet records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use darkprobe::ingest::{PacketRecord, TcpFlags};
use darkprobe::pipeline::{run_pipeline, RunConfig, Stage};
use darkprobe::synth::{generate, SynthConfig};
use sha2::{Digest, Sha256};

const CONFIG: &str = r#"
seed = 5
prober_threshold = 20.0
top_ports = 8
series_ports = 12
forecast_ports = 2
resolutions = ["1h", "6h"]

[grid]
p_max = 2

[[synth]]
kind = "zipf_traffic"
n_ports = 40
events = 6000
sources = 60
duration_secs = 864000.0
non_syn_fraction = 0.2

[[synth]]
kind = "markov_prober"
src_ip = "203.0.113.9"
ports = [22, 23, 80]
matrix = [[0.0, 0.7, 0.3], [0.5, 0.0, 0.5], [0.2, 0.8, 0.0]]
events = 1500
mean_gap_secs = 500.0
"#;

fn config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml(CONFIG).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn records(cfg: &RunConfig) -> Vec<PacketRecord> {
    generate(&SynthConfig {
        seed: cfg.seed,
        generators: cfg.synth.clone(),
    })
    .unwrap()
    .records
}

fn is_probe(r: &PacketRecord) -> bool {
    r.flags.contains(TcpFlags::SYN) && !r.flags.contains(TcpFlags::ACK)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn outputs_match_raw_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let summary = run_pipeline(&cfg).unwrap();
    assert!(summary.manifest.complete);
    assert!(summary.manifest.stages.values().all(|s| s == "ok"), "{:?}", summary.manifest.stages);

    let recs = records(&cfg);
    let probes: Vec<&PacketRecord> = recs.iter().filter(|r| is_probe(r)).collect();
    assert!(probes.len() < recs.len(), "non-SYN records were generated");
    assert_eq!(summary.manifest.ingest.as_ref().unwrap().probes, probes.len() as u64);

    // Port ranking: counts by brute force, ordered by count then port.
    let mut by_port: BTreeMap<u16, u64> = BTreeMap::new();
    for r in &probes {
        *by_port.entry(r.dst_port).or_default() += 1;
    }
    let mut expected: Vec<(u16, u64)> = by_port.into_iter().collect();
    expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ranking = csv_rows(&dir.path().join("ports.csv"));
    assert_eq!(ranking.len(), expected.len());
    for (row, (port, count)) in ranking.iter().zip(&expected) {
        assert_eq!(row[1].parse::<u16>().unwrap(), *port);
        assert_eq!(row[2].parse::<u64>().unwrap(), *count);
    }

    // Series: every written bucket holds exactly the probes in its interval.
    for (res, secs) in [("1h", 3600i64), ("6h", 21_600)] {
        let text = fs::read_to_string(dir.path().join(format!("series/series_{res}.csv"))).unwrap();
        let mut lines = text.lines();
        let ports: Vec<u16> = lines
            .next()
            .unwrap()
            .split(',')
            .skip(1)
            .map(|c| c.trim_start_matches("port_").parse().unwrap())
            .collect();
        assert_eq!(ports.len(), cfg.series_ports);
        let rows: Vec<Vec<i64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert!(rows.len() > 10);
        for pair in rows.windows(2) {
            assert_eq!(pair[1][0] - pair[0][0], secs);
        }
        for row in rows.iter().step_by(7) {
            let start = row[0];
            for (j, port) in ports.iter().enumerate() {
                let n = probes
                    .iter()
                    .filter(|r| r.dst_port == *port && r.timestamp >= start as f64 && r.timestamp < (start + secs) as f64)
                    .count() as i64;
                assert_eq!(row[j + 1], n, "{res} bucket {start} port {port}");
            }
        }
        // The last written bucket closes before the final probe.
        let last_end = rows.last().unwrap()[0] + secs;
        let final_probe = probes.iter().map(|r| r.timestamp).fold(f64::MIN, f64::max);
        assert!(last_end as f64 <= final_probe.ceil());
    }

    // The Markov matrix has a zero diagonal: the prober's graph carries the
    // pairs it walked and no self-loops.
    let prober: Vec<u16> = probes
        .iter()
        .filter(|r| r.src_ip.to_string() == "203.0.113.9")
        .map(|r| r.dst_port)
        .collect();
    let graph_path = fs::read_dir(dir.path().join("graphs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().contains("203.0.113.9"))
        .expect("heavy prober has a graph");
    let dot = fs::read_to_string(graph_path).unwrap();
    let pairs = prober.windows(2).filter(|w| w[0] == 23 && w[1] == 80).count();
    assert!(pairs > 0);
    assert!(dot.contains("\"23\" -> \"80\""), "{dot}");
    assert!(!dot.contains("\"22\" -> \"22\""));
}

#[test]
fn manifest_hashes_match_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let summary = run_pipeline(&cfg).unwrap();
    assert!(!summary.manifest.artifacts.is_empty());
    let mut seen = Vec::new();
    for a in &summary.manifest.artifacts {
        let bytes = fs::read(dir.path().join(&a.path)).unwrap();
        assert_eq!(bytes.len() as u64, a.bytes, "{}", a.path);
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(digest, a.sha256, "{}", a.path);
        seen.push(a.path.clone());
    }
    let mut sorted = seen.clone();
    sorted.sort();
    assert_eq!(seen, sorted);
    let on_disk: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk["artifacts"].as_array().unwrap().len(), seen.len());
}

#[test]
fn stage_selection_limits_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.stages.graphs = false;
    cfg.stages.forecast = false;
    let summary = run_pipeline(&cfg).unwrap();
    assert_eq!(summary.manifest.stages[&Stage::Graphs], "skipped");
    assert_eq!(summary.manifest.stages[&Stage::Forecast], "skipped");
    assert!(summary.manifest.artifacts.iter().all(|a| !a.path.starts_with("graphs/") && !a.path.starts_with("forecast/")));
    assert!(dir.path().join("series/series_1h.csv").exists());
}

#[test]
fn thread_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = config(a.path());
    ca.jobs = 1;
    let mut cb = config(b.path());
    cb.jobs = 3;
    let ma = run_pipeline(&ca).unwrap().manifest;
    let mb = run_pipeline(&cb).unwrap().manifest;
    assert_eq!(ma.artifacts, mb.artifacts);
}
