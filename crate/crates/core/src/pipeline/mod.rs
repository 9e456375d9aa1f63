//! End-to-end run: ingest, stats, graphs, series and forecasts written to an
//! output directory with a manifest of content hashes.
//!
//! Stages run in order and each one only reads what earlier stages left in
//! memory. When a stage fails, the artifacts written so far are kept and the
//! manifest records which stages completed.

pub mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{cumulative_coverage, port_profile_of, ProberProfile, RateSpan, StatsTally, DEFAULT_PROBER_THRESHOLD};
use crate::forecast::{
    grid_search, persistence_r2, rolling_forecast, var_forecast_with_selection, EvalReport, ForecastError, GridConfig,
    ModelKind, RollingOptions, SelectionConfig,
};
use crate::graphs::{
    aggregate_partitioned, build_transition_graph, export_graph, matrix_to_csv, partition_by_prober, ports_targeted_cdf,
    GraphError, GraphFormat, Normalization, TransitionGraph, TransitionOptions,
};
use crate::ingest::{
    filter_syn, fold_probes, GeoDb, GeoDbError, IngestError, IngestStats, OnInvalid, ProbeEvent, SynAckPolicy,
};
use crate::synth::{generate, SynthConfig, SynthError, SyntheticSpec};
use crate::timeseries::{bucketize, resample, to_csv, RateMatrix, Resolution, SeriesError};

use report::ForecastRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

/// Prober population a transition matrix aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixScope {
    All,
    /// Top probers only.
    Top,
}

impl std::str::FromStr for MatrixScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(MatrixScope::All),
            "top" => Ok(MatrixScope::Top),
            other => Err(format!("unknown scope {other:?} (expected all or top)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSet {
    pub stats: bool,
    pub graphs: bool,
    pub series: bool,
    /// Needs `series`.
    pub forecast: bool,
}

impl Default for StageSet {
    fn default() -> Self {
        StageSet {
            stats: true,
            graphs: true,
            series: true,
            forecast: true,
        }
    }
}

/// Everything a run needs. Loaded from TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Packet logs in the canonical CSV format.
    pub input: Vec<PathBuf>,
    /// Generators whose records are added to the input, seeded from `seed`.
    pub synth: Vec<SyntheticSpec>,
    pub geodb: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub stages: StageSet,
    pub syn_ack: SynAckPolicy,
    pub skip_invalid: bool,
    /// Mean SYN packets per day above which a source is a top prober.
    pub prober_threshold: f64,
    pub rate_span: RateSpan,
    /// Ports in the transition-matrix scope, which are also the VAR
    /// feature candidates.
    pub top_ports: usize,
    /// Ports that get a rate series.
    pub series_ports: usize,
    /// Ports that get forecast, taken from the top of the ranking.
    pub forecast_ports: usize,
    pub resolutions: Vec<Resolution>,
    pub grid: GridConfig,
    pub selection: SelectionConfig,
    pub reselect_every: Option<usize>,
    /// Write one graph file per top prober.
    pub per_prober_graphs: bool,
    /// Top probers whose graphs are written out.
    pub graph_limit: usize,
    pub matrix_scopes: Vec<MatrixScope>,
    pub graph_format: GraphFormat,
    pub self_loops: bool,
    pub normalization: Normalization,
    pub format: OutputFormat,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: Vec::new(),
            synth: Vec::new(),
            geodb: None,
            out_dir: PathBuf::from("darkprobe-out"),
            stages: StageSet::default(),
            syn_ack: SynAckPolicy::Exclude,
            skip_invalid: false,
            prober_threshold: DEFAULT_PROBER_THRESHOLD,
            rate_span: RateSpan::Capture,
            top_ports: 30,
            series_ports: 550,
            forecast_ports: 5,
            resolutions: Resolution::ALL.to_vec(),
            grid: GridConfig::default(),
            selection: SelectionConfig::default(),
            reselect_every: None,
            per_prober_graphs: true,
            graph_limit: 30,
            matrix_scopes: vec![MatrixScope::All, MatrixScope::Top],
            graph_format: GraphFormat::Dot,
            self_loops: true,
            normalization: Normalization::Row,
            format: OutputFormat::Csv,
            jobs: 0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.prober_threshold > 0.0 && self.prober_threshold.is_finite()) {
            return bad("prober_threshold must be positive");
        }
        if self.top_ports == 0 || self.series_ports == 0 {
            return bad("top_ports and series_ports must be at least 1");
        }
        if self.resolutions.is_empty() {
            return bad("at least one resolution is required");
        }
        if self.grid.p_min == 0 || self.grid.p_min > self.grid.p_max || self.grid.window_step == 0 {
            return bad("grid needs 1 <= p_min <= p_max and a positive window_step");
        }
        if !(0.0 < self.grid.validation_frac && self.grid.validation_frac < 1.0)
            || !(0.0 < self.grid.max_window_frac && self.grid.max_window_frac <= 1.0 - self.grid.validation_frac)
        {
            return bad("grid fractions must satisfy 0 < max_window_frac <= 1 - validation_frac < 1");
        }
        if self.stages.forecast && !self.stages.series {
            return bad("the forecast stage needs the series stage");
        }
        if self.selection.k_max == 0 || !(0.0 < self.selection.select_frac && self.selection.select_frac < 1.0) {
            return bad("selection needs k_max >= 1 and 0 < select_frac < 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Stats,
    Graphs,
    Series,
    Forecast,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::Graphs => "graphs",
            Stage::Series => "series",
            Stage::Forecast => "forecast",
            Stage::Output => "output",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("geolocation database: {0}")]
    GeoDb(#[from] GeoDbError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Degenerate(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

impl PipelineError {
    /// 1 for configuration problems, 3 for numeric failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Stage { source, .. } => match source {
                StageError::Degenerate(_) => 3,
                StageError::Forecast(e) if e.is_numeric() => 3,
                _ => 2,
            },
        }
    }
}

fn at(stage: Stage) -> impl Fn(StageError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub lines: u64,
    pub records: u64,
    pub probes: u64,
    pub skipped_invalid: u64,
}

impl From<IngestStats> for IngestSummary {
    fn from(s: IngestStats) -> Self {
        IngestSummary {
            lines: s.lines,
            records: s.records,
            probes: s.probes,
            skipped_invalid: s.skipped_invalid,
        }
    }
}

/// `manifest.json`. Contains nothing run-specific (no times, no absolute
/// paths), so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    /// `ok`, `skipped`, `not run` or `failed: <reason>` per stage.
    pub stages: BTreeMap<Stage, String>,
    pub warnings: Vec<String>,
    pub ingest: Option<IngestSummary>,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes files under an output directory and records their hashes.
pub struct Bundle {
    root: PathBuf,
    format: OutputFormat,
    artifacts: Vec<Artifact>,
}

impl Bundle {
    pub fn create(root: &Path, format: OutputFormat) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Bundle {
            root: root.to_path_buf(),
            format,
            artifacts: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> io::Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, contents)?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    /// Writes `name.csv` from `csv` or `name.json` from `value`, per the
    /// bundle's format.
    pub fn table<T: Serialize + ?Sized>(&mut self, name: &str, value: &T, csv: impl FnOnce() -> String) -> io::Result<()> {
        match self.format {
            OutputFormat::Csv => self.write(&format!("{name}.csv"), csv().as_bytes()),
            OutputFormat::Json => {
                let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
                text.push('\n');
                self.write(&format!("{name}.json"), text.as_bytes())
            }
        }
    }

    /// Streams a file through `f`, hashing it on the way out.
    pub fn write_with<F>(&mut self, rel: &str, f: F) -> io::Result<()>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = HashingWriter {
            inner: BufWriter::new(File::create(&path)?),
            hasher: Sha256::new(),
            bytes: 0,
        };
        f(&mut w)?;
        w.inner.flush()?;
        let sha256 = w.hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256,
            bytes: w.bytes,
        });
        Ok(())
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn finish(mut self, manifest: &mut Manifest) -> io::Result<Vec<Artifact>> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.artifacts = self.artifacts.clone();
        let mut text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(self.artifacts)
    }
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
    bytes: u64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub events: usize,
}

/// Probe events of every input plus a [`StatsTally`] built in the same pass.
pub struct Loaded {
    pub events: Vec<ProbeEvent>,
    pub tally: StatsTally,
    pub stats: IngestStats,
}

/// Reads every input file and synth generator. Events are kept in memory
/// only when `keep_events` is set; the tally is always built.
pub fn load_inputs(cfg: &RunConfig, geodb: Option<&GeoDb>, jobs: usize, keep_events: bool) -> Result<Loaded, StageError> {
    let on_invalid = if cfg.skip_invalid { OnInvalid::Skip } else { OnInvalid::Fail };
    let mut loaded = Loaded {
        events: Vec::new(),
        tally: StatsTally::new(geodb.is_some()),
        stats: IngestStats::default(),
    };
    for path in &cfg.input {
        let file = File::open(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let ((events, tally), stats) = fold_probes(
            BufReader::new(file),
            cfg.syn_ack,
            on_invalid,
            jobs,
            || (Vec::new(), StatsTally::new(geodb.is_some())),
            |acc: &mut (Vec<ProbeEvent>, StatsTally), e| {
                acc.1.add(&e, geodb);
                if keep_events {
                    acc.0.push(e);
                }
            },
            |a, mut b| {
                a.0.append(&mut b.0);
                a.1.merge(b.1);
            },
        )?;
        loaded.events.extend(events);
        loaded.tally.merge(tally);
        loaded.stats.lines += stats.lines;
        loaded.stats.records += stats.records;
        loaded.stats.probes += stats.probes;
        loaded.stats.skipped_invalid += stats.skipped_invalid;
    }
    if !cfg.synth.is_empty() {
        let out = generate(&SynthConfig {
            seed: cfg.seed,
            generators: cfg.synth.clone(),
        })?;
        loaded.stats.records += out.records.len() as u64;
        for e in filter_syn(out.records, cfg.syn_ack) {
            loaded.tally.add(&e, geodb);
            loaded.stats.probes += 1;
            if keep_events {
                loaded.events.push(e);
            }
        }
    }
    Ok(loaded)
}

/// Forecast results for one port at one resolution.
pub struct PortForecast {
    pub ar: EvalReport,
    pub var: EvalReport,
    pub row: ForecastRow,
}

/// Grid-searches AR design parameters on the validation span, reuses them
/// for a VAR with selected features, and scores both on the validation span
/// and on the full post-window span.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_port(
    data: &[Vec<f64>],
    ports: &[u16],
    target: usize,
    candidates: &[usize],
    resolution: Resolution,
    grid: &GridConfig,
    selection: &SelectionConfig,
    reselect_every: Option<usize>,
) -> Result<PortForecast, ForecastError> {
    let len = data.first().map_or(0, Vec::len);
    let g = grid_search(data, target, ModelKind::Ar, &[], grid)?;
    let params = g.best;
    let span = g.report.predictions[0].t..len;
    let sel_cfg = SelectionConfig {
        candidates: Some(candidates.to_vec()),
        ..selection.clone()
    };
    let var_opts = RollingOptions {
        stride: grid.stride,
        ..RollingOptions::for_kind(ModelKind::Var)
    };
    let ar_opts = RollingOptions {
        stride: grid.stride,
        ..RollingOptions::for_kind(ModelKind::Ar)
    };
    let (mut var, selections) =
        var_forecast_with_selection(data, target, params, span.clone(), &sel_cfg, reselect_every, var_opts)?;
    let full = params.window..len;
    let ar_full = rolling_forecast(data, target, ModelKind::Ar, params, &[], full.clone(), ar_opts)?;
    let (var_full, _) = var_forecast_with_selection(data, target, params, full, &sel_cfg, reselect_every, var_opts)?;

    let mut ar = g.report;
    for r in [&mut ar, &mut var] {
        r.target_port = Some(ports[target]);
        r.resolution = Some(resolution);
    }
    let var_ports = if selections[0].fallback_ar {
        vec![ports[target]]
    } else {
        selections[0].features.iter().map(|&j| ports[j]).collect()
    };
    let row = ForecastRow {
        port: ports[target],
        resolution,
        len,
        status: "ok".into(),
        p: Some(params.p),
        window: Some(params.window),
        r2_ar: Some(ar.r2),
        r2_var: Some(var.r2),
        r2_ar_full: Some(ar_full.r2),
        r2_var_full: Some(var_full.r2),
        r2_persistence: Some(persistence_r2(&data[target], span)),
        var_ports,
        degenerate_fits: ar.degenerate_fits + var.degenerate_fits,
    };
    Ok(PortForecast { ar, var, row })
}

struct Run<'a> {
    cfg: &'a RunConfig,
    bundle: Bundle,
    stages: BTreeMap<Stage, String>,
    warnings: Vec<String>,
    ingest: Option<IngestSummary>,
}

impl Run<'_> {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    fn stats(&mut self, loaded: &Loaded, probers: &[ProberProfile]) -> Result<(), StageError> {
        let ranking = loaded.tally.ports.ranking();
        let coverage = cumulative_coverage(&ranking);
        let thresholds = report::coverage_thresholds(&coverage);
        self.bundle.table("ports", &ranking, || report::ranking_csv(&ranking, "port"))?;
        self.bundle.table("coverage", &coverage, || report::curve_csv(&coverage, "n", "cumulative_share"))?;
        self.bundle.table("coverage_thresholds", &thresholds, || report::thresholds_csv(&thresholds))?;
        self.bundle.table("top_probers", probers, || report::probers_csv(probers))?;
        let prober_ports = port_profile_of(probers);
        self.bundle.table("top_prober_ports", &prober_ports, || report::ranking_csv(&prober_ports, "port"))?;
        if let Some(countries) = &loaded.tally.countries {
            let ranking = countries.ranking();
            self.bundle.table("countries", &ranking, || report::ranking_csv(&ranking, "country"))?;
        }
        Ok(())
    }

    fn graphs(&mut self, loaded: &Loaded, probers: &[ProberProfile]) -> Result<(), StageError> {
        let opts = TransitionOptions {
            self_loops: self.cfg.self_loops,
        };
        let groups = partition_by_prober(&loaded.events);
        let mut graphs: Vec<TransitionGraph> = Vec::with_capacity(probers.len());
        for p in probers {
            graphs.push(build_transition_graph(&groups[&p.src_ip], opts)?);
        }
        if self.cfg.per_prober_graphs {
            let ext = match self.cfg.graph_format {
                GraphFormat::Dot => "dot",
                GraphFormat::Json => "json",
            };
            for (rank, g) in graphs.iter().enumerate().take(self.cfg.graph_limit) {
                let name = format!("graphs/{:03}_{}.{ext}", rank + 1, g.src_ip);
                self.bundle.write(&name, export_graph(g, self.cfg.graph_format).as_bytes())?;
            }
        }
        let cdf = ports_targeted_cdf(&graphs);
        self.bundle.table("ports_targeted_cdf", &cdf, || report::curve_csv(&cdf, "ports", "fraction_of_probers"))?;

        if self.cfg.matrix_scopes.is_empty() {
            return Ok(());
        }
        let scope: Vec<u16> = loaded.tally.ports.ranking().keys().take(self.cfg.top_ports).collect();
        if scope.is_empty() {
            self.warn("no ports with traffic: transition matrices skipped".into());
            return Ok(());
        }
        if self.cfg.matrix_scopes.contains(&MatrixScope::All) {
            let all = aggregate_partitioned(&groups, &scope, opts, self.cfg.normalization)?;
            self.bundle.table("matrix_all", &all, || matrix_to_csv(&all))?;
        }
        if self.cfg.matrix_scopes.contains(&MatrixScope::Top) {
            let top: HashSet<Ipv4Addr> = probers.iter().map(|p| p.src_ip).collect();
            let top_groups: BTreeMap<Ipv4Addr, Vec<ProbeEvent>> =
                groups.into_iter().filter(|(ip, _)| top.contains(ip)).collect();
            let top_matrix = aggregate_partitioned(&top_groups, &scope, opts, self.cfg.normalization)?;
            self.bundle.table("matrix_top", &top_matrix, || matrix_to_csv(&top_matrix))?;
        }
        Ok(())
    }

    fn series(&mut self, loaded: &Loaded) -> Result<Vec<RateMatrix>, StageError> {
        let ports: Vec<u16> = loaded.tally.ports.ranking().keys().take(self.cfg.series_ports).collect();
        if ports.is_empty() {
            for res in &self.cfg.resolutions {
                self.bundle.write(&format!("series/series_{res}.csv"), b"bucket_start\n")?;
            }
            return Ok(Vec::new());
        }
        let hourly = bucketize(&loaded.events, Resolution::H1, &ports)?;
        let mut out = Vec::new();
        for &res in &self.cfg.resolutions {
            let m = if res == Resolution::H1 { hourly.clone() } else { resample(&hourly, res)? };
            self.bundle.write(&format!("series/series_{res}.csv"), to_csv(&m.clone().without_partial_tail()).as_bytes())?;
            out.push(m);
        }
        Ok(out)
    }

    fn forecast(&mut self, matrices: Vec<RateMatrix>) -> Result<(), StageError> {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for m in matrices {
            let m = m.without_partial_tail();
            let data = m.columns_f64();
            let starts: Vec<i64> = (0..m.len()).map(|t| m.bucket_start(t)).collect();
            let candidates: Vec<usize> = (0..m.ports.len().min(self.cfg.top_ports)).collect();
            for target in 0..m.ports.len().min(self.cfg.forecast_ports) {
                let port = m.ports[target];
                match evaluate_port(
                    &data,
                    &m.ports,
                    target,
                    &candidates,
                    m.resolution,
                    &self.cfg.grid,
                    &self.cfg.selection,
                    self.cfg.reselect_every,
                ) {
                    Ok(pf) => {
                        let name = format!("forecast/predictions/port_{port}_{}.csv", m.resolution);
                        self.bundle.write(&name, report::paired_predictions_csv(&pf.ar, &pf.var, &starts).as_bytes())?;
                        rows.push(pf.row);
                    }
                    Err(ForecastError::NoGridCells { len }) => {
                        self.warn(format!("port {port} at {}: {len} buckets are too few to forecast", m.resolution));
                        rows.push(ForecastRow::empty(port, m.resolution, len, "too short"));
                    }
                    Err(e) => {
                        failures.push(format!("port {port} at {}: {e}", m.resolution));
                        rows.push(ForecastRow::empty(port, m.resolution, m.len(), format!("error: {e}")));
                    }
                }
            }
        }
        self.bundle.table("forecast/summary", &rows, || report::forecast_summary_csv(&rows))?;
        let comparison: Vec<&ForecastRow> = rows.iter().filter(|r| r.r2_ar.is_some()).collect();
        self.bundle.table("forecast/comparison", &comparison, || report::comparison_csv(&rows))?;
        if failures.is_empty() {
            Ok(())
        } else {
            Err(StageError::Degenerate(failures.join("; ")))
        }
    }

    fn execute(&mut self) -> Result<usize, PipelineError> {
        let cfg = self.cfg;
        let geodb = match &cfg.geodb {
            Some(path) => {
                let file = File::open(path)
                    .map_err(|e| StageError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
                    .map_err(at(Stage::Ingest))?;
                Some(GeoDb::from_csv(BufReader::new(file)).map_err(|e| at(Stage::Ingest)(e.into()))?)
            }
            None => None,
        };
        self.stages.insert(Stage::Ingest, "failed".into());
        let keep = cfg.stages.graphs || cfg.stages.series;
        let loaded =
            load_inputs(cfg, geodb.as_ref(), rayon::current_num_threads(), keep).map_err(at(Stage::Ingest))?;
        self.ingest = Some(loaded.stats.into());
        self.stages.insert(Stage::Ingest, "ok".into());
        if loaded.tally.events == 0 {
            self.warn("no events: outputs are empty".into());
        }

        let probers = loaded.tally.probers.top_probers(cfg.prober_threshold, cfg.rate_span);
        let enabled = [
            (Stage::Stats, cfg.stages.stats),
            (Stage::Graphs, cfg.stages.graphs),
            (Stage::Series, cfg.stages.series),
            (Stage::Forecast, cfg.stages.forecast),
        ];
        for (stage, on) in enabled {
            self.stages.insert(stage, if on { "not run" } else { "skipped" }.into());
        }

        let mut matrices = Vec::new();
        for (stage, on) in enabled {
            if !on {
                continue;
            }
            let result = match stage {
                Stage::Stats => self.stats(&loaded, &probers),
                Stage::Graphs => self.graphs(&loaded, &probers),
                Stage::Series => self.series(&loaded).map(|m| matrices = m),
                Stage::Forecast => self.forecast(std::mem::take(&mut matrices)),
                Stage::Ingest | Stage::Output => unreachable!(),
            };
            match result {
                Ok(()) => {
                    self.stages.insert(stage, "ok".into());
                }
                Err(e) => {
                    self.stages.insert(stage, format!("failed: {e}"));
                    return Err(at(stage)(e));
                }
            }
        }
        Ok(loaded.tally.events as usize)
    }
}

/// Runs every enabled stage, then writes `manifest.json`. On failure the
/// manifest is still written, with `complete: false`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let bundle = Bundle::create(&cfg.out_dir, cfg.format).map_err(|e| at(Stage::Output)(e.into()))?;
        let mut run = Run {
            cfg,
            bundle,
            stages: BTreeMap::new(),
            warnings: Vec::new(),
            ingest: None,
        };
        let result = run.execute();
        let mut manifest = Manifest {
            complete: result.is_ok(),
            stages: run.stages,
            warnings: run.warnings,
            ingest: run.ingest,
            artifacts: Vec::new(),
        };
        run.bundle.finish(&mut manifest).map_err(|e| at(Stage::Output)(e.into()))?;
        let events = result?;
        Ok(RunSummary {
            out_dir: cfg.out_dir.clone(),
            manifest,
            events,
        })
    })
}
