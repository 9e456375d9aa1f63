//! `darkprobe` command-line front end.
//!
//! Every subcommand starts from a [`RunConfig`] (defaults, or `--config`),
//! applies its flags on top, and writes into `--out` together with a
//! `manifest.json` of content hashes.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric degeneracy.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use darkprobe::analytics::RateSpan;
use darkprobe::forecast::{
    grid_search, rolling_forecast, validation_span, var_forecast_with_selection, DesignParams, EvalReport,
    ForecastError, ModelKind, RollingOptions,
};
use darkprobe::graphs::{GraphFormat, Normalization};
use darkprobe::ingest::{IngestError, IngestStats, RecordReader, SynAckPolicy, CSV_HEADER};
use darkprobe::pipeline::report::{self, ForecastRow};
use darkprobe::pipeline::{
    evaluate_port, run_pipeline, Bundle, IngestSummary, Manifest, MatrixScope, OutputFormat, PipelineError, RunConfig,
    RunSummary, Stage,
};
use darkprobe::synth::{generate, SynthConfig};
use darkprobe::timeseries::{read_series_csv, Resolution, SeriesTable};

#[derive(Parser)]
#[command(name = "darkprobe", version, about = "Darknet traffic analytics and probing-rate forecasting")]
struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Table format (`dot` only applies to `graph`).
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for synthetic generators.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Dot,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynAckArg {
    Exclude,
    Include,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RateSpanArg {
    Capture,
    Active,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormalizeArg {
    Row,
    Global,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    All,
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Ar,
    Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Stats,
    Graphs,
    Series,
    Forecast,
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    /// Packet logs (`timestamp,src_ip,dst_ip,src_port,dst_port,flags`).
    #[arg(value_name = "INPUT")]
    input: Vec<PathBuf>,
    /// Geolocation CSV (`range_start,range_end,country`).
    #[arg(long, value_name = "FILE")]
    geodb: Option<PathBuf>,
    #[arg(long, value_enum)]
    syn_ack_policy: Option<SynAckArg>,
    /// Skip malformed lines instead of failing.
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(Args, Debug)]
struct ProberArgs {
    /// SYN packets per day above which a source is a top prober.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    rate_span: Option<RateSpanArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and SYN-filter packet logs into `probes.csv`.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Port ranking, coverage, top probers and countries.
    Stats {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        probers: ProberArgs,
        /// Ports listed on stdout.
        #[arg(long, default_value_t = 30)]
        top: usize,
    },
    /// Per-prober transition graphs and aggregate transition matrices.
    Graph {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        probers: ProberArgs,
        /// Only write per-prober graphs (combine with --matrix for both).
        #[arg(long)]
        per_prober: bool,
        /// Only write transition matrices (combine with --per-prober for both).
        #[arg(long)]
        matrix: bool,
        /// Prober population for the matrix (default: both).
        #[arg(long, value_enum)]
        scope: Option<ScopeArg>,
        /// Number of most targeted ports in the matrix.
        #[arg(long, value_name = "K")]
        ports_top: Option<usize>,
        /// Top probers whose graphs are written.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        drop_self_loops: bool,
        #[arg(long, value_enum)]
        normalize: Option<NormalizeArg>,
    },
    /// Per-port rate series, one CSV per resolution.
    Series {
        #[command(flatten)]
        input: InputArgs,
        /// Repeatable; default is every supported resolution.
        #[arg(long)]
        resolution: Vec<Resolution>,
        /// Number of most targeted ports with a series.
        #[arg(long, value_name = "K")]
        ports_top: Option<usize>,
    },
    /// Rolling one-step-ahead forecast of one port of a series file.
    Forecast(ForecastArgs),
    /// Synthetic packet logs and series from a generator spec.
    Synth {
        /// TOML (or `.json`) generator list; defaults to `synth` in --config.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
    },
    /// Every enabled stage, end to end.
    Run {
        /// Replaces the config's input list.
        #[arg(value_name = "INPUT")]
        input: Vec<PathBuf>,
        /// Stages to run (comma separated); default from the config.
        #[arg(long, value_enum, value_delimiter = ',')]
        stages: Vec<StageArg>,
    },
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Series CSV (`bucket_start,port_23,...`).
    #[arg(long, value_name = "FILE")]
    series: PathBuf,
    #[arg(long)]
    target_port: u16,
    #[arg(long, value_enum, default_value = "ar")]
    model: ModelArg,
    /// Autoregressive order (required without --grid-search).
    #[arg(long)]
    p: Option<usize>,
    /// Rolling window length N (required without --grid-search).
    #[arg(long)]
    window: Option<usize>,
    /// Choose p and N on the validation span.
    #[arg(long)]
    grid_search: bool,
    /// Upper bound of the order grid.
    #[arg(long)]
    p_max: Option<usize>,
    /// Resample the series to this resolution first.
    #[arg(long)]
    resolution: Option<Resolution>,
    /// Pick VAR features by lagged correlation with the target.
    #[arg(long)]
    select_features: bool,
    /// Re-select VAR features every S steps.
    #[arg(long, value_name = "S")]
    reselect_every: Option<usize>,
    /// Columns considered as VAR features, from the left of the file.
    #[arg(long, value_name = "K")]
    candidates: Option<usize>,
    /// Evaluate from N to the end instead of the validation span.
    #[arg(long)]
    full_span: bool,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Pipeline(e) => e.exit_code() as u8,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::BadParams(_) | ForecastError::UnknownSeries(_) => CliError::Usage(e.to_string()),
            e if e.is_numeric() => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("darkprobe: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    let seed_flag = cli.seed;
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    match cli.format {
        Some(FormatArg::Csv) => cfg.format = OutputFormat::Csv,
        Some(FormatArg::Json) => {
            cfg.format = OutputFormat::Json;
            cfg.graph_format = GraphFormat::Json;
        }
        Some(FormatArg::Dot) if matches!(cli.command, Command::Graph { .. }) => {
            cfg.format = OutputFormat::Csv;
            cfg.graph_format = GraphFormat::Dot;
        }
        Some(FormatArg::Dot) => return Err(CliError::Usage("--format dot only applies to `graph`".into())),
        None => {}
    }

    match cli.command {
        Command::Ingest { input } => {
            apply_input(&mut cfg, input);
            ingest(&cfg)
        }
        Command::Stats { input, probers, top } => {
            apply_input(&mut cfg, input);
            apply_probers(&mut cfg, probers);
            cfg.stages = only(&[StageArg::Stats]);
            let summary = pipeline(&cfg)?;
            print_stats(&summary, top)
        }
        Command::Graph {
            input,
            probers,
            per_prober,
            matrix,
            scope,
            ports_top,
            limit,
            drop_self_loops,
            normalize,
        } => {
            apply_input(&mut cfg, input);
            apply_probers(&mut cfg, probers);
            cfg.stages = only(&[StageArg::Graphs]);
            if per_prober != matrix {
                cfg.per_prober_graphs = per_prober;
                if per_prober {
                    cfg.matrix_scopes.clear();
                }
            }
            if let Some(scope) = scope {
                if !(per_prober && !matrix) {
                    cfg.matrix_scopes = vec![match scope {
                        ScopeArg::All => MatrixScope::All,
                        ScopeArg::Top => MatrixScope::Top,
                    }];
                }
            }
            if let Some(k) = ports_top {
                cfg.top_ports = k;
            }
            if let Some(n) = limit {
                cfg.graph_limit = n;
            }
            if drop_self_loops {
                cfg.self_loops = false;
            }
            if let Some(n) = normalize {
                cfg.normalization = match n {
                    NormalizeArg::Row => Normalization::Row,
                    NormalizeArg::Global => Normalization::Global,
                };
            }
            let summary = pipeline(&cfg)?;
            print_done(&summary);
            Ok(())
        }
        Command::Series {
            input,
            resolution,
            ports_top,
        } => {
            apply_input(&mut cfg, input);
            cfg.stages = only(&[StageArg::Series]);
            if !resolution.is_empty() {
                cfg.resolutions = resolution;
            }
            if let Some(k) = ports_top {
                cfg.series_ports = k;
            }
            let summary = pipeline(&cfg)?;
            print_done(&summary);
            Ok(())
        }
        Command::Forecast(args) => forecast(&cfg, args),
        Command::Synth { spec } => synth(&cfg, spec.as_deref(), seed_flag),
        Command::Run { input, stages } => {
            if !input.is_empty() {
                cfg.input = input;
            }
            if !stages.is_empty() {
                cfg.stages = only(&stages);
            }
            let summary = pipeline(&cfg)?;
            print_done(&summary);
            Ok(())
        }
    }
}

fn apply_input(cfg: &mut RunConfig, args: InputArgs) {
    if !args.input.is_empty() {
        cfg.input = args.input;
    }
    if args.geodb.is_some() {
        cfg.geodb = args.geodb;
    }
    if let Some(p) = args.syn_ack_policy {
        cfg.syn_ack = match p {
            SynAckArg::Exclude => SynAckPolicy::Exclude,
            SynAckArg::Include => SynAckPolicy::Include,
        };
    }
    cfg.skip_invalid |= args.skip_invalid;
}

fn apply_probers(cfg: &mut RunConfig, args: ProberArgs) {
    if let Some(t) = args.threshold {
        cfg.prober_threshold = t;
    }
    if let Some(s) = args.rate_span {
        cfg.rate_span = match s {
            RateSpanArg::Capture => RateSpan::Capture,
            RateSpanArg::Active => RateSpan::Active,
        };
    }
}

fn only(stages: &[StageArg]) -> darkprobe::pipeline::StageSet {
    darkprobe::pipeline::StageSet {
        stats: stages.contains(&StageArg::Stats),
        graphs: stages.contains(&StageArg::Graphs),
        series: stages.contains(&StageArg::Series) || stages.contains(&StageArg::Forecast),
        forecast: stages.contains(&StageArg::Forecast),
    }
}

fn pipeline(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    if cfg.input.is_empty() && cfg.synth.is_empty() {
        return Err(CliError::Usage("no input files (pass them as arguments or set `input` in --config)".into()));
    }
    Ok(run_pipeline(cfg)?)
}

fn print_done(summary: &RunSummary) {
    println!(
        "{} events, {} files written to {}",
        summary.events,
        summary.manifest.artifacts.len(),
        summary.out_dir.display()
    );
}

fn print_stats(summary: &RunSummary, top: usize) -> Result<(), CliError> {
    print_done(summary);
    let path = summary.out_dir.join("ports.csv");
    if let Ok(text) = fs::read_to_string(&path) {
        for line in text.lines().take(top + 1) {
            println!("{line}");
        }
    }
    Ok(())
}

fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.input.is_empty() {
        return Err(CliError::Usage("no input files".into()));
    }
    let mut bundle = Bundle::create(&cfg.out_dir, cfg.format)?;
    let mut stats = IngestStats::default();
    let mut failure = None;
    bundle.write_with("probes.csv", |w| {
        writeln!(w, "timestamp,src_ip,dst_port")?;
        for path in &cfg.input {
            let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            for item in RecordReader::new(BufReader::new(file)) {
                stats.lines += 1;
                let rec = match item {
                    Ok(rec) => rec,
                    Err(IngestError::Parse(e)) if cfg.skip_invalid => {
                        log::debug!("{}: skipped {e}", path.display());
                        stats.skipped_invalid += 1;
                        continue;
                    }
                    Err(e) => {
                        failure = Some(format!("{}: {e}", path.display()));
                        return Ok(());
                    }
                };
                stats.records += 1;
                if cfg.syn_ack.accepts(rec.flags) {
                    stats.probes += 1;
                    writeln!(w, "{},{},{}", rec.timestamp, rec.src_ip, rec.dst_port)?;
                }
            }
        }
        Ok(())
    })?;
    let mut manifest = Manifest {
        complete: failure.is_none(),
        stages: BTreeMap::from([(Stage::Ingest, failure.clone().map_or("ok".into(), |f| format!("failed: {f}")))]),
        warnings: Vec::new(),
        ingest: Some(IngestSummary::from(stats)),
        artifacts: Vec::new(),
    };
    if stats.probes == 0 && failure.is_none() {
        log::warn!("no events");
        manifest.warnings.push("no events: outputs are empty".into());
    }
    bundle.finish(&mut manifest)?;
    if let Some(f) = failure {
        return Err(CliError::Data(f));
    }
    println!("{}", serde_json::to_string(&manifest.ingest).expect("plain struct serializes"));
    Ok(())
}

fn synth(cfg: &RunConfig, spec: Option<&Path>, seed_flag: Option<u64>) -> Result<(), CliError> {
    let mut synth_cfg = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                SynthConfig::from_toml(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None if !cfg.synth.is_empty() => SynthConfig {
            seed: cfg.seed,
            generators: cfg.synth.clone(),
        },
        None => return Err(CliError::Usage("no generators (pass --spec or set `synth` in --config)".into())),
    };
    if let Some(seed) = seed_flag {
        synth_cfg.seed = seed;
    }
    let out = generate(&synth_cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut bundle = Bundle::create(&cfg.out_dir, OutputFormat::Csv)?;
    if !out.records.is_empty() {
        bundle.write_with("packets.csv", |w| {
            writeln!(w, "{CSV_HEADER}")?;
            for r in &out.records {
                writeln!(w, "{r}")?;
            }
            Ok(())
        })?;
    }
    for (i, table) in out.series.iter().enumerate() {
        bundle.write(&format!("series_{i}.csv"), table.to_csv().as_bytes())?;
    }
    let mut manifest = Manifest {
        complete: true,
        stages: BTreeMap::new(),
        warnings: Vec::new(),
        ingest: None,
        artifacts: Vec::new(),
    };
    let artifacts = bundle.finish(&mut manifest)?;
    println!(
        "{} records, {} series tables, {} files written to {}",
        out.records.len(),
        out.series.len(),
        artifacts.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn forecast(cfg: &RunConfig, args: ForecastArgs) -> Result<(), CliError> {
    let file = File::open(&args.series).map_err(|e| CliError::Data(format!("{}: {e}", args.series.display())))?;
    let mut table = read_series_csv(BufReader::new(file)).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(res) = args.resolution {
        if table.resolution != Some(res) {
            table = table.resample(res).map_err(|e| CliError::Data(e.to_string()))?;
        }
    }
    let target = table
        .port_index(args.target_port)
        .ok_or_else(|| CliError::Usage(format!("port {} is not a column of {}", args.target_port, args.series.display())))?;
    if args.model == ModelArg::Ar && (args.select_features || args.reselect_every.is_some()) {
        return Err(CliError::Usage("--select-features and --reselect-every need --model var".into()));
    }

    let mut grid = cfg.grid;
    if let Some(p) = args.p_max {
        grid.p_max = p;
    }
    let data = &table.columns;
    let len = table.len();
    let k = args.candidates.unwrap_or(cfg.top_ports).min(table.ports.len());
    let candidates: Vec<usize> = (0..k).collect();
    let mut features = vec![target];
    features.extend(candidates.iter().copied().filter(|&j| j != target));
    let var_opts = RollingOptions {
        stride: grid.stride,
        ..RollingOptions::for_kind(ModelKind::Var)
    };
    let resolution = table.resolution.unwrap_or(Resolution::H1);

    let mut bundle = Bundle::create(&cfg.out_dir, cfg.format)?;
    let (report, row) = if args.grid_search {
        if args.p.is_some() || args.window.is_some() {
            return Err(CliError::Usage("--p/--window and --grid-search are exclusive".into()));
        }
        if args.model == ModelArg::Var && args.select_features {
            let pf = evaluate_port(
                data,
                &table.ports,
                target,
                &candidates,
                resolution,
                &grid,
                &cfg.selection,
                args.reselect_every,
            )?;
            (pf.var, pf.row)
        } else {
            let (kind, feats) = match args.model {
                ModelArg::Ar => (ModelKind::Ar, &[][..]),
                ModelArg::Var => (ModelKind::Var, &features[..]),
            };
            let g = grid_search(data, target, kind, feats, &grid)?;
            bundle.table("grid", &g.cells, || {
                let mut s = String::from("p,window,r2\n");
                for c in &g.cells {
                    s.push_str(&format!("{},{},{}\n", c.params.p, c.params.window, c.r2));
                }
                s
            })?;
            let row = single_row(&table, &g.report, len);
            (g.report, row)
        }
    } else {
        let (Some(p), Some(window)) = (args.p, args.window) else {
            return Err(CliError::Usage("--p and --window are required without --grid-search".into()));
        };
        let params = DesignParams::new(p, window)?;
        let span = if args.full_span { window..len } else { validation_span(len, &grid) };
        if span.start < window {
            return Err(CliError::Data(format!(
                "window {window} is longer than the {} buckets before the evaluation span (use a smaller --window or --full-span)",
                span.start
            )));
        }
        let report = match (args.model, args.select_features) {
            (ModelArg::Ar, _) => rolling_forecast(data, target, ModelKind::Ar, params, &[], span, RollingOptions::default())?,
            (ModelArg::Var, true) => {
                var_forecast_with_selection(data, target, params, span, &cfg.selection, args.reselect_every, var_opts)?.0
            }
            (ModelArg::Var, false) => rolling_forecast(data, target, ModelKind::Var, params, &features, span, var_opts)?,
        };
        let row = single_row(&table, &report, len);
        (report, row)
    };

    let mut report = report;
    report.target_port = Some(args.target_port);
    report.resolution = Some(resolution);
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    bundle.write("report.json", json.as_bytes())?;
    bundle.write("predictions.csv", report::predictions_csv(&report, &table.bucket_starts).as_bytes())?;
    let rows = [row];
    bundle.table("summary", &rows, || report::forecast_summary_csv(&rows))?;
    let mut manifest = Manifest {
        complete: true,
        stages: BTreeMap::from([(Stage::Forecast, "ok".to_string())]),
        warnings: Vec::new(),
        ingest: None,
        artifacts: Vec::new(),
    };
    bundle.finish(&mut manifest)?;
    println!(
        "port {} at {}: {} p={} N={} R²={:.4} over {} predictions",
        args.target_port,
        resolution,
        match report.kind {
            ModelKind::Ar => "AR",
            ModelKind::Var => "VAR",
        },
        report.params.p,
        report.params.window,
        report.r2,
        report.predictions.len()
    );
    Ok(())
}

/// Summary row for a single model run.
fn single_row(table: &SeriesTable, report: &EvalReport, len: usize) -> ForecastRow {
    let mut row = ForecastRow::empty(table.ports[report.target], table.resolution.unwrap_or(Resolution::H1), len, "ok");
    row.p = Some(report.params.p);
    row.window = Some(report.params.window);
    match report.kind {
        ModelKind::Ar => row.r2_ar = Some(report.r2),
        ModelKind::Var => row.r2_var = Some(report.r2),
    }
    row.var_ports = report.features.iter().map(|&j| table.ports[j]).collect();
    row.degenerate_fits = report.degenerate_fits;
    row
}
