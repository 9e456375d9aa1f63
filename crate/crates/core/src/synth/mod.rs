//! Seeded synthetic data: AR/VAR processes with known weights, Zipf-ranked
//! port traffic, Markov-chain probers and count traffic driven by a VAR.
//!
//! Every generator draws from its own [`SplitMix64`] stream, so the same
//! spec and seed always give the same output. Timestamps are kept as whole
//! microseconds internally, which keeps them exactly representable in the
//! canonical CSV.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod rng;

use std::net::Ipv4Addr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PacketRecord, ProbeEvent, TcpFlags};
use crate::timeseries::{Resolution, SeriesTable};

pub use rng::{inverse_normal_cdf, SplitMix64};

/// 2020-01-01T00:00:00Z.
pub const DEFAULT_START: f64 = 1_577_836_800.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("non-stationary coefficients (spectral radius {radius:.6}) in regime starting at t = {t}")]
    NonStationary { t: usize, radius: f64 },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SynthError> {
    Err(SynthError::Invalid(msg.into()))
}

/// Innovation standard deviation, shared or per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StdDev {
    Shared(f64),
    PerSeries(Vec<f64>),
}

impl StdDev {
    fn expand(&self, d: usize) -> Result<Vec<f64>, SynthError> {
        let v = match self {
            StdDev::Shared(s) => vec![*s; d],
            StdDev::PerSeries(v) if v.len() == d => v.clone(),
            StdDev::PerSeries(v) => return invalid(format!("{} innovation stds for {d} series", v.len())),
        };
        if v.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return invalid("innovation std must be finite and non-negative");
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArRegime {
    /// First output index governed by `weights`.
    pub t: usize,
    pub weights: Vec<f64>,
}

/// `x(t) = w0 + Σ_h w_h·x(t−h) + ε(t)`, `ε ~ N(0, innovation_std²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    /// `[w0, w1, …, wp]`.
    pub weights: Vec<f64>,
    #[serde(default)]
    pub innovation_std: f64,
    pub length: usize,
    /// The `p` values preceding the first generated sample, oldest first.
    /// Defaults to the process mean of the first regime.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
    #[serde(default)]
    pub regime_switches: Vec<ArRegime>,
    /// Discarded leading samples; defaults to `10·p`.
    #[serde(default)]
    pub burn_in: Option<usize>,
}

/// Weights of one VAR regime. `lags[h][i][j]` multiplies `x_j(t−h−1)` in
/// the equation for `x_i(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCoefficients {
    pub intercepts: Vec<f64>,
    pub lags: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarRegime {
    pub t: usize,
    #[serde(flatten)]
    pub coefficients: VarCoefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub coefficients: VarCoefficients,
    pub innovation_std: StdDev,
    pub length: usize,
    /// Per series, the `p` values preceding the output, oldest first.
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub regime_switches: Vec<VarRegime>,
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// Port labels for series output; defaults to `1..=d`.
    #[serde(default)]
    pub ports: Option<Vec<u16>>,
}

/// Probes spread over `ports` with Zipf-ranked popularity: the port of rank
/// `r` (1-based, list order) has weight `r^(−exponent)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZipfTrafficSpec {
    pub seed: Option<u64>,
    /// Ports in rank order; when empty, ports `1..=n_ports`.
    pub ports: Vec<u16>,
    pub n_ports: usize,
    pub exponent: f64,
    pub events: usize,
    pub start: f64,
    pub duration_secs: f64,
    /// Size of the source address pool, starting at `src_base`.
    pub sources: u32,
    /// Zipf exponent of source activity; 0 makes all sources equally busy.
    pub source_exponent: f64,
    pub src_base: Ipv4Addr,
    pub dst_base: Ipv4Addr,
    pub dst_hosts: u32,
    /// Share of records that are not probes (SYN-ACK backscatter or RST).
    pub non_syn_fraction: f64,
}

impl Default for ZipfTrafficSpec {
    fn default() -> Self {
        ZipfTrafficSpec {
            seed: None,
            ports: Vec::new(),
            n_ports: 2000,
            exponent: 1.2,
            events: 100_000,
            start: DEFAULT_START,
            duration_secs: 7.0 * 86_400.0,
            sources: 1000,
            source_exponent: 1.0,
            src_base: Ipv4Addr::new(198, 18, 0, 1),
            dst_base: Ipv4Addr::new(100, 64, 0, 0),
            dst_hosts: 65_536,
            non_syn_fraction: 0.0,
        }
    }
}

/// One prober walking a Markov chain over `ports`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovProberSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    pub src_ip: Ipv4Addr,
    pub ports: Vec<u16>,
    /// Row-stochastic; `matrix[a][b]` is the probability of `ports[b]`
    /// right after `ports[a]`.
    pub matrix: Vec<Vec<f64>>,
    /// Defaults to `ports[0]`.
    #[serde(default)]
    pub start_port: Option<u16>,
    pub events: usize,
    #[serde(default = "default_start")]
    pub start: f64,
    /// Gaps are uniform on `[0.5, 1.5)·mean_gap_secs`.
    #[serde(default = "default_gap")]
    pub mean_gap_secs: f64,
}

/// Probes whose per-bucket counts follow a VAR process: bucket `t` of port
/// `ports[i]` receives `round(max(0, offset + x_i(t)))` probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTrafficSpec {
    #[serde(default)]
    pub seed: Option<u64>,
    pub process: VarSpec,
    pub ports: Vec<u16>,
    #[serde(default = "default_resolution")]
    pub resolution: Resolution,
    #[serde(default = "default_start")]
    pub start: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "default_sources")]
    pub sources: u32,
    #[serde(default = "default_src_base")]
    pub src_base: Ipv4Addr,
}

fn default_start() -> f64 {
    DEFAULT_START
}
fn default_gap() -> f64 {
    1.0
}
fn default_resolution() -> Resolution {
    Resolution::H1
}
fn default_sources() -> u32 {
    50
}
fn default_src_base() -> Ipv4Addr {
    Ipv4Addr::new(198, 51, 100, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    Ar(ArSpec),
    Var(VarSpec),
    ZipfTraffic(ZipfTrafficSpec),
    MarkovProber(MarkovProberSpec),
    RateTraffic(RateTrafficSpec),
}

impl SyntheticSpec {
    fn seed(&self) -> Option<u64> {
        match self {
            SyntheticSpec::Ar(s) => s.seed,
            SyntheticSpec::Var(s) => s.seed,
            SyntheticSpec::ZipfTraffic(s) => s.seed,
            SyntheticSpec::MarkovProber(s) => s.seed,
            SyntheticSpec::RateTraffic(s) => s.seed,
        }
    }

    fn with_seed(mut self, seed: u64) -> Self {
        let slot = match &mut self {
            SyntheticSpec::Ar(s) => &mut s.seed,
            SyntheticSpec::Var(s) => &mut s.seed,
            SyntheticSpec::ZipfTraffic(s) => &mut s.seed,
            SyntheticSpec::MarkovProber(s) => &mut s.seed,
            SyntheticSpec::RateTraffic(s) => &mut s.seed,
        };
        *slot = Some(seed);
        self
    }
}

/// A list of generators sharing one seed. Generator `i` without its own
/// seed draws from substream `i` of `seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub generators: Vec<SyntheticSpec>,
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthOutput {
    /// Packet records of all traffic generators, ordered by timestamp.
    pub records: Vec<PacketRecord>,
    /// One table per AR/VAR generator, in config order.
    pub series: Vec<SeriesTable>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    let mut out = SynthOutput::default();
    for (i, spec) in cfg.generators.iter().enumerate() {
        let seed = spec.seed().unwrap_or_else(|| SplitMix64::substream(cfg.seed, i as u64).next_u64());
        match spec.clone().with_seed(seed) {
            SyntheticSpec::Ar(s) => {
                let x = gen_ar(&s)?;
                out.series.push(series_table(vec![x], &[1], DEFAULT_START as i64, Resolution::H1));
            }
            SyntheticSpec::Var(s) => {
                let xs = gen_var(&s)?;
                let ports: Vec<u16> = match &s.ports {
                    Some(p) if p.len() == xs.len() => p.clone(),
                    Some(p) => return invalid(format!("{} port labels for {} series", p.len(), xs.len())),
                    None => (1..=xs.len() as u16).collect(),
                };
                out.series.push(series_table(xs, &ports, DEFAULT_START as i64, Resolution::H1));
            }
            SyntheticSpec::ZipfTraffic(s) => out.records.extend(zipf_traffic(&s)?),
            SyntheticSpec::MarkovProber(s) => {
                out.records.extend(gen_markov_prober(&s)?.iter().map(syn_record));
            }
            SyntheticSpec::RateTraffic(s) => out.records.extend(gen_rate_traffic(&s)?),
        }
    }
    out.records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

fn series_table(columns: Vec<Vec<f64>>, ports: &[u16], start: i64, res: Resolution) -> SeriesTable {
    let len = columns.first().map_or(0, Vec::len);
    SeriesTable {
        ports: ports.to_vec(),
        bucket_starts: (0..len as i64).map(|t| start + t * res.seconds()).collect(),
        resolution: Some(res),
        columns,
    }
}

/// A SYN record for a probe event, with a fixed destination host.
pub fn syn_record(e: &ProbeEvent) -> PacketRecord {
    PacketRecord {
        timestamp: e.timestamp,
        src_ip: e.src_ip,
        dst_ip: Ipv4Addr::new(100, 64, 0, 1),
        src_port: 40_000,
        dst_port: e.dst_port,
        flags: TcpFlags::SYN,
    }
}

struct Regime {
    start: usize,
    intercepts: Vec<f64>,
    /// `lags[h][i][j]`.
    lags: Vec<Vec<Vec<f64>>>,
}

impl VarCoefficients {
    fn validate(&self) -> Result<(usize, usize), SynthError> {
        let d = self.intercepts.len();
        let p = self.lags.len();
        if d == 0 {
            return invalid("no series");
        }
        if p == 0 {
            return invalid("at least one lag is required");
        }
        for (h, a) in self.lags.iter().enumerate() {
            if a.len() != d || a.iter().any(|row| row.len() != d) {
                return invalid(format!("lag {} is not a {d}×{d} matrix", h + 1));
            }
        }
        let all = self.intercepts.iter().chain(self.lags.iter().flatten().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return invalid("non-finite coefficient");
        }
        Ok((d, p))
    }

    /// Largest eigenvalue modulus of the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let d = self.intercepts.len();
        let p = self.lags.len();
        let n = d * p;
        let mut c = DMatrix::<f64>::zeros(n, n);
        for (h, a) in self.lags.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    c[(i, h * d + j)] = a[i][j];
                }
            }
        }
        for k in d..n {
            c[(k, k - d)] = 1.0;
        }
        c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `(I − Σ A_h)⁻¹ c`, or zeros when the sum has a unit root.
    fn mean(&self) -> Vec<f64> {
        let d = self.intercepts.len();
        let mut m = DMatrix::<f64>::identity(d, d);
        for a in &self.lags {
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] -= a[i][j];
                }
            }
        }
        let c = DVector::from_column_slice(&self.intercepts);
        match m.lu().solve(&c) {
            Some(mu) if mu.iter().all(|v| v.is_finite()) => mu.iter().copied().collect(),
            _ => vec![0.0; d],
        }
    }
}

fn ar_coefficients(weights: &[f64]) -> Result<VarCoefficients, SynthError> {
    if weights.len() < 2 {
        return invalid("AR weights need an intercept and at least one lag");
    }
    Ok(VarCoefficients {
        intercepts: vec![weights[0]],
        lags: weights[1..].iter().map(|&w| vec![vec![w]]).collect(),
    })
}

fn simulate(
    base: &VarCoefficients,
    switches: &[(usize, VarCoefficients)],
    stds: &[f64],
    length: usize,
    initial: Option<&[Vec<f64>]>,
    burn_in: Option<usize>,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SynthError> {
    let (d, p) = base.validate()?;
    let noisy = stds.iter().any(|&s| s > 0.0);
    let check = |t: usize, c: &VarCoefficients| -> Result<(), SynthError> {
        let radius = c.spectral_radius();
        let limit_ok = if noisy { radius < 1.0 } else { radius <= 1.0 + 1e-12 };
        if limit_ok {
            Ok(())
        } else {
            Err(SynthError::NonStationary { t, radius })
        }
    };
    check(0, base)?;
    let mut regimes = vec![Regime {
        start: 0,
        intercepts: base.intercepts.clone(),
        lags: base.lags.clone(),
    }];
    let mut last = 0;
    for (t, c) in switches {
        let (dd, pp) = c.validate()?;
        if dd != d || pp != p {
            return invalid(format!("regime at t = {t} changes the shape from {d} series × {p} lags"));
        }
        if *t <= last {
            return invalid("regime switches must have strictly increasing, positive t");
        }
        check(*t, c)?;
        last = *t;
        regimes.push(Regime {
            start: *t,
            intercepts: c.intercepts.clone(),
            lags: c.lags.clone(),
        });
    }

    let burn = burn_in.unwrap_or(10 * p);
    let total = p + burn + length;
    let mut x: Vec<Vec<f64>> = vec![Vec::with_capacity(total); d];
    match initial {
        Some(init) => {
            if init.len() != d || init.iter().any(|v| v.len() != p) {
                return invalid(format!("initial values must be {p} per series"));
            }
            for (xi, v) in x.iter_mut().zip(init) {
                xi.extend_from_slice(v);
            }
        }
        None => {
            for (xi, mu) in x.iter_mut().zip(base.mean()) {
                xi.resize(p, mu);
            }
        }
    }

    let mut rng = SplitMix64::new(seed);
    let mut regime = 0;
    let mut next = vec![0.0; d];
    for step in 0..burn + length {
        let t_out = step.checked_sub(burn);
        while regime + 1 < regimes.len() && t_out.is_some_and(|t| t >= regimes[regime + 1].start) {
            regime += 1;
        }
        let r = &regimes[regime];
        let now = p + step;
        for i in 0..d {
            let mut v = r.intercepts[i];
            for (h, a) in r.lags.iter().enumerate() {
                for j in 0..d {
                    v += a[i][j] * x[j][now - h - 1];
                }
            }
            next[i] = v + stds[i] * rng.normal();
        }
        for i in 0..d {
            x[i].push(next[i]);
        }
    }
    Ok(x.into_iter().map(|v| v[p + burn..].to_vec()).collect())
}

/// Generates the AR series, `length` samples after the burn-in.
pub fn gen_ar(spec: &ArSpec) -> Result<Vec<f64>, SynthError> {
    let base = ar_coefficients(&spec.weights)?;
    let switches = spec
        .regime_switches
        .iter()
        .map(|r| Ok((r.t, ar_coefficients(&r.weights)?)))
        .collect::<Result<Vec<_>, SynthError>>()?;
    let initial = spec.initial.clone().map(|v| vec![v]);
    let stds = StdDev::Shared(spec.innovation_std).expand(1)?;
    let mut out = simulate(
        &base,
        &switches,
        &stds,
        spec.length,
        initial.as_deref(),
        spec.burn_in,
        spec.seed.unwrap_or(0),
    )?;
    Ok(out.pop().expect("one series"))
}

/// Generates the VAR series, one vector per series.
pub fn gen_var(spec: &VarSpec) -> Result<Vec<Vec<f64>>, SynthError> {
    let (d, _) = spec.coefficients.validate()?;
    let switches: Vec<(usize, VarCoefficients)> =
        spec.regime_switches.iter().map(|r| (r.t, r.coefficients.clone())).collect();
    simulate(
        &spec.coefficients,
        &switches,
        &spec.innovation_std.expand(d)?,
        spec.length,
        spec.initial.as_deref(),
        spec.burn_in,
        spec.seed.unwrap_or(0),
    )
}

/// Normalised Zipf weights `r^(−s) / Σ` for ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        Categorical { cdf }
    }

    fn sample(&self, rng: &mut SplitMix64) -> usize {
        let u = rng.uniform();
        self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1)
    }
}

fn micros(secs: f64) -> i64 {
    (secs * 1e6).round() as i64
}

fn from_micros(us: i64) -> f64 {
    us as f64 / 1e6
}

fn offset_ip(base: Ipv4Addr, k: u32) -> Ipv4Addr {
    Ipv4Addr::from(u32::from(base).wrapping_add(k))
}

/// Streaming Zipf traffic; see [`zipf_traffic`].
pub struct ZipfTraffic {
    spec: ZipfTrafficSpec,
    ports: Vec<u16>,
    port_dist: Categorical,
    source_dist: Categorical,
    rng: SplitMix64,
    start_us: i64,
    i: usize,
}

impl ZipfTraffic {
    pub fn new(spec: &ZipfTrafficSpec) -> Result<Self, SynthError> {
        if !(spec.exponent > 0.0 && spec.exponent.is_finite()) {
            return invalid("Zipf exponent must be positive");
        }
        if !(spec.source_exponent >= 0.0 && spec.source_exponent.is_finite()) {
            return invalid("source exponent must be non-negative");
        }
        let ports: Vec<u16> = if spec.ports.is_empty() {
            if spec.n_ports == 0 || spec.n_ports > 65_535 {
                return invalid("n_ports must be in 1..=65535");
            }
            (1..=spec.n_ports as u16).collect()
        } else {
            spec.ports.clone()
        };
        if spec.sources == 0 || spec.dst_hosts == 0 {
            return invalid("source and destination pools must be non-empty");
        }
        if !(spec.start > 0.0) || !(spec.duration_secs > 0.0) || !spec.start.is_finite() || !spec.duration_secs.is_finite() {
            return invalid("start and duration must be positive");
        }
        if !(0.0..=1.0).contains(&spec.non_syn_fraction) {
            return invalid("non_syn_fraction must be in [0, 1]");
        }
        Ok(ZipfTraffic {
            port_dist: Categorical::new(&zipf_weights(ports.len(), spec.exponent)),
            source_dist: Categorical::new(&zipf_weights(spec.sources as usize, spec.source_exponent)),
            ports,
            rng: SplitMix64::new(spec.seed.unwrap_or(0)),
            start_us: micros(spec.start),
            spec: spec.clone(),
            i: 0,
        })
    }
}

impl Iterator for ZipfTraffic {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        if self.i >= self.spec.events {
            return None;
        }
        // Stratified: event i lands uniformly inside the i-th of `events`
        // equal slices, so timestamps never decrease.
        let slice = self.spec.duration_secs / self.spec.events as f64;
        let t = micros((self.i as f64 + self.rng.uniform()) * slice);
        let port = self.ports[self.port_dist.sample(&mut self.rng)];
        let src = self.source_dist.sample(&mut self.rng) as u32;
        let dst = self.rng.below(self.spec.dst_hosts as u64) as u32;
        let src_port = 1024 + self.rng.below(64_512) as u16;
        let flags = if self.spec.non_syn_fraction > 0.0 && self.rng.uniform() < self.spec.non_syn_fraction {
            if self.rng.below(2) == 0 {
                TcpFlags::SYN | TcpFlags::ACK
            } else {
                TcpFlags::RST
            }
        } else {
            TcpFlags::SYN
        };
        self.i += 1;
        Some(PacketRecord {
            timestamp: from_micros(self.start_us + t),
            src_ip: offset_ip(self.spec.src_base, src),
            dst_ip: offset_ip(self.spec.dst_base, dst),
            src_port,
            dst_port: port,
            flags,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.events - self.i;
        (left, Some(left))
    }
}

/// Zipf-ranked port traffic with uniform (stratified) timestamps over
/// `[start, start + duration_secs)`.
pub fn zipf_traffic(spec: &ZipfTrafficSpec) -> Result<ZipfTraffic, SynthError> {
    ZipfTraffic::new(spec)
}

/// The probe events of [`zipf_traffic`], keeping only SYN records.
pub fn gen_zipf_traffic(spec: &ZipfTrafficSpec) -> Result<Vec<ProbeEvent>, SynthError> {
    Ok(zipf_traffic(spec)?
        .filter(|r| r.flags == TcpFlags::SYN)
        .map(|r| ProbeEvent::from(&r))
        .collect())
}

fn validate_chain(spec: &MarkovProberSpec) -> Result<usize, SynthError> {
    let n = spec.ports.len();
    if n == 0 {
        return invalid("no ports");
    }
    let mut seen = spec.ports.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != n {
        return invalid("duplicate port in chain");
    }
    if spec.matrix.len() != n || spec.matrix.iter().any(|r| r.len() != n) {
        return invalid(format!("transition matrix must be {n}×{n}"));
    }
    for (a, row) in spec.matrix.iter().enumerate() {
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return invalid(format!("row {a} has a negative or non-finite entry"));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return invalid(format!("row {a} sums to {s}, not 1"));
        }
    }
    if !(spec.mean_gap_secs > 0.0) || !(spec.start > 0.0) {
        return invalid("start and mean gap must be positive");
    }
    match spec.start_port {
        None => Ok(0),
        Some(p) => spec
            .ports
            .iter()
            .position(|&q| q == p)
            .ok_or_else(|| SynthError::Invalid(format!("start port {p} is not in the chain"))),
    }
}

/// Samples the prober's port sequence; timestamps strictly increase.
pub fn gen_markov_prober(spec: &MarkovProberSpec) -> Result<Vec<ProbeEvent>, SynthError> {
    let mut state = validate_chain(spec)?;
    let rows: Vec<Categorical> = spec.matrix.iter().map(|r| Categorical::new(r)).collect();
    let mut rng = SplitMix64::new(spec.seed.unwrap_or(0));
    let mut t = micros(spec.start);
    let mut out = Vec::with_capacity(spec.events);
    for i in 0..spec.events {
        if i > 0 {
            state = rows[state].sample(&mut rng);
            t += micros(spec.mean_gap_secs * (0.5 + rng.uniform())).max(1);
        }
        out.push(ProbeEvent {
            timestamp: from_micros(t),
            src_ip: spec.src_ip,
            dst_port: spec.ports[state],
        });
    }
    Ok(out)
}

/// SYN records whose per-bucket counts follow the spec's VAR process.
pub fn gen_rate_traffic(spec: &RateTrafficSpec) -> Result<Vec<PacketRecord>, SynthError> {
    let seed = spec.seed.unwrap_or(0);
    let mut process = spec.process.clone();
    process.seed = Some(process.seed.unwrap_or_else(|| SplitMix64::substream(seed, 0).next_u64()));
    let xs = gen_var(&process)?;
    if xs.len() != spec.ports.len() {
        return invalid(format!("{} ports for {} series", spec.ports.len(), xs.len()));
    }
    if spec.sources == 0 || !(spec.start > 0.0) {
        return invalid("sources and start must be positive");
    }
    let mut rng = SplitMix64::substream(seed, 1);
    let width = spec.resolution.seconds() * 1_000_000;
    let start = micros(spec.start);
    let mut out = Vec::new();
    let mut bucket = Vec::new();
    for t in 0..xs[0].len() {
        bucket.clear();
        for (i, x) in xs.iter().enumerate() {
            let n = (spec.offset + x[t]).max(0.0).round() as u64;
            for _ in 0..n {
                let at = start + t as i64 * width + rng.below(width as u64) as i64;
                let src = rng.below(spec.sources as u64) as u32;
                bucket.push(PacketRecord {
                    timestamp: from_micros(at),
                    src_ip: offset_ip(spec.src_base, src),
                    dst_ip: Ipv4Addr::new(100, 64, 0, 1),
                    src_port: 1024 + rng.below(64_512) as u16,
                    dst_port: spec.ports[i],
                    flags: TcpFlags::SYN,
                });
            }
        }
        bucket.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out.append(&mut bucket);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar(weights: &[f64], std: f64, length: usize, seed: u64) -> ArSpec {
        ArSpec {
            seed: Some(seed),
            weights: weights.to_vec(),
            innovation_std: std,
            length,
            initial: None,
            regime_switches: Vec::new(),
            burn_in: None,
        }
    }

    #[test]
    fn deterministic_ar_examples() {
        let x = gen_ar(&ar(&[3.5, 0.0], 0.0, 20, 1)).unwrap();
        assert!(x.iter().all(|&v| v == 3.5));
        let spec = ArSpec {
            initial: Some(vec![5.0]),
            ..ar(&[0.0, 1.0], 0.0, 30, 1)
        };
        assert!(gen_ar(&spec).unwrap().iter().all(|&v| v == 5.0));
        // A unit root is only tolerated without noise.
        assert!(matches!(
            gen_ar(&ar(&[0.0, 1.0], 1.0, 30, 1)),
            Err(SynthError::NonStationary { .. })
        ));
        assert!(gen_ar(&ar(&[0.0, 1.2], 0.0, 30, 1)).is_err());
    }

    #[test]
    fn same_seed_same_bits() {
        let a = gen_ar(&ar(&[1.0, 0.5, -0.3], 1.0, 500, 9)).unwrap();
        let b = gen_ar(&ar(&[1.0, 0.5, -0.3], 1.0, 500, 9)).unwrap();
        let c = gen_ar(&ar(&[1.0, 0.5, -0.3], 1.0, 500, 10)).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, c);
    }

    #[test]
    fn ar1_lag_one_autocorrelation() {
        let x = gen_ar(&ar(&[0.0, 0.5], 1.0, 100_000, 4)).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        // Theoretical ACF φ^1; sampling error ≈ sqrt((1 − φ²)/n) ≈ 0.003.
        assert!((c1 / c0 - 0.5).abs() < 0.01, "{}", c1 / c0);
    }

    #[test]
    fn regime_switch_moves_mean_and_variance() {
        // Regime 1: mean 2/(1−0.8) = 10, var 1/(1−0.64) ≈ 2.78.
        // Regime 2: mean 2/(1−0.2) = 2.5, var 1/(1−0.04) ≈ 1.04.
        let spec = ArSpec {
            regime_switches: vec![ArRegime {
                t: 50_000,
                weights: vec![2.0, 0.2],
            }],
            ..ar(&[2.0, 0.8], 1.0, 100_000, 12)
        };
        let x = gen_ar(&spec).unwrap();
        let stats = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            (m, s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64)
        };
        let (m1, v1) = stats(&x[..50_000]);
        let (m2, v2) = stats(&x[50_100..]);
        assert!((m1 - 10.0).abs() < 0.1, "{m1}");
        assert!((v1 - 1.0 / 0.36).abs() < 0.1, "{v1}");
        assert!((m2 - 2.5).abs() < 0.05, "{m2}");
        assert!((v2 - 1.0 / 0.96).abs() < 0.05, "{v2}");
    }

    #[test]
    fn var_spectral_radius() {
        let c = VarCoefficients {
            intercepts: vec![0.0, 0.0],
            lags: vec![vec![vec![0.5, 0.0], vec![0.0, -0.9]]],
        };
        assert!((c.spectral_radius() - 0.9).abs() < 1e-12);
        // AR(2) with roots of z² − z + 0.5: modulus sqrt(0.5).
        let c = ar_coefficients(&[0.0, 1.0, -0.5]).unwrap();
        assert!((c.spectral_radius() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn var_shapes_are_checked() {
        let spec = VarSpec {
            seed: Some(1),
            coefficients: VarCoefficients {
                intercepts: vec![0.0, 0.0],
                lags: vec![vec![vec![0.5, 0.0]]],
            },
            innovation_std: StdDev::Shared(1.0),
            length: 10,
            initial: None,
            regime_switches: Vec::new(),
            burn_in: None,
            ports: None,
        };
        assert!(gen_var(&spec).is_err());
    }

    #[test]
    fn zipf_limits() {
        let single = ZipfTrafficSpec {
            seed: Some(1),
            ports: vec![445],
            events: 1000,
            ..Default::default()
        };
        assert!(gen_zipf_traffic(&single).unwrap().iter().all(|e| e.dst_port == 445));
        let steep = ZipfTrafficSpec {
            seed: Some(1),
            n_ports: 50,
            exponent: 60.0,
            events: 5000,
            ..Default::default()
        };
        let ev = gen_zipf_traffic(&steep).unwrap();
        assert!(ev.iter().all(|e| e.dst_port == 1));
        assert!(gen_zipf_traffic(&ZipfTrafficSpec { exponent: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn zipf_timestamps_are_sorted_and_in_span() {
        let spec = ZipfTrafficSpec {
            seed: Some(2),
            events: 20_000,
            duration_secs: 3600.0,
            non_syn_fraction: 0.1,
            ..Default::default()
        };
        let recs: Vec<PacketRecord> = zipf_traffic(&spec).unwrap().collect();
        assert!(recs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert!(recs.iter().all(|r| r.timestamp >= spec.start && r.timestamp < spec.start + 3600.0));
        let syn = recs.iter().filter(|r| r.flags == TcpFlags::SYN).count();
        assert!((syn as f64 / 20_000.0 - 0.9).abs() < 0.01);
        // Canonical CSV round trip keeps the exact values.
        for r in recs.iter().take(100) {
            let back = crate::ingest::parse_record(&r.to_string(), 1).unwrap();
            assert_eq!(&back, r);
        }
    }

    #[test]
    fn markov_examples() {
        let spec = MarkovProberSpec {
            seed: Some(3),
            src_ip: Ipv4Addr::new(10, 0, 0, 9),
            ports: vec![23, 80],
            matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            start_port: None,
            events: 200,
            start: DEFAULT_START,
            mean_gap_secs: 1.0,
        };
        let ev = gen_markov_prober(&spec).unwrap();
        assert!(ev.iter().all(|e| e.dst_port == 23));
        assert!(ev.windows(2).all(|w| w[0].timestamp < w[1].timestamp));

        let flip = MarkovProberSpec {
            matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            start_port: Some(80),
            ..spec.clone()
        };
        let ev = gen_markov_prober(&flip).unwrap();
        assert!(ev.iter().enumerate().all(|(i, e)| e.dst_port == if i % 2 == 0 { 80 } else { 23 }));

        let bad = MarkovProberSpec {
            matrix: vec![vec![0.5, 0.4], vec![1.0, 0.0]],
            ..spec.clone()
        };
        assert!(gen_markov_prober(&bad).is_err());
        let bad = MarkovProberSpec {
            start_port: Some(22),
            ..spec
        };
        assert!(gen_markov_prober(&bad).is_err());
    }

    #[test]
    fn config_from_toml() {
        let cfg = SynthConfig::from_toml(
            r#"
            seed = 5

            [[generators]]
            kind = "zipf_traffic"
            events = 100
            n_ports = 10

            [[generators]]
            kind = "markov_prober"
            src_ip = "10.1.1.1"
            ports = [22, 23]
            matrix = [[0.5, 0.5], [0.25, 0.75]]
            events = 50

            [[generators]]
            kind = "ar"
            weights = [1.0, 0.5]
            innovation_std = 1.0
            length = 40

            [[generators]]
            kind = "var"
            intercepts = [0.0, 1.0]
            lags = [[[0.1, 0.8], [0.0, 0.3]]]
            innovation_std = [1.0, 0.5]
            length = 30
            ports = [23, 445]
            "#,
        )
        .unwrap();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 150);
        assert!(a.records.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert_eq!(a.series.len(), 2);
        assert_eq!(a.series[1].ports, vec![23, 445]);
        assert_eq!(a.series[1].len(), 30);
    }

    #[test]
    fn rate_traffic_counts_follow_the_process() {
        let spec = RateTrafficSpec {
            seed: Some(8),
            process: VarSpec {
                seed: Some(4),
                coefficients: VarCoefficients {
                    intercepts: vec![5.0],
                    lags: vec![vec![vec![0.5]]],
                },
                innovation_std: StdDev::Shared(0.0),
                length: 24,
                initial: None,
                regime_switches: Vec::new(),
                burn_in: None,
                ports: None,
            },
            ports: vec![23],
            resolution: Resolution::H1,
            start: DEFAULT_START,
            offset: 0.0,
            sources: 3,
            src_base: default_src_base(),
        };
        // Deterministic process at its mean 10: ten probes per hour.
        let recs = gen_rate_traffic(&spec).unwrap();
        assert_eq!(recs.len(), 240);
        for h in 0..24 {
            let lo = DEFAULT_START + 3600.0 * h as f64;
            let n = recs.iter().filter(|r| r.timestamp >= lo && r.timestamp < lo + 3600.0).count();
            assert_eq!(n, 10);
        }
    }
}
