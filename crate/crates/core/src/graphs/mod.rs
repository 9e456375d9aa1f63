//! Port-transition graphs per prober and aggregated transition matrices.
//!
//! A prober's events, in time order, form a sequence of destination ports.
//! Each consecutive pair `(a, b)` is one transition `a → b`; normalising the
//! counts of each source port gives the probability of probing `b` right
//! after `a`. Time gaps between events play no role.

mod export;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::CoverageCurve;
use crate::ingest::ProbeEvent;

pub use export::{export_graph, matrix_to_csv, GraphFormat};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("no events to build a graph from")]
    Empty,
    #[error("events come from more than one source ({0} and {1})")]
    MixedSources(Ipv4Addr, Ipv4Addr),
    #[error("events are not in time order at index {0}")]
    Unordered(usize),
    #[error("matrix port scope is empty")]
    EmptyScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionOptions {
    /// Count consecutive hits on the same port as a `p → p` transition.
    pub self_loops: bool,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        TransitionOptions { self_loops: true }
    }
}

/// Serialised through [`export_graph`] / [`TransitionGraph::to_json`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionGraph {
    pub src_ip: Ipv4Addr,
    /// Hits per targeted port.
    pub nodes: BTreeMap<u16, u64>,
    /// Raw transition counts.
    pub counts: BTreeMap<(u16, u16), u64>,
    /// Row-normalised transition probabilities.
    pub edges: BTreeMap<(u16, u16), f64>,
}

impl TransitionGraph {
    /// Builds the graph from a port sequence already in time order.
    pub fn from_port_sequence(src_ip: Ipv4Addr, ports: &[u16], opts: TransitionOptions) -> Self {
        let mut nodes = BTreeMap::new();
        for &p in ports {
            *nodes.entry(p).or_insert(0u64) += 1;
        }
        let mut counts = BTreeMap::new();
        for w in ports.windows(2) {
            if w[0] == w[1] && !opts.self_loops {
                continue;
            }
            *counts.entry((w[0], w[1])).or_insert(0u64) += 1;
        }
        let edges = normalize_rows(&counts);
        TransitionGraph {
            src_ip,
            nodes,
            counts,
            edges,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_hits(&self) -> u64 {
        self.nodes.values().sum()
    }

    /// Outgoing probabilities of `port`.
    pub fn row(&self, port: u16) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.edges.range((port, 0)..=(port, u16::MAX)).map(|(&(_, b), &p)| (b, p))
    }
}

fn normalize_rows(counts: &BTreeMap<(u16, u16), u64>) -> BTreeMap<(u16, u16), f64> {
    let mut row_totals: BTreeMap<u16, u64> = BTreeMap::new();
    for (&(a, _), &c) in counts {
        *row_totals.entry(a).or_insert(0) += c;
    }
    counts
        .iter()
        .map(|(&(a, b), &c)| ((a, b), c as f64 / row_totals[&a] as f64))
        .collect()
}

/// Builds the transition graph of one prober.
///
/// `events` must all come from the same source and be sorted by timestamp;
/// equal timestamps keep their given order.
pub fn build_transition_graph(
    events: &[ProbeEvent],
    opts: TransitionOptions,
) -> Result<TransitionGraph, GraphError> {
    let first = events.first().ok_or(GraphError::Empty)?;
    for (i, w) in events.windows(2).enumerate() {
        if w[1].src_ip != first.src_ip {
            return Err(GraphError::MixedSources(first.src_ip, w[1].src_ip));
        }
        if w[1].timestamp < w[0].timestamp {
            return Err(GraphError::Unordered(i + 1));
        }
    }
    let ports: Vec<u16> = events.iter().map(|e| e.dst_port).collect();
    Ok(TransitionGraph::from_port_sequence(first.src_ip, &ports, opts))
}

/// Groups events by source, each group stably sorted by timestamp so that
/// ties keep input order.
pub fn partition_by_prober<'a, I>(events: I) -> BTreeMap<Ipv4Addr, Vec<ProbeEvent>>
where
    I: IntoIterator<Item = &'a ProbeEvent>,
{
    let mut groups: BTreeMap<Ipv4Addr, Vec<ProbeEvent>> = BTreeMap::new();
    for e in events {
        groups.entry(e.src_ip).or_default().push(*e);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    }
    groups
}

/// Empirical CDF of the number of distinct ports per prober: the point for
/// `n` is the fraction of graphs with at most `n` nodes.
pub fn ports_targeted_cdf(graphs: &[TransitionGraph]) -> CoverageCurve {
    node_count_cdf(graphs.iter().map(TransitionGraph::node_count))
}

pub(crate) fn node_count_cdf<I: IntoIterator<Item = usize>>(node_counts: I) -> CoverageCurve {
    let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
    let mut total = 0u64;
    for n in node_counts {
        *hist.entry(n).or_insert(0) += 1;
        total += 1;
    }
    let Some(&max) = hist.keys().next_back() else {
        return CoverageCurve { points: Vec::new() };
    };
    let mut running = 0u64;
    let points = (1..=max)
        .map(|n| {
            running += hist.get(&n).copied().unwrap_or(0);
            (n, running as f64 / total as f64)
        })
        .collect();
    CoverageCurve { points }
}

/// Which probers feed an aggregated matrix.
#[derive(Debug, Clone)]
pub enum ProberScope {
    All,
    Only(HashSet<Ipv4Addr>),
}

impl ProberScope {
    pub fn contains(&self, ip: &Ipv4Addr) -> bool {
        match self {
            ProberScope::All => true,
            ProberScope::Only(set) => set.contains(ip),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Each row is a conditional next-port distribution.
    #[default]
    Row,
    /// Every cell divided by the total number of in-scope transitions.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub ports: Vec<u16>,
    pub counts: Vec<Vec<u64>>,
    pub probs: Vec<Vec<f64>>,
    pub normalization: Normalization,
}

impl TransitionMatrix {
    pub fn from_counts(ports: Vec<u16>, counts: Vec<Vec<u64>>, normalization: Normalization) -> Self {
        let probs = match normalization {
            Normalization::Row => counts
                .iter()
                .map(|row| {
                    let s: u64 = row.iter().sum();
                    row.iter()
                        .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                        .collect()
                })
                .collect(),
            Normalization::Global => {
                let s: u64 = counts.iter().flatten().sum();
                counts
                    .iter()
                    .map(|row| row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect())
                    .collect()
            }
        };
        TransitionMatrix {
            ports,
            counts,
            probs,
            normalization,
        }
    }

    pub fn total_transitions(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn index_of(&self, port: u16) -> Option<usize> {
        self.ports.iter().position(|&p| p == port)
    }

    pub fn prob(&self, from: u16, to: u16) -> Option<f64> {
        Some(self.probs[self.index_of(from)?][self.index_of(to)?])
    }
}

/// Adds one prober's in-scope transitions to `counts`. Pairs where either
/// port is outside `index` are dropped, not bridged.
fn accumulate_pairs(
    ports: impl Iterator<Item = u16>,
    index: &HashMap<u16, usize>,
    opts: TransitionOptions,
    counts: &mut [Vec<u64>],
) {
    let mut prev: Option<u16> = None;
    for p in ports {
        if let Some(a) = prev {
            if a != p || opts.self_loops {
                if let (Some(&i), Some(&j)) = (index.get(&a), index.get(&p)) {
                    counts[i][j] += 1;
                }
            }
        }
        prev = Some(p);
    }
}

/// Aggregates the transitions of every prober in `scope` over the port set
/// `ports` (kept in the given order).
pub fn aggregate_transition_matrix<'a, I>(
    events: I,
    scope: &ProberScope,
    ports: &[u16],
    opts: TransitionOptions,
    normalization: Normalization,
) -> Result<TransitionMatrix, GraphError>
where
    I: IntoIterator<Item = &'a ProbeEvent>,
{
    let groups = partition_by_prober(events.into_iter().filter(|e| scope.contains(&e.src_ip)));
    aggregate_partitioned(&groups, ports, opts, normalization)
}

/// Same as [`aggregate_transition_matrix`] over already partitioned events.
pub fn aggregate_partitioned(
    groups: &BTreeMap<Ipv4Addr, Vec<ProbeEvent>>,
    ports: &[u16],
    opts: TransitionOptions,
    normalization: Normalization,
) -> Result<TransitionMatrix, GraphError> {
    if ports.is_empty() {
        return Err(GraphError::EmptyScope);
    }
    let index: HashMap<u16, usize> = ports.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let k = ports.len();
    let mut counts = vec![vec![0u64; k]; k];
    for events in groups.values() {
        accumulate_pairs(events.iter().map(|e| e.dst_port), &index, opts, &mut counts);
    }
    Ok(TransitionMatrix::from_counts(ports.to_vec(), counts, normalization))
}
