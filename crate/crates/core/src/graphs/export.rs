use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{TransitionGraph, TransitionMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(format!("unknown graph format {other:?}")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    port: u16,
    hits: u64,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    from: u16,
    to: u16,
    count: u64,
    probability: f64,
}

/// Wire form of a [`TransitionGraph`]; JSON objects cannot key on tuples.
#[derive(Serialize, Deserialize)]
pub(super) struct GraphJson {
    src_ip: Ipv4Addr,
    nodes: Vec<NodeJson>,
    edges: Vec<EdgeJson>,
}

impl From<&TransitionGraph> for GraphJson {
    fn from(g: &TransitionGraph) -> Self {
        GraphJson {
            src_ip: g.src_ip,
            nodes: g.nodes.iter().map(|(&port, &hits)| NodeJson { port, hits }).collect(),
            edges: g
                .counts
                .iter()
                .map(|(&(from, to), &count)| EdgeJson {
                    from,
                    to,
                    count,
                    probability: g.edges[&(from, to)],
                })
                .collect(),
        }
    }
}

impl From<GraphJson> for TransitionGraph {
    fn from(j: GraphJson) -> Self {
        TransitionGraph {
            src_ip: j.src_ip,
            nodes: j.nodes.into_iter().map(|n| (n.port, n.hits)).collect(),
            counts: j.edges.iter().map(|e| ((e.from, e.to), e.count)).collect(),
            edges: j.edges.iter().map(|e| ((e.from, e.to), e.probability)).collect::<BTreeMap<_, _>>(),
        }
    }
}

impl TransitionGraph {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GraphJson::from(self)).expect("graph JSON is always serializable")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str::<GraphJson>(text).map(Into::into)
    }
}

/// Renders a graph as Graphviz DOT (vertex width grows with hit count, edge
/// labels are probabilities to 3 decimals) or as lossless JSON.
pub fn export_graph(g: &TransitionGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Json => g.to_json(),
        GraphFormat::Dot => to_dot(g),
    }
}

fn to_dot(g: &TransitionGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", g.src_ip);
    let max_hits = g.nodes.values().copied().max().unwrap_or(1) as f64;
    if !g.nodes.is_empty() {
        out.push_str("  node [shape=circle, fixedsize=true];\n");
    }
    for (&port, &hits) in &g.nodes {
        let width = 0.4 + 1.2 * (hits as f64 / max_hits).sqrt();
        let _ = writeln!(out, "  \"{port}\" [label=\"{port}\\n{hits}\", width={width:.3}];");
    }
    for (&(a, b), &p) in &g.edges {
        let _ = writeln!(out, "  \"{a}\" -> \"{b}\" [label=\"{p:.3}\"];");
    }
    out.push_str("}\n");
    out
}

/// CSV with a header row and a first column of port numbers; cells hold
/// probabilities.
pub fn matrix_to_csv(m: &TransitionMatrix) -> String {
    let mut out = String::from("port");
    for p in &m.ports {
        let _ = write!(out, ",{p}");
    }
    out.push('\n');
    for (port, row) in m.ports.iter().zip(&m.probs) {
        let _ = write!(out, "{port}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{Normalization, TransitionOptions};
    use proptest::prelude::*;

    const IP: Ipv4Addr = Ipv4Addr::new(198, 51, 100, 4);

    #[test]
    fn empty_graph_is_valid_dot() {
        let g = TransitionGraph::from_port_sequence(IP, &[], TransitionOptions::default());
        assert_eq!(export_graph(&g, GraphFormat::Dot), "digraph \"198.51.100.4\" {\n}\n");
    }

    #[test]
    fn two_node_dot() {
        let g = TransitionGraph::from_port_sequence(IP, &[22, 80, 80, 22], TransitionOptions { self_loops: false });
        let dot = export_graph(&g, GraphFormat::Dot);
        assert_eq!(dot.matches("label=\"22").count() + dot.matches("label=\"80").count(), 2);
        assert_eq!(dot.matches(" -> ").count(), 2);
        assert!(dot.contains("\"22\" -> \"80\" [label=\"1.000\"]"));
    }

    #[test]
    fn matrix_csv_layout() {
        let m = TransitionMatrix::from_counts(vec![23, 80], vec![vec![1, 3], vec![0, 0]], Normalization::Row);
        assert_eq!(matrix_to_csv(&m), "port,23,80\n23,0.25,0.75\n80,0,0\n");
    }

    proptest! {
        #[test]
        fn json_roundtrip(ports in proptest::collection::vec(0u16..12, 0..100), loops in any::<bool>()) {
            let g = TransitionGraph::from_port_sequence(IP, &ports, TransitionOptions { self_loops: loops });
            let back = TransitionGraph::from_json(&export_graph(&g, GraphFormat::Json)).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
