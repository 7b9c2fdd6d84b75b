//! Architecture-as-graph representation consumed by the latency predictor.
//!
//! Nodes are the layers in dataflow order plus one global node. Edges: the
//! dataflow path, a self-loop on every node and an edge from every layer node
//! into the global node. Node features are a 7-way one-hot (six op kinds and
//! the global kind) followed by the layer's z-scored latency.

use serde::{Deserialize, Serialize};

use crate::design_space::{Architecture, OpKind};
use crate::perf::{estimate_cost, mean_std, zscore_normalize, LatencyLut, PerfError, SystemConfig};

pub const ONE_HOT_DIM: usize = 7;
pub const FEATURE_DIM: usize = ONE_HOT_DIM + 1;
pub const GLOBAL_KIND: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchGraph {
    pub node_count: usize,
    /// Directed `(from, to)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_latency_ms: Option<f64>,
}

impl ArchGraph {
    pub fn global_node(&self) -> usize {
        self.node_count - 1
    }

    /// In-neighbour lists (message sources) per node.
    pub fn in_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.node_count];
        for &(from, to) in &self.edges {
            nbrs[to].push(from);
        }
        nbrs
    }
}

/// How per-layer latencies are standardized before entering the features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyNorm {
    /// z-score over this graph's own layer nodes.
    PerGraph,
    /// z-score with fixed statistics, typically fitted on a dataset.
    Fixed { mean: f64, std: f64 },
}

impl LatencyNorm {
    /// Fixed statistics over the pooled per-layer latencies of many
    /// architectures.
    pub fn fit(per_layer: impl IntoIterator<Item = f64>) -> LatencyNorm {
        let all: Vec<f64> = per_layer.into_iter().collect();
        if all.is_empty() {
            return LatencyNorm::Fixed { mean: 0.0, std: 1.0 };
        }
        let (mean, std) = mean_std(&all);
        LatencyNorm::Fixed { mean, std: if std > 0.0 { std } else { 1.0 } }
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        match *self {
            LatencyNorm::PerGraph => zscore_normalize(values),
            LatencyNorm::Fixed { mean, std } => values.iter().map(|v| (v - mean) / std).collect(),
        }
    }
}

pub fn build_graph(arch: &Architecture, sys: &SystemConfig, lut: &LatencyLut) -> Result<ArchGraph, PerfError> {
    build_graph_with(arch, sys, lut, LatencyNorm::PerGraph)
}

pub fn build_graph_with(
    arch: &Architecture,
    sys: &SystemConfig,
    lut: &LatencyLut,
    norm: LatencyNorm,
) -> Result<ArchGraph, PerfError> {
    let report = estimate_cost(arch, sys, lut)?;
    Ok(graph_from_latencies(&arch.ops().collect::<Vec<_>>(), &report.per_layer_ms, norm))
}

/// Graph for an op sequence with known per-layer latencies.
pub fn graph_from_latencies(ops: &[OpKind], per_layer_ms: &[f64], norm: LatencyNorm) -> ArchGraph {
    assert_eq!(ops.len(), per_layer_ms.len());
    assert!(!ops.is_empty());
    let layers = ops.len();
    let node_count = layers + 1;
    let global = layers;

    let mut edges = Vec::with_capacity(3 * layers);
    edges.extend((1..layers).map(|i| (i - 1, i)));
    edges.extend((0..node_count).map(|i| (i, i)));
    edges.extend((0..layers).map(|i| (i, global)));

    let latency = norm.apply(per_layer_ms);
    let mut features: Vec<Vec<f64>> = ops
        .iter()
        .zip(&latency)
        .map(|(op, &z)| {
            let mut f = vec![0.0; FEATURE_DIM];
            f[op.index()] = 1.0;
            f[ONE_HOT_DIM] = z;
            f
        })
        .collect();
    let mut g = vec![0.0; FEATURE_DIM];
    g[GLOBAL_KIND] = 1.0;
    features.push(g);

    ArchGraph { node_count, edges, features, true_latency_ms: None }
}
