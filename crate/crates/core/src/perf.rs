//! System performance models: the per-operation latency table, transfer
//! sizing, sequential end-to-end cost estimation, and on-device energy.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{
    communicate_ships_edges, infer_shapes, placements, Architecture, LayerShape, LayerSpec, OpKind, Placement,
    SpaceConfig,
};
use crate::engine::kernels;
use crate::engine::tensor::Tensor;

/// Fixed per-message cost added to every transfer estimate.
pub const DEFAULT_COMM_OVERHEAD_MS: f64 = 2.0;

/// Bytes of framing charged to each transfer.
pub const FRAMING_OVERHEAD_BYTES: u64 = 64;

#[derive(Debug, thiserror::Error)]
pub enum PerfError {
    #[error("no latency table entry for {0}")]
    MissingEntry(LutKey),
    #[error("{0} latency is not tabulated")]
    NotTabulated(OpKind),
    #[error("invalid system config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: String,
    pub power_idle_w: f64,
    pub power_run_w: f64,
    pub power_tx_w: f64,
    pub power_rx_w: f64,
    /// Per-op slowdown relative to the host that measured the base latencies.
    /// Missing ops default to 1.0. Used to derive synthetic profiles and to
    /// emulate the profile inside the runtime.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub op_multipliers: BTreeMap<OpKind, f64>,
}

impl DeviceProfile {
    pub fn multiplier(&self, op: OpKind) -> f64 {
        self.op_multipliers.get(&op).copied().unwrap_or(1.0)
    }

    fn check(&self) -> Result<(), PerfError> {
        let powers = [self.power_idle_w, self.power_run_w, self.power_tx_w, self.power_rx_w];
        if powers.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PerfError::InvalidConfig(format!("profile {}: powers must be >= 0", self.id)));
        }
        if self.power_run_w < self.power_idle_w {
            return Err(PerfError::InvalidConfig(format!("profile {}: run power below idle power", self.id)));
        }
        if self.op_multipliers.values().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(PerfError::InvalidConfig(format!("profile {}: multipliers must be > 0", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub device: DeviceProfile,
    pub edge: DeviceProfile,
    pub bandwidth_mbps: f64,
    pub latency_constraint_ms: f64,
    pub energy_constraint_j: f64,
    #[serde(default = "default_overhead")]
    pub comm_overhead_ms: f64,
}

fn default_overhead() -> f64 {
    DEFAULT_COMM_OVERHEAD_MS
}

impl SystemConfig {
    pub fn profile(&self, side: Placement) -> &DeviceProfile {
        match side {
            Placement::Device => &self.device,
            Placement::Edge => &self.edge,
        }
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        self.device.check()?;
        self.edge.check()?;
        if !(self.bandwidth_mbps > 0.0) {
            return Err(PerfError::InvalidConfig("bandwidth_mbps must be > 0".into()));
        }
        if !(self.latency_constraint_ms > 0.0) || !(self.energy_constraint_j > 0.0) {
            return Err(PerfError::InvalidConfig("constraints must be > 0".into()));
        }
        if !(self.comm_overhead_ms >= 0.0) {
            return Err(PerfError::InvalidConfig("comm_overhead_ms must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_bandwidth(&self, bandwidth_mbps: f64) -> SystemConfig {
        SystemConfig { bandwidth_mbps, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LutKey {
    pub profile: String,
    pub op: OpKind,
    pub setting: String,
    pub n_bucket: usize,
    pub f_bucket: usize,
}

impl fmt::Display for LutKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, n={}, f={})", self.profile, self.op, self.setting, self.n_bucket, self.f_bucket)
    }
}

/// Nearest power of two; ties go to the larger one.
pub fn node_bucket(n: usize) -> usize {
    assert!(n >= 1);
    let lower = 1usize << (usize::BITS - 1 - n.leading_zeros());
    if lower == n {
        return n;
    }
    let upper = lower << 1;
    if n - lower < upper - n {
        lower
    } else {
        upper
    }
}

/// Setting signature for a tabulated op. `Aggregate` also depends on the
/// neighbour count of the edge set it reduces over.
pub fn setting_signature(layer: &LayerSpec, before: &LayerShape) -> String {
    match *layer {
        LayerSpec::Sample { k } => format!("k={k}"),
        LayerSpec::Aggregate { reducer } => {
            format!("{}/deg={}", reducer.as_str(), before.edge_degree)
        }
        LayerSpec::Combine { out_dim } => format!("out={out_dim}"),
        LayerSpec::GlobalPooling { reducer } => reducer.as_str().to_string(),
        LayerSpec::Communicate | LayerSpec::Identity => String::new(),
    }
}

pub fn lut_key(profile: &str, layer: &LayerSpec, before: &LayerShape) -> LutKey {
    LutKey {
        profile: profile.to_string(),
        op: layer.op(),
        setting: setting_signature(layer, before),
        n_bucket: node_bucket(before.num_nodes),
        f_bucket: before.feature_dim,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LutEntry {
    profile: String,
    op: OpKind,
    setting: String,
    n_bucket: usize,
    f_bucket: usize,
    latency_ms: f64,
}

/// Per-operation latency table. Serialized as a JSON array of entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LutEntry>", into = "Vec<LutEntry>")]
pub struct LatencyLut {
    entries: BTreeMap<LutKey, f64>,
}

impl TryFrom<Vec<LutEntry>> for LatencyLut {
    type Error = String;

    fn try_from(list: Vec<LutEntry>) -> Result<Self, Self::Error> {
        let mut lut = LatencyLut::default();
        for e in list {
            if !(e.latency_ms > 0.0) || !e.latency_ms.is_finite() {
                return Err(format!("latency must be positive, got {}", e.latency_ms));
            }
            let key =
                LutKey { profile: e.profile, op: e.op, setting: e.setting, n_bucket: e.n_bucket, f_bucket: e.f_bucket };
            lut.entries.insert(key, e.latency_ms);
        }
        Ok(lut)
    }
}

impl From<LatencyLut> for Vec<LutEntry> {
    fn from(lut: LatencyLut) -> Self {
        lut.entries
            .into_iter()
            .map(|(k, latency_ms)| LutEntry {
                profile: k.profile,
                op: k.op,
                setting: k.setting,
                n_bucket: k.n_bucket,
                f_bucket: k.f_bucket,
                latency_ms,
            })
            .collect()
    }
}

impl LatencyLut {
    /// Panics on a non-positive latency.
    pub fn insert(&mut self, key: LutKey, latency_ms: f64) {
        assert!(latency_ms > 0.0 && latency_ms.is_finite(), "latency must be positive");
        self.entries.insert(key, latency_ms);
    }

    pub fn get(&self, key: &LutKey) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &LutKey> {
        self.entries.keys()
    }

    /// Analytic table: operation counts times per-profile multipliers. No
    /// timing involved, so the result is reproducible everywhere.
    pub fn synthetic(space: &SpaceConfig, sys: &SystemConfig) -> LatencyLut {
        let mut lut = LatencyLut::default();
        for profile in [&sys.device, &sys.edge] {
            for shape in tabulated_shapes(space) {
                let base = analytic_latency_ms(&shape);
                lut.insert(shape.key(&profile.id), base * profile.multiplier(shape.layer.op()));
            }
        }
        lut
    }

    /// Times the runtime kernels once per shape on this host (median of
    /// `repeats` runs) and scales the measurement by each profile's
    /// multipliers.
    pub fn measure(space: &SpaceConfig, sys: &SystemConfig, repeats: usize, seed: u64) -> LatencyLut {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lut = LatencyLut::default();
        for shape in tabulated_shapes(space) {
            let base = time_kernel(&shape, repeats.max(1), &mut rng).max(1e-4);
            for profile in [&sys.device, &sys.edge] {
                lut.insert(shape.key(&profile.id), base * profile.multiplier(shape.layer.op()));
            }
        }
        lut
    }
}

/// One tabulated (op, setting, input shape) combination.
#[derive(Debug, Clone)]
pub struct TabulatedShape {
    pub layer: LayerSpec,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub edge_degree: usize,
}

impl TabulatedShape {
    fn before(&self) -> LayerShape {
        LayerShape {
            num_nodes: self.num_nodes,
            feature_dim: self.feature_dim,
            edges_present: self.edge_degree > 0,
            edge_degree: self.edge_degree,
            edges_origin_side: Placement::Device,
        }
    }

    pub fn key(&self, profile: &str) -> LutKey {
        lut_key(profile, &self.layer, &self.before())
    }
}

/// Every shape a valid architecture from `space` can present to a tabulated
/// op. Node counts are the bucket representatives.
pub fn tabulated_shapes(space: &SpaceConfig) -> Vec<TabulatedShape> {
    let n = node_bucket(space.input.num_nodes);
    let mut degrees: Vec<usize> = space.sample_k.iter().copied().filter(|&k| k < space.input.num_nodes).collect();
    if space.input.has_input_graph {
        degrees.push(space.input.input_graph_degree());
    }
    degrees.sort_unstable();
    degrees.dedup();

    let mut out = Vec::new();
    let shape =
        |layer, num_nodes, feature_dim, edge_degree| TabulatedShape { layer, num_nodes, feature_dim, edge_degree };
    for f in space.feature_dims() {
        for &k in &space.sample_k {
            if k < space.input.num_nodes {
                out.push(shape(LayerSpec::Sample { k }, n, f, 0));
            }
        }
        for &reducer in &space.aggregate_reducers {
            for &d in &degrees {
                out.push(shape(LayerSpec::Aggregate { reducer }, n, f, d));
            }
        }
        for &out_dim in &space.combine_out_dim {
            out.push(shape(LayerSpec::Combine { out_dim }, n, f, 0));
            if n != 1 {
                out.push(shape(LayerSpec::Combine { out_dim }, 1, f, 0));
            }
        }
        for &reducer in &space.pooling_reducers {
            out.push(shape(LayerSpec::GlobalPooling { reducer }, n, f, 0));
        }
    }
    out
}

fn analytic_latency_ms(shape: &TabulatedShape) -> f64 {
    const LAUNCH_MS: f64 = 0.02;
    const NS_PER_OP: f64 = 1.0e-6; // ms
    let n = shape.num_nodes as f64;
    let f = shape.feature_dim as f64;
    let work = match shape.layer {
        LayerSpec::Sample { k } => n * n * (f + 1.0) + n * k as f64 * 8.0,
        LayerSpec::Aggregate { .. } => n * shape.edge_degree.max(1) as f64 * f,
        LayerSpec::Combine { out_dim } => n * f * out_dim as f64,
        LayerSpec::GlobalPooling { .. } => n * f,
        LayerSpec::Communicate | LayerSpec::Identity => 0.0,
    };
    LAUNCH_MS + work * NS_PER_OP
}

fn time_kernel(shape: &TabulatedShape, repeats: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = shape.num_nodes;
    let f = shape.feature_dim;
    let x = Tensor::f32(vec![n, f], (0..n * f).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    let edges = (shape.edge_degree > 0).then(|| {
        let d = shape.edge_degree;
        let data = (0..n * d).map(|_| rng.random_range(0..n) as i32).collect();
        Tensor::i32(vec![n, d], data)
    });
    let mut samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            match shape.layer {
                LayerSpec::Sample { k } => {
                    std::hint::black_box(kernels::sample(&x, k).expect("k < n"));
                }
                LayerSpec::Aggregate { reducer } => {
                    let e = edges.as_ref().expect("aggregate shape has edges");
                    std::hint::black_box(kernels::aggregate(&x, e, reducer).expect("valid edges"));
                }
                LayerSpec::Combine { out_dim } => {
                    let (w, b) = kernels::combine_weights(0, 0, f, out_dim);
                    std::hint::black_box(kernels::combine(&x, &w, &b).expect("dims conform"));
                }
                LayerSpec::GlobalPooling { reducer } => {
                    std::hint::black_box(kernels::global_pool(&x, reducer).expect("non-empty"));
                }
                LayerSpec::Communicate | LayerSpec::Identity => {}
            }
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

/// Table latency of a compute layer on `profile` for the shape entering it.
/// `Identity` costs nothing; `Communicate` is not tabulated.
pub fn lut_lookup(lut: &LatencyLut, profile: &str, layer: &LayerSpec, before: &LayerShape) -> Result<f64, PerfError> {
    match layer {
        LayerSpec::Identity => Ok(0.0),
        LayerSpec::Communicate => Err(PerfError::NotTabulated(OpKind::Communicate)),
        _ => {
            let key = lut_key(profile, layer, before);
            lut.get(&key).ok_or(PerfError::MissingEntry(key))
        }
    }
}

/// Bytes moved by the `Communicate` at `comm_index`: 4-byte features, 8 bytes
/// per edge index when the edge set has to follow, plus framing.
pub fn transfer_size(arch: &Architecture, comm_index: usize, trace: &crate::design_space::ShapeTrace) -> u64 {
    assert_eq!(arch.layers[comm_index].op(), OpKind::Communicate, "not a Communicate layer");
    let shape = trace.layers[comm_index];
    let features = 4 * (shape.num_nodes * shape.feature_dim) as u64;
    let edges = if communicate_ships_edges(arch, comm_index, trace) {
        8 * (shape.num_nodes * shape.edge_degree) as u64
    } else {
        0
    };
    features + edges + FRAMING_OVERHEAD_BYTES
}

/// Serialization time at `bandwidth_mbps` plus the fixed per-message overhead.
pub fn comm_latency(bytes: u64, bandwidth_mbps: f64, overhead_ms: f64) -> f64 {
    assert!(bandwidth_mbps > 0.0);
    bytes as f64 * 8.0 / (bandwidth_mbps * 1000.0) + overhead_ms
}

/// Sequential latency / energy estimate of one inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub total_latency_ms: f64,
    pub per_layer_ms: Vec<f64>,
    pub device_compute_ms: f64,
    pub edge_compute_ms: f64,
    pub comm_ms: f64,
    /// Device to edge share of `comm_ms`.
    pub comm_tx_ms: f64,
    /// Edge to device share of `comm_ms`.
    pub comm_rx_ms: f64,
    pub energy_device_j: f64,
}

/// Sums table latencies on each layer's assigned side and analytic transfer
/// costs for `Communicate` layers. Pipelining is not modeled.
pub fn estimate_cost(arch: &Architecture, sys: &SystemConfig, lut: &LatencyLut) -> Result<PerfReport, PerfError> {
    let trace = infer_shapes(arch);
    let sides = placements(arch);
    let mut report = PerfReport {
        total_latency_ms: 0.0,
        per_layer_ms: Vec::with_capacity(arch.layers.len()),
        device_compute_ms: 0.0,
        edge_compute_ms: 0.0,
        comm_ms: 0.0,
        comm_tx_ms: 0.0,
        comm_rx_ms: 0.0,
        energy_device_j: 0.0,
    };
    for (i, (layer, &side)) in arch.layers.iter().zip(&sides).enumerate() {
        let ms = if layer.op() == OpKind::Communicate {
            let ms = comm_latency(transfer_size(arch, i, &trace), sys.bandwidth_mbps, sys.comm_overhead_ms);
            report.comm_ms += ms;
            match side {
                Placement::Device => report.comm_tx_ms += ms,
                Placement::Edge => report.comm_rx_ms += ms,
            }
            ms
        } else {
            let ms = lut_lookup(lut, &sys.profile(side).id, layer, &trace.before(i))?;
            match side {
                Placement::Device => report.device_compute_ms += ms,
                Placement::Edge => report.edge_compute_ms += ms,
            }
            ms
        };
        report.per_layer_ms.push(ms);
        report.total_latency_ms += ms;
    }
    report.energy_device_j = estimate_energy(sys, &report);
    Ok(report)
}

/// Device energy: run power while the device computes, idle power while the
/// edge computes, radio power while transferring.
pub fn estimate_energy(sys: &SystemConfig, report: &PerfReport) -> f64 {
    let d = &sys.device;
    let run = d.power_run_w * report.device_compute_ms / 1e3;
    let idle = d.power_idle_w * report.edge_compute_ms / 1e3;
    let comm = d.power_tx_w * report.comm_tx_ms / 1e3 + d.power_rx_w * report.comm_rx_ms / 1e3;
    idle + run + comm
}

/// `(v - mean) / std` with the population standard deviation; all zeros when
/// the values are constant.
pub fn zscore_normalize(values: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty());
    let (mean, std) = mean_std(values);
    if std == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
