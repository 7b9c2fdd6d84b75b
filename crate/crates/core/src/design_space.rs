//! The fused architecture + mapping search space.
//!
//! An [`Architecture`] is a chain of layers drawn from six operation kinds.
//! `Communicate` layers are ordinary members of the chain: their positions
//! decide where the model is split between the device and the edge, so a
//! sampled architecture carries its own mapping scheme.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Neighbour count used for the synthetic edge set of inputs that arrive with
/// their own graph (`has_input_graph`). Capped at `num_nodes - 1`.
pub const INPUT_GRAPH_DEGREE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Sample,
    Aggregate,
    Communicate,
    Combine,
    GlobalPooling,
    Identity,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Sample,
        OpKind::Aggregate,
        OpKind::Communicate,
        OpKind::Combine,
        OpKind::GlobalPooling,
        OpKind::Identity,
    ];

    /// Position of this kind in [`OpKind::ALL`]; used for one-hot encodings.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Sample => "sample",
            OpKind::Aggregate => "aggregate",
            OpKind::Communicate => "communicate",
            OpKind::Combine => "combine",
            OpKind::GlobalPooling => "global_pooling",
            OpKind::Identity => "identity",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Max,
    Mean,
    Sum,
}

impl Reducer {
    pub fn as_str(self) -> &'static str {
        match self {
            Reducer::Max => "max",
            Reducer::Mean => "mean",
            Reducer::Sum => "sum",
        }
    }
}

/// One layer of an architecture: an operation kind together with the part of
/// the function setting that is meaningful for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawLayer", into = "RawLayer")]
pub enum LayerSpec {
    Sample {
        k: usize,
    },
    Aggregate {
        reducer: Reducer,
    },
    Communicate,
    Combine {
        out_dim: usize,
    },
    /// Only `Max` and `Mean` are accepted when parsing.
    GlobalPooling {
        reducer: Reducer,
    },
    Identity,
}

impl LayerSpec {
    pub fn op(&self) -> OpKind {
        match self {
            LayerSpec::Sample { .. } => OpKind::Sample,
            LayerSpec::Aggregate { .. } => OpKind::Aggregate,
            LayerSpec::Communicate => OpKind::Communicate,
            LayerSpec::Combine { .. } => OpKind::Combine,
            LayerSpec::GlobalPooling { .. } => OpKind::GlobalPooling,
            LayerSpec::Identity => OpKind::Identity,
        }
    }

    /// Layers that run a kernel (everything except `Communicate` and `Identity`).
    pub fn is_compute(&self) -> bool {
        !matches!(self, LayerSpec::Communicate | LayerSpec::Identity)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    op: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reducer: Option<Reducer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_dim: Option<usize>,
}

impl TryFrom<RawLayer> for LayerSpec {
    type Error = String;

    fn try_from(raw: RawLayer) -> Result<Self, Self::Error> {
        let need = |what: &str| format!("{} layer requires `{what}`", raw.op);
        Ok(match raw.op {
            OpKind::Sample => match raw.k.ok_or_else(|| need("k"))? {
                0 => return Err("sample k must be >= 1".into()),
                k => LayerSpec::Sample { k },
            },
            OpKind::Aggregate => LayerSpec::Aggregate { reducer: raw.reducer.ok_or_else(|| need("reducer"))? },
            OpKind::Communicate => LayerSpec::Communicate,
            OpKind::Combine => match raw.out_dim.ok_or_else(|| need("out_dim"))? {
                0 => return Err("combine out_dim must be >= 1".into()),
                out_dim => LayerSpec::Combine { out_dim },
            },
            OpKind::GlobalPooling => match raw.reducer.ok_or_else(|| need("reducer"))? {
                Reducer::Sum => return Err("global_pooling reducer must be max or mean".into()),
                reducer => LayerSpec::GlobalPooling { reducer },
            },
            OpKind::Identity => LayerSpec::Identity,
        })
    }
}

impl From<LayerSpec> for RawLayer {
    fn from(layer: LayerSpec) -> Self {
        let mut raw = RawLayer { op: layer.op(), k: None, reducer: None, out_dim: None };
        match layer {
            LayerSpec::Sample { k } => raw.k = Some(k),
            LayerSpec::Aggregate { reducer } | LayerSpec::GlobalPooling { reducer } => raw.reducer = Some(reducer),
            LayerSpec::Combine { out_dim } => raw.out_dim = Some(out_dim),
            LayerSpec::Communicate | LayerSpec::Identity => {}
        }
        raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawInput")]
pub struct InputSpec {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub has_input_graph: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    num_nodes: usize,
    feature_dim: usize,
    has_input_graph: bool,
}

impl TryFrom<RawInput> for InputSpec {
    type Error = String;

    fn try_from(raw: RawInput) -> Result<Self, Self::Error> {
        if raw.num_nodes == 0 || raw.feature_dim == 0 {
            return Err("num_nodes and feature_dim must be >= 1".into());
        }
        Ok(InputSpec { num_nodes: raw.num_nodes, feature_dim: raw.feature_dim, has_input_graph: raw.has_input_graph })
    }
}

impl InputSpec {
    pub fn point_cloud(num_nodes: usize, feature_dim: usize) -> Self {
        InputSpec { num_nodes, feature_dim, has_input_graph: false }
    }

    pub fn with_graph(num_nodes: usize, feature_dim: usize) -> Self {
        InputSpec { num_nodes, feature_dim, has_input_graph: true }
    }

    /// Degree of the edge set shipped alongside graph-structured inputs.
    pub fn input_graph_degree(&self) -> usize {
        INPUT_GRAPH_DEGREE.min(self.num_nodes - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input: InputSpec, layers: Vec<LayerSpec>) -> Self {
        Architecture { input, layers }
    }

    pub fn ops(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.layers.iter().map(LayerSpec::op)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Hex SHA-256 of the compact JSON form. Stable across runs; includes the
    /// `Communicate` layers, so it identifies architecture *and* mapping.
    pub fn digest(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    pub fn communicate_indices(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.op() == OpKind::Communicate).map(|(i, _)| i).collect()
    }

    pub fn is_valid(&self) -> bool {
        check_validity(self).is_empty()
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A broken validity rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    /// Two `Communicate` layers in a row.
    V1ConsecutiveCommunicate,
    /// `Aggregate` after a `GlobalPooling`.
    V2AggregateAfterPooling,
    /// `Sample` after a `GlobalPooling`.
    V3SampleAfterPooling,
    /// `Aggregate` with no edge set: no input graph and no earlier `Sample`.
    V4AggregateWithoutEdges,
    /// Not exactly one `GlobalPooling`.
    V5PoolingCount,
    /// The chain ends in `Communicate`.
    V6TrailingCommunicate,
    /// `Sample` asks for at least as many neighbours as there are nodes.
    V7SampleTooLarge,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::V1ConsecutiveCommunicate => "V1",
            Violation::V2AggregateAfterPooling => "V2",
            Violation::V3SampleAfterPooling => "V3",
            Violation::V4AggregateWithoutEdges => "V4",
            Violation::V5PoolingCount => "V5",
            Violation::V6TrailingCommunicate => "V6",
            Violation::V7SampleTooLarge => "V7",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// All rules `arch` breaks, sorted and without duplicates. Empty means valid.
///
/// A single left-to-right scan. `arch.layers` must be non-empty.
pub fn check_validity(arch: &Architecture) -> Vec<Violation> {
    assert!(!arch.layers.is_empty(), "architecture has no layers");
    let mut found = [false; 7];
    let mut mark = |v: Violation| found[v as usize] = true;

    let mut pooled = 0usize;
    let mut has_edges = arch.input.has_input_graph;
    let mut prev = None;
    for layer in &arch.layers {
        match *layer {
            LayerSpec::Communicate if prev == Some(OpKind::Communicate) => mark(Violation::V1ConsecutiveCommunicate),
            LayerSpec::Aggregate { .. } => {
                if pooled > 0 {
                    mark(Violation::V2AggregateAfterPooling);
                }
                if !has_edges {
                    mark(Violation::V4AggregateWithoutEdges);
                }
            }
            LayerSpec::Sample { k } => {
                if pooled > 0 {
                    mark(Violation::V3SampleAfterPooling);
                } else if k >= arch.input.num_nodes {
                    mark(Violation::V7SampleTooLarge);
                }
                has_edges = true;
            }
            LayerSpec::GlobalPooling { .. } => pooled += 1,
            _ => {}
        }
        prev = Some(layer.op());
    }
    if pooled != 1 {
        mark(Violation::V5PoolingCount);
    }
    if prev == Some(OpKind::Communicate) {
        mark(Violation::V6TrailingCommunicate);
    }

    const ORDER: [Violation; 7] = [
        Violation::V1ConsecutiveCommunicate,
        Violation::V2AggregateAfterPooling,
        Violation::V3SampleAfterPooling,
        Violation::V4AggregateWithoutEdges,
        Violation::V5PoolingCount,
        Violation::V6TrailingCommunicate,
        Violation::V7SampleTooLarge,
    ];
    ORDER.into_iter().filter(|v| found[*v as usize]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Device,
    Edge,
}

impl Placement {
    pub fn other(self) -> Placement {
        match self {
            Placement::Device => Placement::Edge,
            Placement::Edge => Placement::Device,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub placement: Placement,
    /// Half-open layer index range.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingScheme {
    pub placement: Vec<Placement>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid architecture: violates {}", list_codes(.0))]
pub struct InvalidArchitecture(pub Vec<Violation>);

fn list_codes(v: &[Violation]) -> String {
    v.iter().map(|v| v.code()).collect::<Vec<_>>().join(", ")
}

/// Per-layer placement. Execution starts on the device and flips after every
/// `Communicate`; a `Communicate` layer is placed on the side that sends.
///
/// Does not check validity.
pub fn placements(arch: &Architecture) -> Vec<Placement> {
    let mut side = Placement::Device;
    arch.layers
        .iter()
        .map(|layer| {
            let here = side;
            if layer.op() == OpKind::Communicate {
                side = side.other();
            }
            here
        })
        .collect()
}

/// Segments end just after each `Communicate`, so a segment is the run of
/// layers one side executes followed by the transfer that hands off control.
pub fn derive_mapping(arch: &Architecture) -> Result<MappingScheme, InvalidArchitecture> {
    let violations = check_validity(arch);
    if !violations.is_empty() {
        return Err(InvalidArchitecture(violations));
    }
    let placement = placements(arch);
    let mut segments = Vec::new();
    let mut start = 0;
    for (i, layer) in arch.layers.iter().enumerate() {
        if layer.op() == OpKind::Communicate {
            segments.push(Segment { placement: placement[i], start, end: i + 1 });
            start = i + 1;
        }
    }
    let last = placement.last().copied().unwrap_or(Placement::Device);
    segments.push(Segment { placement: last, start, end: arch.layers.len() });
    Ok(MappingScheme { placement, segments })
}

/// Output shape of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub edges_present: bool,
    /// Neighbours per node of the current edge set (0 when absent).
    pub edge_degree: usize,
    /// Side on which the current edge set was produced.
    pub edges_origin_side: Placement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub input: LayerShape,
    /// `layers[i]` is the shape *after* layer `i`.
    pub layers: Vec<LayerShape>,
}

impl ShapeTrace {
    /// Shape entering layer `i`.
    pub fn before(&self, i: usize) -> LayerShape {
        if i == 0 {
            self.input
        } else {
            self.layers[i - 1]
        }
    }

    pub fn output(&self) -> LayerShape {
        self.layers.last().copied().unwrap_or(self.input)
    }
}

/// Shape propagation. Total on any architecture; only meaningful when the
/// architecture is executable.
pub fn infer_shapes(arch: &Architecture) -> ShapeTrace {
    let sides = placements(arch);
    let input = LayerShape {
        num_nodes: arch.input.num_nodes,
        feature_dim: arch.input.feature_dim,
        edges_present: arch.input.has_input_graph,
        edge_degree: if arch.input.has_input_graph { arch.input.input_graph_degree() } else { 0 },
        edges_origin_side: Placement::Device,
    };
    let mut cur = input;
    let layers = arch
        .layers
        .iter()
        .zip(&sides)
        .map(|(layer, &side)| {
            match *layer {
                LayerSpec::Sample { k } => {
                    cur.edges_present = true;
                    cur.edge_degree = k;
                    cur.edges_origin_side = side;
                }
                LayerSpec::Combine { out_dim } => cur.feature_dim = out_dim,
                LayerSpec::GlobalPooling { .. } => {
                    cur.num_nodes = 1;
                    cur.edges_present = false;
                    cur.edge_degree = 0;
                }
                LayerSpec::Aggregate { .. } | LayerSpec::Communicate | LayerSpec::Identity => {}
            }
            cur
        })
        .collect();
    ShapeTrace { input, layers }
}

/// Whether the `Communicate` at `comm_index` must carry the edge set: the edges
/// live on the sending side and an `Aggregate` on the receiving side uses them
/// before any new `Sample` replaces them.
pub fn communicate_ships_edges(arch: &Architecture, comm_index: usize, trace: &ShapeTrace) -> bool {
    let sides = placements(arch);
    let origin = sides[comm_index];
    let shape = trace.layers[comm_index];
    if !shape.edges_present || shape.edges_origin_side != origin {
        return false;
    }
    for (layer, &side) in arch.layers.iter().zip(&sides).skip(comm_index + 1) {
        match layer.op() {
            OpKind::Sample => return false,
            OpKind::Aggregate if side != origin => return true,
            _ => {}
        }
    }
    false
}

/// Depth and function-setting grids the sampler draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub input: InputSpec,
    #[serde(default = "SpaceConfig::default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "SpaceConfig::default_sample_k")]
    pub sample_k: Vec<usize>,
    #[serde(default = "SpaceConfig::default_combine_out_dim")]
    pub combine_out_dim: Vec<usize>,
    #[serde(default = "SpaceConfig::default_aggregate_reducers")]
    pub aggregate_reducers: Vec<Reducer>,
    #[serde(default = "SpaceConfig::default_pooling_reducers")]
    pub pooling_reducers: Vec<Reducer>,
}

impl SpaceConfig {
    pub const MAX_DEPTH: usize = 9;

    pub fn new(input: InputSpec) -> Self {
        SpaceConfig {
            input,
            depths: Self::default_depths(),
            sample_k: Self::default_sample_k(),
            combine_out_dim: Self::default_combine_out_dim(),
            aggregate_reducers: Self::default_aggregate_reducers(),
            pooling_reducers: Self::default_pooling_reducers(),
        }
    }

    fn default_depths() -> Vec<usize> {
        (1..=Self::MAX_DEPTH).collect()
    }
    fn default_sample_k() -> Vec<usize> {
        vec![5, 10, 20]
    }
    fn default_combine_out_dim() -> Vec<usize> {
        vec![32, 64, 128, 256]
    }
    fn default_aggregate_reducers() -> Vec<Reducer> {
        vec![Reducer::Max, Reducer::Mean, Reducer::Sum]
    }
    fn default_pooling_reducers() -> Vec<Reducer> {
        vec![Reducer::Max, Reducer::Mean]
    }

    /// Every feature width a layer can see: the input width plus the
    /// `Combine` grid.
    pub fn feature_dims(&self) -> Vec<usize> {
        let mut dims = self.combine_out_dim.clone();
        dims.push(self.input.feature_dim);
        dims.sort_unstable();
        dims.dedup();
        dims
    }

    pub fn check(&self) -> Result<(), String> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(format!("space config `{name}` must not be empty"))
            } else {
                Ok(())
            }
        };
        empty("depths", self.depths.len())?;
        empty("sample_k", self.sample_k.len())?;
        empty("combine_out_dim", self.combine_out_dim.len())?;
        empty("aggregate_reducers", self.aggregate_reducers.len())?;
        empty("pooling_reducers", self.pooling_reducers.len())?;
        if self.depths.contains(&0) {
            return Err("depths must be >= 1".into());
        }
        if self.sample_k.contains(&0) || self.combine_out_dim.contains(&0) {
            return Err("sample_k and combine_out_dim entries must be >= 1".into());
        }
        if self.pooling_reducers.contains(&Reducer::Sum) {
            return Err("pooling reducers must be max or mean".into());
        }
        Ok(())
    }

    fn random_layer<R: Rng + ?Sized>(&self, op: OpKind, rng: &mut R) -> LayerSpec {
        let pick = |v: &[usize], rng: &mut R| *v.choose(rng).expect("non-empty grid");
        let pick_r = |v: &[Reducer], rng: &mut R| *v.choose(rng).expect("non-empty grid");
        match op {
            OpKind::Sample => LayerSpec::Sample { k: pick(&self.sample_k, rng) },
            OpKind::Aggregate => LayerSpec::Aggregate { reducer: pick_r(&self.aggregate_reducers, rng) },
            OpKind::Communicate => LayerSpec::Communicate,
            OpKind::Combine => LayerSpec::Combine { out_dim: pick(&self.combine_out_dim, rng) },
            OpKind::GlobalPooling => LayerSpec::GlobalPooling { reducer: pick_r(&self.pooling_reducers, rng) },
            OpKind::Identity => LayerSpec::Identity,
        }
    }
}

/// Uniform depth, uniform op per position, independent settings per layer.
/// The result is not necessarily valid.
pub fn sample_random<R: Rng + ?Sized>(space: &SpaceConfig, rng: &mut R) -> Architecture {
    let depth = *space.depths.choose(rng).expect("non-empty depth list");
    let layers = (0..depth)
        .map(|_| {
            let op = *OpKind::ALL.choose(rng).expect("six kinds");
            space.random_layer(op, rng)
        })
        .collect();
    Architecture { input: space.input, layers }
}

/// Rejection-samples until a valid architecture appears, giving up after
/// `max_attempts` draws.
pub fn sample_valid<R: Rng + ?Sized>(space: &SpaceConfig, rng: &mut R, max_attempts: usize) -> Option<Architecture> {
    (0..max_attempts).map(|_| sample_random(space, rng)).find(Architecture::is_valid)
}

/// Shrinks one randomly chosen shrinkable setting (`Combine` width or `Sample`
/// k) to a strictly smaller value from the grid. Returns the input unchanged
/// when nothing can shrink. Op sequence and validity are preserved.
pub fn scale_down<R: Rng + ?Sized>(arch: &Architecture, space: &SpaceConfig, rng: &mut R) -> Architecture {
    let smaller = |grid: &[usize], cur: usize| -> Vec<usize> {
        let mut v: Vec<usize> = grid.iter().copied().filter(|&x| x < cur).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let candidates: Vec<(usize, Vec<usize>)> = arch
        .layers
        .iter()
        .enumerate()
        .filter_map(|(i, layer)| {
            let options = match *layer {
                LayerSpec::Combine { out_dim } => smaller(&space.combine_out_dim, out_dim),
                LayerSpec::Sample { k } => smaller(&space.sample_k, k),
                _ => return None,
            };
            (!options.is_empty()).then_some((i, options))
        })
        .collect();
    let Some((index, options)) = candidates.choose(rng) else {
        return arch.clone();
    };
    let value = *options.choose(rng).expect("non-empty");
    let mut out = arch.clone();
    out.layers[*index] = match out.layers[*index] {
        LayerSpec::Combine { .. } => LayerSpec::Combine { out_dim: value },
        LayerSpec::Sample { .. } => LayerSpec::Sample { k: value },
        other => other,
    };
    out
}
