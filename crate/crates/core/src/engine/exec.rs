//! Single-process execution of architectures and of individual segments.

use std::ops::Range;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, KernelError};
use super::tensor::Tensor;
use crate::design_space::{Architecture, InputSpec, LayerSpec};
use crate::perf::DeviceProfile;

/// One inference input: node features plus, for graph-structured inputs, the
/// given edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame {
    pub features: Tensor,
    pub edges: Option<Tensor>,
}

impl InputFrame {
    /// Uniform features in [-1, 1); graph inputs get `input_graph_degree`
    /// distinct random neighbours per node.
    pub fn random(spec: &InputSpec, rng: &mut impl Rng) -> InputFrame {
        let (n, f) = (spec.num_nodes, spec.feature_dim);
        let features = Tensor::f32(vec![n, f], (0..n * f).map(|_| rng.random_range(-1.0f32..1.0)).collect());
        let edges = spec.has_input_graph.then(|| {
            let d = spec.input_graph_degree();
            let mut idx = Vec::with_capacity(n * d);
            for i in 0..n {
                // pick among the other n-1 nodes, then skip over i
                for j in index::sample(rng, n - 1, d) {
                    idx.push(if j >= i { j as i32 + 1 } else { j as i32 });
                }
            }
            Tensor::i32(vec![n, d], idx)
        });
        InputFrame { features, edges }
    }

    pub fn random_batch(spec: &InputSpec, count: usize, seed: u64) -> Vec<InputFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| InputFrame::random(spec, &mut rng)).collect()
    }
}

/// Tensors live on one side while a frame is being processed there.
#[derive(Debug, Clone)]
pub struct ExecState {
    pub features: Tensor,
    pub edges: Option<Tensor>,
}

impl From<InputFrame> for ExecState {
    fn from(frame: InputFrame) -> Self {
        ExecState { features: frame.features, edges: frame.edges }
    }
}

/// Slows kernels down to mimic a device profile: a kernel that took `t`
/// is followed by a sleep of `t * (multiplier - 1)`.
#[derive(Debug, Clone, Default)]
pub struct Emulation {
    pub profile: Option<DeviceProfile>,
}

impl Emulation {
    pub fn none() -> Emulation {
        Emulation { profile: None }
    }

    pub fn profile(profile: DeviceProfile) -> Emulation {
        Emulation { profile: Some(profile) }
    }

    fn stretch(&self, layer: &LayerSpec, elapsed: Duration) {
        if let Some(p) = &self.profile {
            let m = p.multiplier(layer.op());
            if m > 1.0 {
                std::thread::sleep(elapsed.mul_f64(m - 1.0));
            }
        }
    }
}

/// Runs layer `index` of `arch` on `state`. `Communicate` is a no-op here;
/// moving tensors is the runtime's job.
pub fn run_layer(
    arch: &Architecture,
    index: usize,
    state: &mut ExecState,
    seed: u64,
    emulation: &Emulation,
) -> Result<(), KernelError> {
    let layer = &arch.layers[index];
    let start = Instant::now();
    match *layer {
        LayerSpec::Sample { k } => state.edges = Some(kernels::sample(&state.features, k)?),
        LayerSpec::Aggregate { reducer } => {
            let edges = state.edges.as_ref().ok_or(KernelError::MissingEdges)?;
            state.features = kernels::aggregate(&state.features, edges, reducer)?;
        }
        LayerSpec::Combine { out_dim } => {
            let f_in = state.features.shape2().map(|(_, f)| f).unwrap_or(0);
            let (w, b) = kernels::combine_weights(seed, index, f_in, out_dim);
            state.features = kernels::combine(&state.features, &w, &b)?;
        }
        LayerSpec::GlobalPooling { reducer } => {
            state.features = kernels::global_pool(&state.features, reducer)?;
            state.edges = None;
        }
        LayerSpec::Communicate | LayerSpec::Identity => return Ok(()),
    }
    emulation.stretch(layer, start.elapsed());
    Ok(())
}

pub fn run_range(
    arch: &Architecture,
    range: Range<usize>,
    state: &mut ExecState,
    seed: u64,
    emulation: &Emulation,
) -> Result<(), KernelError> {
    range.into_iter().try_for_each(|i| run_layer(arch, i, state, seed, emulation))
}

/// Runs every layer in one process; `Communicate` layers do nothing.
pub fn execute_reference(arch: &Architecture, input: &InputFrame, seed: u64) -> Result<Tensor, KernelError> {
    let mut state = ExecState::from(input.clone());
    run_range(arch, 0..arch.layers.len(), &mut state, seed, &Emulation::none())?;
    Ok(state.features)
}
