//! Latency predictor: a three-layer GIN (mean neighbour aggregation, ε = 0)
//! with global sum pooling and a linear readout, trained on MAPE with Adam.
//! Gradients are derived by hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch_graph::{build_graph_with, ArchGraph, LatencyNorm, FEATURE_DIM};
use crate::design_space::{placements, sample_valid, Architecture, OpKind, Placement, SpaceConfig};
use crate::perf::{estimate_cost, LatencyLut, PerfError, SystemConfig};

pub const HIDDEN: usize = 32;
pub const GIN_LAYERS: usize = 3;
pub const MIN_DATASET: usize = 10;
pub const FULL_BATCH_LIMIT: usize = 1024;
pub const MINIBATCH: usize = 128;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("graph features have dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("ground truth must be positive, got {0}")]
    ZeroTruth(f64),
    #[error("{0} predictions for {1} truths")]
    LengthMismatch(usize, usize),
    #[error("training diverged at epoch {0}")]
    NonFinite(usize),
    #[error("dataset has {0} samples, at least {MIN_DATASET} needed")]
    TooSmall(usize),
    #[error("graph {0} has no latency label")]
    Unlabeled(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Perf(#[from] PerfError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    d_in: usize,
    hidden: usize,
    params: Vec<f64>,
    /// Predictions are `output_scale * network(graph)` so that the network
    /// regresses values near 1.
    pub output_scale: f64,
    /// Normalization used when building graphs for this model.
    pub latency_norm: LatencyNorm,
}

#[derive(Debug, Clone, Copy)]
struct DenseAt {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

impl PredictorModel {
    /// Glorot-uniform weights, hidden biases uniform in ±0.1, readout bias 1.
    pub fn new(d_in: usize, hidden: usize, seed: u64) -> PredictorModel {
        let mut model = PredictorModel::zeros(d_in, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..GIN_LAYERS {
            for dense in model.layer_dense(l) {
                let limit = (6.0 / (dense.rows + dense.cols) as f64).sqrt();
                for p in &mut model.params[dense.w..dense.w + dense.rows * dense.cols] {
                    *p = rng.random_range(-limit..limit);
                }
                for p in &mut model.params[dense.b..dense.b + dense.rows] {
                    *p = rng.random_range(-0.1..0.1);
                }
            }
        }
        let (r, rb) = model.readout_at();
        let limit = (6.0 / (hidden + 1) as f64).sqrt() / hidden as f64;
        for p in &mut model.params[r..r + hidden] {
            *p = rng.random_range(-limit..limit);
        }
        model.params[rb] = 1.0;
        model
    }

    pub fn zeros(d_in: usize, hidden: usize) -> PredictorModel {
        assert!(d_in > 0 && hidden > 0);
        let size = (0..GIN_LAYERS).map(|l| layer_size(in_dim(l, d_in, hidden), hidden)).sum::<usize>() + hidden + 1;
        PredictorModel { d_in, hidden, params: vec![0.0; size], output_scale: 1.0, latency_norm: LatencyNorm::PerGraph }
    }

    /// Default dimensions: 8 input features, 32 hidden units.
    pub fn standard(seed: u64) -> PredictorModel {
        PredictorModel::new(FEATURE_DIM, HIDDEN, seed)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// All trainable parameters, flattened.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, l: usize) -> usize {
        (0..l).map(|j| layer_size(in_dim(j, self.d_in, self.hidden), self.hidden)).sum()
    }

    fn layer_dense(&self, l: usize) -> [DenseAt; 2] {
        let h = self.hidden;
        let cols = in_dim(l, self.d_in, h);
        let o = self.layer_offset(l);
        let first = DenseAt { w: o, b: o + h * cols, rows: h, cols };
        let second_w = first.b + h;
        [first, DenseAt { w: second_w, b: second_w + h * h, rows: h, cols: h }]
    }

    fn readout_at(&self) -> (usize, usize) {
        let r = self.layer_offset(GIN_LAYERS);
        (r, r + self.hidden)
    }

    fn check_graph(&self, graph: &ArchGraph) -> Result<(), PredictorError> {
        match graph.features.iter().find(|f| f.len() != self.d_in) {
            Some(f) => Err(PredictorError::DimMismatch { expected: self.d_in, got: f.len() }),
            None if graph.features.len() != graph.node_count => Err(PredictorError::Malformed(format!(
                "{} feature rows for {} nodes",
                graph.features.len(),
                graph.node_count
            ))),
            None => Ok(()),
        }
    }

    /// Predicted end-to-end latency in milliseconds.
    pub fn forward(&self, graph: &ArchGraph) -> Result<f64, PredictorError> {
        self.check_graph(graph)?;
        Ok(self.run(graph).prediction)
    }

    /// Builds the graph with this model's normalization and predicts.
    pub fn predict_arch(
        &self,
        arch: &Architecture,
        sys: &SystemConfig,
        lut: &LatencyLut,
    ) -> Result<f64, PredictorError> {
        let graph = build_graph_with(arch, sys, lut, self.latency_norm)?;
        self.forward(&graph)
    }

    fn run(&self, graph: &ArchGraph) -> Forward {
        let n = graph.node_count;
        let h = self.hidden;
        let nbrs = graph.in_neighbors();
        let mut x: Vec<f64> = graph.features.iter().flatten().copied().collect();
        let mut layers = Vec::with_capacity(GIN_LAYERS);
        for l in 0..GIN_LAYERS {
            let [d1, d2] = self.layer_dense(l);
            let cols = d1.cols;
            let mut a = x.clone();
            for (v, list) in nbrs.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let inv = 1.0 / list.len() as f64;
                for &u in list {
                    for c in 0..cols {
                        a[v * cols + c] += x[u * cols + c] * inv;
                    }
                }
            }
            let z1 = self.dense(d1, &a, n);
            let h1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
            x = self.dense(d2, &h1, n);
            layers.push(LayerCache { a, z1, h1 });
        }
        let mut pooled = vec![0.0; h];
        for v in 0..n {
            for c in 0..h {
                pooled[c] += x[v * h + c];
            }
        }
        let (r, rb) = self.readout_at();
        let raw = self.params[rb] + (0..h).map(|c| self.params[r + c] * pooled[c]).sum::<f64>();
        Forward { nbrs, layers, pooled, prediction: self.output_scale * raw }
    }

    fn dense(&self, d: DenseAt, x: &[f64], n: usize) -> Vec<f64> {
        let w = &self.params[d.w..d.w + d.rows * d.cols];
        let b = &self.params[d.b..d.b + d.rows];
        let mut y = Vec::with_capacity(n * d.rows);
        for v in 0..n {
            let xv = &x[v * d.cols..(v + 1) * d.cols];
            for o in 0..d.rows {
                let row = &w[o * d.cols..(o + 1) * d.cols];
                y.push(b[o] + row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        y
    }

    /// Accumulates `dloss/dparams` into `grad` given `dloss/dprediction`.
    fn backward(&self, fwd: &Forward, dpred: f64, grad: &mut [f64]) {
        let n = fwd.nbrs.len();
        let h = self.hidden;
        let (r, rb) = self.readout_at();
        let draw = dpred * self.output_scale;
        grad[rb] += draw;
        for c in 0..h {
            grad[r + c] += draw * fwd.pooled[c];
        }
        // every node feeds the sum pool with unit weight
        let mut dx: Vec<f64> = (0..n).flat_map(|_| (0..h).map(|c| draw * self.params[r + c])).collect();

        for l in (0..GIN_LAYERS).rev() {
            let [d1, d2] = self.layer_dense(l);
            let cache = &fwd.layers[l];
            let dh1 = self.dense_backward(d2, &cache.h1, &dx, n, grad);
            let dz1: Vec<f64> = dh1.iter().zip(&cache.z1).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();
            let da = self.dense_backward(d1, &cache.a, &dz1, n, grad);
            let cols = d1.cols;
            let mut dprev = da.clone();
            for (v, list) in fwd.nbrs.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let inv = 1.0 / list.len() as f64;
                for &u in list {
                    for c in 0..cols {
                        dprev[u * cols + c] += da[v * cols + c] * inv;
                    }
                }
            }
            dx = dprev;
        }
    }

    /// Gradient of `y = x W^T + b` with respect to its parameters (accumulated)
    /// and its input (returned).
    fn dense_backward(&self, d: DenseAt, x: &[f64], dy: &[f64], n: usize, grad: &mut [f64]) -> Vec<f64> {
        let w = &self.params[d.w..d.w + d.rows * d.cols];
        let mut dx = vec![0.0; n * d.cols];
        for v in 0..n {
            let xv = &x[v * d.cols..(v + 1) * d.cols];
            for o in 0..d.rows {
                let g = dy[v * d.rows + o];
                if g == 0.0 {
                    continue;
                }
                grad[d.b + o] += g;
                let gw = &mut grad[d.w + o * d.cols..d.w + (o + 1) * d.cols];
                for (gw, &xi) in gw.iter_mut().zip(xv) {
                    *gw += g * xi;
                }
                let row = &w[o * d.cols..(o + 1) * d.cols];
                for (dxi, &wi) in dx[v * d.cols..(v + 1) * d.cols].iter_mut().zip(row) {
                    *dxi += g * wi;
                }
            }
        }
        dx
    }

    /// Mean MAPE over `batch` and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[(&ArchGraph, f64)]) -> Result<(f64, Vec<f64>), PredictorError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(graph, truth) in batch {
            if truth <= 0.0 {
                return Err(PredictorError::ZeroTruth(truth));
            }
            self.check_graph(graph)?;
            let fwd = self.run(graph);
            let diff = fwd.prediction - truth;
            loss += diff.abs() / truth * scale;
            let dpred = diff.signum() / truth * scale;
            if dpred != 0.0 {
                self.backward(&fwd, dpred, &mut grad);
            }
        }
        Ok((loss, grad))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<PredictorModel, PredictorError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| PredictorError::Malformed(e.to_string()))?;
        PredictorModel::from_file(file)
    }

    fn to_file(&self) -> ModelFile {
        let matrix =
            |d: DenseAt| Matrix { rows: d.rows, cols: d.cols, data: self.params[d.w..d.w + d.rows * d.cols].to_vec() };
        let layers = (0..GIN_LAYERS)
            .map(|l| {
                let [d1, d2] = self.layer_dense(l);
                GinLayerFile {
                    w1: matrix(d1),
                    b1: self.params[d1.b..d1.b + d1.rows].to_vec(),
                    w2: matrix(d2),
                    b2: self.params[d2.b..d2.b + d2.rows].to_vec(),
                }
            })
            .collect();
        let (r, rb) = self.readout_at();
        ModelFile {
            d_in: self.d_in,
            hidden: self.hidden,
            layers,
            readout_w: self.params[r..r + self.hidden].to_vec(),
            readout_b: self.params[rb],
            output_scale: self.output_scale,
            latency_norm: self.latency_norm,
        }
    }

    fn from_file(file: ModelFile) -> Result<PredictorModel, PredictorError> {
        if file.d_in == 0 || file.hidden == 0 {
            return Err(PredictorError::Malformed("zero dimension".into()));
        }
        if file.layers.len() != GIN_LAYERS {
            return Err(PredictorError::Malformed(format!("{} GIN layers, expected {GIN_LAYERS}", file.layers.len())));
        }
        let mut model = PredictorModel::zeros(file.d_in, file.hidden);
        for (l, layer) in file.layers.iter().enumerate() {
            let [d1, d2] = model.layer_dense(l);
            for (d, m, b) in [(d1, &layer.w1, &layer.b1), (d2, &layer.w2, &layer.b2)] {
                if m.rows != d.rows || m.cols != d.cols || m.data.len() != d.rows * d.cols || b.len() != d.rows {
                    return Err(PredictorError::Malformed(format!("layer {l} has wrong dimensions")));
                }
                model.params[d.w..d.w + m.data.len()].copy_from_slice(&m.data);
                model.params[d.b..d.b + b.len()].copy_from_slice(b);
            }
        }
        let (r, rb) = model.readout_at();
        if file.readout_w.len() != file.hidden {
            return Err(PredictorError::Malformed("readout width".into()));
        }
        model.params[r..r + file.hidden].copy_from_slice(&file.readout_w);
        model.params[rb] = file.readout_b;
        model.output_scale = file.output_scale;
        model.latency_norm = file.latency_norm;
        if !model.params.iter().all(|p| p.is_finite()) || !model.output_scale.is_finite() {
            return Err(PredictorError::Malformed("non-finite weight".into()));
        }
        Ok(model)
    }
}

fn in_dim(l: usize, d_in: usize, hidden: usize) -> usize {
    if l == 0 {
        d_in
    } else {
        hidden
    }
}

fn layer_size(cols: usize, h: usize) -> usize {
    h * cols + h + h * h + h
}

struct LayerCache {
    a: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
}

struct Forward {
    nbrs: Vec<Vec<usize>>,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    prediction: f64,
}

#[derive(Serialize, Deserialize)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GinLayerFile {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    d_in: usize,
    hidden: usize,
    layers: Vec<GinLayerFile>,
    readout_w: Vec<f64>,
    readout_b: f64,
    output_scale: f64,
    latency_norm: LatencyNorm,
}

/// Mean absolute percentage error as a fraction.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64, PredictorError> {
    if pred.len() != truth.len() {
        return Err(PredictorError::LengthMismatch(pred.len(), truth.len()));
    }
    if let Some(&t) = truth.iter().find(|&&t| t <= 0.0) {
        return Err(PredictorError::ZeroTruth(t));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs() / t).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// `None` picks full batch below 1024 training samples, else 128.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub split: f64,
    /// Set `output_scale` to the median training label before training.
    pub fit_output_scale: bool,
    /// Per-epoch decay of the exponential moving average of the weights; the
    /// trained model holds the (bias-corrected) average. `0` keeps the raw
    /// final weights.
    pub weight_averaging: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: None,
            seed: 0,
            split: 0.7,
            fit_output_scale: true,
            weight_averaging: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie strictly between 0 and 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.weight_averaging) {
            return bad("weight averaging decay must lie in [0, 1)");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mape: f64,
    pub val_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Seeded shuffle of `0..n` split into a training and a validation part,
/// both non-empty.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx.split_off(cut);
    (idx, val)
}

fn labels(dataset: &[ArchGraph]) -> Result<Vec<f64>, PredictorError> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, g)| match g.true_latency_ms {
            None => Err(PredictorError::Unlabeled(i)),
            Some(t) if t <= 0.0 => Err(PredictorError::ZeroTruth(t)),
            Some(t) => Ok(t),
        })
        .collect()
}

/// Trains `model` in place on the training share of `dataset`, reporting
/// per-epoch MAPE. Train MAPE is the running mean of the per-batch losses
/// seen during the epoch.
pub fn train(
    model: &mut PredictorModel,
    dataset: &[ArchGraph],
    cfg: &TrainConfig,
) -> Result<TrainReport, PredictorError> {
    cfg.validate()?;
    if dataset.len() < MIN_DATASET {
        return Err(PredictorError::TooSmall(dataset.len()));
    }
    let truth = labels(dataset)?;
    for g in dataset {
        model.check_graph(g)?;
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.split, cfg.seed);
    if cfg.fit_output_scale {
        let mut t: Vec<f64> = train_idx.iter().map(|&i| truth[i]).collect();
        t.sort_by(f64::total_cmp);
        model.output_scale = t[t.len() / 2];
    }
    let batch_size =
        cfg.batch_size.unwrap_or(if train_idx.len() < FULL_BATCH_LIMIT { train_idx.len() } else { MINIBATCH });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5_eed0_fba7_c4e5);
    let mut adam = Adam::new(model.param_count(), cfg);
    let mut order = train_idx.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut average = WeightAverage::new(model.param_count(), cfg.weight_averaging);
    let mut raw = model.params.clone();
    for epoch in 1..=cfg.epochs {
        std::mem::swap(&mut model.params, &mut raw);
        if batch_size < order.len() {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&ArchGraph, f64)> = chunk.iter().map(|&i| (&dataset[i], truth[i])).collect();
            let (loss, grad) = model.loss_and_gradient(&batch)?;
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(PredictorError::NonFinite(epoch));
            }
            loss_sum += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grad);
        }
        let train_mape = loss_sum / order.len() as f64;
        average.update(&model.params);
        raw.clone_from(&model.params);
        average.write(&mut model.params);
        let preds = val_idx.iter().map(|&i| model.run(&dataset[i]).prediction).collect::<Vec<_>>();
        let val_truth = val_idx.iter().map(|&i| truth[i]).collect::<Vec<_>>();
        let val_mape = mape(&preds, &val_truth)?;
        if !train_mape.is_finite() || !val_mape.is_finite() {
            return Err(PredictorError::NonFinite(epoch));
        }
        history.push(EpochRecord { epoch, train_mape, val_mape });
    }
    Ok(TrainReport { history, train_indices: train_idx, val_indices: val_idx })
}

struct WeightAverage {
    decay: f64,
    sum: Vec<f64>,
    weight: f64,
}

impl WeightAverage {
    fn new(n: usize, decay: f64) -> WeightAverage {
        WeightAverage { decay, sum: vec![0.0; n], weight: 0.0 }
    }

    fn update(&mut self, params: &[f64]) {
        for (s, p) in self.sum.iter_mut().zip(params) {
            *s = self.decay * *s + (1.0 - self.decay) * p;
        }
        self.weight = self.decay * self.weight + (1.0 - self.decay);
    }

    fn write(&self, params: &mut [f64]) {
        for (p, s) in params.iter_mut().zip(&self.sum) {
            *p = s / self.weight;
        }
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Adam {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub within_bound_fraction: f64,
    pub pairwise_order_accuracy: f64,
}

/// Relative truth gap under which a pair counts as a tie.
pub const TIE_TOLERANCE: f64 = 0.005;

/// Share of predictions within `error_bound` relative error and share of
/// unordered pairs ranked like the truth. Pairs whose truths lie within 0.5%
/// of each other count as correct whatever the prediction says.
pub fn accuracy_report(pred: &[f64], truth: &[f64], error_bound: f64) -> Result<AccuracyReport, PredictorError> {
    if pred.len() != truth.len() {
        return Err(PredictorError::LengthMismatch(pred.len(), truth.len()));
    }
    if let Some(&t) = truth.iter().find(|&&t| t <= 0.0) {
        return Err(PredictorError::ZeroTruth(t));
    }
    let n = pred.len();
    if n == 0 {
        return Ok(AccuracyReport { within_bound_fraction: 1.0, pairwise_order_accuracy: 1.0 });
    }
    let within = pred.iter().zip(truth).filter(|(p, t)| (*p - *t).abs() / *t <= error_bound).count();
    let (mut pairs, mut correct) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            let (ti, tj) = (truth[i], truth[j]);
            let tie = (ti - tj).abs() <= TIE_TOLERANCE * ti.max(tj);
            let agree = (pred[i] - pred[j]).partial_cmp(&0.0) == (ti - tj).partial_cmp(&0.0);
            if tie || agree {
                correct += 1;
            }
        }
    }
    Ok(AccuracyReport {
        within_bound_fraction: within as f64 / n as f64,
        pairwise_order_accuracy: if pairs == 0 { 1.0 } else { correct as f64 / pairs as f64 },
    })
}

pub fn predict_accuracy_report(
    model: &PredictorModel,
    testset: &[ArchGraph],
    error_bound: f64,
) -> Result<AccuracyReport, PredictorError> {
    let truth = labels(testset)?;
    let pred = testset.iter().map(|g| model.forward(g)).collect::<Result<Vec<_>, _>>()?;
    accuracy_report(&pred, &truth, error_bound)
}

/// Systematic runtime overheads that the table estimate does not see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadModel {
    pub multiplier: f64,
    /// Per non-Communicate layer on the device, ms.
    pub c_dev: f64,
    /// Per non-Communicate layer on the edge, ms.
    pub c_edge: f64,
    pub comm_inflation: f64,
    /// Gaussian noise standard deviation relative to the label.
    pub noise: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        OverheadModel { multiplier: 1.1, c_dev: 0.4, c_edge: 0.7, comm_inflation: 0.15, noise: 0.02 }
    }
}

impl OverheadModel {
    /// Noise-free "measured" latency.
    pub fn expected_latency(
        &self,
        arch: &Architecture,
        sys: &SystemConfig,
        lut: &LatencyLut,
    ) -> Result<f64, PerfError> {
        let report = estimate_cost(arch, sys, lut)?;
        let (mut dev, mut edge) = (0usize, 0usize);
        for (op, side) in arch.ops().zip(placements(arch)) {
            if op == OpKind::Communicate {
                continue;
            }
            match side {
                Placement::Device => dev += 1,
                Placement::Edge => edge += 1,
            }
        }
        Ok(report.total_latency_ms * self.multiplier
            + self.c_dev * dev as f64
            + self.c_edge * edge as f64
            + self.comm_inflation * report.comm_ms)
    }

    pub fn label(
        &self,
        arch: &Architecture,
        sys: &SystemConfig,
        lut: &LatencyLut,
        rng: &mut impl Rng,
    ) -> Result<f64, PerfError> {
        let clean = self.expected_latency(arch, sys, lut)?;
        let noise = Normal::new(0.0, self.noise * clean).expect("finite sigma").sample(rng);
        Ok((clean + noise).max(clean * 1e-3))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledArch {
    pub arch: Architecture,
    pub latency_ms: f64,
}

/// `count` random valid architectures with synthetic measured latencies.
pub fn generate_labeled(
    space: &SpaceConfig,
    sys: &SystemConfig,
    lut: &LatencyLut,
    overheads: &OverheadModel,
    count: usize,
    seed: u64,
) -> Result<Vec<LabeledArch>, PredictorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let Some(arch) = sample_valid(space, &mut rng, 10_000) else {
            return Err(PredictorError::InvalidConfig("space yields no valid architectures".into()));
        };
        let latency_ms = overheads.label(&arch, sys, lut, &mut rng)?;
        out.push(LabeledArch { arch, latency_ms });
    }
    Ok(out)
}

/// Fits dataset-level latency normalization over every layer of `samples`
/// and builds labeled graphs with it.
pub fn build_dataset(
    samples: &[LabeledArch],
    sys: &SystemConfig,
    lut: &LatencyLut,
) -> Result<(Vec<ArchGraph>, LatencyNorm), PredictorError> {
    let mut per_layer = Vec::new();
    for s in samples {
        per_layer.extend(estimate_cost(&s.arch, sys, lut)?.per_layer_ms);
    }
    let norm = LatencyNorm::fit(per_layer);
    let graphs = samples
        .iter()
        .map(|s| {
            let mut g = build_graph_with(&s.arch, sys, lut, norm)?;
            g.true_latency_ms = Some(s.latency_ms);
            Ok(g)
        })
        .collect::<Result<Vec<_>, PredictorError>>()?;
    Ok((graphs, norm))
}

/// One labeled graph per line.
pub fn write_dataset_jsonl(graphs: &[ArchGraph]) -> String {
    let mut out = String::new();
    for g in graphs {
        out.push_str(&serde_json::to_string(g).expect("graph serializes"));
        out.push('\n');
    }
    out
}

pub fn read_dataset_jsonl(text: &str) -> Result<Vec<ArchGraph>, PredictorError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PredictorError::Malformed(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch_graph::graph_from_latencies;
    use crate::perf::fixtures::{space, system};

    fn random_graph(rng: &mut ChaCha8Rng, layers: usize) -> ArchGraph {
        let ops: Vec<OpKind> = (0..layers).map(|_| OpKind::ALL[rng.random_range(0..6)]).collect();
        let lat: Vec<f64> = (0..layers).map(|_| rng.random_range(0.1..50.0)).collect();
        let mut g = graph_from_latencies(&ops, &lat, LatencyNorm::PerGraph);
        g.true_latency_ms = Some(rng.random_range(5.0..100.0));
        g
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((mape(&[110.0], &[100.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((mape(&[90.0, 110.0], &[100.0, 100.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(mape(&[1.0], &[0.0]), Err(PredictorError::ZeroTruth(_))));
        assert!(matches!(mape(&[1.0], &[1.0, 2.0]), Err(PredictorError::LengthMismatch(1, 2))));
    }

    #[test]
    fn zero_weights_predict_final_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = PredictorModel::zeros(FEATURE_DIM, HIDDEN);
        let (_, rb) = m.readout_at();
        m.params[rb] = 3.25;
        for layers in 1..6 {
            assert_eq!(m.forward(&random_graph(&mut rng, layers)).unwrap(), 3.25);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = PredictorModel::new(4, 8, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_graph(&mut rng, 3);
        assert!(matches!(m.forward(&g), Err(PredictorError::DimMismatch { expected: 4, got: 8 })));
    }

    #[test]
    fn permutation_invariance() {
        let m = PredictorModel::standard(7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let g = random_graph(&mut rng, 6);
            let mut perm: Vec<usize> = (0..g.node_count).collect();
            perm.shuffle(&mut rng);
            let mut features = vec![Vec::new(); g.node_count];
            for (old, &new) in perm.iter().enumerate() {
                features[new] = g.features[old].clone();
            }
            let mut edges: Vec<(usize, usize)> = g.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
            edges.reverse();
            let p = ArchGraph { node_count: g.node_count, edges, features, true_latency_ms: None };
            let (a, b) = (m.forward(&g).unwrap(), m.forward(&p).unwrap());
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn single_node_hand_forward() {
        // d_in = h = 2; first dense = 0.5 I, second = I, biases zero
        let mut m = PredictorModel::zeros(2, 2);
        for l in 0..GIN_LAYERS {
            let [d1, d2] = m.layer_dense(l);
            m.params[d1.w] = 0.5;
            m.params[d1.w + 3] = 0.5;
            m.params[d2.w] = 1.0;
            m.params[d2.w + 3] = 1.0;
        }
        let (r, rb) = m.readout_at();
        m.params[r] = 1.0;
        m.params[r + 1] = -2.0;
        m.params[rb] = 0.25;
        let g = ArchGraph { node_count: 1, edges: vec![(0, 0)], features: vec![vec![3.0, 1.0]], true_latency_ms: None };
        // each layer: x + mean(self) = 2x, then 0.5 * 2x = x after ReLU
        assert_eq!(m.forward(&g).unwrap(), 3.0 - 2.0 + 0.25);
        let g =
            ArchGraph { node_count: 1, edges: vec![(0, 0)], features: vec![vec![3.0, -1.0]], true_latency_ms: None };
        assert_eq!(m.forward(&g).unwrap(), 3.25);
    }

    fn finite_difference_check(model: &PredictorModel, batch: &[(&ArchGraph, f64)]) -> f64 {
        let (_, grad) = model.loss_and_gradient(batch).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..model.param_count() {
            let eps = 1e-6 * model.params[i].abs().max(1.0);
            let mut plus = model.clone();
            plus.params[i] += eps;
            let mut minus = model.clone();
            minus.params[i] -= eps;
            let numeric =
                (plus.loss_and_gradient(batch).unwrap().0 - minus.loss_and_gradient(batch).unwrap().0) / (2.0 * eps);
            let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = PredictorModel::new(FEATURE_DIM, 6, 11);
        let graphs: Vec<ArchGraph> = (0..5).map(|i| random_graph(&mut rng, 2 + i)).collect();
        let batch: Vec<(&ArchGraph, f64)> = graphs.iter().map(|g| (g, g.true_latency_ms.unwrap())).collect();
        let worst = finite_difference_check(&model, &batch);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    fn constant_dataset(label: f64) -> Vec<ArchGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_graph(&mut rng, 5);
        (0..20).map(|_| ArchGraph { true_latency_ms: Some(label), ..g.clone() }).collect()
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = constant_dataset(40.0);
        let mut m = PredictorModel::standard(5);
        let before = m.params.clone();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..TrainConfig::default() };
        train(&mut m, &data, &cfg).unwrap();
        // equal up to the rounding of the weight average
        for (a, b) in m.params.iter().zip(&before) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
        let cfg = TrainConfig { weight_averaging: 0.0, ..cfg };
        train(&mut m, &data, &cfg).unwrap();
        let mut exact = PredictorModel::standard(5);
        train(&mut exact, &data, &cfg).unwrap();
        assert_eq!(exact.params, before);
    }

    #[test]
    fn constant_target_converges() {
        let data = constant_dataset(40.0);
        for fit in [true, false] {
            let mut m = PredictorModel::standard(5);
            let cfg = TrainConfig { fit_output_scale: fit, ..TrainConfig::default() };
            let report = train(&mut m, &data, &cfg).unwrap();
            let last = report.history.last().unwrap();
            let preds: Vec<f64> = data.iter().map(|g| m.forward(g).unwrap()).collect();
            let truth = vec![40.0; data.len()];
            if fit {
                assert!(last.train_mape < 0.01, "{last:?}");
                assert!(mape(&preds, &truth).unwrap() < 0.01);
            }
            assert!(last.train_mape <= report.history[0].train_mape);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<ArchGraph> = (0..30).map(|i| random_graph(&mut rng, 2 + i % 5)).collect();
        let cfg = TrainConfig { epochs: 5, seed: 9, ..TrainConfig::default() };
        let mut a = PredictorModel::standard(1);
        let mut b = PredictorModel::standard(1);
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.train_indices.len(), 21);
    }

    #[test]
    fn training_rejects_bad_input() {
        let mut m = PredictorModel::standard(0);
        let data = constant_dataset(10.0);
        assert!(matches!(train(&mut m, &data[..5], &TrainConfig::default()), Err(PredictorError::TooSmall(5))));
        let mut bad = data.clone();
        bad[3].true_latency_ms = Some(0.0);
        assert!(matches!(train(&mut m, &bad, &TrainConfig::default()), Err(PredictorError::ZeroTruth(_))));
        let cfg = TrainConfig { split: 1.0, ..TrainConfig::default() };
        assert!(matches!(train(&mut m, &data, &cfg), Err(PredictorError::InvalidConfig(_))));
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train(&mut m, &data, &cfg), Err(PredictorError::InvalidConfig(_))));
    }

    #[test]
    fn report_perfect_and_constant() {
        let truth: Vec<f64> = (1..=10).map(|i| i as f64 * 10.0).collect();
        let r = accuracy_report(&truth, &truth, 0.1).unwrap();
        assert_eq!((r.within_bound_fraction, r.pairwise_order_accuracy), (1.0, 1.0));

        // constant prediction orders no definite pair correctly
        let constant = vec![55.0; 10];
        let r = accuracy_report(&constant, &truth, 0.1).unwrap();
        assert_eq!(r.pairwise_order_accuracy, 0.0);
        // 55 is within 10% of both 50 and 60
        assert_eq!(r.within_bound_fraction, 0.2);

        // two pairs of truths within 0.5%: 2 of 45 pairs count as ties
        let mut tied = truth.clone();
        tied[1] = 10.04;
        tied[3] = 30.1;
        let r = accuracy_report(&constant, &tied, 0.1).unwrap();
        assert!((r.pairwise_order_accuracy - 2.0 / 45.0).abs() < 1e-12);

        // reversed ranking
        let rev: Vec<f64> = truth.iter().rev().copied().collect();
        assert_eq!(accuracy_report(&rev, &truth, 0.1).unwrap().pairwise_order_accuracy, 0.0);
    }

    #[test]
    fn model_json_round_trip() {
        let mut m = PredictorModel::standard(3);
        m.output_scale = 12.5;
        m.latency_norm = LatencyNorm::Fixed { mean: 3.0, std: 2.0 };
        let back = PredictorModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(PredictorModel::from_json("{\"d_in\":8}").is_err());
    }

    #[test]
    fn synthetic_labels_exceed_table_estimate() {
        let sys = system();
        let lut = LatencyLut::synthetic(&space(), &sys);
        let samples = generate_labeled(&space(), &sys, &lut, &OverheadModel::default(), 30, 1).unwrap();
        let clean = OverheadModel { noise: 0.0, ..OverheadModel::default() };
        for s in &samples {
            let est = estimate_cost(&s.arch, &sys, &lut).unwrap().total_latency_ms;
            let expected = clean.expected_latency(&s.arch, &sys, &lut).unwrap();
            assert!(expected > est * 1.1);
            assert!((s.latency_ms - expected).abs() < 0.1 * expected);
        }
        let (graphs, norm) = build_dataset(&samples, &sys, &lut).unwrap();
        assert!(matches!(norm, LatencyNorm::Fixed { .. }));
        let text = write_dataset_jsonl(&graphs);
        assert_eq!(text.lines().count(), 30);
        assert_eq!(read_dataset_jsonl(&text).unwrap(), graphs);
    }
}
