//! Two-stage constrained random search and the architecture zoo.
//!
//! Stage 1 samples valid architectures, discards those that miss either
//! constraint and ranks the rest. Stage 2 repeatedly shrinks function settings
//! of the best-by-score member while accuracy stays within half a point.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::{AccuracyError, AccuracyOracle};
use crate::design_space::{sample_valid, scale_down, Architecture, SpaceConfig};
use crate::perf::{estimate_cost, LatencyLut, PerfError, SystemConfig};
use crate::predictor::{PredictorError, PredictorModel};

pub const MAX_REJECTIONS: usize = 10_000;
pub const STAGE2_MAX_DROP: f64 = 0.005;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no architecture satisfied the constraints ({0})")]
    EmptyZoo(SearchStats),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Accuracy(#[from] AccuracyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(rename = "T", default = "SearchConfig::default_iterations")]
    pub iterations: usize,
    #[serde(rename = "T_f", default = "SearchConfig::default_tuning")]
    pub tuning_iterations: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "SearchConfig::default_capacity")]
    pub zoo_capacity: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: Self::default_iterations(),
            tuning_iterations: Self::default_tuning(),
            lambda: 0.0,
            seed: 0,
            zoo_capacity: Self::default_capacity(),
        }
    }
}

impl SearchConfig {
    fn default_iterations() -> usize {
        2000
    }
    fn default_tuning() -> usize {
        10
    }
    fn default_capacity() -> usize {
        5
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 {
            return Err(SearchError::InvalidConfig("T must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SearchError::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if self.zoo_capacity == 0 {
            return Err(SearchError::InvalidConfig("zoo capacity must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where latency estimates come from during search.
#[derive(Debug, Clone, Copy)]
pub enum Evaluator<'a> {
    CostEstimate,
    Predictor(&'a PredictorModel),
}

impl Evaluator<'_> {
    /// `(latency_ms, energy_j)`; energy always comes from the cost model.
    pub fn evaluate(
        &self,
        arch: &Architecture,
        sys: &SystemConfig,
        lut: &LatencyLut,
    ) -> Result<(f64, f64), SearchError> {
        let report = estimate_cost(arch, sys, lut)?;
        let latency = match self {
            Evaluator::CostEstimate => report.total_latency_ms,
            Evaluator::Predictor(model) => model.predict_arch(arch, sys, lut)?,
        };
        Ok((latency, report.energy_device_j))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredArch {
    pub digest: String,
    pub arch: Architecture,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub energy_j: f64,
    pub score: f64,
}

impl ScoredArch {
    pub fn new(arch: Architecture, accuracy: f64, latency_ms: f64, energy_j: f64, score: f64) -> ScoredArch {
        ScoredArch { digest: arch.digest(), arch, accuracy, latency_ms, energy_j, score }
    }

    /// At least as good in accuracy, latency and energy, and better in one.
    pub fn dominates(&self, other: &ScoredArch) -> bool {
        let no_worse =
            self.accuracy >= other.accuracy && self.latency_ms <= other.latency_ms && self.energy_j <= other.energy_j;
        let better =
            self.accuracy > other.accuracy || self.latency_ms < other.latency_ms || self.energy_j < other.energy_j;
        no_worse && better
    }
}

pub fn satisfies(latency_ms: f64, energy_j: f64, sys: &SystemConfig) -> bool {
    latency_ms < sys.latency_constraint_ms && energy_j < sys.energy_constraint_j
}

/// `accuracy - lambda * (latency / C_lat + energy / C_e)`.
pub fn score(accuracy: f64, latency_ms: f64, energy_j: f64, sys: &SystemConfig, lambda: f64) -> f64 {
    accuracy - lambda * (latency_ms / sys.latency_constraint_ms + energy_j / sys.energy_constraint_j)
}

/// Score with failed constraints mapped to -1.
pub fn constrained_score(accuracy: f64, latency_ms: f64, energy_j: f64, sys: &SystemConfig, lambda: f64) -> f64 {
    if satisfies(latency_ms, energy_j, sys) {
        score(accuracy, latency_ms, energy_j, sys, lambda)
    } else {
        -1.0
    }
}

fn by_score(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.digest.cmp(&b.digest))
}

fn by_latency(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    a.latency_ms.total_cmp(&b.latency_ms).then_with(|| a.digest.cmp(&b.digest))
}

fn by_energy(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    a.energy_j.total_cmp(&b.energy_j).then_with(|| a.digest.cmp(&b.digest))
}

fn by_accuracy(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then_with(|| a.latency_ms.total_cmp(&b.latency_ms))
        .then_with(|| a.digest.cmp(&b.digest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureZoo {
    pub capacity: usize,
    pub best_by_score: Vec<ScoredArch>,
    pub best_by_latency: Vec<ScoredArch>,
    pub best_by_energy: Vec<ScoredArch>,
    pub best_by_accuracy: Vec<ScoredArch>,
    /// Non-dominated over (accuracy, latency, energy), ordered by latency.
    pub pareto: Vec<ScoredArch>,
}

fn insert_bounded(
    list: &mut Vec<ScoredArch>,
    cand: &ScoredArch,
    cap: usize,
    cmp: fn(&ScoredArch, &ScoredArch) -> Ordering,
) {
    if list.iter().any(|m| m.digest == cand.digest) {
        return;
    }
    let pos = list.partition_point(|m| cmp(m, cand) == Ordering::Less);
    if pos < cap {
        list.insert(pos, cand.clone());
        list.truncate(cap);
    }
}

impl ArchitectureZoo {
    pub fn new(capacity: usize) -> ArchitectureZoo {
        assert!(capacity > 0);
        ArchitectureZoo {
            capacity,
            best_by_score: Vec::new(),
            best_by_latency: Vec::new(),
            best_by_energy: Vec::new(),
            best_by_accuracy: Vec::new(),
            pareto: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.best_by_score.is_empty() && self.pareto.is_empty()
    }

    /// Inserts into every leaderboard the candidate qualifies for and refreshes
    /// the Pareto set. Re-inserting a known digest changes nothing.
    pub fn update(&mut self, cand: &ScoredArch) {
        let cap = self.capacity;
        insert_bounded(&mut self.best_by_score, cand, cap, by_score);
        insert_bounded(&mut self.best_by_latency, cand, cap, by_latency);
        insert_bounded(&mut self.best_by_energy, cand, cap, by_energy);
        insert_bounded(&mut self.best_by_accuracy, cand, cap, by_accuracy);
        if self.pareto.iter().any(|m| m.digest == cand.digest || m.dominates(cand)) {
            return;
        }
        self.pareto.retain(|m| !cand.dominates(m));
        let pos = self.pareto.partition_point(|m| by_latency(m, cand) == Ordering::Less);
        self.pareto.insert(pos, cand.clone());
    }

    /// Every distinct member across leaderboards and the Pareto set, ordered
    /// by digest.
    pub fn members(&self) -> Vec<&ScoredArch> {
        let mut all: Vec<&ScoredArch> =
            [&self.best_by_score, &self.best_by_latency, &self.best_by_energy, &self.best_by_accuracy, &self.pareto]
                .into_iter()
                .flatten()
                .collect();
        all.sort_by(|a, b| a.digest.cmp(&b.digest));
        all.dedup_by(|a, b| a.digest == b.digest);
        all
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("zoo serializes")
    }

    pub fn from_json(text: &str) -> Result<ArchitectureZoo, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    /// Iterations that hit the rejection cap without a valid draw.
    pub sampling_failures: usize,
    pub constraint_failures: usize,
    pub accepted: usize,
    pub tuning_attempts: usize,
    pub tuning_accepted: usize,
}

impl std::fmt::Display for SearchStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} iterations, {} accepted, {} over constraints, {} sampling failures, {}/{} tuning steps kept",
            self.iterations,
            self.accepted,
            self.constraint_failures,
            self.sampling_failures,
            self.tuning_accepted,
            self.tuning_attempts
        )
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub zoo: ArchitectureZoo,
    pub stats: SearchStats,
}

/// Runs both stages. The only randomness is the seeded generator, so equal
/// inputs give byte-identical zoos.
pub fn search(
    space: &SpaceConfig,
    sys: &SystemConfig,
    lut: &LatencyLut,
    oracle: &AccuracyOracle,
    evaluator: Evaluator<'_>,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    cfg.validate()?;
    space.check().map_err(SearchError::InvalidConfig)?;
    sys.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut zoo = ArchitectureZoo::new(cfg.zoo_capacity);
    let mut stats = SearchStats::default();

    let assess = |arch: Architecture, stats: &mut SearchStats| -> Result<Option<ScoredArch>, SearchError> {
        let (latency, energy) = evaluator.evaluate(&arch, sys, lut)?;
        if !satisfies(latency, energy, sys) {
            stats.constraint_failures += 1;
            return Ok(None);
        }
        let accuracy = oracle.evaluate(&arch)?;
        let s = score(accuracy, latency, energy, sys, cfg.lambda);
        Ok(Some(ScoredArch::new(arch, accuracy, latency, energy, s)))
    };

    for _ in 0..cfg.iterations {
        stats.iterations += 1;
        let Some(arch) = sample_valid(space, &mut rng, MAX_REJECTIONS) else {
            stats.sampling_failures += 1;
            continue;
        };
        if let Some(cand) = assess(arch, &mut stats)? {
            stats.accepted += 1;
            zoo.update(&cand);
        }
    }

    if let Some(anchor) = zoo.best_by_score.first().cloned() {
        let mut current = anchor.clone();
        for _ in 0..cfg.tuning_iterations {
            let shrunk = scale_down(&current.arch, space, &mut rng);
            if shrunk == current.arch {
                break;
            }
            stats.tuning_attempts += 1;
            if let Some(cand) = assess(shrunk, &mut stats)? {
                if anchor.accuracy - cand.accuracy <= STAGE2_MAX_DROP {
                    stats.tuning_accepted += 1;
                    zoo.update(&cand);
                    current = cand;
                }
            }
        }
    }

    if zoo.is_empty() {
        return Err(SearchError::EmptyZoo(stats));
    }
    Ok(SearchOutcome { zoo, stats })
}
