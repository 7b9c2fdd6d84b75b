//! Stand-in for validation accuracy: a deterministic synthetic surrogate or a
//! table keyed by the canonical architecture hash.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::design_space::{hex_digest, Architecture, InputSpec, LayerSpec};

#[derive(Debug, Error, PartialEq)]
pub enum AccuracyError {
    #[error("no accuracy recorded for architecture {0}")]
    MissingAccuracy(String),
    #[error("accuracy table entry {0} is outside [0, 1]")]
    OutOfRange(String),
    #[error("malformed accuracy table: {0}")]
    Malformed(String),
}

pub const SYNTHETIC_CEILING: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub enum AccuracyOracle {
    Synthetic,
    Table(BTreeMap<String, f64>),
}

#[derive(Serialize)]
struct CanonicalForm<'a> {
    input: &'a InputSpec,
    layers: Vec<&'a LayerSpec>,
}

/// Digest of the input spec and compute layers; `Communicate` positions do
/// not change it.
pub fn canonical_hash(arch: &Architecture) -> String {
    let form = CanonicalForm {
        input: &arch.input,
        layers: arch.layers.iter().filter(|l| **l != LayerSpec::Communicate).collect(),
    };
    hex_digest(serde_json::to_string(&form).expect("serializable").as_bytes())
}

/// `0.5 + 0.1 [aggregate] + 0.08 [sample, or aggregate over the input graph]
/// + 0.05 log2(widest combine) / 8 - 0.02 per identity`, clamped to [0, 0.95].
pub fn synthetic_accuracy(arch: &Architecture) -> f64 {
    let has = |f: fn(&LayerSpec) -> bool| arch.layers.iter().any(f);
    let aggregate = has(|l| matches!(l, LayerSpec::Aggregate { .. }));
    let sample = has(|l| matches!(l, LayerSpec::Sample { .. }));
    let graph_term = sample || (arch.input.has_input_graph && aggregate);
    let width = arch
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Combine { out_dim } => Some(*out_dim),
            _ => None,
        })
        .max();
    let identities = arch.layers.iter().filter(|l| **l == LayerSpec::Identity).count();
    let mut acc = 0.5;
    if aggregate {
        acc += 0.1;
    }
    if graph_term {
        acc += 0.08;
    }
    if let Some(w) = width {
        acc += 0.05 * (w as f64).log2() / 8.0;
    }
    acc -= 0.02 * identities as f64;
    acc.clamp(0.0, SYNTHETIC_CEILING)
}

impl AccuracyOracle {
    pub fn evaluate(&self, arch: &Architecture) -> Result<f64, AccuracyError> {
        match self {
            AccuracyOracle::Synthetic => Ok(synthetic_accuracy(arch)),
            AccuracyOracle::Table(table) => {
                let hash = canonical_hash(arch);
                table.get(&hash).copied().ok_or(AccuracyError::MissingAccuracy(hash))
            }
        }
    }

    /// Parses a `{hash: accuracy}` JSON map.
    pub fn table_from_json(text: &str) -> Result<AccuracyOracle, AccuracyError> {
        let table: BTreeMap<String, f64> =
            serde_json::from_str(text).map_err(|e| AccuracyError::Malformed(e.to_string()))?;
        if let Some((k, _)) = table.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(AccuracyError::OutOfRange(k.clone()));
        }
        Ok(AccuracyOracle::Table(table))
    }
}
