//! Picks a zoo member for the constraints in force right now.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::{estimate_cost, LatencyLut, PerfError, PerfReport, SystemConfig};
use crate::search::{ArchitectureZoo, ScoredArch};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("no zoo member fits the current budgets")]
    NoFeasibleArch,
    #[error("the zoo is empty")]
    EmptyZoo,
    #[error("invalid runtime constraints: {0}")]
    InvalidConstraints(String),
    #[error(transparent)]
    Perf(#[from] PerfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeConstraints {
    pub latency_budget_ms: f64,
    pub energy_budget_j: f64,
    pub current_bandwidth_mbps: f64,
}

impl RuntimeConstraints {
    pub fn validate(&self) -> Result<(), DispatchError> {
        let ok = |v: f64| v > 0.0;
        if ok(self.latency_budget_ms) && ok(self.energy_budget_j) && ok(self.current_bandwidth_mbps) {
            Ok(())
        } else {
            Err(DispatchError::InvalidConstraints("budgets and bandwidth must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    /// The member with latency and energy re-estimated for the current
    /// bandwidth.
    pub member: ScoredArch,
    /// Set when nothing fit and the fastest member was returned instead.
    pub fallback: bool,
}

fn comm_energy(sys: &SystemConfig, r: &PerfReport) -> f64 {
    (sys.device.power_tx_w * r.comm_tx_ms + sys.device.power_rx_w * r.comm_rx_ms) / 1e3
}

/// Swaps the transfer terms of `member` (estimated under `sys`) for those at
/// `bandwidth_mbps`; compute terms are kept as recorded.
pub fn reestimate(
    member: &ScoredArch,
    sys: &SystemConfig,
    lut: &LatencyLut,
    bandwidth_mbps: f64,
) -> Result<ScoredArch, PerfError> {
    let before = estimate_cost(&member.arch, sys, lut)?;
    let now_sys = sys.with_bandwidth(bandwidth_mbps);
    let now = estimate_cost(&member.arch, &now_sys, lut)?;
    Ok(ScoredArch {
        latency_ms: member.latency_ms - before.comm_ms + now.comm_ms,
        energy_j: member.energy_j - comm_energy(sys, &before) + comm_energy(&now_sys, &now),
        ..member.clone()
    })
}

fn rank(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then_with(|| a.latency_ms.total_cmp(&b.latency_ms))
        .then_with(|| a.digest.cmp(&b.digest))
}

fn rescored(
    zoo: &ArchitectureZoo,
    c: &RuntimeConstraints,
    sys: &SystemConfig,
    lut: &LatencyLut,
) -> Result<Vec<ScoredArch>, DispatchError> {
    c.validate()?;
    let members = zoo.members();
    if members.is_empty() {
        return Err(DispatchError::EmptyZoo);
    }
    members.into_iter().map(|m| Ok(reestimate(m, sys, lut, c.current_bandwidth_mbps)?)).collect()
}

/// Highest-accuracy member within both budgets (inclusive); ties go to lower
/// latency, then to the smaller digest.
pub fn dispatch(
    zoo: &ArchitectureZoo,
    constraints: &RuntimeConstraints,
    sys: &SystemConfig,
    lut: &LatencyLut,
) -> Result<Choice, DispatchError> {
    rescored(zoo, constraints, sys, lut)?
        .into_iter()
        .filter(|m| m.latency_ms <= constraints.latency_budget_ms && m.energy_j <= constraints.energy_budget_j)
        .min_by(rank)
        .map(|member| Choice { member, fallback: false })
        .ok_or(DispatchError::NoFeasibleArch)
}

/// Like [`dispatch`], but returns the fastest member with `fallback` set when
/// nothing fits.
pub fn dispatch_or_fallback(
    zoo: &ArchitectureZoo,
    constraints: &RuntimeConstraints,
    sys: &SystemConfig,
    lut: &LatencyLut,
) -> Result<Choice, DispatchError> {
    match dispatch(zoo, constraints, sys, lut) {
        Err(DispatchError::NoFeasibleArch) => {
            let fastest = rescored(zoo, constraints, sys, lut)?
                .into_iter()
                .min_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms).then_with(|| a.digest.cmp(&b.digest)))
                .expect("non-empty zoo");
            Ok(Choice { member: fastest, fallback: true })
        }
        other => other,
    }
}
