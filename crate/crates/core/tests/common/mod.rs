#![allow(dead_code)]

use std::collections::BTreeMap;

use coinfer::design_space::{InputSpec, OpKind, SpaceConfig};
use coinfer::perf::{DeviceProfile, SystemConfig};

pub fn profile(id: &str, multipliers: [f64; 6], idle: f64, run: f64, tx: f64, rx: f64) -> DeviceProfile {
    let op_multipliers: BTreeMap<OpKind, f64> = OpKind::ALL.iter().copied().zip(multipliers).collect();
    DeviceProfile {
        id: id.into(),
        power_idle_w: idle,
        power_run_w: run,
        power_tx_w: tx,
        power_rx_w: rx,
        op_multipliers,
    }
}

/// A slow battery device next to a fast edge box, 10 Mbps uplink.
pub fn system() -> SystemConfig {
    SystemConfig {
        device: profile("device", [6.0, 5.0, 1.0, 4.0, 3.0, 1.0], 1.5, 3.0, 2.0, 1.2),
        edge: profile("edge", [1.0; 6], 20.0, 60.0, 5.0, 5.0),
        bandwidth_mbps: 10.0,
        latency_constraint_ms: 500.0,
        energy_constraint_j: 2.0,
        comm_overhead_ms: 2.0,
    }
}

pub fn point_cloud_space() -> SpaceConfig {
    SpaceConfig::new(InputSpec::point_cloud(1024, 3))
}
