//! Builds a latency table and prices one architecture at a few uplink
//! bandwidths: per-layer latency, partitions and device energy.

use coinfer::design_space::{Architecture, SpaceConfig};
use coinfer::perf::{estimate_cost, LatencyLut, SystemConfig};

fn main() {
    let space: SpaceConfig = serde_json::from_str(include_str!("data/space.json")).unwrap();
    let sys: SystemConfig = serde_json::from_str(include_str!("data/system.json")).unwrap();
    let arch = Architecture::from_json(include_str!("data/arch.json")).unwrap();
    let lut = LatencyLut::synthetic(&space, &sys);
    println!("table holds {} entries", lut.len());

    let report = estimate_cost(&arch, &sys, &lut).unwrap();
    for (layer, ms) in arch.layers.iter().zip(&report.per_layer_ms) {
        println!("  {:<16} {ms:>9.3} ms", layer.op().as_str());
    }

    println!("{:>8} {:>10} {:>10} {:>10} {:>9}", "Mbps", "total ms", "device ms", "comm ms", "energy J");
    for mbps in [1.0, 5.0, 10.0, 40.0, 100.0] {
        let r = estimate_cost(&arch, &sys.with_bandwidth(mbps), &lut).unwrap();
        println!(
            "{mbps:>8.0} {:>10.2} {:>10.2} {:>10.2} {:>9.4}",
            r.total_latency_ms, r.device_compute_ms, r.comm_ms, r.energy_device_j
        );
    }
}
