//! Builds a zoo once, then picks a member as bandwidth and budgets change.

use coinfer::accuracy::AccuracyOracle;
use coinfer::design_space::SpaceConfig;
use coinfer::dispatch::{dispatch_or_fallback, RuntimeConstraints};
use coinfer::perf::{LatencyLut, SystemConfig};
use coinfer::search::{search, Evaluator, SearchConfig};

fn main() {
    let space: SpaceConfig = serde_json::from_str(include_str!("data/space.json")).unwrap();
    let sys: SystemConfig = serde_json::from_str(include_str!("data/system.json")).unwrap();
    let lut = LatencyLut::synthetic(&space, &sys);
    let cfg = SearchConfig { iterations: 1000, lambda: 0.5, seed: 4, ..SearchConfig::default() };
    let zoo = search(&space, &sys, &lut, &AccuracyOracle::Synthetic, Evaluator::CostEstimate, &cfg).unwrap().zoo;
    println!("zoo holds {} distinct architectures", zoo.members().len());

    let settings = [(500.0, 2.0, 10.0), (25.0, 0.1, 10.0), (25.0, 0.1, 50.0), (20.0, 0.05, 1.0), (1.0, 0.001, 10.0)];
    for (lat, energy, bw) in settings {
        let c = RuntimeConstraints { latency_budget_ms: lat, energy_budget_j: energy, current_bandwidth_mbps: bw };
        let choice = dispatch_or_fallback(&zoo, &c, &sys, &lut).unwrap();
        let m = &choice.member;
        println!(
            "{lat:>5} ms {energy:>5} J {bw:>4} Mbps -> {} acc {:.3} {:>7.2} ms {:.4} J{}",
            &m.digest[..10],
            m.accuracy,
            m.latency_ms,
            m.energy_j,
            if choice.fallback { "  (fallback)" } else { "" }
        );
    }
}
