//! Runs the two-stage search at a few trade-off weights and prints the
//! resulting zoo leaderboards.

use coinfer::accuracy::AccuracyOracle;
use coinfer::design_space::SpaceConfig;
use coinfer::perf::{LatencyLut, SystemConfig};
use coinfer::search::{search, Evaluator, SearchConfig};

fn main() {
    let space: SpaceConfig = serde_json::from_str(include_str!("data/space.json")).unwrap();
    let sys: SystemConfig = serde_json::from_str(include_str!("data/system.json")).unwrap();
    let lut = LatencyLut::synthetic(&space, &sys);

    for lambda in [0.0, 0.5, 2.0] {
        let cfg = SearchConfig { iterations: 1000, lambda, seed: 3, ..SearchConfig::default() };
        let out = search(&space, &sys, &lut, &AccuracyOracle::Synthetic, Evaluator::CostEstimate, &cfg).unwrap();
        println!("lambda {lambda}: {}", out.stats);
        for (board, list) in [("score", &out.zoo.best_by_score), ("latency", &out.zoo.best_by_latency)] {
            let m = &list[0];
            let ops: Vec<_> = m.arch.ops().map(|o| o.as_str()).collect();
            println!(
                "  best by {board:<8} acc {:.3} {:>7.2} ms {:.4} J  {}",
                m.accuracy,
                m.latency_ms,
                m.energy_j,
                ops.join(" > ")
            );
        }
        println!("  pareto set: {} members", out.zoo.pareto.len());
    }
}
