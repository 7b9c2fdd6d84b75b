//! Turns an architecture into the graph the latency predictor reads and
//! dumps nodes, features and edges.

use coinfer::arch_graph::{build_graph, GLOBAL_KIND};
use coinfer::design_space::{Architecture, OpKind, SpaceConfig};
use coinfer::perf::{LatencyLut, SystemConfig};

fn main() {
    let space: SpaceConfig = serde_json::from_str(include_str!("data/space.json")).unwrap();
    let sys: SystemConfig = serde_json::from_str(include_str!("data/system.json")).unwrap();
    let arch = Architecture::from_json(include_str!("data/arch.json")).unwrap();
    let lut = LatencyLut::synthetic(&space, &sys);

    let g = build_graph(&arch, &sys, &lut).unwrap();
    for (i, f) in g.features.iter().enumerate() {
        let kind = f.iter().take(GLOBAL_KIND + 1).position(|&x| x == 1.0).unwrap();
        let name = if kind == GLOBAL_KIND { "global" } else { OpKind::ALL[kind].as_str() };
        println!("node {i:>2} {name:<15} latency feature {:+.3}", f[f.len() - 1]);
    }
    println!("{} edges: {:?}", g.edges.len(), g.edges);
}
