//! Samples the search space, shows validity verdicts, the device/edge
//! mapping and the shape trace of a split architecture.

use coinfer::design_space::{
    check_validity, derive_mapping, infer_shapes, sample_valid, Architecture, LayerSpec, Reducer, SpaceConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let space: SpaceConfig = serde_json::from_str(include_str!("data/space.json")).unwrap();
    let arch = Architecture::from_json(include_str!("data/arch.json")).unwrap();

    let mapping = derive_mapping(&arch).unwrap();
    println!("architecture {}", &arch.digest()[..12]);
    for seg in &mapping.segments {
        println!("  {:?} runs layers {}..{}", seg.placement, seg.start, seg.end);
    }
    let trace = infer_shapes(&arch);
    for (layer, shape) in arch.layers.iter().zip(&trace.layers) {
        println!("  {:<16} -> {:?}", layer.op().as_str(), shape);
    }

    let broken = Architecture::new(
        arch.input,
        vec![LayerSpec::Aggregate { reducer: Reducer::Max }, LayerSpec::Communicate, LayerSpec::Communicate],
    );
    let codes: Vec<_> = check_validity(&broken).iter().map(|v| v.code()).collect();
    println!("broken architecture violates {codes:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let a = sample_valid(&space, &mut rng, 10_000).unwrap();
        let ops: Vec<_> = a.ops().map(|o| o.as_str()).collect();
        println!("sampled {}", ops.join(" > "));
    }
}
