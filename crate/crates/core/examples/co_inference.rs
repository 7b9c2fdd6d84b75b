//! Runs a split architecture over loopback TCP, sequentially and pipelined,
//! against an edge with a fixed extra delay, and checks the outputs against
//! single-process execution.

use std::time::Duration;

use coinfer::design_space::Architecture;
use coinfer::engine::{
    execute_reference, run_device, spawn_loopback_edge, DeviceOptions, EdgeOptions, InputFrame, PipelineMode,
};

fn main() {
    let arch = Architecture::from_json(include_str!("data/arch.json")).unwrap();
    let frames = InputFrame::random_batch(&arch.input, 24, 11);
    for mode in [PipelineMode::Sequential, PipelineMode::Pipelined] {
        let edge_opts = EdgeOptions { seed: 5, injected_delay: Duration::from_millis(15), ..EdgeOptions::default() };
        let (addr, edge) = spawn_loopback_edge(arch.clone(), edge_opts).unwrap();
        let opts = DeviceOptions { seed: 5, mode, throttle_mbps: Some(20.0), ..DeviceOptions::default() };
        let run = run_device(addr, &arch, &frames, &opts).unwrap();
        let served = edge.join().unwrap().unwrap();

        let worst = frames
            .iter()
            .zip(&run.outputs)
            .map(|(f, out)| out.as_ref().unwrap().max_abs_diff(&execute_reference(&arch, f, 5).unwrap()).unwrap())
            .fold(0.0, f64::max);
        let s = &run.stats;
        println!(
            "{mode:?}: {}/{} frames, mean {:.1} ms, {:.1} fps, sent {} B (ratio {:.2}), edge ran {} segments, max diff {worst:.1e}",
            s.completed, s.frames, s.mean_latency_ms, s.throughput_fps, s.bytes_sent, s.compressed_ratio, served.segments_run
        );
    }
}
