//! Joint search over GNN architectures and their device/edge split, with a
//! cost model, a learned latency predictor, a runtime dispatcher and a
//! pipelined split-inference engine over TCP.

pub mod accuracy;
pub mod arch_graph;
pub mod cli;
pub mod design_space;
pub mod dispatch;
pub mod engine;
pub mod perf;
pub mod predictor;
pub mod search;
