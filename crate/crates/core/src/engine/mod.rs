//! Split-execution runtime: kernels, reference executor, wire format and the
//! device/edge processes.

pub mod exec;
pub mod kernels;
pub mod runtime;
pub mod tensor;
pub mod wire;

pub use exec::{execute_reference, Emulation, InputFrame};
pub use runtime::{
    run_device, serve_connection, serve_edge, spawn_loopback_edge, DeviceOptions, DeviceRun, EdgeOptions,
    EdgeSessionStats, EngineError, FrameStats, PipelineMode,
};
pub use tensor::Tensor;
pub use wire::{decode_message, encode_message, MsgType, WireError, WireMessage};
