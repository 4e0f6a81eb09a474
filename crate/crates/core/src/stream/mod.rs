//! Online execution: buffer blocks, the delay-balanced pipeline graph and
//! the per-stream scheduler.

mod block;
mod graph;
mod pipeline;

pub use block::{BufferState, Flow, UniState};
pub use graph::{analyze, compile_pipeline, GraphStage, PipelineGraph, PipelineReport, SkipLink};
pub use pipeline::{run_stream, FlushMode, StreamState};
