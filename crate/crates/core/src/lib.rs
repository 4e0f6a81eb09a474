//! Streaming video denoising with bidirectional temporal buffers.
//!
//! The same network can run offline over whole clips ([`offline`]) or online
//! one frame at a time ([`stream`]); with exact end-of-stream handling the
//! two produce bitwise identical outputs.

mod error;
pub mod fdvd;
pub mod io;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod offline;
pub mod stream;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use model::{build_wnet, FusionMode, ModelConfig, NetDef};
pub use stream::{FlushMode, StreamState};
pub use tensor::{FeatureMap, Tensor};
pub use weights::{init_weights, Model, WeightStore};
