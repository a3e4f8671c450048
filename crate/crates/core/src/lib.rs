//! Plan-grounded video moment retrieval, desk scale.
//!
//! The crate covers the retrieval side of a plan-guided multimodal assistant:
//! a shared retrieval embedding space with rotary temporal encoding, its
//! contrastive training loop, candidate moment extraction, the evaluation
//! stack, and a deterministic instructional-dialogue dataset pipeline.
//! Neural backbones are out of scope; frame and token features arrive as
//! precomputed vectors in a simple binary file format ([`vecset`]).

pub mod error;
pub mod extract;
pub mod hash;
pub mod metrics;
pub mod pipeline;
pub mod plan;
pub mod retrieval;
pub mod training;
pub mod vecset;

pub use error::{Error, Result};
