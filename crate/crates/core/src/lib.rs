//! Part-coordinated text-to-motion generation at desk scale.
//!
//! * [`motion`]: 263-column pose features on a 22-joint skeleton, six-part
//!   division, mirroring and a procedural text–motion corpus.
//! * [`vq`]: per-part VQ-VAE tokenizers.
//! * [`t2m`]: six coordinated part transformers with bidirectional
//!   autoregressive masking and partial occlusion.
//! * [`generate`]: two-pass decoding and motion editing.
//! * [`eval`]: contrastive feature extractors and retrieval/distribution metrics.
//! * [`pipeline`]: staged, hash-checked orchestration used by the CLI.

pub mod error;
pub mod eval;
pub mod generate;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod t2m;
pub mod vq;

pub use error::{CoreError, Result};
