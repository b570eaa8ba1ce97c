//! Per-part VQ-VAE tokenizers.

pub mod model;
pub mod stats;
pub mod train;

pub use model::{nearest_code, quantize, MotionTokenizer, PartVq, Quantized, VqConfig};
pub use stats::{codebook_stats, CodebookStats};
pub use train::{raw_reconstruction_mse, reconstruction_mse, train_part, train_vqvae, PartReport, VqTrainReport};
