//! Coordinated part transformers: attention masks, partial occlusion, text
//! conditioning and the hybrid causal/bidirectional objective.

pub mod loss;
pub mod mask;
pub mod model;
pub mod occlusion;
pub mod text;
pub mod train;

pub use loss::{argmax, hybrid_loss, sample_masks, ExampleMasks, LossTerms, TokenizedExample};
pub use mask::{build_bp_mask, build_causal_mask, build_strict_mask, sample_bp_unmask_set, AttentionMask, UnmaskDraw};
pub use model::{BipoModel, ForwardOutput, ModelInput, T2mConfig};
pub use occlusion::{sample_po_mask, OcclusionMask};
pub use text::{ExternalEmbeddings, TextEncoder, TextInput, TextVocab};
pub use train::{causal_accuracy, evaluate, tokenize_pairs, train_t2m, T2mCurvePoint, T2mReport};
