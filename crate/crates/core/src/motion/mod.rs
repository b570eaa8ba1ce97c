//! Pose features, body parts, mirroring and the synthetic corpus.

pub mod corpus;
pub mod features;
pub mod io;
pub mod mirror;
pub mod parts;
pub mod skeleton;

pub use corpus::{generate_corpus, Corpus, CorpusConfig, Split, TextMotionPair};
pub use features::{compute_pose_features, PoseSequence, FEATURE_DIM};
pub use io::{export_motion, import_motion};
pub use mirror::{mirror_pose, mirror_text};
pub use parts::{merge_parts, split_parts, Part, PartMotion, NUM_PARTS};
