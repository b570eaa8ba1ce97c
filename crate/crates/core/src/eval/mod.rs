mod extractor;
mod linalg;
mod metrics;
mod protocol;

pub use extractor::{
    contrastive_loss, pairing_distances, train_extractors, ExtractorConfig, ExtractorReport, FeatureExtractors,
};
pub use linalg::{fid, fid_from_gaussians, gaussian, matrix_sqrt_psd, to_matrix, Fid, Gaussian, COV_RIDGE};
pub use metrics::{
    diversity, draw_disjoint, draw_pools, euclidean, mean_pair_distance, mm_dist, mmodality, r_precision,
    r_precision_with_pools, R_PRECISION_POOL,
};
pub use protocol::{eval_motions, evaluate_model, summarize, EvalContext, EvalMode, EvalProtocol, EvalReport, Stat};
