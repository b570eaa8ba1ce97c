mod decode;
mod edit;
mod sampler;

pub use decode::{
    causal_prefix_mask, end_length, generate, generate_batch, generate_pass1, generate_pass1_batch, refine_pass2,
    refine_pass2_batch, refine_unmask_set, GenerateConfig,
    Generation, Pass1, END_QUORUM,
};
pub use edit::{edit, edit_regions, edit_tokens, edit_unmask_set, Edit, EditMode, EditRegions};
pub use sampler::{Sampler, SamplerConfig, SamplerMode};
