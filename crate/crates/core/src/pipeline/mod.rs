mod ablation;
mod config;
mod manifest;
mod run;

pub use ablation::{ablation_variants, ablation_warning, AblationRow, AblationTable, AblationVariant};
pub use config::{content_hash, AblationConfig, PipelineConfig, Seeds};
pub use manifest::{record_timing, RunManifest, Stage, StageRecord, MANIFEST_FILE, TIMINGS_FILE};
pub use run::{EditReport, GenerationRecord, GenerationReport, Pipeline, CONFIG_FILE};
