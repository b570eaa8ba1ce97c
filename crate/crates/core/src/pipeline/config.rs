use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_file, CoreError, Result};
use crate::eval::{EvalProtocol, ExtractorConfig};
use crate::generate::GenerateConfig;
use crate::motion::corpus::CorpusConfig;
use crate::t2m::T2mConfig;
use crate::vq::VqConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub corpus: u64,
    pub vq: u64,
    pub t2m: u64,
    pub extractors: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 7,
            vq: 1,
            t2m: 1,
            extractors: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Occlusion probabilities for the +PO and +BA+PO rows.
    pub occlusion: Vec<f64>,
    /// Training steps per row; `None` uses the transformer config.
    pub steps: Option<usize>,
    /// Evaluation protocol per row; `None` uses the main protocol.
    pub protocol: Option<EvalProtocol>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            occlusion: vec![0.4],
            steps: None,
            protocol: None,
        }
    }
}

/// Everything needed to reproduce a run. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seeds: Seeds,
    pub corpus: CorpusConfig,
    pub vq: VqConfig,
    pub t2m: T2mConfig,
    pub extractors: ExtractorConfig,
    pub generate: GenerateConfig,
    pub eval: EvalProtocol,
    pub ablation: AblationConfig,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seeds: Seeds::default(),
            corpus: CorpusConfig::default(),
            vq: VqConfig::default(),
            t2m: T2mConfig::default(),
            extractors: ExtractorConfig::default(),
            generate: GenerateConfig::default(),
            eval: EvalProtocol::default(),
            ablation: AblationConfig::default(),
            output_dir: PathBuf::from("runs/desk"),
        }
    }
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.vq.validate()?;
        self.t2m.validate()?;
        self.extractors.validate()?;
        self.eval.validate()?;
        if self.t2m.max_tokens * self.vq.downsample < self.corpus.max_frames {
            return Err(CoreError::invalid(format!(
                "max_tokens {} × downsample {} cannot cover {} frames",
                self.t2m.max_tokens, self.vq.downsample, self.corpus.max_frames
            )));
        }
        if self.ablation.occlusion.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(CoreError::invalid("ablation occlusion values must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }

    /// Hash of the whole config except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        content_hash(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let mut c = PipelineConfig::default();
        c.t2m.lambda = 0.1 + 0.2;
        c.ablation.occlusion = vec![0.2, 0.4];
        let back = PipelineConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), c.to_json());
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = PipelineConfig::from_json(r#"{"t2m": {"lambda": 0.25}}"#).unwrap();
        assert_eq!(c.t2m.lambda, 0.25);
        assert_eq!(c.t2m.dim, 64);
        let c = PipelineConfig::from_json(r#"{"output_dir": "x", "seeds": {"vq": 9}}"#).unwrap();
        assert_eq!(c.seeds.vq, 9);
        assert_eq!(c.seeds.corpus, 7);
        assert_eq!(c.t2m, T2mConfig::default());
        assert!(PipelineConfig::from_json(r#"{"typo": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"vq": {"typo": 1}}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.t2m.lambda = 0.3;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn default_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }
}
