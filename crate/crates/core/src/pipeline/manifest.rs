use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Corpus,
    Vq,
    T2m,
    Extractors,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Corpus, Stage::Vq, Stage::T2m, Stage::Extractors];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Vq => "train-vq",
            Stage::T2m => "train-t2m",
            Stage::Extractors => "train-extractors",
        }
    }

    /// Stages whose outputs this one consumes.
    pub fn needs(self) -> &'static [Stage] {
        match self {
            Stage::Corpus => &[],
            Stage::Vq => &[Stage::Corpus],
            Stage::T2m => &[Stage::Corpus, Stage::Vq],
            Stage::Extractors => &[Stage::Corpus],
        }
    }
}

/// One completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    /// Hash of the config sections and seeds this stage (and its inputs) used.
    pub hash: String,
    /// Order of completion within the run directory.
    pub sequence: u64,
    /// Role → path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
}

/// Record of the stages completed in a run directory. Contains no wall-clock
/// data so reruns produce identical bytes; timings live in `timings.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
    pub next_sequence: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self {
            format: "bipo-run".into(),
            config_hash,
            stages: BTreeMap::new(),
            next_sequence: 0,
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let m: Self = serde_json::from_slice(&read_file(&path)?)?;
        if m.format != "bipo-run" {
            return Err(CoreError::Parse(format!("{} is not a run manifest", path.display())));
        }
        Ok(Some(m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn get(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(stage.name())
    }

    /// Records a completed stage. Downstream records made from an older
    /// version become stale through their hash chain.
    pub fn record(&mut self, stage: Stage, hash: String, artifacts: BTreeMap<String, String>) {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.stages.insert(
            stage.name().into(),
            StageRecord {
                hash,
                sequence,
                artifacts,
            },
        );
    }

    /// Errors unless `stage` is recorded with `expected` hash.
    pub fn require(&self, stage: Stage, expected: &str, by: &str) -> Result<&StageRecord> {
        let rec = self.get(stage).ok_or_else(|| CoreError::MissingStage {
            stage: by.into(),
            needs: stage.name().into(),
        })?;
        if rec.hash != expected {
            return Err(CoreError::StaleStage {
                stage: stage.name().into(),
                reason: format!(
                    "recorded hash {} differs from the current config's {}; rerun `{}`",
                    &rec.hash[..12.min(rec.hash.len())],
                    &expected[..12.min(expected.len())],
                    stage.name()
                ),
            });
        }
        Ok(rec)
    }
}

/// Wall-clock seconds per stage, kept apart from the manifest.
pub fn record_timing(dir: &Path, key: &str, seconds: f64) -> Result<()> {
    let path = dir.join(TIMINGS_FILE);
    let mut t: BTreeMap<String, f64> = if path.exists() {
        serde_json::from_slice(&read_file(&path)?)?
    } else {
        BTreeMap::new()
    };
    t.insert(key.into(), seconds);
    write_file(&path, serde_json::to_string_pretty(&t)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_and_stale() {
        let mut m = RunManifest::new("c".into());
        let err = m.require(Stage::Vq, "h", "train-t2m").unwrap_err();
        assert!(matches!(err, CoreError::MissingStage { .. }));
        m.record(Stage::Vq, "h".into(), BTreeMap::new());
        assert!(m.require(Stage::Vq, "h", "train-t2m").is_ok());
        let err = m.require(Stage::Vq, "other", "train-t2m").unwrap_err();
        assert!(matches!(err, CoreError::StaleStage { .. }));
        m.record(Stage::T2m, "t".into(), BTreeMap::new());
        assert_eq!(m.get(Stage::T2m).unwrap().sequence, 1);
    }
}
