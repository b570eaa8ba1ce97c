//! Self-describing JSON motion files.
//!
//! ```json
//! {"format": "bipo-motion", "version": 1, "fps": 20, "feature_dim": 263,
//!  "frames": L, "layout": [{"name": ..., "offset": ..., "width": ...}, ...],
//!  "parts": [{"name": "Root", "columns": [...]}, ...],
//!  "data": [[263 floats], ...]}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so export then
//! import reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::{PoseSequence, FEATURE_DIM, LAYOUT};
use super::parts::Part;
use super::skeleton::FPS;
use crate::error::{read_file, write_file, CoreError, Result};

pub const MOTION_FORMAT: &str = "bipo-motion";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartTable {
    pub name: String,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub format: String,
    pub version: u32,
    pub fps: u32,
    pub feature_dim: usize,
    pub frames: usize,
    pub layout: Vec<LayoutEntry>,
    pub parts: Vec<PartTable>,
    pub data: Vec<Vec<f64>>,
}

pub fn layout_entries() -> Vec<LayoutEntry> {
    LAYOUT
        .iter()
        .map(|b| LayoutEntry {
            name: b.name.to_string(),
            offset: b.offset,
            width: b.width,
        })
        .collect()
}

pub fn part_tables() -> Vec<PartTable> {
    Part::ALL
        .iter()
        .map(|p| PartTable {
            name: p.name().to_string(),
            columns: p.columns().to_vec(),
        })
        .collect()
}

impl MotionFile {
    pub fn from_pose(seq: &PoseSequence) -> Self {
        Self {
            format: MOTION_FORMAT.into(),
            version: 1,
            fps: FPS,
            feature_dim: FEATURE_DIM,
            frames: seq.len(),
            layout: layout_entries(),
            parts: part_tables(),
            data: (0..seq.len()).map(|t| seq.frame(t).to_vec()).collect(),
        }
    }

    pub fn into_pose(self) -> Result<PoseSequence> {
        let bad = |m: String| Err(CoreError::Parse(format!("motion file: {m}")));
        if self.format != MOTION_FORMAT {
            return bad(format!("unexpected format `{}`", self.format));
        }
        if self.version != 1 {
            return bad(format!("unsupported version {}", self.version));
        }
        if self.fps != FPS {
            return bad(format!("frame rate {} (expected {FPS})", self.fps));
        }
        if self.feature_dim != FEATURE_DIM || self.layout != layout_entries() {
            return bad("layout does not match the 263-column layout".into());
        }
        if self.parts != part_tables() {
            return bad("part tables do not match".into());
        }
        if self.data.len() != self.frames {
            return bad(format!("header says {} frames, body has {}", self.frames, self.data.len()));
        }
        if let Some(t) = self.data.iter().position(|r| r.len() != FEATURE_DIM) {
            return bad(format!("frame {t} has {} values", self.data[t].len()));
        }
        let seq = PoseSequence::new(self.frames, self.data.into_iter().flatten().collect())?;
        seq.validate().map_err(|e| CoreError::Parse(format!("motion file: {e}")))?;
        Ok(seq)
    }
}

pub fn motion_to_json(seq: &PoseSequence) -> String {
    serde_json::to_string(&MotionFile::from_pose(seq)).expect("motion serializes")
}

pub fn motion_from_json(text: &str) -> Result<PoseSequence> {
    let file: MotionFile = serde_json::from_str(text)?;
    file.into_pose()
}

pub fn export_motion(seq: &PoseSequence, path: &Path) -> Result<()> {
    write_file(path, motion_to_json(seq).as_bytes())
}

pub fn import_motion(path: &Path) -> Result<PoseSequence> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CoreError::Parse("motion file is not UTF-8".into()))?;
    motion_from_json(text)
}
