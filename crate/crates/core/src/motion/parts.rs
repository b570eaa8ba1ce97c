//! Six-part body division.
//!
//! Each limb part takes the position, velocity and rotation columns of its
//! joint chain (in that block order, joints in chain order); the legs add
//! their two foot-contact columns. Root takes the four root features plus the
//! pelvis velocity. Spine joint 9 belongs to both arms and the backbone, and
//! merging averages the three copies.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::features::{
    position_col, rotation_col, velocity_col, PoseSequence, FEATURE_DIM, FOOT_CONTACTS,
};
use super::skeleton::*;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Part {
    Root,
    RightLeg,
    LeftLeg,
    RightArm,
    LeftArm,
    Backbone,
}

pub const NUM_PARTS: usize = 6;

impl Part {
    /// Canonical order, also the coordination-input order.
    pub const ALL: [Part; NUM_PARTS] = [
        Part::Root,
        Part::RightLeg,
        Part::LeftLeg,
        Part::RightArm,
        Part::LeftArm,
        Part::Backbone,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Root => "Root",
            Part::RightLeg => "R.Leg",
            Part::LeftLeg => "L.Leg",
            Part::RightArm => "R.Arm",
            Part::LeftArm => "L.Arm",
            Part::Backbone => "Backbone",
        }
    }

    pub fn from_name(name: &str) -> Option<Part> {
        Part::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Joint chain; empty for Root, whose columns are listed separately.
    pub fn joints(self) -> &'static [usize] {
        match self {
            Part::Root => &[],
            Part::RightLeg => &[R_HIP, R_KNEE, R_ANKLE, R_FOOT],
            Part::LeftLeg => &[L_HIP, L_KNEE, L_ANKLE, L_FOOT],
            Part::RightArm => &[SPINE3, R_COLLAR, R_SHOULDER, R_ELBOW, R_WRIST],
            Part::LeftArm => &[SPINE3, L_COLLAR, L_SHOULDER, L_ELBOW, L_WRIST],
            Part::Backbone => &[SPINE1, SPINE2, SPINE3, NECK, HEAD],
        }
    }

    /// Whole-body column for each part-local column.
    pub fn columns(self) -> &'static [usize] {
        static TABLES: OnceLock<Vec<Vec<usize>>> = OnceLock::new();
        &TABLES.get_or_init(|| Part::ALL.iter().map(|p| build_columns(*p)).collect())[self.index()]
    }

    pub fn dim(self) -> usize {
        self.columns().len()
    }

    /// Mirror image: legs and arms swap sides.
    pub fn mirrored(self) -> Part {
        match self {
            Part::RightLeg => Part::LeftLeg,
            Part::LeftLeg => Part::RightLeg,
            Part::RightArm => Part::LeftArm,
            Part::LeftArm => Part::RightArm,
            p => p,
        }
    }
}

fn build_columns(part: Part) -> Vec<usize> {
    if part == Part::Root {
        let v = velocity_col(PELVIS);
        return vec![0, 1, 2, 3, v, v + 1, v + 2];
    }
    let joints = part.joints();
    let mut cols = Vec::new();
    for &j in joints {
        cols.extend(position_col(j)..position_col(j) + 3);
    }
    for &j in joints {
        cols.extend(velocity_col(j)..velocity_col(j) + 3);
    }
    for &j in joints {
        cols.extend(rotation_col(j)..rotation_col(j) + 6);
    }
    match part {
        Part::LeftLeg => cols.extend([FOOT_CONTACTS, FOOT_CONTACTS + 1]),
        Part::RightLeg => cols.extend([FOOT_CONTACTS + 2, FOOT_CONTACTS + 3]),
        _ => {}
    }
    cols
}

/// Frames of one body part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMotion {
    pub part: Part,
    frames: usize,
    data: Vec<f64>,
}

impl PartMotion {
    pub fn new(part: Part, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * part.dim() {
            return Err(CoreError::invalid(format!(
                "{} motion has {} values, expected {frames} × {}",
                part.name(),
                data.len(),
                part.dim()
            )));
        }
        Ok(Self { part, frames, data })
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn dim(&self) -> usize {
        self.part.dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.data[t * d..(t + 1) * d]
    }

    /// Whole-body column of each local column.
    pub fn provenance(&self) -> &'static [usize] {
        self.part.columns()
    }
}

pub fn split_part(seq: &PoseSequence, part: Part) -> PartMotion {
    let cols = part.columns();
    let mut data = Vec::with_capacity(seq.len() * cols.len());
    for t in 0..seq.len() {
        let f = seq.frame(t);
        data.extend(cols.iter().map(|&c| f[c]));
    }
    PartMotion {
        part,
        frames: seq.len(),
        data,
    }
}

/// The six parts in canonical order.
pub fn split_parts(seq: &PoseSequence) -> Vec<PartMotion> {
    Part::ALL.iter().map(|&p| split_part(seq, p)).collect()
}

/// Reassembles a whole-body sequence; shared columns take the mean of their claimants.
pub fn merge_parts(parts: &[PartMotion]) -> Result<PoseSequence> {
    if parts.len() != NUM_PARTS {
        return Err(CoreError::invalid(format!("expected 6 parts, got {}", parts.len())));
    }
    for (i, p) in parts.iter().enumerate() {
        if p.part != Part::ALL[i] {
            return Err(CoreError::invalid(format!(
                "part {i} is {}, expected {}",
                p.part.name(),
                Part::ALL[i].name()
            )));
        }
    }
    let frames = parts[0].len();
    if parts.iter().any(|p| p.len() != frames) {
        let lens: Vec<usize> = parts.iter().map(PartMotion::len).collect();
        return Err(CoreError::invalid(format!("part lengths differ: {lens:?}")));
    }
    let mut data = vec![0.0; frames * FEATURE_DIM];
    // first claimant value and running sum of deviations from it
    let mut first = vec![0.0; FEATURE_DIM];
    let mut dev = vec![0.0; FEATURE_DIM];
    let mut count = [0usize; FEATURE_DIM];
    for t in 0..frames {
        count.fill(0);
        dev.fill(0.0);
        for p in parts {
            for (&c, &v) in p.provenance().iter().zip(p.frame(t)) {
                if count[c] == 0 {
                    first[c] = v;
                } else {
                    dev[c] += v - first[c];
                }
                count[c] += 1;
            }
        }
        let out = &mut data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
        for c in 0..FEATURE_DIM {
            out[c] = match count[c] {
                0 => return Err(CoreError::invalid(format!("column {c} has no claimant"))),
                1 => first[c],
                n => first[c] + dev[c] / n as f64,
            };
        }
    }
    PoseSequence::new(frames, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn dims() {
        let dims: Vec<usize> = Part::ALL.iter().map(|p| p.dim()).collect();
        assert_eq!(dims, vec![7, 50, 50, 60, 60, 60]);
    }

    #[test]
    fn coverage_and_overlap() {
        let mut claims = [0usize; FEATURE_DIM];
        for p in Part::ALL {
            let set: HashSet<_> = p.columns().iter().collect();
            assert_eq!(set.len(), p.dim(), "{} is not injective", p.name());
            for &c in p.columns() {
                claims[c] += 1;
            }
        }
        let spine3: HashSet<usize> = [
            position_col(SPINE3)..position_col(SPINE3) + 3,
            velocity_col(SPINE3)..velocity_col(SPINE3) + 3,
            rotation_col(SPINE3)..rotation_col(SPINE3) + 6,
        ]
        .into_iter()
        .flatten()
        .collect();
        for (c, &n) in claims.iter().enumerate() {
            let want = if spine3.contains(&c) { 3 } else { 1 };
            assert_eq!(n, want, "column {c}");
        }
    }

    #[test]
    fn merge_averages_three_claimants() {
        let data: Vec<f64> = (0..2 * FEATURE_DIM).map(|i| i as f64 * 0.01).collect();
        let seq = PoseSequence::new(2, data).unwrap();
        let mut parts = split_parts(&seq);
        let col = position_col(SPINE3);
        let set = |p: &mut PartMotion, v: f64| {
            let k = p.provenance().iter().position(|&c| c == col).unwrap();
            let d = p.dim();
            p.data[k] = v;
            p.data[d + k] = v;
        };
        set(&mut parts[Part::RightArm.index()], 1.0);
        set(&mut parts[Part::LeftArm.index()], 2.0);
        set(&mut parts[Part::Backbone.index()], 4.5);
        let merged = merge_parts(&parts).unwrap();
        assert!((merged.frame(0)[col] - 7.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let seq = PoseSequence::new(3, vec![0.0; 3 * FEATURE_DIM]).unwrap();
        let mut parts = split_parts(&seq);
        parts[2] = PartMotion::new(Part::LeftLeg, 2, vec![0.0; 100]).unwrap();
        assert!(merge_parts(&parts).is_err());
    }
}
