//! 263-dimensional pose features.
//!
//! | block | columns | content |
//! |---|---|---|
//! | `root_angular_velocity` | 0 | heading change to the next frame |
//! | `root_velocity_x`, `root_velocity_z` | 1, 2 | root displacement to the next frame, heading frame |
//! | `root_height` | 3 | root y |
//! | `joint_positions` | 4..67 | joints 1..21 relative to the root's ground projection, heading frame |
//! | `joint_velocities` | 67..133 | joints 0..21 displacement to the next frame, heading frame |
//! | `joint_rotations` | 133..259 | joints 1..21, 6-D (first two matrix columns) |
//! | `foot_contacts` | 259..263 | left ankle, left foot, right ankle, right foot |
//!
//! Velocities are per-frame differences at 20 frames per second. A sequence
//! built from `T` joint-position frames has `T − 1` feature frames.

use serde::{Deserialize, Serialize};

use super::skeleton::{
    heading_rotation, rest_offset, shortest_arc, Vec3, CONTACT_JOINTS, L_HIP, L_SHOULDER,
    NUM_JOINTS, PARENTS, R_HIP, R_SHOULDER,
};
use crate::error::{CoreError, Result};

pub const FEATURE_DIM: usize = 263;

pub const ROOT_ANGULAR_VELOCITY: usize = 0;
pub const ROOT_VELOCITY_X: usize = 1;
pub const ROOT_VELOCITY_Z: usize = 2;
pub const ROOT_HEIGHT: usize = 3;
pub const JOINT_POSITIONS: usize = 4;
pub const JOINT_VELOCITIES: usize = 67;
pub const JOINT_ROTATIONS: usize = 133;
pub const FOOT_CONTACTS: usize = 259;

/// Squared per-frame displacement below which a foot joint counts as planted.
pub const CONTACT_THRESHOLD: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: &'static str,
    pub offset: usize,
    pub width: usize,
}

pub const LAYOUT: [Block; 8] = [
    Block { name: "root_angular_velocity", offset: ROOT_ANGULAR_VELOCITY, width: 1 },
    Block { name: "root_velocity_x", offset: ROOT_VELOCITY_X, width: 1 },
    Block { name: "root_velocity_z", offset: ROOT_VELOCITY_Z, width: 1 },
    Block { name: "root_height", offset: ROOT_HEIGHT, width: 1 },
    Block { name: "joint_positions", offset: JOINT_POSITIONS, width: 63 },
    Block { name: "joint_velocities", offset: JOINT_VELOCITIES, width: 66 },
    Block { name: "joint_rotations", offset: JOINT_ROTATIONS, width: 126 },
    Block { name: "foot_contacts", offset: FOOT_CONTACTS, width: 4 },
];

/// First column of joint `j`'s position triple (`j ≥ 1`).
pub fn position_col(j: usize) -> usize {
    debug_assert!((1..NUM_JOINTS).contains(&j));
    JOINT_POSITIONS + 3 * (j - 1)
}

/// First column of joint `j`'s velocity triple.
pub fn velocity_col(j: usize) -> usize {
    JOINT_VELOCITIES + 3 * j
}

/// First column of joint `j`'s 6-D rotation (`j ≥ 1`).
pub fn rotation_col(j: usize) -> usize {
    debug_assert!((1..NUM_JOINTS).contains(&j));
    JOINT_ROTATIONS + 6 * (j - 1)
}

/// `L × 263` feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: usize,
    data: Vec<f64>,
}

impl PoseSequence {
    pub fn new(frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * FEATURE_DIM {
            return Err(CoreError::invalid(format!(
                "pose data has {} values, expected {frames} × {FEATURE_DIM}",
                data.len()
            )));
        }
        Ok(Self { frames, data })
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM]
    }

    /// Checks finiteness and the contact range.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::invalid(format!(
                "non-finite feature at frame {}, column {}",
                i / FEATURE_DIM,
                i % FEATURE_DIM
            )));
        }
        for t in 0..self.frames {
            let c = &self.frame(t)[FOOT_CONTACTS..FOOT_CONTACTS + 4];
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(CoreError::invalid(format!("foot contact outside [0, 1] at frame {t}")));
            }
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut a = a % tau;
    if a > std::f64::consts::PI {
        a -= tau;
    } else if a <= -std::f64::consts::PI {
        a += tau;
    }
    a
}

/// Facing angle from the hip and shoulder lines.
pub fn heading(p: &[Vec3; NUM_JOINTS]) -> f64 {
    let across = (p[L_HIP] - p[R_HIP]) + (p[L_SHOULDER] - p[R_SHOULDER]);
    // forward = across × up
    (-across.z).atan2(across.x)
}

fn ground(v: &Vec3) -> Vec3 {
    Vec3::new(v.x, 0.0, v.z)
}

/// Features from world-space joint positions (`T ≥ 2` frames).
///
/// The sequence is first placed so that frame 0 faces +Z with the root
/// above the origin.
pub fn compute_pose_features(positions: &[[Vec3; NUM_JOINTS]]) -> Result<PoseSequence> {
    if positions.len() < 2 {
        return Err(CoreError::invalid(format!(
            "need at least 2 position frames, got {}",
            positions.len()
        )));
    }
    if positions.iter().flatten().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(CoreError::invalid("non-finite joint position"));
    }

    let r0 = heading_rotation(-heading(&positions[0]));
    let origin = ground(&positions[0][0]);
    let pos: Vec<[Vec3; NUM_JOINTS]> = positions
        .iter()
        .map(|f| std::array::from_fn(|j| r0 * (f[j] - origin)))
        .collect();

    let raw: Vec<f64> = pos.iter().map(heading).collect();
    let mut dtheta = Vec::with_capacity(pos.len() - 1);
    let mut theta = vec![0.0; pos.len()];
    for t in 0..pos.len() - 1 {
        let d = wrap_angle(raw[t + 1] - raw[t]);
        dtheta.push(d);
        theta[t + 1] = theta[t] + d;
    }

    let frames = pos.len() - 1;
    let mut data = vec![0.0; frames * FEATURE_DIM];
    for t in 0..frames {
        let f = &mut data[t * FEATURE_DIM..(t + 1) * FEATURE_DIM];
        let rt = heading_rotation(-theta[t]);
        let (cur, next) = (&pos[t], &pos[t + 1]);
        let root = cur[0];

        f[ROOT_ANGULAR_VELOCITY] = dtheta[t];
        let rv = rt * (next[0] - root);
        f[ROOT_VELOCITY_X] = rv.x;
        f[ROOT_VELOCITY_Z] = rv.z;
        f[ROOT_HEIGHT] = root.y;

        let base = ground(&root);
        for j in 1..NUM_JOINTS {
            let p = rt * (cur[j] - base);
            f[position_col(j)..position_col(j) + 3].copy_from_slice(p.as_slice());

            let parent = PARENTS[j].expect("non-root joint");
            let bone = rt * (cur[j] - cur[parent]);
            let r = shortest_arc(&rest_offset(j), &bone);
            let c = rotation_col(j);
            f[c..c + 3].copy_from_slice(&[r[(0, 0)], r[(1, 0)], r[(2, 0)]]);
            f[c + 3..c + 6].copy_from_slice(&[r[(0, 1)], r[(1, 1)], r[(2, 1)]]);
        }
        for j in 0..NUM_JOINTS {
            let v = rt * (next[j] - cur[j]);
            f[velocity_col(j)..velocity_col(j) + 3].copy_from_slice(v.as_slice());
        }
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            let speed2 = (next[j] - cur[j]).norm_squared();
            f[FOOT_CONTACTS + k] = if speed2 < CONTACT_THRESHOLD { 1.0 } else { 0.0 };
        }
    }
    PoseSequence::new(frames, data)
}

/// World positions recovered by integrating root motion from heading 0 at the origin.
pub fn reconstruct_positions(seq: &PoseSequence) -> Vec<[Vec3; NUM_JOINTS]> {
    let mut out = Vec::with_capacity(seq.len());
    let mut theta = 0.0;
    let mut root_xz = Vec3::zeros();
    for t in 0..seq.len() {
        let f = seq.frame(t);
        let r = heading_rotation(theta);
        let mut p = [Vec3::zeros(); NUM_JOINTS];
        p[0] = Vec3::new(root_xz.x, f[ROOT_HEIGHT], root_xz.z);
        for (j, pj) in p.iter_mut().enumerate().skip(1) {
            let c = position_col(j);
            *pj = r * Vec3::new(f[c], f[c + 1], f[c + 2]) + root_xz;
        }
        out.push(p);
        root_xz += r * Vec3::new(f[ROOT_VELOCITY_X], 0.0, f[ROOT_VELOCITY_Z]);
        theta += f[ROOT_ANGULAR_VELOCITY];
    }
    out
}

/// Largest gap between the velocity block and first differences of the
/// reconstructed positions, over all consecutive frame pairs.
pub fn velocity_consistency_error(seq: &PoseSequence) -> f64 {
    let pos = reconstruct_positions(seq);
    let mut theta = 0.0;
    let mut worst: f64 = 0.0;
    for t in 0..seq.len().saturating_sub(1) {
        let f = seq.frame(t);
        let r = heading_rotation(theta);
        for j in 0..NUM_JOINTS {
            let c = velocity_col(j);
            let v = r * Vec3::new(f[c], f[c + 1], f[c + 2]);
            worst = worst.max((v - (pos[t + 1][j] - pos[t][j])).amax());
        }
        theta += f[ROOT_ANGULAR_VELOCITY];
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::skeleton::BonePose;

    fn standing(offset: Vec3, theta: f64) -> [Vec3; NUM_JOINTS] {
        let body = BonePose::default().positions();
        let r = heading_rotation(theta);
        std::array::from_fn(|j| r * body[j] + offset + Vec3::new(0.0, 0.95, 0.0))
    }

    #[test]
    fn layout_widths_sum_to_263() {
        let total: usize = LAYOUT.iter().map(|b| b.width).sum();
        assert_eq!(total, FEATURE_DIM);
        for w in LAYOUT.windows(2) {
            assert_eq!(w[0].offset + w[0].width, w[1].offset);
        }
    }

    #[test]
    fn static_skeleton() {
        let frames = vec![standing(Vec3::new(2.0, 0.0, -1.0), 1.1); 5];
        let seq = compute_pose_features(&frames).unwrap();
        assert_eq!(seq.len(), 4);
        for t in 0..4 {
            let f = seq.frame(t);
            assert_eq!(&f[0..3], &[0.0, 0.0, 0.0]);
            assert!(f[JOINT_VELOCITIES..JOINT_ROTATIONS].iter().all(|&v| v == 0.0));
            assert_eq!(&f[FOOT_CONTACTS..], &[1.0; 4]);
        }
    }

    #[test]
    fn uniform_translation_gives_constant_root_velocity() {
        let v = Vec3::new(0.03, 0.0, 0.05);
        let frames: Vec<_> = (0..8).map(|t| standing(v * t as f64, 0.4)).collect();
        let seq = compute_pose_features(&frames).unwrap();
        // in the heading frame the displacement is R(−0.4)·v
        let want = heading_rotation(-0.4) * v;
        for t in 0..seq.len() {
            let f = seq.frame(t);
            assert!((f[ROOT_VELOCITY_X] - want.x).abs() < 1e-12);
            assert!((f[ROOT_VELOCITY_Z] - want.z).abs() < 1e-12);
            assert!(f[ROOT_ANGULAR_VELOCITY].abs() < 1e-12);
        }
    }

    #[test]
    fn fewer_than_two_frames_is_an_error() {
        assert!(compute_pose_features(&[standing(Vec3::zeros(), 0.0)]).is_err());
    }

    #[test]
    fn velocities_match_reconstruction() {
        let frames: Vec<_> = (0..12)
            .map(|t| {
                let t = t as f64;
                standing(Vec3::new(0.02 * t, 0.01 * t.sin(), 0.04 * t), 0.3 + 0.2 * t)
            })
            .collect();
        let seq = compute_pose_features(&frames).unwrap();
        assert!(velocity_consistency_error(&seq) < 1e-9);
    }
}
