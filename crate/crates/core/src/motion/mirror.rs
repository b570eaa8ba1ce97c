//! Left/right reflection of features and text.
//!
//! Reflecting through the sagittal plane (x → −x) swaps left and right
//! joints, negates x components of positions and velocities and turns each
//! rotation `R` into `M R M` with `M = diag(−1, 1, 1)`. Heading changes sign,
//! so the angular and lateral root velocities flip while forward velocity and
//! height do not. Every step is a swap or a negation, so mirroring twice
//! restores the input bit for bit.

use super::features::*;
use super::skeleton::{mirror_joint, CONTACT_JOINTS, NUM_JOINTS};

pub fn mirror_pose(seq: &PoseSequence) -> PoseSequence {
    let mut out = seq.clone();
    for t in 0..seq.len() {
        let src = seq.frame(t);
        let dst = out.frame_mut(t);
        dst[ROOT_ANGULAR_VELOCITY] = -src[ROOT_ANGULAR_VELOCITY];
        dst[ROOT_VELOCITY_X] = -src[ROOT_VELOCITY_X];
        dst[ROOT_VELOCITY_Z] = src[ROOT_VELOCITY_Z];
        dst[ROOT_HEIGHT] = src[ROOT_HEIGHT];
        for j in 0..NUM_JOINTS {
            let m = mirror_joint(j);
            let (s, d) = (velocity_col(j), velocity_col(m));
            dst[d] = -src[s];
            dst[d + 1] = src[s + 1];
            dst[d + 2] = src[s + 2];
            if j == 0 {
                continue;
            }
            let (s, d) = (position_col(j), position_col(m));
            dst[d] = -src[s];
            dst[d + 1] = src[s + 1];
            dst[d + 2] = src[s + 2];
            let (s, d) = (rotation_col(j), rotation_col(m));
            // first column (x, y, z) → (x, −y, −z); second → (−x, y, z)
            dst[d] = src[s];
            dst[d + 1] = -src[s + 1];
            dst[d + 2] = -src[s + 2];
            dst[d + 3] = -src[s + 3];
            dst[d + 4] = src[s + 4];
            dst[d + 5] = src[s + 5];
        }
        for (k, &j) in CONTACT_JOINTS.iter().enumerate() {
            let mk = CONTACT_JOINTS.iter().position(|&c| c == mirror_joint(j)).unwrap();
            dst[FOOT_CONTACTS + mk] = src[FOOT_CONTACTS + k];
        }
    }
    out
}

/// Swaps the words `left` and `right`.
pub fn mirror_text(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|w| match w.as_str() {
            "left" => "right".to_string(),
            "right" => "left".to_string(),
            _ => w.clone(),
        })
        .collect()
}
