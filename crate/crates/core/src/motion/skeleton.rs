//! 22-joint SMPL-style skeleton.
//!
//! Coordinates: +Y up, the body faces +Z at heading 0 and its left side is
//! +X. Heading θ is a rotation about +Y, so the forward direction at heading
//! θ is `(sin θ, 0, cos θ)`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const NUM_JOINTS: usize = 22;
pub const FPS: u32 = 20;

pub const PELVIS: usize = 0;
pub const L_HIP: usize = 1;
pub const R_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const L_KNEE: usize = 4;
pub const R_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const L_ANKLE: usize = 7;
pub const R_ANKLE: usize = 8;
pub const SPINE3: usize = 9;
pub const L_FOOT: usize = 10;
pub const R_FOOT: usize = 11;
pub const NECK: usize = 12;
pub const L_COLLAR: usize = 13;
pub const R_COLLAR: usize = 14;
pub const HEAD: usize = 15;
pub const L_SHOULDER: usize = 16;
pub const R_SHOULDER: usize = 17;
pub const L_ELBOW: usize = 18;
pub const R_ELBOW: usize = 19;
pub const L_WRIST: usize = 20;
pub const R_WRIST: usize = 21;

pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

/// Left/right joint pairs swapped by mirroring.
pub const MIRROR_PAIRS: [(usize, usize); 8] = [
    (L_HIP, R_HIP),
    (L_KNEE, R_KNEE),
    (L_ANKLE, R_ANKLE),
    (L_FOOT, R_FOOT),
    (L_COLLAR, R_COLLAR),
    (L_SHOULDER, R_SHOULDER),
    (L_ELBOW, R_ELBOW),
    (L_WRIST, R_WRIST),
];

/// Joints whose speed decides foot contact, in contact-column order.
pub const CONTACT_JOINTS: [usize; 4] = [L_ANKLE, L_FOOT, R_ANKLE, R_FOOT];

/// Rest offset of each joint from its parent, in metres. The arms rest in a T pose.
pub fn rest_offset(j: usize) -> Vec3 {
    let o = match j {
        PELVIS => [0.0, 0.0, 0.0],
        L_HIP => [0.09, -0.06, 0.0],
        R_HIP => [-0.09, -0.06, 0.0],
        SPINE1 => [0.0, 0.11, -0.01],
        L_KNEE | R_KNEE => [0.0, -0.40, 0.0],
        SPINE2 => [0.0, 0.13, 0.0],
        L_ANKLE | R_ANKLE => [0.0, -0.41, -0.01],
        SPINE3 => [0.0, 0.06, 0.01],
        L_FOOT | R_FOOT => [0.0, -0.05, 0.12],
        NECK => [0.0, 0.21, -0.02],
        L_COLLAR => [0.07, 0.12, 0.0],
        R_COLLAR => [-0.07, 0.12, 0.0],
        HEAD => [0.0, 0.10, 0.03],
        L_SHOULDER => [0.10, 0.0, 0.0],
        R_SHOULDER => [-0.10, 0.0, 0.0],
        L_ELBOW => [0.26, 0.0, 0.0],
        R_ELBOW => [-0.26, 0.0, 0.0],
        L_WRIST => [0.25, 0.0, 0.0],
        R_WRIST => [-0.25, 0.0, 0.0],
        _ => panic!("joint index {j} out of range"),
    };
    Vec3::new(o[0], o[1], o[2])
}

/// Joint that `j` becomes under mirroring.
pub fn mirror_joint(j: usize) -> usize {
    for &(l, r) in &MIRROR_PAIRS {
        if j == l {
            return r;
        }
        if j == r {
            return l;
        }
    }
    j
}

/// Whether `d` lies in the subtree rooted at `root` (inclusive).
pub fn is_descendant(mut d: usize, root: usize) -> bool {
    loop {
        if d == root {
            return true;
        }
        match PARENTS[d] {
            Some(p) => d = p,
            None => return false,
        }
    }
}

/// Rotation about +Y by `theta`.
pub fn heading_rotation(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_x(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner()
}

pub fn rot_y(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner()
}

pub fn rot_z(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
}

/// Smallest rotation taking direction `a` onto direction `b`.
pub fn shortest_arc(a: &Vec3, b: &Vec3) -> Mat3 {
    let a = a.normalize();
    let b = b.normalize();
    let axis = a.cross(&b);
    let s = axis.norm();
    let c = a.dot(&b).clamp(-1.0, 1.0);
    if s < 1e-12 {
        if c > 0.0 {
            return Mat3::identity();
        }
        // antiparallel: half turn about any axis orthogonal to a
        let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let perp = Unit::new_normalize(a.cross(&helper));
        return Rotation3::from_axis_angle(&perp, std::f64::consts::PI).into_inner();
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), s.atan2(c)).into_inner()
}

/// Body-frame pose expressed as one unit direction per bone.
///
/// `dirs[j]` is the direction from `parent(j)` to `j`; bone lengths come
/// from the rest offsets. Rotating a subtree rotates every bone in it, so
/// limbs should be posed before the torso that carries them.
#[derive(Debug, Clone)]
pub struct BonePose {
    pub dirs: [Vec3; NUM_JOINTS],
}

impl Default for BonePose {
    fn default() -> Self {
        let mut dirs = [Vec3::zeros(); NUM_JOINTS];
        for (j, d) in dirs.iter_mut().enumerate().skip(1) {
            *d = rest_offset(j).normalize();
        }
        Self { dirs }
    }
}

impl BonePose {
    pub fn rotate_subtree(&mut self, root: usize, r: &Mat3) {
        for j in 1..NUM_JOINTS {
            if is_descendant(j, root) {
                self.dirs[j] = r * self.dirs[j];
            }
        }
    }

    /// Joint positions with the pelvis at the origin.
    pub fn positions(&self) -> [Vec3; NUM_JOINTS] {
        let mut p = [Vec3::zeros(); NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let parent = PARENTS[j].expect("non-root joint");
            p[j] = p[parent] + self.dirs[j] * rest_offset(j).norm();
        }
        p
    }
}
