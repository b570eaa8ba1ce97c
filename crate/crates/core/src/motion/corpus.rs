//! Procedural text–motion corpus.
//!
//! Each template poses the skeleton frame by frame (bone directions in the
//! body frame plus heading and ground translation), runs forward kinematics
//! and converts the joint positions to features, so velocities and contacts
//! are always consistent with positions. Texts come from a few paraphrase
//! patterns per template over a closed vocabulary.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use bipo_tensor::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{compute_pose_features, PoseSequence};
use super::mirror::{mirror_pose, mirror_text};
use super::skeleton::*;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Action {
    Walk { backward: bool },
    Run,
    SideStep(Side),
    Turn(Side),
    Jump,
    Hop(Side),
    March,
    JumpingJacks,
    Wave(Side),
    RaiseArms,
    Kick(Side),
    Squat,
    Punch(Side),
    Clap,
    Bow,
    CircleArms,
    Idle,
}

struct Template {
    name: &'static str,
    action: Action,
    patterns: &'static [&'static str],
    /// Inclusive frame range before clamping to the corpus config.
    frames: (usize, usize),
}

const WALK: &[&str] = &[
    "{subj} walks forward in a straight line",
    "{subj} takes several steps forward",
    "{subj} is walking straight ahead",
];
const WALK_BACK: &[&str] = &[
    "{subj} walks backward a few steps",
    "{subj} moves backward while walking",
];
const RUN: &[&str] = &[
    "{subj} runs straight ahead in a line",
    "{subj} is running forward very fast",
];
const SIDE_STEP: &[&str] = &[
    "{subj} steps sideways to the {side}",
    "{subj} shuffles to {poss} {side} side",
];
const TURN: &[&str] = &[
    "{subj} turns around to the {side}",
    "{subj} turns {side} in place",
];
const JUMP: &[&str] = &[
    "{subj} jumps up and down in place",
    "{subj} is jumping on the spot",
];
const HOP: &[&str] = &[
    "{subj} hops on {poss} {side} leg",
    "{subj} is hopping on the {side} foot",
];
const MARCH: &[&str] = &[
    "{subj} marches in place lifting the knees",
    "{subj} is marching on the spot",
];
const JACKS: &[&str] = &[
    "{subj} does jumping jacks in place",
    "{subj} performs a set of jumping jacks",
];
const WAVE: &[&str] = &[
    "{subj} waves with {poss} {side} hand",
    "{subj} raises the {side} arm and waves",
];
const RAISE: &[&str] = &[
    "{subj} raises both arms above the head",
    "{subj} lifts both hands up high",
];
const KICK: &[&str] = &[
    "{subj} kicks something with {poss} {side} leg",
    "{subj} kicks forward with the {side} foot",
];
const SQUAT: &[&str] = &[
    "{subj} squats down and stands back up",
    "{subj} does a deep squat",
];
const PUNCH: &[&str] = &[
    "{subj} punches forward with {poss} {side} arm",
    "{subj} throws a punch with the {side} hand",
];
const CLAP: &[&str] = &["{subj} claps {poss} hands together", "{subj} is clapping both hands"];
const BOW: &[&str] = &["{subj} bows forward at the waist", "{subj} bends over in a bow"];
const CIRCLE: &[&str] = &[
    "{subj} makes circles with both arms",
    "{subj} rotates both arms in small circles",
];
const IDLE: &[&str] = &["{subj} stands still and waits", "{subj} is standing in one place"];

const TEMPLATES: [Template; 24] = [
    Template { name: "walk_forward", action: Action::Walk { backward: false }, patterns: WALK, frames: (32, 64) },
    Template { name: "walk_backward", action: Action::Walk { backward: true }, patterns: WALK_BACK, frames: (32, 64) },
    Template { name: "run_forward", action: Action::Run, patterns: RUN, frames: (24, 56) },
    Template { name: "side_step_left", action: Action::SideStep(Side::Left), patterns: SIDE_STEP, frames: (32, 64) },
    Template { name: "side_step_right", action: Action::SideStep(Side::Right), patterns: SIDE_STEP, frames: (32, 64) },
    Template { name: "turn_left", action: Action::Turn(Side::Left), patterns: TURN, frames: (24, 48) },
    Template { name: "turn_right", action: Action::Turn(Side::Right), patterns: TURN, frames: (24, 48) },
    Template { name: "jump", action: Action::Jump, patterns: JUMP, frames: (24, 56) },
    Template { name: "hop_left", action: Action::Hop(Side::Left), patterns: HOP, frames: (24, 48) },
    Template { name: "hop_right", action: Action::Hop(Side::Right), patterns: HOP, frames: (24, 48) },
    Template { name: "march", action: Action::March, patterns: MARCH, frames: (32, 64) },
    Template { name: "jumping_jacks", action: Action::JumpingJacks, patterns: JACKS, frames: (32, 64) },
    Template { name: "wave_left", action: Action::Wave(Side::Left), patterns: WAVE, frames: (24, 56) },
    Template { name: "wave_right", action: Action::Wave(Side::Right), patterns: WAVE, frames: (24, 56) },
    Template { name: "raise_arms", action: Action::RaiseArms, patterns: RAISE, frames: (24, 56) },
    Template { name: "kick_left", action: Action::Kick(Side::Left), patterns: KICK, frames: (16, 40) },
    Template { name: "kick_right", action: Action::Kick(Side::Right), patterns: KICK, frames: (16, 40) },
    Template { name: "squat", action: Action::Squat, patterns: SQUAT, frames: (24, 56) },
    Template { name: "punch_left", action: Action::Punch(Side::Left), patterns: PUNCH, frames: (16, 40) },
    Template { name: "punch_right", action: Action::Punch(Side::Right), patterns: PUNCH, frames: (16, 40) },
    Template { name: "clap", action: Action::Clap, patterns: CLAP, frames: (16, 40) },
    Template { name: "bow", action: Action::Bow, patterns: BOW, frames: (24, 56) },
    Template { name: "circle_arms", action: Action::CircleArms, patterns: CIRCLE, frames: (24, 56) },
    Template { name: "stand_idle", action: Action::Idle, patterns: IDLE, frames: (16, 32) },
];

const SUBJECTS: [(&str, &str); 5] = [
    ("a person", "their"),
    ("someone", "their"),
    ("a man", "his"),
    ("a woman", "her"),
    ("the person", "their"),
];

const ADVERBS: [(&str, f64); 3] = [("", 1.0), ("slowly", 0.7), ("quickly", 1.4)];

pub fn template_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}

/// Name of the template showing the mirror image of `name`.
pub fn mirror_template(name: &str) -> String {
    if let Some(base) = name.strip_suffix("_left") {
        format!("{base}_right")
    } else if let Some(base) = name.strip_suffix("_right") {
        format!("{base}_left")
    } else {
        name.to_string()
    }
}

fn side_of(action: Action) -> Option<Side> {
    match action {
        Action::SideStep(s) | Action::Turn(s) | Action::Hop(s) | Action::Wave(s) | Action::Kick(s) | Action::Punch(s) => {
            Some(s)
        }
        _ => None,
    }
}

fn realize(pattern: &str, subject: usize, side: Option<Side>, adverb: &str) -> Vec<String> {
    let (subj, poss) = SUBJECTS[subject];
    let mut s = pattern.replace("{subj}", subj).replace("{poss}", poss);
    if let Some(side) = side {
        s = s.replace("{side}", side.word());
    }
    let mut words: Vec<String> = s.split_whitespace().map(str::to_string).collect();
    if !adverb.is_empty() {
        words.push(adverb.to_string());
    }
    words
}

/// Every word any template can produce, sorted.
pub fn vocabulary() -> Vec<String> {
    let mut set = BTreeSet::new();
    for t in &TEMPLATES {
        for p in t.patterns {
            for subject in 0..SUBJECTS.len() {
                for (adv, _) in ADVERBS {
                    set.extend(realize(p, subject, side_of(t.action), adv));
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Random variation applied to one motion instance.
#[derive(Debug, Clone, Copy)]
struct Style {
    amp: f64,
    speed: f64,
    phase: f64,
}

fn smooth(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Unit vector for a left-side limb: elevation `e` above horizontal, azimuth
/// `f` from lateral towards the front. Right-side limbs use the mirror image.
fn limb_dir(side: Side, e: f64, f: f64) -> Vec3 {
    Vec3::new(side.sign() * e.cos() * f.cos(), e.sin(), e.cos() * f.sin())
}

fn aim(pose: &mut BonePose, joint: usize, dir: Vec3) {
    let r = shortest_arc(&pose.dirs[joint], &dir);
    pose.rotate_subtree(joint, &r);
}

fn upper_arm(side: Side) -> usize {
    match side {
        Side::Left => L_ELBOW,
        Side::Right => R_ELBOW,
    }
}

fn forearm(side: Side) -> usize {
    match side {
        Side::Left => L_WRIST,
        Side::Right => R_WRIST,
    }
}

/// Sets both arm segments by elevation/azimuth pairs.
fn arm(pose: &mut BonePose, side: Side, upper: (f64, f64), fore: (f64, f64)) {
    aim(pose, upper_arm(side), limb_dir(side, upper.0, upper.1));
    aim(pose, forearm(side), limb_dir(side, fore.0, fore.1));
}

fn relaxed_arm(pose: &mut BonePose, side: Side) {
    arm(pose, side, (-1.35, 0.1), (-1.3, 0.35));
}

/// Rotates the thigh forward by `flex`, the shin back by `knee` and the leg
/// outward by `abduct`.
fn leg(pose: &mut BonePose, side: Side, flex: f64, knee: f64, abduct: f64) {
    let (thigh, shin) = match side {
        Side::Left => (L_KNEE, L_ANKLE),
        Side::Right => (R_KNEE, R_ANKLE),
    };
    pose.rotate_subtree(shin, &rot_x(knee));
    let s = side.sign();
    pose.rotate_subtree(thigh, &(rot_z(s * abduct) * rot_x(-flex)));
}

fn swing_arm(pose: &mut BonePose, side: Side, swing: f64) {
    pose.rotate_subtree(upper_arm(side), &rot_x(-swing));
}

/// Posture at time `t` seconds: body pose, heading change, body-frame
/// displacement since t = 0 and extra height above ground contact.
fn posture(action: Action, t: f64, st: Style) -> (BonePose, f64, Vec3, f64) {
    let mut p = BonePose::default();
    let a = st.amp;
    let cycle = |hz: f64| TAU * hz * st.speed * t + st.phase;
    let mut yaw = 0.0;
    let mut disp = Vec3::zeros();
    let mut lift = 0.0;
    use Side::{Left, Right};
    match action {
        Action::Walk { backward } => {
            let ph = cycle(0.9);
            let (s, c) = ph.sin_cos();
            leg(&mut p, Left, 0.4 * a * s, 0.55 * a * (-c).max(0.0), 0.0);
            leg(&mut p, Right, -0.4 * a * s, 0.55 * a * c.max(0.0), 0.0);
            relaxed_arm(&mut p, Left);
            relaxed_arm(&mut p, Right);
            swing_arm(&mut p, Left, -0.35 * a * s);
            swing_arm(&mut p, Right, 0.35 * a * s);
            let v = if backward { -0.7 } else { 1.1 };
            disp = Vec3::new(0.0, 0.0, v * st.speed * t);
        }
        Action::Run => {
            let ph = cycle(1.4);
            let (s, c) = ph.sin_cos();
            leg(&mut p, Left, 0.7 * a * s, 1.3 * a * (-c).max(0.0), 0.0);
            leg(&mut p, Right, -0.7 * a * s, 1.3 * a * c.max(0.0), 0.0);
            for (side, sw) in [(Left, -0.6 * a * s), (Right, 0.6 * a * s)] {
                arm(&mut p, side, (-1.3, 0.2), (-0.1, 1.4));
                swing_arm(&mut p, side, sw);
            }
            p.rotate_subtree(SPINE1, &rot_x(0.15));
            disp = Vec3::new(0.0, 0.0, 2.8 * st.speed * t);
            lift = 0.05 * a * (2.0 * ph).sin().abs();
        }
        Action::SideStep(side) => {
            let ph = cycle(0.8);
            let s = ph.sin();
            leg(&mut p, Left, 0.0, 0.1, 0.25 * a * s.max(0.0));
            leg(&mut p, Right, 0.0, 0.1, 0.25 * a * (-s).max(0.0));
            relaxed_arm(&mut p, Left);
            relaxed_arm(&mut p, Right);
            disp = Vec3::new(side.sign() * 0.5 * st.speed * t, 0.0, 0.0);
        }
        Action::Turn(side) => {
            let ph = cycle(1.0);
            let s = ph.sin();
            leg(&mut p, Left, 0.25 * a * s.max(0.0), 0.5 * a * s.max(0.0), 0.0);
            leg(&mut p, Right, 0.25 * a * (-s).max(0.0), 0.5 * a * (-s).max(0.0), 0.0);
            relaxed_arm(&mut p, Left);
            relaxed_arm(&mut p, Right);
            yaw = side.sign() * 1.6 * st.speed * t;
        }
        Action::Jump => {
            let s = cycle(0.9).sin();
            let crouch = (-s).max(0.0) * a;
            leg(&mut p, Left, 0.8 * crouch, 1.4 * crouch, 0.0);
            leg(&mut p, Right, 0.8 * crouch, 1.4 * crouch, 0.0);
            let up = s.max(0.0);
            for side in [Left, Right] {
                arm(&mut p, side, (-1.3 + 1.6 * up, 0.6), (-1.2 + 1.8 * up, 0.6));
            }
            p.rotate_subtree(SPINE1, &rot_x(0.3 * crouch));
            lift = 0.35 * a * up;
        }
        Action::Hop(side) => {
            let s = cycle(1.3).sin();
            let (stand, free) = if side == Left { (Left, Right) } else { (Right, Left) };
            leg(&mut p, free, 0.3, 1.3, 0.0);
            leg(&mut p, stand, 0.3 * (-s).max(0.0), 0.5 * (-s).max(0.0) * a, 0.0);
            arm(&mut p, Left, (-0.9, 0.3), (-0.8, 0.5));
            arm(&mut p, Right, (-0.9, 0.3), (-0.8, 0.5));
            lift = 0.15 * a * s.max(0.0);
        }
        Action::March => {
            let s = cycle(0.9).sin();
            leg(&mut p, Left, 1.1 * a * s.max(0.0), 1.3 * a * s.max(0.0), 0.0);
            leg(&mut p, Right, 1.1 * a * (-s).max(0.0), 1.3 * a * (-s).max(0.0), 0.0);
            relaxed_arm(&mut p, Left);
            relaxed_arm(&mut p, Right);
            swing_arm(&mut p, Left, -0.5 * a * s);
            swing_arm(&mut p, Right, 0.5 * a * s);
        }
        Action::JumpingJacks => {
            let ph = cycle(1.0);
            let g = (1.0 - ph.cos()) / 2.0;
            leg(&mut p, Left, 0.0, 0.1, 0.3 * a * g);
            leg(&mut p, Right, 0.0, 0.1, 0.3 * a * g);
            for side in [Left, Right] {
                let e = -1.35 + 2.8 * g;
                arm(&mut p, side, (e, 0.0), (e + 0.05, 0.0));
            }
            lift = 0.06 * ph.sin().abs();
        }
        Action::Wave(side) => {
            let ramp = smooth(t / 0.5);
            let other = if side == Left { Right } else { Left };
            relaxed_arm(&mut p, other);
            let sway = 0.5 * a * cycle(1.5).sin();
            let ue = -1.35 + ramp * (1.35 + 0.5);
            let fe = -1.3 + ramp * (1.3 + 1.2);
            arm(&mut p, side, (ue, 0.1 + 0.2 * ramp), (fe, 0.35 + ramp * (sway - 0.15)));
        }
        Action::RaiseArms => {
            let g = (1.0 - cycle(0.5).cos()) / 2.0 * a.min(1.0);
            for side in [Left, Right] {
                let e = -1.35 + 2.75 * g;
                arm(&mut p, side, (e, 0.1 + 1.3 * g), (e + 0.05, 0.35 + 1.2 * g));
            }
        }
        Action::Kick(side) => {
            let k = cycle(0.8).sin().max(0.0).powi(2);
            let other = if side == Left { Right } else { Left };
            leg(&mut p, side, 1.3 * a * k, 2.0 * k * (1.0 - k), 0.0);
            relaxed_arm(&mut p, side);
            arm(&mut p, other, (-1.35 + 0.6 * k, 0.1 + 0.8 * k), (-1.3 + 0.6 * k, 0.35 + 0.8 * k));
            p.rotate_subtree(SPINE1, &rot_x(-0.15 * k));
        }
        Action::Squat => {
            let g = (1.0 - cycle(0.5).cos()) / 2.0 * a.min(1.0);
            leg(&mut p, Left, 1.4 * g, 2.2 * g, 0.05);
            leg(&mut p, Right, 1.4 * g, 2.2 * g, 0.05);
            for side in [Left, Right] {
                arm(&mut p, side, (-1.35 + 1.3 * g, 0.1 + 1.4 * g), (-1.3 + 1.3 * g, 0.35 + 1.2 * g));
            }
            p.rotate_subtree(SPINE1, &rot_x(0.6 * g));
        }
        Action::Punch(side) => {
            let k = cycle(1.2).sin().max(0.0) * a.min(1.0);
            let other = if side == Left { Right } else { Left };
            arm(&mut p, other, (-1.0, 1.2), (0.3, 1.5));
            let lerp = |x: f64, y: f64| x + (y - x) * k;
            arm(&mut p, side, (lerp(-1.0, 0.0), lerp(1.2, 1.5)), (lerp(0.3, 0.0), 1.5));
            p.rotate_subtree(SPINE2, &rot_y(-side.sign() * 0.25 * k));
        }
        Action::Clap => {
            let g = (1.0 - cycle(1.8).cos()) / 2.0;
            for side in [Left, Right] {
                arm(&mut p, side, (-0.4, 1.0 + 0.3 * g * a), (-0.05, 1.3 + 0.5 * g * a));
            }
        }
        Action::Bow => {
            let g = (1.0 - cycle(0.4).cos()) / 2.0;
            relaxed_arm(&mut p, Left);
            relaxed_arm(&mut p, Right);
            p.rotate_subtree(SPINE1, &rot_x(1.0 * a.min(1.1) * g));
        }
        Action::CircleArms => {
            let (s, c) = cycle(1.0).sin_cos();
            for side in [Left, Right] {
                let (e, f) = (0.3 * a * s, 0.1 + 0.3 * a * c);
                arm(&mut p, side, (e, f), (e, f));
            }
        }
        Action::Idle => {
            relaxed_arm(&mut p, Left);
            relaxed_arm(&mut p, Right);
            p.rotate_subtree(SPINE1, &rot_z(0.03 * cycle(0.3).sin()));
        }
    }
    (p, yaw, disp, lift)
}

/// One generated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TextMotionPair {
    pub id: usize,
    pub text: Vec<String>,
    pub motion: PoseSequence,
    pub template: String,
    pub split: Split,
    pub mirrored: bool,
}

impl TextMotionPair {
    pub fn text_string(&self) -> String {
        self.text.join(" ")
    }

    /// Mirror image: reflected motion, swapped side words and template.
    pub fn mirror(&self) -> TextMotionPair {
        TextMotionPair {
            id: self.id,
            text: mirror_text(&self.text),
            motion: mirror_pose(&self.motion),
            template: mirror_template(&self.template),
            split: self.split,
            mirrored: !self.mirrored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_sequences: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Adds the mirror image of every training pair to the training set.
    pub mirror_augment: bool,
    /// Restricts generation to these templates; empty means all.
    #[serde(default)]
    pub templates: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_sequences: 2000,
            min_frames: 16,
            max_frames: 64,
            mirror_augment: true,
            templates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub seed: u64,
    pub config: CorpusConfig,
    pub pairs: Vec<TextMotionPair>,
}

/// Train/val/test counts for `n` pairs: ⌊0.8n⌋, ⌊0.05n⌋ and the rest.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 80 / 100;
    let val = n * 5 / 100;
    (train, val, n - train - val)
}

/// Joint positions of one motion instance, `frames + 1` frames so the
/// features cover `frames` frames.
fn synthesize(action: Action, frames: usize, st: Style, heading0: f64, start: Vec3) -> Vec<[Vec3; NUM_JOINTS]> {
    let dt = 1.0 / FPS as f64;
    (0..=frames)
        .map(|i| {
            let t = i as f64 * dt;
            let (pose, yaw, disp, lift) = posture(action, t, st);
            let body = pose.positions();
            let ground = [L_ANKLE, R_ANKLE, L_FOOT, R_FOOT]
                .iter()
                .map(|&j| body[j].y)
                .fold(f64::INFINITY, f64::min);
            let height = 0.05 - ground + lift;
            let r0 = heading_rotation(heading0);
            let r = heading_rotation(heading0 + yaw);
            let root = start + r0 * disp + Vec3::new(0.0, height, 0.0);
            std::array::from_fn(|j| root + r * body[j])
        })
        .collect()
}

pub fn generate_corpus(seed: u64, config: &CorpusConfig) -> Result<Corpus> {
    let n = config.n_sequences;
    if n < 100 {
        return Err(CoreError::invalid(format!("corpus needs at least 100 sequences, got {n}")));
    }
    if config.min_frames < 4 || config.min_frames > config.max_frames {
        return Err(CoreError::invalid(format!(
            "bad frame range [{}, {}]",
            config.min_frames, config.max_frames
        )));
    }
    let templates: Vec<&Template> = if config.templates.is_empty() {
        TEMPLATES.iter().collect()
    } else {
        config
            .templates
            .iter()
            .map(|name| {
                TEMPLATES
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| CoreError::invalid(format!("unknown template `{name}`")))
            })
            .collect::<Result<_>>()?
    };

    let (train, val, _) = split_counts(n);
    let mut rng = Rng::derive(seed, "corpus");
    let mut pairs = Vec::with_capacity(n);
    for id in 0..n {
        let t = templates[rng.below(templates.len())];
        let pattern = t.patterns[rng.below(t.patterns.len())];
        let subject = rng.below(SUBJECTS.len());
        let (adverb, pace) = ADVERBS[rng.below(ADVERBS.len())];
        let text = realize(pattern, subject, side_of(t.action), adverb);

        let lo = t.frames.0.max(config.min_frames).div_ceil(4) * 4;
        let hi = (t.frames.1.min(config.max_frames) / 4 * 4).max(lo);
        let frames = (lo + 4 * rng.below((hi - lo) / 4 + 1)).min(config.max_frames.max(4));
        let style = Style {
            amp: rng.uniform_range(0.85, 1.15),
            speed: pace * rng.uniform_range(0.9, 1.1),
            phase: rng.uniform_range(0.0, TAU),
        };
        let heading0 = rng.uniform_range(-PI, PI);
        let start = Vec3::new(rng.uniform_range(-1.0, 1.0), 0.0, rng.uniform_range(-1.0, 1.0));
        let positions = synthesize(t.action, frames, style, heading0, start);
        let motion = compute_pose_features(&positions)?;
        let split = if id < train {
            Split::Train
        } else if id < train + val {
            Split::Val
        } else {
            Split::Test
        };
        pairs.push(TextMotionPair {
            id,
            text,
            motion,
            template: t.name.to_string(),
            split,
            mirrored: false,
        });
    }
    Ok(Corpus {
        seed,
        config: config.clone(),
        pairs,
    })
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&TextMotionPair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    /// Training pairs, plus their mirror images when augmentation is on.
    pub fn training_pairs(&self) -> Vec<TextMotionPair> {
        let mut out: Vec<TextMotionPair> = self.split(Split::Train).into_iter().cloned().collect();
        if self.config.mirror_augment {
            let mirrored: Vec<_> = out.iter().map(TextMotionPair::mirror).collect();
            out.extend(mirrored);
        }
        out
    }

    /// SHA-256 over texts, templates, splits and feature bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.pairs {
            h.update(p.id.to_le_bytes());
            h.update(p.text_string().as_bytes());
            h.update([0]);
            h.update(p.template.as_bytes());
            h.update([p.split as u8]);
            h.update((p.motion.len() as u64).to_le_bytes());
            for v in p.motion.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            format: "bipo-corpus".into(),
            version: 1,
            seed: self.seed,
            config: self.config.clone(),
            digest: self.digest(),
            vocabulary: vocabulary(),
            templates: template_names().into_iter().map(String::from).collect(),
            pairs: self
                .pairs
                .iter()
                .map(|p| ManifestEntry {
                    id: p.id,
                    template: p.template.clone(),
                    split: p.split,
                    frames: p.motion.len(),
                    text: p.text_string(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub template: String,
    pub split: Split,
    pub frames: usize,
    pub text: String,
}

/// JSON listing of a corpus. Motions are regenerated from seed and config;
/// `digest` detects any drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub digest: String,
    pub vocabulary: Vec<String>,
    pub templates: Vec<String>,
    pub pairs: Vec<ManifestEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::features::{velocity_consistency_error, FEATURE_DIM};
    use crate::motion::parts::{split_part, Part};

    fn small(n: usize) -> CorpusConfig {
        CorpusConfig {
            n_sequences: n,
            ..Default::default()
        }
    }

    #[test]
    fn texts_have_at_least_five_words() {
        for t in &TEMPLATES {
            for p in t.patterns {
                for s in 0..SUBJECTS.len() {
                    assert!(realize(p, s, side_of(t.action), "").len() >= 5, "{p}");
                }
            }
        }
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(2000), (1600, 100, 300));
        let c = generate_corpus(1, &small(200)).unwrap();
        assert_eq!(c.split(Split::Train).len(), 160);
        assert_eq!(c.split(Split::Val).len(), 10);
        assert_eq!(c.split(Split::Test).len(), 30);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_corpus(3, &small(100)).unwrap();
        let b = generate_corpus(3, &small(100)).unwrap();
        let c = generate_corpus(4, &small(100)).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn sequences_are_valid() {
        let c = generate_corpus(5, &small(150)).unwrap();
        for p in &c.pairs {
            assert!((16..=64).contains(&p.motion.len()));
            assert_eq!(p.motion.len() % 4, 0);
            p.motion.validate().unwrap();
            assert!(velocity_consistency_error(&p.motion) < 1e-9, "{}", p.template);
        }
    }

    #[test]
    fn wave_leaves_legs_at_rest() {
        let cfg = CorpusConfig {
            n_sequences: 100,
            templates: vec!["wave_left".into()],
            ..Default::default()
        };
        let c = generate_corpus(2, &cfg).unwrap();
        for p in &c.pairs {
            for part in [Part::LeftLeg, Part::RightLeg] {
                let m = split_part(&p.motion, part);
                for col in 0..part.dim() {
                    let xs: Vec<f64> = (0..m.len()).map(|t| m.frame(t)[col]).collect();
                    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
                    assert!(var < 1e-12, "{} column {col} varies", part.name());
                }
            }
        }
    }

    #[test]
    fn mirror_pair_involution() {
        let c = generate_corpus(6, &small(100)).unwrap();
        for p in &c.pairs {
            let m = p.mirror();
            assert_eq!(m.mirror(), *p);
            assert_eq!(m.motion.len() * FEATURE_DIM, m.motion.data().len());
        }
    }

    #[test]
    fn vocabulary_is_closed() {
        let vocab = vocabulary();
        let c = generate_corpus(7, &small(100)).unwrap();
        for p in c.training_pairs() {
            for w in &p.text {
                assert!(vocab.binary_search(w).is_ok(), "{w}");
            }
        }
    }
}
