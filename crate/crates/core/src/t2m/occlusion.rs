use bipo_tensor::Rng;

use crate::error::{CoreError, Result};
use crate::motion::parts::NUM_PARTS;

/// Which cross-part source tokens each observing part cannot see.
///
/// One instance covers one example and is reused at every coordination depth.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    positions: usize,
    pub p: f64,
    /// Indexed `[observer][source][position]`; `observer == source` is never set.
    occluded: Vec<bool>,
}

impl OcclusionMask {
    pub fn none(positions: usize) -> Self {
        Self {
            positions,
            p: 0.0,
            occluded: vec![false; NUM_PARTS * NUM_PARTS * positions],
        }
    }

    pub fn all(positions: usize) -> Self {
        let mut m = Self::none(positions);
        m.p = 1.0;
        for i in 0..NUM_PARTS {
            for j in (0..NUM_PARTS).filter(|&j| j != i) {
                for t in 0..positions {
                    m.set(i, j, t, true);
                }
            }
        }
        m
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    fn idx(&self, observer: usize, source: usize, t: usize) -> usize {
        (observer * NUM_PARTS + source) * self.positions + t
    }

    pub fn is_occluded(&self, observer: usize, source: usize, t: usize) -> bool {
        self.occluded[self.idx(observer, source, t)]
    }

    pub fn set(&mut self, observer: usize, source: usize, t: usize, value: bool) {
        assert_ne!(observer, source, "a part never occludes itself");
        let i = self.idx(observer, source, t);
        self.occluded[i] = value;
    }

    /// Fraction of cross-part entries that are occluded.
    pub fn rate(&self) -> f64 {
        let n = NUM_PARTS * (NUM_PARTS - 1) * self.positions;
        if n == 0 {
            return 0.0;
        }
        self.occluded.iter().filter(|&&o| o).count() as f64 / n as f64
    }

    /// Restriction to the first `positions` positions.
    pub fn truncated(&self, positions: usize) -> Self {
        let mut m = Self::none(positions);
        m.p = self.p;
        for i in 0..NUM_PARTS {
            for j in (0..NUM_PARTS).filter(|&j| j != i) {
                for t in 0..positions.min(self.positions) {
                    m.set(i, j, t, self.is_occluded(i, j, t));
                }
            }
        }
        m
    }
}

/// Occludes each `(observer, source ≠ observer, position)` independently with
/// probability `p`.
pub fn sample_po_mask(positions: usize, p: f64, rng: &mut Rng) -> Result<OcclusionMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CoreError::invalid(format!("occlusion probability {p} outside [0, 1]")));
    }
    let mut m = OcclusionMask::none(positions);
    m.p = p;
    for i in 0..NUM_PARTS {
        for j in (0..NUM_PARTS).filter(|&j| j != i) {
            for t in 0..positions {
                if rng.bernoulli(p) {
                    m.set(i, j, t, true);
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        let mut rng = Rng::new(1);
        assert_eq!(sample_po_mask(7, 0.0, &mut rng).unwrap().rate(), 0.0);
        let all = sample_po_mask(7, 1.0, &mut rng).unwrap();
        assert_eq!(all.rate(), 1.0);
        assert_eq!(all, OcclusionMask::all(7));
        assert!(sample_po_mask(3, 1.5, &mut rng).is_err());
    }

    #[test]
    fn self_never_occluded() {
        let m = sample_po_mask(5, 1.0, &mut Rng::new(2)).unwrap();
        for i in 0..NUM_PARTS {
            assert!((0..5).all(|t| !m.is_occluded(i, i, t)));
        }
    }

    #[test]
    fn empirical_rate() {
        // 30 cross-part pairs × 3334 positions ≈ 10⁵ draws.
        let m = sample_po_mask(3334, 0.4, &mut Rng::new(4)).unwrap();
        assert!((m.rate() - 0.4).abs() < 0.01, "{}", m.rate());
    }
}
