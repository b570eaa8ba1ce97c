use bipo_tensor::{Rng, Tensor};

use crate::error::{CoreError, Result};

/// Additive `(L+2)×(L+2)` attention mask over the text slot, `L` motion
/// tokens and the END slot, together with the unmask set it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub len: usize,
    pub unmask: Vec<usize>,
    pub values: Tensor,
}

impl AttentionMask {
    pub fn size(&self) -> usize {
        self.len + 2
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.values.at(q, k) == 0.0
    }
}

fn membership(len: usize, unmask: &[usize]) -> Result<Vec<bool>> {
    let mut inside = vec![false; len + 2];
    for &u in unmask {
        if u > len + 1 {
            return Err(CoreError::invalid(format!(
                "unmask index {u} outside 0..={}",
                len + 1
            )));
        }
        inside[u] = true;
    }
    Ok(inside)
}

fn build(len: usize, unmask: &[usize], rule: impl Fn(usize, usize, &[bool]) -> bool) -> Result<AttentionMask> {
    let inside = membership(len, unmask)?;
    let n = len + 2;
    let mut values = vec![f64::NEG_INFINITY; n * n];
    for q in 0..n {
        for k in 0..n {
            if rule(q, k, &inside) {
                values[q * n + k] = 0.0;
            }
        }
    }
    let mut u: Vec<usize> = (0..n).filter(|&i| inside[i]).collect();
    u.dedup();
    Ok(AttentionMask {
        len,
        unmask: u,
        values: Tensor::new(vec![n, n], values)?,
    })
}

/// Bidirectional part mask: `(q, k)` is allowed iff
/// `(q ≥ k and q ∉ U) or k ∈ U`.
pub fn build_bp_mask(len: usize, unmask: &[usize]) -> Result<AttentionMask> {
    build(len, unmask, |q, k, u| (q >= k && !u[q]) || u[k])
}

/// Unidirectional causal mask, the `U = ∅` case.
pub fn build_causal_mask(len: usize) -> AttentionMask {
    build_bp_mask(len, &[]).expect("empty unmask set is always valid")
}

/// Stricter variant in which masked queries see only the unmask set and
/// themselves, never other masked positions.
pub fn build_strict_mask(len: usize, unmask: &[usize]) -> Result<AttentionMask> {
    build(len, unmask, |q, k, u| u[k] || q == k)
}

/// An unmask set drawn for bidirectional training.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmaskDraw {
    pub rho: f64,
    /// Always contains `0` and `L+1`; sorted.
    pub unmask: Vec<usize>,
    /// Masked motion positions, sorted.
    pub masked: Vec<usize>,
}

/// Masks `⌈ρL⌉` of the `L` motion positions with `ρ ~ U[lo, hi]`; text and
/// END stay unmasked.
pub fn sample_bp_unmask_set(len: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<UnmaskDraw> {
    if len == 0 {
        return Err(CoreError::invalid("need at least one motion token"));
    }
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(CoreError::invalid(format!("bad mask-ratio interval [{lo}, {hi}]")));
    }
    let rho = rng.uniform_range(lo, hi);
    let n_mask = ((rho * len as f64).ceil() as usize).min(len);
    let mut masked: Vec<usize> = rng.sample_distinct(len, n_mask).into_iter().map(|i| i + 1).collect();
    masked.sort_unstable();
    let mut unmask = vec![0];
    unmask.extend((1..=len).filter(|p| masked.binary_search(p).is_err()));
    unmask.push(len + 1);
    Ok(UnmaskDraw { rho, unmask, masked })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let m = build_bp_mask(3, &[0, 2, 4]).unwrap();
        let row1: Vec<usize> = (0..5).filter(|&k| m.allowed(1, k)).collect();
        assert_eq!(row1, vec![0, 1, 2, 4]);
        assert!((0..5).all(|k| m.allowed(3, k)));
    }

    #[test]
    fn causal_shape() {
        let m = build_causal_mask(1);
        for q in 0..3 {
            for k in 0..3 {
                assert_eq!(m.allowed(q, k), q >= k);
            }
        }
        assert!(!build_causal_mask(4).allowed(0, 1));
    }

    #[test]
    fn out_of_range_is_error() {
        assert!(build_bp_mask(3, &[5]).is_err());
        assert!(build_bp_mask(3, &[4]).is_ok());
    }

    #[test]
    fn strict_variant_blocks_masked_pairs() {
        let m = build_strict_mask(4, &[0, 2, 5]).unwrap();
        assert!(!m.allowed(3, 1));
        assert!(m.allowed(3, 3));
        assert!(m.allowed(1, 2));
        assert!(build_bp_mask(4, &[0, 2, 5]).unwrap().allowed(3, 1));
    }

    #[test]
    fn unmask_draw_arithmetic() {
        let mut rng = Rng::new(3);
        let d = sample_bp_unmask_set(10, 1.0, 1.0, &mut rng).unwrap();
        assert_eq!(d.unmask, vec![0, 11]);
        let d = sample_bp_unmask_set(10, 0.5, 0.5, &mut rng).unwrap();
        assert_eq!(d.unmask.len() - 2, 5);
        assert_eq!(d.masked.len(), 5);
        assert!(sample_bp_unmask_set(0, 0.5, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mean_masked_fraction() {
        let mut rng = Rng::new(8);
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let d = sample_bp_unmask_set(1000, 0.5, 1.0, &mut rng).unwrap();
            total += d.masked.len() as f64 / 1000.0;
        }
        let mean = total / n as f64;
        assert!((0.73..=0.77).contains(&mean), "{mean}");
    }
}
