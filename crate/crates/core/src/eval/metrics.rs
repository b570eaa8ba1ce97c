use bipo_tensor::Rng;

use crate::error::{CoreError, Result};

/// Candidate pool size for R-precision.
pub const R_PRECISION_POOL: usize = 32;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_paired(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<()> {
    if text.len() != motion.len() || text.is_empty() {
        return Err(CoreError::invalid("text and motion feature sets must be nonempty and paired"));
    }
    Ok(())
}

/// For each motion `i`, its own index followed by `pool − 1` distinct others.
pub fn draw_pools(n: usize, pool: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if pool == 0 || n < pool {
        return Err(CoreError::invalid(format!("R-precision needs at least {pool} pairs, got {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let mut p = vec![i];
            p.extend(rng.sample_distinct(n - 1, pool - 1).into_iter().map(|j| if j >= i { j + 1 } else { j }));
            p
        })
        .collect())
}

/// R@1..=R@`top_k` given explicit pools (`pools[i][0] == i`). A motion scores
/// at `k` when fewer than `k` distractor texts are strictly closer than its
/// own text.
pub fn r_precision_with_pools(
    text: &[Vec<f64>],
    motion: &[Vec<f64>],
    pools: &[Vec<usize>],
    top_k: usize,
) -> Result<Vec<f64>> {
    check_paired(text, motion)?;
    if pools.len() != motion.len() {
        return Err(CoreError::invalid("one pool per motion required"));
    }
    let mut hits = vec![0usize; top_k];
    for (i, pool) in pools.iter().enumerate() {
        let own = euclidean(&motion[i], &text[i]);
        let closer = pool[1..].iter().filter(|&&j| euclidean(&motion[i], &text[j]) < own).count();
        for (k, h) in hits.iter_mut().enumerate() {
            if closer <= k {
                *h += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / motion.len() as f64).collect())
}

pub fn r_precision(text: &[Vec<f64>], motion: &[Vec<f64>], top_k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let pools = draw_pools(motion.len(), R_PRECISION_POOL, rng)?;
    r_precision_with_pools(text, motion, &pools, top_k)
}

/// Mean distance between each motion and its own text.
pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    check_paired(text, motion)?;
    Ok(text.iter().zip(motion).map(|(t, m)| euclidean(t, m)).sum::<f64>() / text.len() as f64)
}

/// Two disjoint index lists of length `s_dis` drawn from `0..n`.
pub fn draw_disjoint(n: usize, s_dis: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if s_dis == 0 || n < 2 * s_dis {
        return Err(CoreError::invalid(format!("need at least {} features, got {n}", 2 * s_dis)));
    }
    let mut idx = rng.sample_distinct(n, 2 * s_dis);
    let second = idx.split_off(s_dis);
    Ok((idx, second))
}

pub fn mean_pair_distance(features: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).map(|(&i, &j)| euclidean(&features[i], &features[j])).sum::<f64>() / a.len() as f64
}

/// Mean distance between `s_dis` random disjoint pairs.
pub fn diversity(features: &[Vec<f64>], s_dis: usize, rng: &mut Rng) -> Result<f64> {
    let (a, b) = draw_disjoint(features.len(), s_dis, rng)?;
    Ok(mean_pair_distance(features, &a, &b))
}

/// Per text, the mean distance between two disjoint random subsets of its
/// generations paired element-wise; averaged over texts.
pub fn mmodality(per_text: &[Vec<Vec<f64>>], subset: usize, rng: &mut Rng) -> Result<f64> {
    if per_text.is_empty() {
        return Err(CoreError::invalid("MModality needs at least one text"));
    }
    let mut total = 0.0;
    for group in per_text {
        let (a, b) = draw_disjoint(group.len(), subset, rng)?;
        total += mean_pair_distance(group, &a, &b);
    }
    Ok(total / per_text.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_cases() {
        let text = vec![vec![0.0; 4]; 3];
        let motion = vec![vec![1.0; 4]; 3];
        assert_eq!(mm_dist(&text, &motion).unwrap(), 2.0);
        assert_eq!(mm_dist(&text, &text).unwrap(), 0.0);
        let mut rng = Rng::new(1);
        assert_eq!(diversity(&text, 1, &mut rng).unwrap(), 0.0);
        assert_eq!(mmodality(&[vec![vec![3.0]; 30]], 10, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn identical_features_rank_first() {
        let mut rng = Rng::new(2);
        let f: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let r = r_precision(&f, &f, 3, &mut rng).unwrap();
        assert_eq!(r, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn pools_are_distinct_and_lead_with_self() {
        let pools = draw_pools(40, 32, &mut Rng::new(3)).unwrap();
        for (i, p) in pools.iter().enumerate() {
            assert_eq!(p[0], i);
            let mut s = p.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 32);
            assert!(s.iter().all(|&j| j < 40));
        }
        assert!(draw_pools(31, 32, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn too_few_for_diversity() {
        assert!(diversity(&vec![vec![0.0]; 5], 3, &mut Rng::new(0)).is_err());
    }
}
