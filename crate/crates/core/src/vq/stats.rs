use serde::{Deserialize, Serialize};

/// Codebook usage over a set of quantized latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookStats {
    pub counts: Vec<usize>,
    pub total: usize,
    pub used: usize,
    /// `exp` of the usage entropy in nats.
    pub perplexity: f64,
}

pub fn codebook_stats<'a>(tokens: impl IntoIterator<Item = &'a usize>, codebook_size: usize) -> CodebookStats {
    let mut counts = vec![0usize; codebook_size];
    for &t in tokens {
        counts[t] += 1;
    }
    let total: usize = counts.iter().sum();
    let entropy = if total == 0 {
        0.0
    } else {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total as f64;
                -p * p.ln()
            })
            .sum()
    };
    CodebookStats {
        used: counts.iter().filter(|&&c| c > 0).count(),
        total,
        counts,
        perplexity: f64::exp(entropy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_and_single() {
        let all: Vec<usize> = (0..16).collect();
        assert!((codebook_stats(&all, 16).perplexity - 16.0).abs() < 1e-9);
        let one = vec![3; 40];
        let s = codebook_stats(&one, 16);
        assert_eq!(s.perplexity, 1.0);
        assert_eq!(s.used, 1);
        assert_eq!(s.total, 40);
    }

    proptest! {
        #[test]
        fn perplexity_bounded(tokens in proptest::collection::vec(0usize..12, 1..200)) {
            let s = codebook_stats(&tokens, 12);
            prop_assert!(s.perplexity <= 12.0 + 1e-9);
            prop_assert!(s.perplexity <= s.used as f64 + 1e-9);
            prop_assert!(s.perplexity >= 1.0 - 1e-12);
            prop_assert_eq!(s.counts.iter().sum::<usize>(), tokens.len());
        }
    }
}
