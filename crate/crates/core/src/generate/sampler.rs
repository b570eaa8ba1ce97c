use bipo_tensor::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Greedy,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Ignored in greedy mode.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Greedy,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    pub fn temperature(temperature: f64, seed: u64) -> Self {
        Self {
            mode: SamplerMode::Temperature,
            temperature,
            seed,
        }
    }
}

/// Picks tokens from logit rows.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub config: SamplerConfig,
    rng: Rng,
}

impl Sampler {
    pub fn new(config: &SamplerConfig) -> Result<Self> {
        if config.mode == SamplerMode::Temperature && !(config.temperature > 0.0 && config.temperature.is_finite()) {
            return Err(CoreError::invalid(format!("temperature must be positive, got {}", config.temperature)));
        }
        Ok(Self {
            config: config.clone(),
            rng: Rng::derive(config.seed, "sampler"),
        })
    }

    /// Samples among indices where `allowed` holds. Greedy ties go to the
    /// lowest index.
    pub fn sample(&mut self, logits: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
        let candidates: Vec<usize> = (0..logits.len()).filter(|&j| allowed(j)).collect();
        assert!(!candidates.is_empty(), "no token is allowed");
        match self.config.mode {
            SamplerMode::Greedy => {
                let mut best = candidates[0];
                for &j in &candidates[1..] {
                    if logits[j] > logits[best] {
                        best = j;
                    }
                }
                best
            }
            SamplerMode::Temperature => {
                let t = self.config.temperature;
                let max = candidates.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = candidates.iter().map(|&j| ((logits[j] - max) / t).exp()).collect();
                candidates[self.rng.categorical(&weights)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_respects_allowed_and_ties() {
        let mut s = Sampler::new(&SamplerConfig::greedy()).unwrap();
        assert_eq!(s.sample(&[1.0, 3.0, 3.0, 0.0], |_| true), 1);
        assert_eq!(s.sample(&[1.0, 3.0, 3.0, 0.0], |j| j != 1), 2);
    }

    #[test]
    fn temperature_is_seeded() {
        let logits = [0.1, 0.2, 0.3, 0.0, -0.5];
        let draw = |seed| {
            let mut s = Sampler::new(&SamplerConfig::temperature(1.0, seed)).unwrap();
            (0..50).map(|_| s.sample(&logits, |_| true)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        assert!(Sampler::new(&SamplerConfig::temperature(0.0, 1)).is_err());
    }
}
