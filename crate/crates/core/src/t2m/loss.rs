use bipo_tensor::{Rng, Tape, Var};

use super::mask::{build_bp_mask, build_causal_mask, build_strict_mask, sample_bp_unmask_set, UnmaskDraw};
use super::model::{BipoModel, ModelInput};
use super::occlusion::{sample_po_mask, OcclusionMask};
use super::text::TextInput;
use crate::error::{CoreError, Result};
use crate::motion::parts::NUM_PARTS;

/// A caption with its six part token sequences of common length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedExample {
    pub text: TextInput,
    pub tokens: Vec<Vec<usize>>,
    pub template: String,
}

impl TokenizedExample {
    pub fn len(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random masks drawn for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMasks {
    /// Shared by all six parts.
    pub unmask: UnmaskDraw,
    /// Shared by both loss terms and every coordination depth.
    pub occlusion: OcclusionMask,
}

/// Draws the unmask set and occlusion pattern for each example.
pub fn sample_masks(model: &BipoModel, batch: &[TokenizedExample], rng: &mut Rng) -> Result<Vec<ExampleMasks>> {
    let c = &model.config;
    batch
        .iter()
        .map(|ex| {
            let unmask = sample_bp_unmask_set(ex.len(), c.rho_lo, c.rho_hi, rng)?;
            let occlusion = sample_po_mask(ex.len() + 2, c.occlusion, rng)?;
            Ok(ExampleMasks { unmask, occlusion })
        })
        .collect()
}

/// Both terms of the hybrid objective for one batch.
#[derive(Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Summed-over-parts mean NLL under the causal mask.
    pub causal: Option<f64>,
    /// Summed-over-parts mean NLL over masked positions under the bidirectional mask.
    pub bidirectional: Option<f64>,
    /// Teacher-forced next-token hits / predictions under the causal mask.
    pub correct: usize,
    pub predicted: usize,
}

fn full_sequence(ex: &TokenizedExample, end: usize) -> Vec<Vec<usize>> {
    ex.tokens
        .iter()
        .map(|t| {
            let mut s = t.clone();
            s.push(end);
            s
        })
        .collect()
}

fn check_batch(model: &BipoModel, batch: &[TokenizedExample], masks: &[ExampleMasks]) -> Result<()> {
    if batch.is_empty() || batch.len() != masks.len() {
        return Err(CoreError::invalid("batch and mask counts differ or are zero"));
    }
    for ex in batch {
        if ex.tokens.len() != NUM_PARTS || ex.tokens.iter().any(|t| t.len() != ex.len()) || ex.is_empty() {
            return Err(CoreError::invalid("each example needs six equal, nonempty token sequences"));
        }
        if ex.len() > model.config.max_tokens {
            return Err(CoreError::invalid(format!("{} tokens exceed max_tokens", ex.len())));
        }
    }
    Ok(())
}

/// Summed-over-parts cross-entropy at `rows` against `targets`.
fn part_nll(tape: &Tape, logits: &[Var], rows: &[usize], targets: &[Vec<usize>]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (l, t) in logits.iter().zip(targets) {
        let picked = tape.gather(*l, rows)?;
        let ce = tape.cross_entropy(picked, t)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    Ok(total.expect("six parts"))
}

/// `λ·L_causal + (1−λ)·L_bidirectional`, each summed over the six parts.
///
/// Output row `q` predicts the token at `q + 1`. The bidirectional term only
/// scores rows whose target is masked. Terms with zero weight are skipped.
pub fn hybrid_loss(
    model: &BipoModel,
    tape: &Tape,
    batch: &[TokenizedExample],
    masks: &[ExampleMasks],
    lambda: f64,
) -> Result<LossTerms> {
    check_batch(model, batch, masks)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::invalid("lambda must lie in [0, 1]"));
    }
    let end = model.end_token();
    let seqs: Vec<Vec<Vec<usize>>> = batch.iter().map(|ex| full_sequence(ex, end)).collect();
    let mut terms: Vec<Var> = Vec::new();
    let mut causal = None;
    let mut bidirectional = None;
    let (mut correct, mut predicted) = (0, 0);

    if lambda > 0.0 {
        let inputs: Vec<ModelInput> = batch
            .iter()
            .zip(&seqs)
            .zip(masks)
            .map(|((ex, s), m)| ModelInput {
                text: ex.text.clone(),
                tokens: s.clone(),
                mask: build_causal_mask(ex.len()).values,
                occlusion: Some(m.occlusion.clone()),
            })
            .collect();
        let out = model.forward(tape, &inputs)?;
        let mut rows = Vec::new();
        let mut targets = vec![Vec::new(); NUM_PARTS];
        for (&(start, n), s) in out.segments.iter().zip(&seqs) {
            for q in 0..n - 1 {
                rows.push(start + q);
                for (i, t) in targets.iter_mut().enumerate() {
                    t.push(s[i][q]);
                }
            }
        }
        for (i, l) in out.logits.iter().enumerate() {
            let v = tape.value(*l);
            for (&r, &t) in rows.iter().zip(&targets[i]) {
                let row = v.row(r);
                let best = argmax(row);
                correct += usize::from(best == t);
                predicted += 1;
            }
        }
        let nll = part_nll(tape, &out.logits, &rows, &targets)?;
        causal = Some(tape.item(nll));
        terms.push(tape.scale(nll, lambda)?);
    }

    if lambda < 1.0 {
        let mut inputs = Vec::with_capacity(batch.len());
        for ((ex, s), m) in batch.iter().zip(&seqs).zip(masks) {
            let mask = if model.config.strict_mask {
                build_strict_mask(ex.len(), &m.unmask.unmask)?
            } else {
                build_bp_mask(ex.len(), &m.unmask.unmask)?
            };
            inputs.push(ModelInput {
                text: ex.text.clone(),
                tokens: s.clone(),
                mask: mask.values,
                occlusion: Some(m.occlusion.clone()),
            });
        }
        let out = model.forward(tape, &inputs)?;
        let mut rows = Vec::new();
        let mut targets = vec![Vec::new(); NUM_PARTS];
        for ((&(start, _), s), m) in out.segments.iter().zip(&seqs).zip(masks) {
            for &target_pos in &m.unmask.masked {
                rows.push(start + target_pos - 1);
                for (i, t) in targets.iter_mut().enumerate() {
                    t.push(s[i][target_pos - 1]);
                }
            }
        }
        if rows.is_empty() {
            bidirectional = Some(0.0);
        } else {
            let nll = part_nll(tape, &out.logits, &rows, &targets)?;
            bidirectional = Some(tape.item(nll));
            terms.push(tape.scale(nll, 1.0 - lambda)?);
        }
    }
    let total = match terms.as_slice() {
        [a] => *a,
        [a, b] => tape.add(*a, *b)?,
        _ => tape.constant(bipo_tensor::Tensor::scalar(0.0)),
    };
    Ok(LossTerms {
        total,
        causal,
        bidirectional,
        correct,
        predicted,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::t2m::model::T2mConfig;
    use crate::t2m::text::TextVocab;

    fn setup() -> (BipoModel, Vec<TokenizedExample>) {
        let config = T2mConfig {
            dim: 16,
            heads: 2,
            ff_dim: 16,
            max_tokens: 8,
            ..Default::default()
        };
        let vocab = TextVocab::new(vec!["x".into(), "y".into()]).unwrap();
        let model = BipoModel::new(&config, 20, vocab, 1).unwrap();
        let mut rng = Rng::new(5);
        let batch = (0..4)
            .map(|b| TokenizedExample {
                text: TextInput::Words(vec![b % 2]),
                tokens: (0..NUM_PARTS).map(|_| (0..3 + b).map(|_| rng.below(20)).collect()).collect(),
                template: String::new(),
            })
            .collect();
        (model, batch)
    }

    #[test]
    fn decomposition_is_exact() {
        let (model, batch) = setup();
        let masks = sample_masks(&model, &batch, &mut Rng::new(2)).unwrap();
        let tape = Tape::inference();
        let at = |l| tape.item(hybrid_loss(&model, &tape, &batch, &masks, l).unwrap().total);
        let (a, b) = (at(1.0), at(0.0));
        for lambda in [0.0, 0.25, 0.5, 0.9, 1.0] {
            assert_eq!(at(lambda), lambda * a + (1.0 - lambda) * b);
        }
    }

    #[test]
    fn init_loss_near_uniform() {
        let (model, batch) = setup();
        let masks = sample_masks(&model, &batch, &mut Rng::new(2)).unwrap();
        let tape = Tape::inference();
        let t = hybrid_loss(&model, &tape, &batch, &masks, 0.5).unwrap();
        let ln_v = (model.vocab_size() as f64).ln();
        for per_part in [t.causal.unwrap() / 6.0, t.bidirectional.unwrap() / 6.0] {
            assert!((per_part / ln_v - 1.0).abs() < 0.05, "{per_part} vs {ln_v}");
        }
    }
}
