use bipo_tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::sampler::{Sampler, SamplerConfig};
use crate::error::{CoreError, Result};
use crate::motion::features::PoseSequence;
use crate::motion::parts::NUM_PARTS;
use crate::t2m::{build_bp_mask, build_strict_mask, BipoModel, ModelInput, TextInput};
use crate::vq::MotionTokenizer;

/// Number of parts that must have emitted END before the length is fixed.
pub const END_QUORUM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Token budget; `None` uses the model limit.
    pub max_tokens: Option<usize>,
    /// Run the even-position refinement pass.
    pub refine: bool,
    pub sampler: SamplerConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            max_tokens: None,
            refine: true,
            sampler: SamplerConfig::temperature(1.0, 0),
        }
    }
}

/// Result of the autoregressive pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pass1 {
    /// `NUM_PARTS × length` motion tokens.
    pub tokens: Vec<Vec<usize>>,
    pub length: usize,
    /// Per part, the number of motion tokens preceding its first END.
    pub end_steps: Vec<Option<usize>>,
    /// The budget ran out before enough parts emitted END.
    pub truncated: bool,
}

/// A generated motion with its tokens.
#[derive(Debug, Clone)]
pub struct Generation {
    pub pass1: Pass1,
    /// Final tokens (after refinement when enabled).
    pub tokens: Vec<Vec<usize>>,
    pub motion: PoseSequence,
}

/// Length chosen from per-part END steps: the `quorum`-th smallest.
pub fn end_length(end_steps: &[Option<usize>], quorum: usize) -> Option<usize> {
    let mut steps: Vec<usize> = end_steps.iter().flatten().copied().collect();
    steps.sort_unstable();
    steps.get(quorum.checked_sub(1)?).copied()
}

/// Lower-triangular `n×n` additive mask.
pub fn causal_prefix_mask(n: usize) -> Tensor {
    let mut v = vec![f64::NEG_INFINITY; n * n];
    for q in 0..n {
        for k in 0..=q {
            v[q * n + k] = 0.0;
        }
    }
    Tensor::new(vec![n, n], v).expect("square mask")
}

/// Logit rows `rows[b]` of each example `b`, per part: `[b][part][j]`.
fn batch_rows(model: &BipoModel, inputs: &[ModelInput], rows: &[Vec<usize>]) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    let tape = Tape::inference();
    let out = model.forward(&tape, inputs)?;
    let values: Vec<_> = out.logits.iter().map(|l| tape.value(*l).clone()).collect();
    Ok(out
        .segments
        .iter()
        .zip(rows)
        .map(|(&(start, _), rs)| {
            values
                .iter()
                .map(|v| rs.iter().map(|&r| v.row(start + r).to_vec()).collect())
                .collect()
        })
        .collect())
}

struct Pass1State {
    tokens: Vec<Vec<usize>>,
    end_steps: Vec<Option<usize>>,
    done: Option<Pass1>,
}

/// Lockstep autoregressive decoding of all six parts under the causal mask.
///
/// At step `t` every part predicts position `t` from the text and positions
/// `< t` of all parts. A part choosing END has its step recorded and a motion
/// token substituted so the others keep a full context. Decoding stops once
/// [`END_QUORUM`] parts have ended; END is never allowed at the first step.
pub fn generate_pass1(model: &BipoModel, text: &TextInput, max_tokens: usize, sampler: &mut Sampler) -> Result<Pass1> {
    let mut out = generate_pass1_batch(model, std::slice::from_ref(text), max_tokens, std::slice::from_mut(sampler))?;
    Ok(out.remove(0))
}

/// [`generate_pass1`] for several texts at once, one sampler each. Results
/// equal running the texts one by one.
pub fn generate_pass1_batch(
    model: &BipoModel,
    texts: &[TextInput],
    max_tokens: usize,
    samplers: &mut [Sampler],
) -> Result<Vec<Pass1>> {
    if texts.len() != samplers.len() {
        return Err(CoreError::invalid("one sampler per text required"));
    }
    let max_tokens = max_tokens.min(model.config.max_tokens);
    if max_tokens == 0 {
        return Err(CoreError::invalid("token budget must be positive"));
    }
    let end = model.end_token();
    let mut states: Vec<Pass1State> = texts
        .iter()
        .map(|_| Pass1State {
            tokens: vec![Vec::new(); NUM_PARTS],
            end_steps: vec![None; NUM_PARTS],
            done: None,
        })
        .collect();
    for t in 1..=max_tokens + 1 {
        let active: Vec<usize> = (0..states.len()).filter(|&b| states[b].done.is_none()).collect();
        if active.is_empty() {
            break;
        }
        let inputs: Vec<ModelInput> = active
            .iter()
            .map(|&b| ModelInput {
                text: texts[b].clone(),
                tokens: states[b].tokens.clone(),
                mask: causal_prefix_mask(t),
                occlusion: None,
            })
            .collect();
        let rows = batch_rows(model, &inputs, &vec![vec![t - 1]; active.len()])?;
        for (&b, parts) in active.iter().zip(&rows) {
            let (state, sampler) = (&mut states[b], &mut samplers[b]);
            for (i, part_rows) in parts.iter().enumerate() {
                let logits = &part_rows[0];
                let choice = if t == 1 { sampler.sample(logits, |j| j != end) } else { sampler.sample(logits, |_| true) };
                if choice == end {
                    if state.end_steps[i].is_none() {
                        state.end_steps[i] = Some(t - 1);
                    }
                    if t <= max_tokens {
                        state.tokens[i].push(sampler.sample(logits, |j| j != end));
                    }
                } else if t <= max_tokens {
                    state.tokens[i].push(choice);
                }
            }
            if let Some(length) = end_length(&state.end_steps, END_QUORUM) {
                for seq in &mut state.tokens {
                    seq.truncate(length);
                }
                state.done = Some(Pass1 {
                    tokens: std::mem::take(&mut state.tokens),
                    length,
                    end_steps: state.end_steps.clone(),
                    truncated: false,
                });
            }
        }
    }
    Ok(states
        .into_iter()
        .map(|s| {
            s.done.unwrap_or(Pass1 {
                tokens: s.tokens,
                length: max_tokens,
                end_steps: s.end_steps,
                truncated: true,
            })
        })
        .collect())
}

/// Unmask set of the refinement pass: text, END and every odd position.
pub fn refine_unmask_set(length: usize) -> Vec<usize> {
    let mut u = vec![0];
    u.extend((1..=length).filter(|p| p % 2 == 1));
    u.push(length + 1);
    u
}

fn bidirectional_mask(model: &BipoModel, length: usize, unmask: &[usize]) -> Result<Tensor> {
    Ok(if model.config.strict_mask {
        build_strict_mask(length, unmask)?.values
    } else {
        build_bp_mask(length, unmask)?.values
    })
}

fn with_end(tokens: &[Vec<usize>], end: usize) -> Vec<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            let mut s = t.clone();
            s.push(end);
            s
        })
        .collect()
}

/// Re-predicts every even position in one parallel pass; odd positions are
/// returned untouched.
pub fn refine_pass2(model: &BipoModel, text: &TextInput, tokens: &[Vec<usize>], sampler: &mut Sampler) -> Result<Vec<Vec<usize>>> {
    let mut out = refine_pass2_batch(model, std::slice::from_ref(text), &[tokens.to_vec()], std::slice::from_mut(sampler))?;
    Ok(out.remove(0))
}

pub fn refine_pass2_batch(
    model: &BipoModel,
    texts: &[TextInput],
    tokens: &[Vec<Vec<usize>>],
    samplers: &mut [Sampler],
) -> Result<Vec<Vec<Vec<usize>>>> {
    if texts.len() != tokens.len() || texts.len() != samplers.len() {
        return Err(CoreError::invalid("texts, token sets and samplers must pair up"));
    }
    let end = model.end_token();
    let mut inputs = Vec::new();
    let mut rows = Vec::new();
    let mut which = Vec::new();
    for (b, seqs) in tokens.iter().enumerate() {
        let length = seqs.first().map_or(0, Vec::len);
        if seqs.len() != NUM_PARTS || seqs.iter().any(|t| t.len() != length) {
            return Err(CoreError::invalid("refinement needs six equal-length sequences"));
        }
        if length < 2 {
            continue;
        }
        inputs.push(ModelInput {
            text: texts[b].clone(),
            tokens: with_end(seqs, end),
            mask: bidirectional_mask(model, length, &refine_unmask_set(length))?,
            occlusion: None,
        });
        rows.push((2..=length).step_by(2).map(|e| e - 1).collect::<Vec<_>>());
        which.push(b);
    }
    let mut out = tokens.to_vec();
    if inputs.is_empty() {
        return Ok(out);
    }
    let logits = batch_rows(model, &inputs, &rows)?;
    for ((&b, rs), parts) in which.iter().zip(&rows).zip(&logits) {
        for (i, part) in parts.iter().enumerate() {
            for (&r, row) in rs.iter().zip(part) {
                out[b][i][r] = samplers[b].sample(row, |j| j != end);
            }
        }
    }
    Ok(out)
}

/// Text to whole-body motion: pass 1, optional pass 2, per-part decoding and merge.
pub fn generate(
    model: &BipoModel,
    tokenizer: &MotionTokenizer,
    text: &TextInput,
    config: &GenerateConfig,
) -> Result<Generation> {
    let mut out = generate_batch(model, tokenizer, std::slice::from_ref(text), config, &[config.sampler.seed])?;
    Ok(out.remove(0))
}

/// Generates one motion per text; text `b` samples with `seeds[b]` in place of
/// the configured seed.
pub fn generate_batch(
    model: &BipoModel,
    tokenizer: &MotionTokenizer,
    texts: &[TextInput],
    config: &GenerateConfig,
    seeds: &[u64],
) -> Result<Vec<Generation>> {
    if tokenizer.codebook_size() != model.codebook_size {
        return Err(CoreError::invalid("tokenizer and model codebook sizes differ"));
    }
    if seeds.len() != texts.len() {
        return Err(CoreError::invalid("one seed per text required"));
    }
    let mut samplers: Vec<Sampler> = seeds
        .iter()
        .map(|&seed| Sampler::new(&SamplerConfig { seed, ..config.sampler.clone() }))
        .collect::<Result<_>>()?;
    let budget = config.max_tokens.unwrap_or(model.config.max_tokens);
    let pass1 = generate_pass1_batch(model, texts, budget, &mut samplers)?;
    let tokens = if config.refine {
        let t: Vec<_> = pass1.iter().map(|p| p.tokens.clone()).collect();
        refine_pass2_batch(model, texts, &t, &mut samplers)?
    } else {
        pass1.iter().map(|p| p.tokens.clone()).collect()
    };
    pass1
        .into_iter()
        .zip(tokens)
        .map(|(pass1, tokens)| {
            let motion = tokenizer.decode(&tokens)?;
            Ok(Generation { pass1, tokens, motion })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quorum_length() {
        let s = |v: &[usize]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        assert_eq!(end_length(&s(&[7; 6]), END_QUORUM), Some(7));
        assert_eq!(end_length(&s(&[5, 5, 6, 7, 7, 9]), END_QUORUM), Some(6));
        assert_eq!(end_length(&[Some(3), None, Some(2), None, None, None], END_QUORUM), None);
        assert_eq!(end_length(&[Some(3), None, Some(2), None, Some(9), None], END_QUORUM), Some(9));
    }

    #[test]
    fn odd_positions_unmasked() {
        assert_eq!(refine_unmask_set(5), vec![0, 1, 3, 5, 6]);
        assert_eq!(refine_unmask_set(1), vec![0, 1, 2]);
    }

    #[test]
    fn prefix_mask_is_lower_triangular() {
        let m = causal_prefix_mask(3);
        assert_eq!(m.at(1, 0), 0.0);
        assert_eq!(m.at(0, 1), f64::NEG_INFINITY);
        assert_eq!(causal_prefix_mask(1).data(), &[0.0]);
    }
}
