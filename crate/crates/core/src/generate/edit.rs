use std::str::FromStr;

use bipo_tensor::Tape;
use serde::{Deserialize, Serialize};

use super::decode::GenerateConfig;
use super::sampler::Sampler;
use crate::error::{CoreError, Result};
use crate::motion::features::PoseSequence;
use crate::motion::parts::NUM_PARTS;
use crate::t2m::{build_bp_mask, BipoModel, ModelInput, TextInput};
use crate::vq::MotionTokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditMode {
    /// Keep the outer quarters, regenerate the middle half.
    Inpaint,
    /// Keep the middle half, regenerate the outer quarters.
    Outpaint,
    /// Keep the first half, regenerate the second.
    Prefix,
    /// Keep the second half, regenerate the first.
    Suffix,
}

impl EditMode {
    pub const ALL: [EditMode; 4] = [EditMode::Inpaint, EditMode::Outpaint, EditMode::Prefix, EditMode::Suffix];

    pub fn name(self) -> &'static str {
        match self {
            EditMode::Inpaint => "inpaint",
            EditMode::Outpaint => "outpaint",
            EditMode::Prefix => "prefix",
            EditMode::Suffix => "suffix",
        }
    }
}

impl FromStr for EditMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::invalid(format!("unknown edit mode {s:?}")))
    }
}

/// Given and generated 1-based token positions for a sequence of length `L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRegions {
    pub mode: EditMode,
    pub len: usize,
    pub given: Vec<usize>,
    pub generated: Vec<usize>,
}

/// Region arithmetic. The middle half is `lead+1 ..= lead+⌊L/2⌋` with
/// `lead = ⌊L/4⌋`; halves split at `⌊L/2⌋`.
pub fn edit_regions(mode: EditMode, len: usize) -> Result<EditRegions> {
    if len < 4 {
        return Err(CoreError::invalid(format!("editing needs at least 4 tokens, got {len}")));
    }
    let lead = len / 4;
    let half = len / 2;
    let middle = |p: &usize| *p > lead && *p <= lead + half;
    let first = |p: &usize| *p <= half;
    let all = 1..=len;
    let given: Vec<usize> = match mode {
        EditMode::Inpaint => all.filter(|p| !middle(p)).collect(),
        EditMode::Outpaint => all.filter(middle).collect(),
        EditMode::Prefix => all.filter(first).collect(),
        EditMode::Suffix => all.filter(|p| !first(p)).collect(),
    };
    let generated = (1..=len).filter(|p| !given.contains(p)).collect();
    Ok(EditRegions {
        mode,
        len,
        given,
        generated,
    })
}

/// Unmask set used while filling the generated region.
pub fn edit_unmask_set(regions: &EditRegions) -> Vec<usize> {
    let mut u = vec![0];
    u.extend(&regions.given);
    u.push(regions.len + 1);
    u
}

/// Regenerates the non-given positions of `source` tokens in ascending order.
/// Each position is predicted from the row before it under the bidirectional
/// mask, with earlier generated tokens written back before the next step.
pub fn edit_tokens(
    model: &BipoModel,
    text: &TextInput,
    source: &[Vec<usize>],
    mode: EditMode,
    sampler: &mut Sampler,
) -> Result<(EditRegions, Vec<Vec<usize>>)> {
    let len = source.first().map_or(0, Vec::len);
    if source.len() != NUM_PARTS || source.iter().any(|t| t.len() != len) {
        return Err(CoreError::invalid("editing needs six equal-length token sequences"));
    }
    if len > model.config.max_tokens {
        return Err(CoreError::invalid(format!("{len} tokens exceed max_tokens")));
    }
    let end = model.end_token();
    if source.iter().flatten().any(|&t| t >= end) {
        return Err(CoreError::invalid("source tokens must be motion tokens"));
    }
    let regions = edit_regions(mode, len)?;
    let mask = build_bp_mask(len, &edit_unmask_set(&regions))?.values;
    let mut tokens: Vec<Vec<usize>> = source
        .iter()
        .map(|t| {
            let mut s = t.clone();
            s.push(end);
            s
        })
        .collect();
    for &g in &regions.generated {
        let input = ModelInput {
            text: text.clone(),
            tokens: tokens.clone(),
            mask: mask.clone(),
            occlusion: None,
        };
        let tape = Tape::inference();
        let out = model.forward(&tape, std::slice::from_ref(&input))?;
        for (i, l) in out.logits.iter().enumerate() {
            let row = tape.value(*l).row(g - 1).to_vec();
            tokens[i][g - 1] = sampler.sample(&row, |j| j != end);
        }
    }
    for t in &mut tokens {
        t.pop();
    }
    Ok((regions, tokens))
}

/// An edited motion with its tokens.
#[derive(Debug, Clone)]
pub struct Edit {
    pub regions: EditRegions,
    pub source_tokens: Vec<Vec<usize>>,
    pub tokens: Vec<Vec<usize>>,
    pub motion: PoseSequence,
}

/// Tokenizes `source`, regenerates the mode's region and decodes the result.
pub fn edit(
    model: &BipoModel,
    tokenizer: &MotionTokenizer,
    text: &TextInput,
    source: &PoseSequence,
    mode: EditMode,
    config: &GenerateConfig,
) -> Result<Edit> {
    if tokenizer.codebook_size() != model.codebook_size {
        return Err(CoreError::invalid("tokenizer and model codebook sizes differ"));
    }
    let source_tokens = tokenizer.tokenize(source)?;
    let mut sampler = Sampler::new(&config.sampler)?;
    let (regions, tokens) = edit_tokens(model, text, &source_tokens, mode, &mut sampler)?;
    let motion = tokenizer.decode(&tokens)?;
    Ok(Edit {
        regions,
        source_tokens,
        tokens,
        motion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(a: usize, b: usize) -> Vec<usize> {
        (a..=b).collect()
    }

    #[test]
    fn regions_for_sixteen() {
        let r = edit_regions(EditMode::Inpaint, 16).unwrap();
        assert_eq!(r.given, [range(1, 4), range(13, 16)].concat());
        assert_eq!(r.generated, range(5, 12));
        assert_eq!(edit_regions(EditMode::Outpaint, 16).unwrap().given, range(5, 12));
        let s = edit_regions(EditMode::Suffix, 16).unwrap();
        assert_eq!((s.given, s.generated), (range(9, 16), range(1, 8)));
        let p = edit_regions(EditMode::Prefix, 16).unwrap();
        assert_eq!((p.given, p.generated), (range(1, 8), range(9, 16)));
    }

    #[test]
    fn odd_length_uses_floor() {
        let r = edit_regions(EditMode::Inpaint, 7).unwrap();
        assert_eq!(r.generated, vec![2, 3, 4]);
        assert_eq!(edit_regions(EditMode::Prefix, 7).unwrap().given, vec![1, 2, 3]);
        assert!(edit_regions(EditMode::Suffix, 3).is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EditMode::ALL {
            assert_eq!(m.name().parse::<EditMode>().unwrap(), m);
        }
        assert!("middle".parse::<EditMode>().is_err());
    }
}
