use bipo_tensor::{Checkpoint, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::occlusion::OcclusionMask;
use super::text::{TextEncoder, TextInput, TextVocab};
use crate::error::{CoreError, Result};
use crate::motion::parts::NUM_PARTS;
use crate::nn::{Embedding, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct T2mConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Longest motion-token sequence per part.
    pub max_tokens: usize,
    /// Weight of the causal term in the hybrid loss.
    pub lambda: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    /// Partial-occlusion probability.
    pub occlusion: f64,
    /// Use the strict mask variant (masked positions never see each other).
    pub strict_mask: bool,
    /// Width of external sentence embeddings, when used instead of words.
    pub external_text_dim: Option<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
}

impl Default for T2mConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            dim: 64,
            heads: 4,
            ff_dim: 128,
            max_tokens: 16,
            lambda: 0.5,
            rho_lo: 0.5,
            rho_hi: 1.0,
            occlusion: 0.4,
            strict_mask: false,
            external_text_dim: None,
            steps: 1500,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            eval_every: 100,
        }
    }
}

impl T2mConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::invalid(m.to_string()));
        if self.layers == 0 || self.dim == 0 || self.ff_dim == 0 || self.max_tokens == 0 {
            return bad("transformer sizes must be positive");
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad("heads must divide the model width");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(0.0 <= self.rho_lo && self.rho_lo <= self.rho_hi && self.rho_hi <= 1.0) {
            return bad("mask-ratio interval must satisfy 0 ≤ lo ≤ hi ≤ 1");
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return bad("occlusion probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One example's input to [`BipoModel::forward`].
///
/// `tokens[i]` holds part `i`'s ids at positions `1..n`; position 0 is the
/// text slot. All six parts share the length and the `n×n` mask.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub text: TextInput,
    pub tokens: Vec<Vec<usize>>,
    pub mask: Tensor,
    pub occlusion: Option<OcclusionMask>,
}

impl ModelInput {
    pub fn positions(&self) -> usize {
        self.tokens.first().map_or(1, |t| t.len() + 1)
    }
}

/// Per-part logits plus the row span of every example.
#[derive(Debug)]
pub struct ForwardOutput {
    /// `[Σn, K+1]` for each part, canonical order.
    pub logits: Vec<Var>,
    pub segments: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
struct PartNet {
    tok: Embedding,
    pos: Embedding,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

/// Cross-part coordination at one depth; weights shared by all parts.
#[derive(Debug, Clone)]
struct Coordination {
    occluded: ParamId,
    l1: Linear,
    l2: Linear,
    l3: Linear,
    ln: LayerNorm,
}

/// Six coordinated part transformers sharing one text encoder.
#[derive(Debug, Clone)]
pub struct BipoModel {
    pub config: T2mConfig,
    pub codebook_size: usize,
    pub vocab: TextVocab,
    pub params: ParamStore,
    text: TextEncoder,
    parts: Vec<PartNet>,
    /// Entry `d − 1` runs before layer `d`, for `d ≥ 1`.
    coord: Vec<Coordination>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    config: T2mConfig,
    codebook_size: usize,
    vocabulary: Vec<String>,
}

impl BipoModel {
    pub fn new(config: &T2mConfig, codebook_size: usize, vocab: TextVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if codebook_size == 0 || vocab.is_empty() {
            return Err(CoreError::invalid("codebook and vocabulary must be nonempty"));
        }
        let mut rng = Rng::derive(seed, "t2m-init");
        let mut s = ParamStore::new();
        let d = config.dim;
        let text = TextEncoder::new(&mut s, vocab.len(), d, config.external_text_dim, &mut rng)?;
        let mut parts = Vec::with_capacity(NUM_PARTS);
        for p in 0..NUM_PARTS {
            let name = |x: &str| format!("part{p}.{x}");
            let tok = Embedding::new(&mut s, &name("tok"), codebook_size + 1, d, 0.5, &mut rng)?;
            let pos = Embedding::new(&mut s, &name("pos"), config.max_tokens + 2, d, 0.5, &mut rng)?;
            let mut blocks = Vec::with_capacity(config.layers);
            for l in 0..config.layers {
                let n = |x: &str| format!("part{p}.layer{l}.{x}");
                blocks.push(Block {
                    ln1: LayerNorm::new(&mut s, &n("ln1"), d)?,
                    qkv: Linear::new(&mut s, &n("qkv"), d, 3 * d, &mut rng)?,
                    out: Linear::new(&mut s, &n("out"), d, d, &mut rng)?,
                    ln2: LayerNorm::new(&mut s, &n("ln2"), d)?,
                    ff1: Linear::new(&mut s, &n("ff1"), d, config.ff_dim, &mut rng)?,
                    ff2: Linear::new(&mut s, &n("ff2"), config.ff_dim, d, &mut rng)?,
                });
            }
            let ln_f = LayerNorm::new(&mut s, &name("ln_f"), d)?;
            let head = Linear::new(&mut s, &name("head"), d, codebook_size + 1, &mut rng)?;
            // Near-uniform predictions at initialisation.
            for v in s.get_mut(head.w).data_mut() {
                *v *= 0.05;
            }
            parts.push(PartNet {
                tok,
                pos,
                blocks,
                ln_f,
                head,
            });
        }
        let mut coord = Vec::new();
        for l in 1..config.layers {
            let n = |x: &str| format!("coord{l}.{x}");
            coord.push(Coordination {
                occluded: s.add(n("occluded"), Tensor::randn(vec![d], 0.5, &mut rng))?,
                l1: Linear::new(&mut s, &n("l1"), (NUM_PARTS - 1) * d, d, &mut rng)?,
                l2: Linear::new(&mut s, &n("l2"), d, d, &mut rng)?,
                l3: Linear::zeros(&mut s, &n("l3"), d, d)?,
                ln: LayerNorm::new(&mut s, &n("ln"), d)?,
            });
        }
        Ok(Self {
            config: config.clone(),
            codebook_size,
            vocab,
            params: s,
            text,
            parts,
            coord,
        })
    }

    /// Id of the END token; motion codes are `0..K`.
    pub fn end_token(&self) -> usize {
        self.codebook_size
    }

    /// Output vocabulary size `K + 1`.
    pub fn vocab_size(&self) -> usize {
        self.codebook_size + 1
    }

    pub fn encode_text(&self, tape: &Tape, texts: &[&TextInput]) -> Result<Var> {
        self.text.forward(tape, &self.params, texts)
    }

    pub fn forward(&self, tape: &Tape, inputs: &[ModelInput]) -> Result<ForwardOutput> {
        if inputs.is_empty() {
            return Err(CoreError::invalid("empty batch"));
        }
        let p = &self.params;
        let mut segments = Vec::with_capacity(inputs.len());
        let mut rows = 0;
        for inp in inputs {
            if inp.tokens.len() != NUM_PARTS {
                return Err(CoreError::invalid(format!("expected {NUM_PARTS} token sequences")));
            }
            let n = inp.positions();
            if inp.tokens.iter().any(|t| t.len() + 1 != n) {
                return Err(CoreError::invalid("part token sequences differ in length"));
            }
            if n > self.config.max_tokens + 2 {
                return Err(CoreError::invalid(format!(
                    "{n} positions exceed the model limit of {}",
                    self.config.max_tokens + 2
                )));
            }
            if inp.mask.shape() != [n, n] {
                return Err(CoreError::invalid(format!("mask shape {:?} for {n} positions", inp.mask.shape())));
            }
            if let Some(o) = &inp.occlusion {
                if o.positions() < n {
                    return Err(CoreError::invalid("occlusion mask shorter than the sequence"));
                }
            }
            if let Some(&bad) = inp.tokens.iter().flatten().find(|&&t| t > self.codebook_size) {
                return Err(CoreError::invalid(format!("token id {bad} outside input vocabulary")));
            }
            segments.push((rows, n));
            rows += n;
        }
        let texts: Vec<&TextInput> = inputs.iter().map(|i| &i.text).collect();
        let text = self.encode_text(tape, &texts)?;
        let masks: Vec<Tensor> = inputs.iter().map(|i| i.mask.clone()).collect();

        let text_row = self.vocab_size();
        let mut pos_ids = Vec::with_capacity(rows);
        for &(_, n) in &segments {
            pos_ids.extend(0..n);
        }
        let mut states = Vec::with_capacity(NUM_PARTS);
        for (i, net) in self.parts.iter().enumerate() {
            let mut ids = Vec::with_capacity(rows);
            for (b, inp) in inputs.iter().enumerate() {
                ids.push(text_row + b);
                ids.extend_from_slice(&inp.tokens[i]);
            }
            let table = tape.param(p, net.tok.table);
            let table = tape.concat_rows(&[table, text])?;
            let x = tape.gather(table, &ids)?;
            let pos = net.pos.forward(tape, p, &pos_ids)?;
            states.push(tape.add(x, pos)?);
        }

        for depth in 0..self.config.layers {
            if depth > 0 {
                states = self.coordination_layer(tape, depth, &states, inputs)?;
            }
            for (i, net) in self.parts.iter().enumerate() {
                states[i] = self.block(tape, &net.blocks[depth], states[i], &segments, &masks)?;
            }
        }
        let mut logits = Vec::with_capacity(NUM_PARTS);
        for (i, net) in self.parts.iter().enumerate() {
            let h = net.ln_f.forward(tape, p, states[i])?;
            logits.push(net.head.forward(tape, p, h)?);
        }
        Ok(ForwardOutput { logits, segments })
    }

    fn block(&self, tape: &Tape, b: &Block, x: Var, segments: &[(usize, usize)], masks: &[Tensor]) -> Result<Var> {
        let p = &self.params;
        let d = self.config.dim;
        let h = b.ln1.forward(tape, p, x)?;
        let qkv = b.qkv.forward(tape, p, h)?;
        let q = tape.slice_cols(qkv, 0, d)?;
        let k = tape.slice_cols(qkv, d, d)?;
        let v = tape.slice_cols(qkv, 2 * d, d)?;
        let a = tape.attention(q, k, v, self.config.heads, segments, masks)?;
        let a = b.out.forward(tape, p, a)?;
        let x = tape.add(x, a)?;
        let h = b.ln2.forward(tape, p, x)?;
        let h = tape.relu(b.ff1.forward(tape, p, h)?)?;
        let h = b.ff2.forward(tape, p, h)?;
        Ok(tape.add(x, h)?)
    }

    /// `LN(cⁱ + MLP(ĉ))` for every part, where `ĉ` concatenates the other
    /// five parts' states with occluded rows swapped for a learned vector.
    ///
    /// `depth` is the index of the transformer layer that follows, `≥ 1`.
    pub fn coordination_layer(&self, tape: &Tape, depth: usize, states: &[Var], inputs: &[ModelInput]) -> Result<Vec<Var>> {
        if depth == 0 || depth > self.coord.len() || states.len() != NUM_PARTS {
            return Err(CoreError::invalid(format!("no coordination layer before layer {depth}")));
        }
        let c = &self.coord[depth - 1];
        let rows: usize = inputs.iter().map(ModelInput::positions).sum();
        let p = &self.params;
        let fill = tape.param(p, c.occluded);
        let mut per_part = Vec::with_capacity(NUM_PARTS);
        for i in 0..NUM_PARTS {
            let mut cols = Vec::with_capacity(NUM_PARTS - 1);
            for j in (0..NUM_PARTS).filter(|&j| j != i) {
                let mut hidden = Vec::with_capacity(rows);
                for inp in inputs {
                    let n = inp.positions();
                    match &inp.occlusion {
                        Some(o) => hidden.extend((0..n).map(|t| o.is_occluded(i, j, t))),
                        None => hidden.extend(std::iter::repeat_n(false, n)),
                    }
                }
                let src = if hidden.iter().any(|&h| h) {
                    tape.where_rows(states[j], fill, &hidden)?
                } else {
                    states[j]
                };
                cols.push(src);
            }
            per_part.push(tape.concat_cols(&cols)?);
        }
        let all = tape.concat_rows(&per_part)?;
        let h = tape.relu(c.l1.forward(tape, p, all)?)?;
        let h = tape.relu(c.l2.forward(tape, p, h)?)?;
        let h = c.l3.forward(tape, p, h)?;
        let mut out = Vec::with_capacity(NUM_PARTS);
        for (i, &s) in states.iter().enumerate() {
            let m = tape.slice_rows(h, i * rows, rows)?;
            let r = tape.add(s, m)?;
            out.push(c.ln.forward(tape, p, r)?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ModelMeta {
            kind: "t2m".into(),
            config: self.config.clone(),
            codebook_size: self.codebook_size,
            vocabulary: self.vocab.words().to_vec(),
        };
        let mut c = Checkpoint::new(serde_json::to_string(&meta).expect("meta serializes"));
        c.push_store("", &self.params);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&c.meta)?;
        if meta.kind != "t2m" {
            return Err(CoreError::Parse(format!("expected a t2m checkpoint, found `{}`", meta.kind)));
        }
        let mut m = Self::new(&meta.config, meta.codebook_size, TextVocab::new(meta.vocabulary)?, 0)?;
        c.load_store("", &mut m.params)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::t2m::mask::build_causal_mask;

    fn tiny() -> BipoModel {
        let config = T2mConfig {
            layers: 2,
            dim: 8,
            heads: 2,
            ff_dim: 12,
            max_tokens: 6,
            ..Default::default()
        };
        let vocab = TextVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        BipoModel::new(&config, 5, vocab, 3).unwrap()
    }

    fn input(len: usize) -> ModelInput {
        ModelInput {
            text: TextInput::Words(vec![0, 2]),
            tokens: (0..NUM_PARTS).map(|i| (0..len).map(|t| (i + t) % 6).collect()).collect(),
            mask: build_causal_mask(len.saturating_sub(1)).values,
            occlusion: None,
        }
    }

    #[test]
    fn logits_shape() {
        let m = tiny();
        let tape = Tape::inference();
        let out = m.forward(&tape, &[input(3), input(5)]).unwrap();
        assert_eq!(out.segments, vec![(0, 4), (4, 6)]);
        for l in &out.logits {
            assert_eq!(tape.shape(*l), vec![10, 6]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = tiny();
        let tape = Tape::inference();
        let mut long = input(8);
        long.mask = build_causal_mask(7).values;
        assert!(m.forward(&tape, &[long]).is_err());
        let mut bad = input(3);
        bad.tokens[2][0] = 6;
        assert!(m.forward(&tape, &[bad]).is_err());
        let mut ragged = input(3);
        ragged.tokens[1].pop();
        assert!(m.forward(&tape, &[ragged]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny();
        let back = BipoModel::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(m.params, back.params);
        assert_eq!(m.vocab, back.vocab);
    }
}
