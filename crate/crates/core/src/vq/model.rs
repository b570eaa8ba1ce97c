use bipo_tensor::{Checkpoint, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::motion::features::{PoseSequence, FEATURE_DIM, FOOT_CONTACTS};
use crate::motion::parts::{merge_parts, split_parts, Part, PartMotion, NUM_PARTS};
use crate::nn::Conv;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub code_dim: usize,
    pub root_code_dim: usize,
    /// Temporal downsampling rate; a power of two.
    pub downsample: usize,
    pub width: usize,
    /// Weight of the commitment term.
    pub commitment: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Training window in frames.
    pub window: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
    /// Steps between dead-code resets; 0 disables them.
    pub reset_every: usize,
    /// Lower bound on per-column standard deviation used for normalisation.
    pub std_floor: f64,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            codebook_size: 64,
            code_dim: 32,
            root_code_dim: 16,
            downsample: 4,
            width: 64,
            commitment: 1.0,
            steps: 1200,
            batch_size: 32,
            window: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            eval_every: 100,
            reset_every: 20,
            std_floor: 0.01,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.downsample.is_power_of_two() {
            return Err(CoreError::invalid(format!(
                "downsample rate {} is not a power of two",
                self.downsample
            )));
        }
        if self.commitment < 0.0 {
            return Err(CoreError::invalid("commitment weight must be non-negative"));
        }
        if self.codebook_size == 0 || self.code_dim == 0 || self.root_code_dim == 0 || self.width == 0 {
            return Err(CoreError::invalid("VQ sizes must be positive"));
        }
        if self.window % self.downsample != 0 {
            return Err(CoreError::invalid("window must be a multiple of the downsample rate"));
        }
        Ok(())
    }

    pub fn code_dim_for(&self, part: Part) -> usize {
        if part == Part::Root {
            self.root_code_dim
        } else {
            self.code_dim
        }
    }
}

/// Output of nearest-codeword quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub tokens: Vec<usize>,
    /// Selected codewords, same shape as the latents.
    pub codes: Tensor,
    /// Mean squared codeword-to-latent distance (codebook update term).
    pub vq_loss: f64,
    /// Same value as `vq_loss`; differs only in which side receives gradient.
    pub commit_loss: f64,
}

/// Index of the nearest codeword; ties go to the lowest index.
pub fn nearest_code(z: &[f64], codebook: &Tensor) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..codebook.rows() {
        let d: f64 = codebook.row(k).iter().zip(z).map(|(e, v)| (e - v) * (e - v)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Quantizes `latents: [n, D]` against `codebook: [K, D]`.
pub fn quantize(latents: &Tensor, codebook: &Tensor) -> Result<Quantized> {
    if latents.cols() != codebook.cols() {
        return Err(CoreError::invalid(format!(
            "latent dim {} does not match code dim {}",
            latents.cols(),
            codebook.cols()
        )));
    }
    let n = latents.rows();
    let d = latents.cols();
    let mut tokens = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n * d);
    let mut sq = 0.0;
    for i in 0..n {
        let z = latents.row(i);
        let k = nearest_code(z, codebook);
        tokens.push(k);
        let e = codebook.row(k);
        sq += e.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        codes.extend_from_slice(e);
    }
    let loss = if n == 0 { 0.0 } else { sq / (n * d) as f64 };
    Ok(Quantized {
        tokens,
        codes: Tensor::new(vec![n, d], codes)?,
        vq_loss: loss,
        commit_loss: loss,
    })
}

#[derive(Debug, Clone)]
struct DownBlock {
    conv: Conv,
    res1: Conv,
    res2: Conv,
}

#[derive(Debug, Clone)]
struct UpBlock {
    res1: Conv,
    res2: Conv,
    conv: Conv,
}

/// Convolutional VQ-VAE for one body part.
#[derive(Debug, Clone)]
pub struct PartVq {
    pub part: Part,
    pub code_dim: usize,
    pub codebook_size: usize,
    pub downsample: usize,
    pub params: ParamStore,
    enc_in: Conv,
    down: Vec<DownBlock>,
    enc_out: Conv,
    dec_in: Conv,
    up: Vec<UpBlock>,
    dec_out: Conv,
    pub codebook: ParamId,
    /// Per-column normalisation statistics.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PartVq {
    pub fn new(part: Part, config: &VqConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let dim = part.dim();
        let w = config.width;
        let d = config.code_dim_for(part);
        let mut s = ParamStore::new();
        let enc_in = Conv::new(&mut s, "enc.in", dim, w, 3, 1, 1, rng)?;
        let blocks = config.downsample.trailing_zeros() as usize;
        let mut down = Vec::with_capacity(blocks);
        for i in 0..blocks {
            down.push(DownBlock {
                conv: Conv::new(&mut s, &format!("enc.down{i}"), w, w, 4, 2, 1, rng)?,
                res1: Conv::new(&mut s, &format!("enc.res{i}a"), w, w, 3, 1, 1, rng)?,
                res2: Conv::new(&mut s, &format!("enc.res{i}b"), w, w, 1, 1, 0, rng)?,
            });
        }
        let enc_out = Conv::new(&mut s, "enc.out", w, d, 3, 1, 1, rng)?;
        let dec_in = Conv::new(&mut s, "dec.in", d, w, 3, 1, 1, rng)?;
        let mut up = Vec::with_capacity(blocks);
        for i in 0..blocks {
            up.push(UpBlock {
                res1: Conv::new(&mut s, &format!("dec.res{i}a"), w, w, 3, 1, 1, rng)?,
                res2: Conv::new(&mut s, &format!("dec.res{i}b"), w, w, 1, 1, 0, rng)?,
                conv: Conv::new(&mut s, &format!("dec.up{i}"), w, w, 3, 1, 1, rng)?,
            });
        }
        let dec_out = Conv::new(&mut s, "dec.out", w, dim, 3, 1, 1, rng)?;
        for v in s.get_mut(dec_out.w).data_mut() {
            *v *= 0.1;
        }
        let codebook = s.add("codebook", Tensor::randn(vec![config.codebook_size, d], 1.0, rng))?;
        Ok(Self {
            part,
            code_dim: d,
            codebook_size: config.codebook_size,
            downsample: config.downsample,
            params: s,
            enc_in,
            down,
            enc_out,
            dec_in,
            up,
            dec_out,
            codebook,
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        })
    }

    pub fn codebook_tensor(&self) -> &Tensor {
        self.params.get(self.codebook)
    }

    /// `[B, L, dim] → [B, L/r, D]`.
    pub fn encode_var(&self, tape: &Tape, x: Var) -> Result<Var> {
        let p = &self.params;
        let mut h = tape.relu(self.enc_in.forward(tape, p, x)?)?;
        for b in &self.down {
            h = tape.relu(b.conv.forward(tape, p, h)?)?;
            let r = tape.relu(b.res1.forward(tape, p, h)?)?;
            let r = b.res2.forward(tape, p, r)?;
            h = tape.add(h, r)?;
        }
        self.enc_out.forward(tape, p, h)
    }

    /// `[B, T, D] → [B, T·r, dim]`.
    pub fn decode_var(&self, tape: &Tape, q: Var) -> Result<Var> {
        let p = &self.params;
        let mut h = tape.relu(self.dec_in.forward(tape, p, q)?)?;
        for b in &self.up {
            let r = tape.relu(b.res1.forward(tape, p, h)?)?;
            let r = b.res2.forward(tape, p, r)?;
            h = tape.add(h, r)?;
            h = tape.upsample(h, 2)?;
            h = tape.relu(b.conv.forward(tape, p, h)?)?;
        }
        self.dec_out.forward(tape, p, h)
    }

    pub fn normalize(&self, m: &PartMotion) -> Vec<f64> {
        let d = self.part.dim();
        m.data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn denormalize(&self, data: &[f64]) -> Vec<f64> {
        let d = self.part.dim();
        data.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }

    /// Normalised frames right-padded by repeating the last frame to a
    /// multiple of the downsample rate. Returns the data and padded length.
    pub fn prepare(&self, m: &PartMotion) -> Result<(Vec<f64>, usize)> {
        if m.part != self.part {
            return Err(CoreError::invalid(format!(
                "{} VQ-VAE given {} motion",
                self.part.name(),
                m.part.name()
            )));
        }
        if m.is_empty() {
            return Err(CoreError::invalid("cannot encode an empty motion"));
        }
        let d = self.part.dim();
        let mut data = self.normalize(m);
        let padded = m.len().div_ceil(self.downsample) * self.downsample;
        let last = data[(m.len() - 1) * d..].to_vec();
        for _ in m.len()..padded {
            data.extend_from_slice(&last);
        }
        Ok((data, padded))
    }

    /// Continuous latents `[⌈L/r⌉, D]`.
    pub fn encode(&self, m: &PartMotion) -> Result<Tensor> {
        let (data, padded) = self.prepare(m)?;
        let tape = Tape::inference();
        let x = tape.constant(Tensor::new(vec![1, padded, self.part.dim()], data)?);
        let z = self.encode_var(&tape, x)?;
        let t = padded / self.downsample;
        let z = tape.value(z).clone();
        Ok(z.reshape(vec![t, self.code_dim])?)
    }

    pub fn tokenize(&self, m: &PartMotion) -> Result<Vec<usize>> {
        let z = self.encode(m)?;
        Ok(quantize(&z, self.codebook_tensor())?.tokens)
    }

    /// `r · tokens.len()` frames.
    pub fn decode_tokens(&self, tokens: &[usize]) -> Result<PartMotion> {
        if tokens.is_empty() {
            return Err(CoreError::invalid("no tokens to decode"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.codebook_size) {
            return Err(CoreError::invalid(format!(
                "token {bad} out of range for codebook of {}",
                self.codebook_size
            )));
        }
        let tape = Tape::inference();
        let cb = tape.constant(self.codebook_tensor().clone());
        let q = tape.gather(cb, tokens)?;
        let q = tape.reshape(q, &[1, tokens.len(), self.code_dim])?;
        let y = self.decode_var(&tape, q)?;
        let frames = tokens.len() * self.downsample;
        let data = self.denormalize(tape.value(y).data());
        PartMotion::new(self.part, frames, data)
    }
}

/// The six part VQ-VAEs together.
#[derive(Debug, Clone)]
pub struct MotionTokenizer {
    pub config: VqConfig,
    pub parts: Vec<PartVq>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VqMeta {
    kind: String,
    config: VqConfig,
}

impl MotionTokenizer {
    pub fn new(config: &VqConfig, seed: u64) -> Result<Self> {
        let parts = Part::ALL
            .iter()
            .map(|&p| PartVq::new(p, config, &mut Rng::derive(seed, &format!("vq/{}", p.name()))))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            parts,
        })
    }

    pub fn downsample(&self) -> usize {
        self.config.downsample
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    /// Token sequence for each part, canonical order.
    pub fn tokenize(&self, seq: &PoseSequence) -> Result<Vec<Vec<usize>>> {
        split_parts(seq)
            .iter()
            .zip(&self.parts)
            .map(|(m, vq)| vq.tokenize(m))
            .collect()
    }

    /// Decodes six equal-length token sequences into a whole-body motion.
    /// Decoded contact columns are clamped to `[0, 1]`.
    pub fn decode(&self, tokens: &[Vec<usize>]) -> Result<PoseSequence> {
        if tokens.len() != NUM_PARTS {
            return Err(CoreError::invalid(format!("expected 6 token sequences, got {}", tokens.len())));
        }
        let parts: Vec<PartMotion> = tokens
            .iter()
            .zip(&self.parts)
            .map(|(t, vq)| vq.decode_tokens(t))
            .collect::<Result<_>>()?;
        let mut seq = merge_parts(&parts)?;
        for t in 0..seq.len() {
            for v in &mut seq.frame_mut(t)[FOOT_CONTACTS..FOOT_CONTACTS + 4] {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(seq)
    }

    /// Tokenize then decode, trimming the padding frames.
    pub fn reconstruct(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        let full = self.decode(&self.tokenize(seq)?)?;
        let n = seq.len() * FEATURE_DIM;
        PoseSequence::new(seq.len(), full.data()[..n].to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = VqMeta {
            kind: "vq".into(),
            config: self.config.clone(),
        };
        let mut c = Checkpoint::new(serde_json::to_string(&meta).expect("meta serializes"));
        for vq in &self.parts {
            let prefix = format!("{}/", vq.part.name());
            c.push_store(&prefix, &vq.params);
            c.push(format!("{prefix}norm.mean"), Tensor::vector(vq.mean.clone()));
            c.push(format!("{prefix}norm.std"), Tensor::vector(vq.std.clone()));
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta: VqMeta = serde_json::from_str(&c.meta)?;
        if meta.kind != "vq" {
            return Err(CoreError::Parse(format!("expected a VQ checkpoint, found `{}`", meta.kind)));
        }
        let mut tok = Self::new(&meta.config, 0)?;
        for vq in &mut tok.parts {
            let prefix = format!("{}/", vq.part.name());
            c.load_store(&prefix, &mut vq.params)?;
            let get = |name: &str| {
                c.get(&format!("{prefix}{name}"))
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| CoreError::Parse(format!("missing {prefix}{name}")))
            };
            vq.mean = get("norm.mean")?;
            vq.std = get("norm.std")?;
            if vq.mean.len() != vq.part.dim() || vq.std.len() != vq.part.dim() {
                return Err(CoreError::Parse(format!("bad normalisation for {}", vq.part.name())));
            }
        }
        Ok(tok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VqConfig {
        VqConfig {
            width: 16,
            codebook_size: 8,
            code_dim: 4,
            root_code_dim: 3,
            ..Default::default()
        }
    }

    #[test]
    fn latent_lengths() {
        let vq = PartVq::new(Part::LeftArm, &tiny(), &mut Rng::new(1)).unwrap();
        for (frames, want) in [(64, 16), (16, 4), (32, 8), (13, 4)] {
            let m = PartMotion::new(Part::LeftArm, frames, vec![0.1; frames * 60]).unwrap();
            assert_eq!(vq.encode(&m).unwrap().shape(), &[want, 4]);
        }
        let empty = PartMotion::new(Part::LeftArm, 0, vec![]).unwrap();
        assert!(vq.encode(&empty).is_err());
    }

    #[test]
    fn exact_codeword_has_zero_loss() {
        let cb = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let q = quantize(&z, &cb).unwrap();
        assert_eq!(q.tokens, vec![1, 2]);
        assert_eq!(q.vq_loss, 0.0);
        assert_eq!(q.commit_loss, 0.0);
        assert_eq!(q.codes, z);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(nearest_code(&[0.0, 0.0], &cb), 0);
        let cb2 = Tensor::from_rows(&[vec![5.0, 5.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(nearest_code(&[0.0, 0.0], &cb2), 1);
    }

    #[test]
    fn decode_length_and_range() {
        let vq = PartVq::new(Part::Root, &tiny(), &mut Rng::new(2)).unwrap();
        let m = vq.decode_tokens(&[0, 7, 3]).unwrap();
        assert_eq!(m.len(), 12);
        assert!(vq.decode_tokens(&[8]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut tok = MotionTokenizer::new(&tiny(), 5).unwrap();
        tok.parts[1].mean[3] = 0.25;
        let c = tok.to_checkpoint();
        let back = MotionTokenizer::from_checkpoint(&c).unwrap();
        for (a, b) in tok.parts.iter().zip(&back.parts) {
            assert_eq!(a.params, b.params);
            assert_eq!(a.mean, b.mean);
        }
    }
}
