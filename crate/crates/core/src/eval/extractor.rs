use bipo_tensor::{AdamW, AdamWConfig, Checkpoint, Grads, ParamStore, Rng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::motion::corpus::TextMotionPair;
use crate::motion::features::{PoseSequence, FEATURE_DIM};
use crate::nn::{lr_at, Conv, Embedding, Linear};
use crate::t2m::TextVocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    /// Mismatched pairs closer than this are penalised.
    pub margin: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            hidden: 64,
            margin: 4.0,
            steps: 600,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.batch_size < 2 {
            return Err(CoreError::invalid("extractor dims must be positive and batch size at least 2"));
        }
        if !(self.margin > 0.0 && self.lr > 0.0) {
            return Err(CoreError::invalid("extractor margin and lr must be positive"));
        }
        Ok(())
    }
}

/// Text and motion encoders mapping into a shared feature space.
#[derive(Debug, Clone)]
pub struct FeatureExtractors {
    pub config: ExtractorConfig,
    pub vocab: TextVocab,
    pub params: ParamStore,
    words: Embedding,
    text_fc: Linear,
    text_out: Linear,
    conv1: Conv,
    conv2: Conv,
    motion_out: Linear,
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtractorMeta {
    kind: String,
    config: ExtractorConfig,
    vocabulary: Vec<String>,
}

impl FeatureExtractors {
    pub fn new(config: &ExtractorConfig, vocab: TextVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, "extractors");
        let mut p = ParamStore::new();
        let (h, d) = (config.hidden, config.feature_dim);
        let words = Embedding::new(&mut p, "text.words", vocab.len(), h, 1.0, &mut rng)?;
        let text_fc = Linear::new(&mut p, "text.fc", h, h, &mut rng)?;
        let text_out = Linear::new(&mut p, "text.out", h, d, &mut rng)?;
        let conv1 = Conv::new(&mut p, "motion.conv1", FEATURE_DIM, h, 3, 1, 1, &mut rng)?;
        let conv2 = Conv::new(&mut p, "motion.conv2", h, h, 3, 2, 1, &mut rng)?;
        let motion_out = Linear::new(&mut p, "motion.out", h, d, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            vocab,
            params: p,
            words,
            text_fc,
            text_out,
            conv1,
            conv2,
            motion_out,
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
        })
    }

    /// Per-column statistics used to normalise motion input.
    pub fn set_normalization(&mut self, motions: &[&PoseSequence]) -> Result<()> {
        let frames: usize = motions.iter().map(|m| m.len()).sum();
        if frames < 2 {
            return Err(CoreError::invalid("normalisation needs at least two frames"));
        }
        let mut mean = vec![0.0; FEATURE_DIM];
        for m in motions {
            for t in 0..m.len() {
                mean.iter_mut().zip(m.frame(t)).for_each(|(a, v)| *a += v);
            }
        }
        mean.iter_mut().for_each(|a| *a /= frames as f64);
        let mut var = vec![0.0; FEATURE_DIM];
        for m in motions {
            for t in 0..m.len() {
                for ((s, v), mu) in var.iter_mut().zip(m.frame(t)).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
        }
        self.std = var.iter().map(|s| (s / frames as f64).sqrt().max(0.01)).collect();
        self.mean = mean;
        Ok(())
    }

    pub fn text_var(&self, tape: &Tape, texts: &[&[usize]]) -> Result<Var> {
        let mut ids = Vec::new();
        let mut segments = Vec::with_capacity(texts.len());
        for t in texts {
            if t.is_empty() {
                return Err(CoreError::invalid("empty text"));
            }
            segments.push((ids.len(), t.len()));
            ids.extend_from_slice(t);
        }
        let e = self.words.forward(tape, &self.params, &ids)?;
        let pooled = tape.segment_mean(e, &segments)?;
        let h = tape.relu(self.text_fc.forward(tape, &self.params, pooled)?)?;
        self.text_out.forward(tape, &self.params, h)
    }

    pub fn motion_var(&self, tape: &Tape, motions: &[&PoseSequence]) -> Result<Var> {
        let mut pooled_rows = Vec::with_capacity(motions.len());
        let mut segments = Vec::with_capacity(motions.len());
        let mut offset = 0;
        for m in motions {
            if m.is_empty() {
                return Err(CoreError::invalid("empty motion"));
            }
            let mut x = m.data().to_vec();
            for row in x.chunks_mut(FEATURE_DIM) {
                for ((v, mu), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                    *v = (*v - mu) / s;
                }
            }
            let x = tape.constant(Tensor::new(vec![m.len(), FEATURE_DIM], x)?);
            let h = tape.relu(self.conv1.forward(tape, &self.params, x)?)?;
            let h = tape.relu(self.conv2.forward(tape, &self.params, h)?)?;
            let n = tape.shape(h)[0];
            segments.push((offset, n));
            offset += n;
            pooled_rows.push(h);
        }
        let all = tape.concat_rows(&pooled_rows)?;
        let pooled = tape.segment_mean(all, &segments)?;
        self.motion_out.forward(tape, &self.params, pooled)
    }

    fn rows(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
        let t = tape.value(v);
        (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
    }

    pub fn text_features(&self, texts: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let ids: Vec<Vec<usize>> = texts.iter().map(|t| self.vocab.encode(t)).collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in ids.chunks(256) {
            let tape = Tape::inference();
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            out.extend(Self::rows(&tape, self.text_var(&tape, &refs)?));
        }
        Ok(out)
    }

    pub fn motion_features(&self, motions: &[&PoseSequence]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(motions.len());
        for chunk in motions.chunks(64) {
            let tape = Tape::inference();
            out.extend(Self::rows(&tape, self.motion_var(&tape, chunk)?));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = ExtractorMeta {
            kind: "extractors".into(),
            config: self.config.clone(),
            vocabulary: self.vocab.words().to_vec(),
        };
        let mut c = Checkpoint::new(serde_json::to_string(&meta).expect("meta serializes"));
        c.push_store("", &self.params);
        c.push("norm.mean", Tensor::vector(self.mean.clone()));
        c.push("norm.std", Tensor::vector(self.std.clone()));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let meta: ExtractorMeta = serde_json::from_str(&c.meta)?;
        if meta.kind != "extractors" {
            return Err(CoreError::Parse(format!("expected an extractors checkpoint, found `{}`", meta.kind)));
        }
        let mut x = Self::new(&meta.config, TextVocab::new(meta.vocabulary)?, 0)?;
        c.load_store("", &mut x.params)?;
        let get = |name: &str| {
            c.get(name)
                .filter(|t| t.numel() == FEATURE_DIM)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| CoreError::Parse(format!("checkpoint lacks `{name}`")))
        };
        x.mean = get("norm.mean")?;
        x.std = get("norm.std")?;
        Ok(x)
    }
}

/// Contrastive loss on a batch: squared distance of matched pairs plus
/// squared hinge `max(0, margin − d)²` over mismatched pairs. Pairs sharing a
/// template are neither pulled together nor pushed apart.
pub fn contrastive_loss(tape: &Tape, text: Var, motion: Var, templates: &[&str], margin: f64) -> Result<Var> {
    let b = templates.len();
    let mut pos = vec![0.0; b * b];
    let mut neg = vec![0.0; b * b];
    let mut n_neg = 0usize;
    for i in 0..b {
        pos[i * b + i] = 1.0 / b as f64;
        for j in 0..b {
            if templates[i] != templates[j] {
                neg[i * b + j] = 1.0;
                n_neg += 1;
            }
        }
    }
    let n_neg = n_neg.max(1) as f64;
    neg.iter_mut().for_each(|v| *v /= n_neg);
    let d2 = tape.pairwise_sq_dist(text, motion)?;
    let pos = tape.constant(Tensor::new(vec![b, b], pos)?);
    let neg = tape.constant(Tensor::new(vec![b, b], neg)?);
    let pull = tape.sum(tape.mul(d2, pos)?)?;
    let d = tape.sqrt_eps(d2, 1e-12)?;
    let gap = tape.relu(tape.affine(d, -1.0, margin)?)?;
    let push = tape.sum(tape.mul(tape.mul(gap, gap)?, neg)?)?;
    Ok(tape.add(pull, push)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorReport {
    pub init_loss: f64,
    pub final_loss: f64,
    /// Mean matched and mismatched text–motion distances on held-out pairs.
    pub matched_distance: f64,
    pub mismatched_distance: f64,
}

/// Mean matched distance and mean distance over all mismatched pairs.
pub fn pairing_distances(text: &[Vec<f64>], motion: &[Vec<f64>]) -> (f64, f64) {
    let n = text.len();
    let mut matched = 0.0;
    let mut other = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = super::metrics::euclidean(&text[i], &motion[j]);
            if i == j {
                matched += d;
            } else {
                other += d;
            }
        }
    }
    (matched / n as f64, other / (n * (n - 1)).max(1) as f64)
}

/// Trains both encoders on `train` and reports separation on `held_out`.
pub fn train_extractors(
    train: &[TextMotionPair],
    held_out: &[TextMotionPair],
    vocab: TextVocab,
    config: &ExtractorConfig,
    seed: u64,
) -> Result<(FeatureExtractors, ExtractorReport)> {
    if train.len() < config.batch_size {
        return Err(CoreError::invalid("fewer training pairs than the batch size"));
    }
    let mut x = FeatureExtractors::new(config, vocab, seed)?;
    x.set_normalization(&train.iter().map(|p| &p.motion).collect::<Vec<_>>())?;
    let texts: Vec<Vec<usize>> = train.iter().map(|p| x.vocab.encode(&p.text)).collect::<Result<_>>()?;
    let mut rng = Rng::derive(seed, "extractors-train");
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        },
        &x.params,
    );
    let (mut init_loss, mut final_loss) = (f64::NAN, f64::NAN);
    for step in 0..config.steps {
        let idx = rng.sample_distinct(train.len(), config.batch_size);
        let tape = Tape::new();
        let t_refs: Vec<&[usize]> = idx.iter().map(|&i| texts[i].as_slice()).collect();
        let m_refs: Vec<&PoseSequence> = idx.iter().map(|&i| &train[i].motion).collect();
        let templates: Vec<&str> = idx.iter().map(|&i| train[i].template.as_str()).collect();
        let t = x.text_var(&tape, &t_refs)?;
        let m = x.motion_var(&tape, &m_refs)?;
        let loss = contrastive_loss(&tape, t, m, &templates, config.margin)?;
        let lv = tape.item(loss);
        if !lv.is_finite() {
            return Err(CoreError::Divergence(format!("extractor loss became {lv} at step {step}")));
        }
        if step == 0 {
            init_loss = lv;
        }
        final_loss = lv;
        let mut g = Grads::new(&x.params);
        tape.backward(loss)?.accumulate_into(&mut g);
        g.clip_global_norm(1.0);
        opt.config.lr = lr_at(config.lr, step, config.steps, config.steps / 20);
        opt.step(&mut x.params, &g)?;
        if (step + 1) % 100 == 0 {
            log::info!("extractors step {} loss {lv:.4}", step + 1);
        }
    }
    let held = if held_out.is_empty() { train } else { held_out };
    let tf = x.text_features(&held.iter().map(|p| p.text.clone()).collect::<Vec<_>>())?;
    let mf = x.motion_features(&held.iter().map(|p| &p.motion).collect::<Vec<_>>())?;
    let (matched_distance, mismatched_distance) = pairing_distances(&tf, &mf);
    Ok((
        x,
        ExtractorReport {
            init_loss,
            final_loss,
            matched_distance,
            mismatched_distance,
        },
    ))
}
