use bipo_tensor::{AdamW, AdamWConfig, Grads, Rng, Tape};
use serde::{Deserialize, Serialize};

use super::loss::{hybrid_loss, sample_masks, TokenizedExample};
use super::model::{BipoModel, T2mConfig};
use super::occlusion::OcclusionMask;
use super::text::{TextInput, TextVocab};
use crate::error::{CoreError, Result};
use crate::motion::corpus::TextMotionPair;
use crate::nn::lr_at;
use crate::vq::MotionTokenizer;

/// Tokenizes each pair's motion and encodes its caption.
pub fn tokenize_pairs(
    tokenizer: &MotionTokenizer,
    vocab: &TextVocab,
    pairs: &[TextMotionPair],
) -> Result<Vec<TokenizedExample>> {
    pairs
        .iter()
        .map(|p| {
            Ok(TokenizedExample {
                text: TextInput::Words(vocab.encode(&p.text)?),
                tokens: tokenizer.tokenize(&p.motion)?,
                template: p.template.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2mCurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2mReport {
    pub init_val_loss: f64,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub final_train_accuracy: f64,
    pub curve: Vec<T2mCurvePoint>,
}

/// Mean hybrid loss and causal next-token accuracy over `examples`, with masks
/// drawn from a fixed seed so repeated calls agree.
pub fn evaluate(model: &BipoModel, examples: &[TokenizedExample], seed: u64) -> Result<(f64, f64)> {
    let mut rng = Rng::derive(seed, "t2m-eval");
    let mut loss = 0.0;
    let (mut correct, mut predicted) = (0, 0);
    let chunks: Vec<&[TokenizedExample]> = examples.chunks(64).collect();
    for chunk in &chunks {
        let masks = sample_masks(model, chunk, &mut rng)?;
        let tape = Tape::inference();
        let t = hybrid_loss(model, &tape, chunk, &masks, model.config.lambda.max(1e-12))?;
        loss += tape.item(t.total) * chunk.len() as f64;
        correct += t.correct;
        predicted += t.predicted;
    }
    let n = examples.len().max(1) as f64;
    Ok((loss / n, correct as f64 / predicted.max(1) as f64))
}

/// Trains the part transformers with the hybrid objective, keeping the
/// weights with the lowest validation loss.
pub fn train_t2m(
    train: &[TokenizedExample],
    val: &[TokenizedExample],
    config: &T2mConfig,
    codebook_size: usize,
    vocab: TextVocab,
    seed: u64,
) -> Result<(BipoModel, T2mReport)> {
    if train.is_empty() {
        return Err(CoreError::invalid("empty training set"));
    }
    let mut model = BipoModel::new(config, codebook_size, vocab, seed)?;
    let val = if val.is_empty() { &train[..train.len().min(64)] } else { val };
    let mut rng = Rng::derive(seed, "t2m-train");
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        },
        &model.params,
    );
    let (init_val, _) = evaluate(&model, val, seed)?;
    let mut best = (init_val, 0usize, model.params.clone());
    let mut curve = Vec::new();
    let warmup = config.steps / 20;
    let mut recent = (0usize, 0usize);
    let mut batch = Vec::with_capacity(config.batch_size);
    for step in 0..config.steps {
        batch.clear();
        for _ in 0..config.batch_size {
            batch.push(train[rng.below(train.len())].clone());
        }
        let masks = sample_masks(&model, &batch, &mut rng)?;
        let tape = Tape::new();
        let terms = hybrid_loss(&model, &tape, &batch, &masks, config.lambda)?;
        let lv = tape.item(terms.total);
        if !lv.is_finite() {
            return Err(CoreError::Divergence(format!("t2m loss became {lv} at step {step}")));
        }
        recent.0 += terms.correct;
        recent.1 += terms.predicted;
        let grads = tape.backward(terms.total)?;
        let mut g = Grads::new(&model.params);
        grads.accumulate_into(&mut g);
        g.clip_global_norm(1.0);
        opt.config.lr = lr_at(config.lr, step, config.steps, warmup);
        opt.step(&mut model.params, &g)?;

        let mut point = T2mCurvePoint {
            step,
            train_loss: lv,
            val_loss: None,
            val_accuracy: None,
        };
        let last = step + 1 == config.steps;
        if (config.eval_every > 0 && (step + 1) % config.eval_every == 0) || last {
            let (v, acc) = evaluate(&model, val, seed)?;
            point.val_loss = Some(v);
            point.val_accuracy = Some(acc);
            if v < best.0 {
                best = (v, step + 1, model.params.clone());
            }
            log::info!(
                "t2m step {} loss {lv:.4} val {v:.4} val acc {acc:.3} train acc {:.3}",
                step + 1,
                recent.0 as f64 / recent.1.max(1) as f64
            );
            if !last {
                recent = (0, 0);
            }
        }
        curve.push(point);
    }
    model.params.assign_from(&best.2)?;
    let report = T2mReport {
        init_val_loss: init_val,
        best_val_loss: best.0,
        best_step: best.1,
        final_train_accuracy: recent.0 as f64 / recent.1.max(1) as f64,
        curve,
    };
    Ok((model, report))
}

/// Teacher-forced causal next-token accuracy without occlusion.
pub fn causal_accuracy(model: &BipoModel, examples: &[TokenizedExample]) -> Result<f64> {
    let mut rng = Rng::new(0);
    let (mut correct, mut predicted) = (0, 0);
    for chunk in examples.chunks(64) {
        let mut masks = sample_masks(model, chunk, &mut rng)?;
        for m in &mut masks {
            m.occlusion = OcclusionMask::none(m.occlusion.positions());
        }
        let tape = Tape::inference();
        let t = hybrid_loss(model, &tape, chunk, &masks, 1.0)?;
        correct += t.correct;
        predicted += t.predicted;
    }
    Ok(correct as f64 / predicted.max(1) as f64)
}
