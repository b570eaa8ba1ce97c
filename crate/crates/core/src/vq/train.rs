use bipo_tensor::{AdamW, AdamWConfig, Grads, Rng, Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::model::{quantize, MotionTokenizer, PartVq, VqConfig};
use super::stats::{codebook_stats, CodebookStats};
use crate::error::{CoreError, Result};
use crate::motion::corpus::TextMotionPair;
use crate::motion::parts::{split_part, Part, PartMotion};
use crate::nn::lr_at;

/// Maximum number of validation motions scored per evaluation.
const MAX_VAL: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    pub part: String,
    /// Normalised reconstruction MSE on validation before training.
    pub init_val_mse: f64,
    pub best_val_mse: f64,
    pub best_step: usize,
    pub final_loss: f64,
    pub resets: usize,
    /// Usage over the training set with the selected weights.
    pub usage: CodebookStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqCurvePoint {
    pub part: String,
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub commit: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqTrainReport {
    pub parts: Vec<PartReport>,
    pub curve: Vec<VqCurvePoint>,
}

impl VqTrainReport {
    /// Smallest init/best validation MSE ratio across parts.
    pub fn min_improvement(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.init_val_mse / p.best_val_mse.max(1e-300))
            .fold(f64::INFINITY, f64::min)
    }
}

fn column_stats(data: &[PartMotion], floor: f64) -> (Vec<f64>, Vec<f64>) {
    let d = data[0].dim();
    let mut sum = vec![0.0; d];
    let mut n = 0usize;
    for m in data {
        for t in 0..m.len() {
            for (s, v) in sum.iter_mut().zip(m.frame(t)) {
                *s += v;
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut var = vec![0.0; d];
    for m in data {
        for t in 0..m.len() {
            for ((acc, v), mu) in var.iter_mut().zip(m.frame(t)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    let std = var.iter().map(|v| (v / n as f64).sqrt().max(floor)).collect();
    (mean, std)
}

/// Normalised MSE of full-length reconstructions, trimmed to the input length.
pub fn reconstruction_mse(vq: &PartVq, data: &[PartMotion]) -> Result<f64> {
    recon_error(vq, data, true)
}

/// Same as [`reconstruction_mse`] but in raw feature units.
pub fn raw_reconstruction_mse(vq: &PartVq, data: &[PartMotion]) -> Result<f64> {
    recon_error(vq, data, false)
}

fn recon_error(vq: &PartVq, data: &[PartMotion], normalized: bool) -> Result<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for m in data {
        let tokens = vq.tokenize(m)?;
        let rec = vq.decode_tokens(&tokens)?;
        let (a, b) = if normalized {
            (vq.normalize(m), vq.normalize(&rec))
        } else {
            (m.data().to_vec(), rec.data().to_vec())
        };
        for (x, y) in a.iter().zip(&b[..a.len()]) {
            sq += (x - y) * (x - y);
        }
        n += a.len();
    }
    Ok(if n == 0 { 0.0 } else { sq / n as f64 })
}

fn sample_batch(vq: &PartVq, data: &[Vec<f64>], lens: &[usize], config: &VqConfig, rng: &mut Rng) -> Result<Tensor> {
    let d = vq.part.dim();
    let w = config.window;
    let mut out = Vec::with_capacity(config.batch_size * w * d);
    for _ in 0..config.batch_size {
        let i = rng.below(data.len());
        let len = lens[i];
        let start = if len > w { rng.below(len - w + 1) } else { 0 };
        for t in 0..w {
            let f = (start + t).min(len - 1);
            out.extend_from_slice(&data[i][f * d..(f + 1) * d]);
        }
    }
    Ok(Tensor::new(vec![config.batch_size, w, d], out)?)
}

/// Trains one part's VQ-VAE, keeping the weights with the best validation MSE.
pub fn train_part(
    part: Part,
    train: &[PartMotion],
    val: &[PartMotion],
    config: &VqConfig,
    seed: u64,
) -> Result<(PartVq, PartReport, Vec<VqCurvePoint>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(CoreError::invalid("VQ training needs at least one motion"));
    }
    if train.iter().chain(val).any(|m| m.part != part || m.is_empty()) {
        return Err(CoreError::invalid(format!("VQ data for {} has wrong part or is empty", part.name())));
    }
    let mut rng = Rng::derive(seed, &format!("vq-train/{}", part.name()));
    let mut vq = PartVq::new(part, config, &mut rng.fork("init"))?;
    let (mean, std) = column_stats(train, config.std_floor);
    vq.mean = mean;
    vq.std = std;
    let val: Vec<PartMotion> = if val.is_empty() {
        train.iter().take(MAX_VAL).cloned().collect()
    } else {
        val.iter().take(MAX_VAL).cloned().collect()
    };
    let data: Vec<Vec<f64>> = train.iter().map(|m| vq.normalize(m)).collect();
    let lens: Vec<usize> = train.iter().map(PartMotion::len).collect();

    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.lr,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: config.weight_decay,
        },
        &vq.params,
    );
    let init_val = reconstruction_mse(&vq, &val)?;
    let mut best = (init_val, 0usize, vq.params.clone());
    let mut curve = Vec::new();
    let k = config.codebook_size;
    let mut usage = vec![0usize; k];
    let mut resets = 0;
    let mut final_loss = f64::NAN;
    let warmup = config.steps / 20;
    let b = config.batch_size;
    let t_lat = config.window / config.downsample;
    let d = vq.code_dim;

    for step in 0..config.steps {
        let x = sample_batch(&vq, &data, &lens, config, &mut rng)?;
        if step == 0 {
            init_codebook(&mut vq, &x, &mut rng)?;
        }
        let tape = Tape::new();
        let xv = tape.constant(x);
        let z = vq.encode_var(&tape, xv)?;
        let zf = tape.reshape(z, &[b * t_lat, d])?;
        let zval = tape.value(zf).clone();
        let q = quantize(&zval, vq.codebook_tensor())?;
        for &t in &q.tokens {
            usage[t] += 1;
        }
        let cb = tape.param(&vq.params, vq.codebook);
        let e = tape.gather(cb, &q.tokens)?;
        let zd = tape.detach(zf);
        let ed = tape.detach(e);
        let vq_loss = tape.mse(zd, e)?;
        let commit = tape.mse(zf, ed)?;
        let st = tape.straight_through(zf, q.codes)?;
        let st = tape.reshape(st, &[b, t_lat, d])?;
        let y = vq.decode_var(&tape, st)?;
        let recon = tape.mse(y, xv)?;
        let wc = tape.scale(commit, config.commitment)?;
        let loss = tape.add(recon, vq_loss)?;
        let loss = tape.add(loss, wc)?;
        let lv = tape.item(loss);
        if !lv.is_finite() {
            return Err(CoreError::Divergence(format!(
                "{} VQ-VAE loss became {lv} at step {step}",
                part.name()
            )));
        }
        final_loss = lv;
        let grads = tape.backward(loss)?;
        let mut g = Grads::new(&vq.params);
        grads.accumulate_into(&mut g);
        g.clip_global_norm(1.0);
        opt.config.lr = lr_at(config.lr, step, config.steps, warmup);
        opt.step(&mut vq.params, &g)?;

        if config.reset_every > 0 && (step + 1) % config.reset_every == 0 && step + 1 < config.steps * 4 / 5 {
            resets += reset_dead_codes(&mut vq, &mut opt, &usage, &zval, &mut rng);
            usage.iter_mut().for_each(|u| *u = 0);
        }
        let mut point = VqCurvePoint {
            part: part.name().to_string(),
            step,
            loss: lv,
            recon: tape.item(recon),
            commit: tape.item(commit),
            val_mse: None,
        };
        let last = step + 1 == config.steps;
        if (config.eval_every > 0 && (step + 1) % config.eval_every == 0) || last {
            let v = reconstruction_mse(&vq, &val)?;
            point.val_mse = Some(v);
            if v < best.0 {
                best = (v, step + 1, vq.params.clone());
            }
            log::debug!("vq {} step {} loss {lv:.5} val {v:.5}", part.name(), step + 1);
        }
        curve.push(point);
    }
    vq.params.assign_from(&best.2)?;
    let mut all_tokens = Vec::new();
    for m in train {
        all_tokens.extend(vq.tokenize(m)?);
    }
    let report = PartReport {
        part: part.name().to_string(),
        init_val_mse: init_val,
        best_val_mse: best.0,
        best_step: best.1,
        final_loss,
        resets,
        usage: codebook_stats(&all_tokens, k),
    };
    log::info!(
        "vq {}: val mse {:.4} -> {:.4}, {} codes used",
        part.name(),
        init_val,
        best.0,
        report.usage.used
    );
    Ok((vq, report, curve))
}

/// Seeds the codebook with encoder outputs from the first batch.
fn init_codebook(vq: &mut PartVq, x: &Tensor, rng: &mut Rng) -> Result<()> {
    let tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let z = vq.encode_var(&tape, xv)?;
    let z = tape.value(z).clone();
    let d = vq.code_dim;
    let n = z.numel() / d;
    let z = z.reshape(vec![n, d])?;
    let k = vq.codebook_size;
    let picks: Vec<usize> = if n >= k {
        rng.sample_distinct(n, k)
    } else {
        (0..k).map(|_| rng.below(n)).collect()
    };
    let cb = vq.params.get_mut(vq.codebook);
    for (row, &i) in picks.iter().enumerate() {
        for (c, v) in cb.row_mut(row).iter_mut().zip(z.row(i)) {
            *c = v + 1e-3 * rng.normal();
        }
    }
    Ok(())
}

/// Moves unused codewords onto random current latents; returns how many moved.
fn reset_dead_codes(vq: &mut PartVq, opt: &mut AdamW, usage: &[usize], latents: &Tensor, rng: &mut Rng) -> usize {
    let d = vq.code_dim;
    let id = vq.codebook;
    let mut moved = 0;
    for (k, _) in usage.iter().enumerate().filter(|(_, &u)| u == 0) {
        let src = rng.below(latents.rows());
        let cb = vq.params.get_mut(id);
        for (c, v) in cb.row_mut(k).iter_mut().zip(latents.row(src)) {
            *c = v + 1e-3 * rng.normal();
        }
        for j in k * d..(k + 1) * d {
            opt.state.m[id.index()][j] = 0.0;
            opt.state.v[id.index()][j] = 0.0;
        }
        moved += 1;
    }
    moved
}

/// Trains all six part VQ-VAEs on the given pairs.
pub fn train_vqvae(
    train: &[TextMotionPair],
    val: &[TextMotionPair],
    config: &VqConfig,
    seed: u64,
) -> Result<(MotionTokenizer, VqTrainReport)> {
    if train.is_empty() {
        return Err(CoreError::invalid("empty training corpus"));
    }
    let mut tok = MotionTokenizer::new(config, seed)?;
    let mut report = VqTrainReport {
        parts: Vec::new(),
        curve: Vec::new(),
    };
    for part in Part::ALL {
        let tr: Vec<PartMotion> = train.iter().map(|p| split_part(&p.motion, part)).collect();
        let va: Vec<PartMotion> = val.iter().map(|p| split_part(&p.motion, part)).collect();
        let (vq, r, c) = train_part(part, &tr, &va, config, seed)?;
        tok.parts[part.index()] = vq;
        report.parts.push(r);
        report.curve.extend(c);
    }
    Ok((tok, report))
}
