use bipo_tensor::Rng;
use serde::{Deserialize, Serialize};

use super::extractor::FeatureExtractors;
use super::linalg::{fid_from_gaussians, gaussian};
use super::metrics::{diversity, mm_dist, mmodality, r_precision};
use crate::error::{CoreError, Result};
use crate::generate::{generate_batch, GenerateConfig, SamplerMode};
use crate::motion::corpus::TextMotionPair;
use crate::motion::features::PoseSequence;
use crate::t2m::{BipoModel, TextInput};
use crate::vq::MotionTokenizer;

/// Which motions are scored against the real test motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Ground-truth test motions (reference values).
    Real,
    /// Tokenize then decode each test motion.
    Reconstruction,
    /// Generate from each test caption.
    Generation,
    /// Uniformly random tokens at each test motion's token length, decoded.
    RandomTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub repetitions: usize,
    pub mm_repetitions: usize,
    /// Disjoint pairs for Diversity; lowered to half the set size when larger.
    pub s_dis: usize,
    /// Captions used for MModality.
    pub mm_texts: usize,
    pub mm_generations: usize,
    pub mm_subset: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            repetitions: 20,
            mm_repetitions: 5,
            s_dis: 300,
            mm_texts: 32,
            mm_generations: 30,
            mm_subset: 10,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(CoreError::invalid("confidence intervals need at least 2 repetitions"));
        }
        if self.s_dis == 0 || self.mm_subset == 0 || self.mm_generations < 2 * self.mm_subset {
            return Err(CoreError::invalid("MModality needs at least two subsets' worth of generations"));
        }
        Ok(())
    }
}

/// Mean and 95% confidence half-width over repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    pub ci95: f64,
}

/// `1.96·s/√n` with the sample standard deviation; values are summed in
/// sorted order so the result does not depend on repetition order.
pub fn summarize(values: &[f64]) -> Stat {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return Stat { mean, ci95: 0.0 };
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let sd = (dev.iter().sum::<f64>() / (n - 1.0)).sqrt();
    Stat {
        mean,
        ci95: 1.96 * sd / n.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub fid: Stat,
    /// R-precision at top 1, 2 and 3.
    pub r_precision: [Stat; 3],
    pub mm_dist: Stat,
    pub diversity: Stat,
    pub mmodality: Option<Stat>,
    pub repetitions: usize,
    pub mm_repetitions: usize,
    pub s_dis: usize,
    pub samples: usize,
    /// A covariance ridge was needed in some repetition.
    pub fid_regularized: bool,
    /// Largest negative FID residue clamped to zero.
    pub fid_clamped: f64,
}

/// What evaluation needs from the trained stages.
pub struct EvalContext<'a> {
    pub extractors: &'a FeatureExtractors,
    pub tokenizer: &'a MotionTokenizer,
    pub model: Option<&'a BipoModel>,
    pub generate: GenerateConfig,
}

fn model_texts(model: &BipoModel, pairs: &[&TextMotionPair]) -> Result<Vec<TextInput>> {
    pairs
        .iter()
        .map(|p| Ok(TextInput::Words(model.vocab.encode(&p.text)?)))
        .collect()
}

fn seed_for(base: u64, rep: usize, i: usize) -> u64 {
    Rng::derive(base, &format!("eval/{rep}/{i}")).next_u64()
}

/// Motions for one repetition in the given mode.
pub fn eval_motions(ctx: &EvalContext<'_>, pairs: &[&TextMotionPair], mode: EvalMode, rep: usize, seed: u64) -> Result<Vec<PoseSequence>> {
    match mode {
        EvalMode::Real => Ok(pairs.iter().map(|p| p.motion.clone()).collect()),
        EvalMode::Reconstruction => pairs.iter().map(|p| ctx.tokenizer.reconstruct(&p.motion)).collect(),
        EvalMode::RandomTokens => {
            let mut rng = Rng::derive(seed, &format!("random-tokens/{rep}"));
            let k = ctx.tokenizer.codebook_size();
            pairs
                .iter()
                .map(|p| {
                    let len = ctx.tokenizer.tokenize(&p.motion)?[0].len();
                    let tokens: Vec<Vec<usize>> = (0..6).map(|_| (0..len).map(|_| rng.below(k)).collect()).collect();
                    ctx.tokenizer.decode(&tokens)
                })
                .collect()
        }
        EvalMode::Generation => {
            let model = ctx.model.ok_or_else(|| CoreError::invalid("generation mode needs a trained model"))?;
            let texts = model_texts(model, pairs)?;
            let seeds: Vec<u64> = (0..pairs.len()).map(|i| seed_for(seed, rep, i)).collect();
            let mut out = Vec::with_capacity(pairs.len());
            for (t, s) in texts.chunks(64).zip(seeds.chunks(64)) {
                out.extend(generate_batch(model, ctx.tokenizer, t, &ctx.generate, s)?.into_iter().map(|g| g.motion));
            }
            Ok(out)
        }
    }
}

fn mmodality_once(ctx: &EvalContext<'_>, pairs: &[&TextMotionPair], protocol: &EvalProtocol, rep: usize) -> Result<f64> {
    let model = ctx.model.ok_or_else(|| CoreError::invalid("MModality needs a trained model"))?;
    let mut rng = Rng::derive(protocol.seed, &format!("mmodality/{rep}"));
    let n_texts = protocol.mm_texts.min(pairs.len());
    let chosen: Vec<&TextMotionPair> = rng.sample_distinct(pairs.len(), n_texts).into_iter().map(|i| pairs[i]).collect();
    let mut per_text = Vec::with_capacity(n_texts);
    for (ti, p) in chosen.iter().enumerate() {
        let text = model_texts(model, &[*p])?.remove(0);
        let texts = vec![text; protocol.mm_generations];
        let seeds: Vec<u64> = (0..protocol.mm_generations)
            .map(|g| seed_for(protocol.seed ^ 0x6d6d, rep, ti * protocol.mm_generations + g))
            .collect();
        let motions: Vec<PoseSequence> = generate_batch(model, ctx.tokenizer, &texts, &ctx.generate, &seeds)?
            .into_iter()
            .map(|g| g.motion)
            .collect();
        per_text.push(ctx.extractors.motion_features(&motions.iter().collect::<Vec<_>>())?);
    }
    mmodality(&per_text, protocol.mm_subset, &mut rng)
}

/// Scores `mode` motions against the real `pairs` over the protocol's
/// repetitions. MModality is computed for generation with temperature sampling.
pub fn evaluate_model(ctx: &EvalContext<'_>, pairs: &[TextMotionPair], mode: EvalMode, protocol: &EvalProtocol) -> Result<EvalReport> {
    protocol.validate()?;
    let pairs: Vec<&TextMotionPair> = pairs.iter().collect();
    let n = pairs.len();
    let x = ctx.extractors;
    let text_f = x.text_features(&pairs.iter().map(|p| p.text.clone()).collect::<Vec<_>>())?;
    let real_f = x.motion_features(&pairs.iter().map(|p| &p.motion).collect::<Vec<_>>())?;
    let real = gaussian(&real_f)?;
    let s_dis = protocol.s_dis.min(n / 2);
    if s_dis < protocol.s_dis {
        log::info!("diversity uses {s_dis} pairs for {n} samples");
    }
    let mut fid = Vec::new();
    let mut rp: [Vec<f64>; 3] = Default::default();
    let mut mmd = Vec::new();
    let mut div = Vec::new();
    let (mut regularized, mut clamped) = (real.regularized, 0.0f64);
    for rep in 0..protocol.repetitions {
        let motions = eval_motions(ctx, &pairs, mode, rep, protocol.seed)?;
        let f = x.motion_features(&motions.iter().collect::<Vec<_>>())?;
        let mut rng = Rng::derive(protocol.seed, &format!("metrics/{rep}"));
        let fr = fid_from_gaussians(&real, &gaussian(&f)?)?;
        regularized |= fr.regularized;
        clamped = clamped.max(fr.clamped);
        fid.push(fr.value);
        let r = r_precision(&text_f, &f, 3, &mut rng)?;
        for (acc, v) in rp.iter_mut().zip(r) {
            acc.push(v);
        }
        mmd.push(mm_dist(&text_f, &f)?);
        div.push(diversity(&f, s_dis, &mut rng)?);
        log::info!("eval {mode:?} rep {rep}: fid {:.4} top3 {:.3}", fr.value, rp[2][rep]);
    }
    let temperature = ctx.generate.sampler.mode == SamplerMode::Temperature;
    let mmodality = if mode == EvalMode::Generation && temperature && protocol.mm_repetitions > 0 {
        let v: Vec<f64> = (0..protocol.mm_repetitions)
            .map(|rep| mmodality_once(ctx, &pairs, protocol, rep))
            .collect::<Result<_>>()?;
        Some(summarize(&v))
    } else {
        None
    };
    let report = EvalReport {
        mode,
        fid: summarize(&fid),
        r_precision: [summarize(&rp[0]), summarize(&rp[1]), summarize(&rp[2])],
        mm_dist: summarize(&mmd),
        diversity: summarize(&div),
        mmodality,
        repetitions: protocol.repetitions,
        mm_repetitions: if mmodality.is_some() { protocol.mm_repetitions } else { 0 },
        s_dis,
        samples: n,
        fid_regularized: regularized,
        fid_clamped: clamped,
    };
    let finite = [report.fid, report.mm_dist, report.diversity]
        .iter()
        .chain(&report.r_precision)
        .chain(report.mmodality.iter())
        .all(|s| s.mean.is_finite() && s.ci95.is_finite());
    if !finite {
        return Err(CoreError::NonFinite(format!("{mode:?} evaluation produced a non-finite metric")));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_constants_has_zero_width() {
        let s = summarize(&[2.0; 5]);
        assert_eq!(s, Stat { mean: 2.0, ci95: 0.0 });
    }

    #[test]
    fn summary_is_order_independent() {
        let a = summarize(&[0.1, 0.7, 0.3, 1e-9, 5.0]);
        let b = summarize(&[5.0, 1e-9, 0.3, 0.7, 0.1]);
        assert_eq!(a, b);
        let s = summarize(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.ci95 - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn protocol_checks() {
        assert!(EvalProtocol::default().validate().is_ok());
        let p = EvalProtocol {
            repetitions: 1,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
