use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bipo_tensor::Checkpoint;
use serde::{Deserialize, Serialize};

use super::config::{content_hash, PipelineConfig};
use super::manifest::{record_timing, RunManifest, Stage, StageRecord};
use crate::error::{read_file, write_file, CoreError, Result};
use crate::eval::{evaluate_model, train_extractors, EvalContext, EvalMode, EvalReport, FeatureExtractors};
use crate::generate::{edit, generate_batch, EditMode, EditRegions, GenerateConfig, SamplerConfig};
use crate::motion::corpus::{generate_corpus, vocabulary, Corpus, CorpusManifest, Split, TextMotionPair};
use crate::motion::features::PoseSequence;
use crate::motion::io::export_motion;
use crate::t2m::{tokenize_pairs, train_t2m, BipoModel, TextInput, TextVocab};
use crate::vq::{train_vqvae, MotionTokenizer};

pub const CONFIG_FILE: &str = "config.json";

pub(crate) fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    c.write_to(&mut buf)?;
    write_file(path, &buf)
}

pub(crate) fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::read_from(&mut read_file(path)?.as_slice())?)
}

pub(crate) fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)?.as_bytes())
}

/// One generated motion in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub text: String,
    pub seed: u64,
    pub length: usize,
    pub end_steps: Vec<Option<usize>>,
    pub truncated: bool,
    pub refine: bool,
    pub tokens: Vec<Vec<usize>>,
    pub frames: usize,
    pub motion_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationReport {
    pub format: String,
    /// Hash of the transformer stage that produced the motions.
    pub model: String,
    pub sampler: SamplerConfig,
    pub runs: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditReport {
    pub format: String,
    pub model: String,
    pub text: String,
    pub regions: EditRegions,
    pub source_tokens: Vec<Vec<usize>>,
    pub tokens: Vec<Vec<usize>>,
    pub motion_file: String,
}

/// Stage-gated pipeline rooted at the config's output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.output_dir.clone();
        Ok(Self { config, dir })
    }

    /// Pipeline for an existing run directory, using its saved config.
    pub fn open(dir: &Path) -> Result<Self> {
        let mut config = PipelineConfig::load(&dir.join(CONFIG_FILE))?;
        config.output_dir = dir.to_path_buf();
        Self::new(config)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        Ok(RunManifest::load(&self.dir)?.unwrap_or_else(|| RunManifest::new(self.config.hash())))
    }

    /// Content hash of a stage, chained through the stages it consumes.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        match stage {
            Stage::Corpus => content_hash(&("corpus", c.seeds.corpus, &c.corpus)),
            Stage::Vq => content_hash(&("vq", self.stage_hash(Stage::Corpus), c.seeds.vq, &c.vq)),
            Stage::T2m => content_hash(&("t2m", self.stage_hash(Stage::Vq), c.seeds.t2m, &c.t2m)),
            Stage::Extractors => content_hash(&(
                "extractors",
                self.stage_hash(Stage::Corpus),
                c.seeds.extractors,
                &c.extractors,
            )),
        }
    }

    fn require(&self, stage: Stage, by: &str) -> Result<StageRecord> {
        Ok(self.manifest()?.require(stage, &self.stage_hash(stage), by)?.clone())
    }

    fn finish(&self, stage: Stage, artifacts: &[(&str, &str)], started: Instant) -> Result<StageRecord> {
        self.config.save(&self.path(CONFIG_FILE))?;
        let mut m = self.manifest()?;
        m.config_hash = self.config.hash();
        let arts: BTreeMap<String, String> = artifacts.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        m.record(stage, self.stage_hash(stage), arts);
        m.save(&self.dir)?;
        record_timing(&self.dir, stage.name(), started.elapsed().as_secs_f64())?;
        Ok(m.get(stage).expect("just recorded").clone())
    }

    pub fn run(&self, stage: Stage) -> Result<StageRecord> {
        match stage {
            Stage::Corpus => self.run_corpus(),
            Stage::Vq => self.run_vq(),
            Stage::T2m => self.run_t2m(),
            Stage::Extractors => self.run_extractors(),
        }
    }

    pub fn run_all(&self) -> Result<()> {
        for s in Stage::ALL {
            self.run(s)?;
        }
        Ok(())
    }

    pub fn run_corpus(&self) -> Result<StageRecord> {
        let t = Instant::now();
        let corpus = generate_corpus(self.config.seeds.corpus, &self.config.corpus)?;
        save_json(&corpus.manifest(), &self.path("corpus/manifest.json"))?;
        self.finish(Stage::Corpus, &[("manifest", "corpus/manifest.json")], t)
    }

    /// Regenerates the corpus and checks it against the recorded digest.
    pub fn corpus(&self, by: &str) -> Result<Corpus> {
        let rec = self.require(Stage::Corpus, by)?;
        let path = self.path(&rec.artifacts["manifest"]);
        let recorded: CorpusManifest = serde_json::from_slice(&read_file(&path)?)?;
        let corpus = generate_corpus(self.config.seeds.corpus, &self.config.corpus)?;
        if corpus.digest() != recorded.digest {
            return Err(CoreError::StaleStage {
                stage: Stage::Corpus.name().into(),
                reason: "regenerated corpus digest differs from the recorded one".into(),
            });
        }
        Ok(corpus)
    }

    fn split(corpus: &Corpus, split: Split) -> Vec<TextMotionPair> {
        corpus.split(split).into_iter().cloned().collect()
    }

    pub fn run_vq(&self) -> Result<StageRecord> {
        let t = Instant::now();
        let corpus = self.corpus(Stage::Vq.name())?;
        let (tok, report) = train_vqvae(
            &corpus.training_pairs(),
            &Self::split(&corpus, Split::Val),
            &self.config.vq,
            self.config.seeds.vq,
        )?;
        save_checkpoint(&tok.to_checkpoint(), &self.path("vq/vq.ckpt"))?;
        save_json(&report, &self.path("vq/report.json"))?;
        self.finish(Stage::Vq, &[("checkpoint", "vq/vq.ckpt"), ("report", "vq/report.json")], t)
    }

    pub fn tokenizer(&self, by: &str) -> Result<MotionTokenizer> {
        let rec = self.require(Stage::Vq, by)?;
        MotionTokenizer::from_checkpoint(&load_checkpoint(&self.path(&rec.artifacts["checkpoint"]))?)
    }

    pub fn text_vocab(&self) -> Result<TextVocab> {
        TextVocab::new(vocabulary())
    }

    pub fn run_t2m(&self) -> Result<StageRecord> {
        let t = Instant::now();
        let corpus = self.corpus(Stage::T2m.name())?;
        let tok = self.tokenizer(Stage::T2m.name())?;
        let vocab = self.text_vocab()?;
        let train = tokenize_pairs(&tok, &vocab, &corpus.training_pairs())?;
        let val = tokenize_pairs(&tok, &vocab, &Self::split(&corpus, Split::Val))?;
        let (model, report) = train_t2m(&train, &val, &self.config.t2m, tok.codebook_size(), vocab, self.config.seeds.t2m)?;
        save_checkpoint(&model.to_checkpoint(), &self.path("t2m/t2m.ckpt"))?;
        save_json(&report, &self.path("t2m/report.json"))?;
        self.finish(Stage::T2m, &[("checkpoint", "t2m/t2m.ckpt"), ("report", "t2m/report.json")], t)
    }

    pub fn model(&self, by: &str) -> Result<BipoModel> {
        let rec = self.require(Stage::T2m, by)?;
        BipoModel::from_checkpoint(&load_checkpoint(&self.path(&rec.artifacts["checkpoint"]))?)
    }

    pub fn run_extractors(&self) -> Result<StageRecord> {
        let t = Instant::now();
        let corpus = self.corpus(Stage::Extractors.name())?;
        let (x, report) = train_extractors(
            &corpus.training_pairs(),
            &Self::split(&corpus, Split::Test),
            self.text_vocab()?,
            &self.config.extractors,
            self.config.seeds.extractors,
        )?;
        save_checkpoint(&x.to_checkpoint(), &self.path("extractors/extractors.ckpt"))?;
        save_json(&report, &self.path("extractors/report.json"))?;
        self.finish(
            Stage::Extractors,
            &[("checkpoint", "extractors/extractors.ckpt"), ("report", "extractors/report.json")],
            t,
        )
    }

    pub fn extractors(&self, by: &str) -> Result<FeatureExtractors> {
        let rec = self.require(Stage::Extractors, by)?;
        FeatureExtractors::from_checkpoint(&load_checkpoint(&self.path(&rec.artifacts["checkpoint"]))?)
    }

    /// Evaluates on the test split and writes `eval/<mode>.json`.
    pub fn evaluate(&self, mode: EvalMode, generate: &GenerateConfig) -> Result<EvalReport> {
        let t = Instant::now();
        let by = "eval";
        let corpus = self.corpus(by)?;
        let x = self.extractors(by)?;
        let tok = self.tokenizer(by)?;
        let model = if mode == EvalMode::Generation { Some(self.model(by)?) } else { None };
        let ctx = EvalContext {
            extractors: &x,
            tokenizer: &tok,
            model: model.as_ref(),
            generate: generate.clone(),
        };
        let report = evaluate_model(&ctx, &Self::split(&corpus, Split::Test), mode, &self.config.eval)?;
        let name = serde_json::to_value(mode)?.as_str().unwrap_or("eval").to_string();
        save_json(&report, &self.path(&format!("eval/{name}.json")))?;
        record_timing(&self.dir, &format!("eval/{name}"), t.elapsed().as_secs_f64())?;
        Ok(report)
    }

    /// Generates one motion per text; text `i` uses seed `config.sampler.seed + i`.
    /// Motions and `report.json` go to `out`.
    pub fn generate(&self, texts: &[String], config: &GenerateConfig, out: &Path) -> Result<GenerationReport> {
        let tok = self.tokenizer("generate")?;
        let model = self.model("generate")?;
        let inputs: Vec<TextInput> = texts
            .iter()
            .map(|t| Ok(TextInput::Words(model.vocab.encode_str(t)?)))
            .collect::<Result<_>>()?;
        let seeds: Vec<u64> = (0..texts.len() as u64).map(|i| config.sampler.seed.wrapping_add(i)).collect();
        let gens = generate_batch(&model, &tok, &inputs, config, &seeds)?;
        let mut runs = Vec::with_capacity(gens.len());
        for (i, ((text, g), seed)) in texts.iter().zip(gens).zip(seeds).enumerate() {
            let file = format!("motion_{i:03}.json");
            export_motion(&g.motion, &out.join(&file))?;
            runs.push(GenerationRecord {
                text: text.clone(),
                seed,
                length: g.pass1.length,
                end_steps: g.pass1.end_steps,
                truncated: g.pass1.truncated,
                refine: config.refine,
                tokens: g.tokens,
                frames: g.motion.len(),
                motion_file: file,
            });
        }
        let report = GenerationReport {
            format: "bipo-generation".into(),
            model: self.stage_hash(Stage::T2m),
            sampler: config.sampler.clone(),
            runs,
        };
        save_json(&report, &out.join("report.json"))?;
        Ok(report)
    }

    /// Edits `source` with `mode`; writes the motion and `report.json` to `out`.
    pub fn edit(&self, source: &PoseSequence, text: &str, mode: EditMode, config: &GenerateConfig, out: &Path) -> Result<EditReport> {
        let tok = self.tokenizer("edit")?;
        let model = self.model("edit")?;
        let input = TextInput::Words(model.vocab.encode_str(text)?);
        let e = edit(&model, &tok, &input, source, mode, config)?;
        let file = "motion.json".to_string();
        export_motion(&e.motion, &out.join(&file))?;
        let report = EditReport {
            format: "bipo-edit".into(),
            model: self.stage_hash(Stage::T2m),
            text: text.into(),
            regions: e.regions,
            source_tokens: e.source_tokens,
            tokens: e.tokens,
            motion_file: file,
        };
        save_json(&report, &out.join("report.json"))?;
        Ok(report)
    }
}
