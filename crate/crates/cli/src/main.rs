use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bipo_core::error::{CoreError, Result};
use bipo_core::eval::EvalMode;
use bipo_core::generate::{EditMode, GenerateConfig, SamplerConfig, SamplerMode};
use bipo_core::motion::io::{export_motion, import_motion, layout_entries};
use bipo_core::motion::parts::Part;
use bipo_core::pipeline::{Pipeline, PipelineConfig, Stage, CONFIG_FILE};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bipo", version, about = "Part-based text-to-motion pipeline")]
struct Cli {
    /// Config file. Defaults to <out>/config.json when present, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic text-motion corpus.
    Corpus,
    /// Train the per-part motion tokenizers.
    TrainVq,
    /// Train the text-to-motion transformer.
    TrainT2m,
    /// Train the evaluation feature extractors.
    TrainExtractors,
    /// Run every training stage in order.
    All,
    /// Generate motions from captions.
    Generate(GenerateArgs),
    /// Regenerate part of an existing motion.
    Edit(EditArgs),
    /// Score a mode against the test split.
    Eval(EvalArgs),
    /// Train and evaluate the ablation rows.
    Ablate,
    /// Body-part layout.
    Parts {
        #[command(subcommand)]
        command: PartsCommand,
    },
    /// Tokenize or decode motions with the trained tokenizer.
    Vq {
        #[command(subcommand)]
        command: VqCommand,
    },
    /// Print the resolved config.
    Config,
}

#[derive(Subcommand)]
enum PartsCommand {
    /// Print each part's joints, feature columns and mirror partner.
    Describe,
}

#[derive(Subcommand)]
enum VqCommand {
    /// Motion file to a token file.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Token file to a motion file.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Greedy,
    Temperature,
}

#[derive(Args)]
struct SamplingArgs {
    /// Overrides the config's sampler mode.
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the even-position refinement pass.
    #[arg(long)]
    no_refine: bool,
    /// Cap on motion tokens per part.
    #[arg(long)]
    max_tokens: Option<usize>,
}

impl SamplingArgs {
    fn apply(&self, base: &GenerateConfig) -> GenerateConfig {
        let mut g = base.clone();
        let mut s: SamplerConfig = g.sampler.clone();
        if let Some(m) = self.sampler {
            s.mode = match m {
                SamplerArg::Greedy => SamplerMode::Greedy,
                SamplerArg::Temperature => SamplerMode::Temperature,
            };
        }
        if let Some(t) = self.temperature {
            s.temperature = t;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        g.sampler = s;
        if self.no_refine {
            g.refine = false;
        }
        if self.max_tokens.is_some() {
            g.max_tokens = self.max_tokens;
        }
        g
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Caption; repeat for several motions. Text `i` uses seed + i.
    #[arg(long = "text", required = true)]
    texts: Vec<String>,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Output directory; defaults to <out>/generate.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EditArgs {
    /// Source motion file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    text: String,
    /// For L tokens with lead = floor(L/4) and half = floor(L/2): inpaint
    /// regenerates lead+1..=lead+half, outpaint regenerates the rest,
    /// prefix keeps 1..=half and suffix keeps half+1..=L.
    #[arg(long)]
    mode: EditMode,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Output directory; defaults to <out>/edit.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Real,
    Reconstruction,
    Generation,
    RandomTokens,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum, default_value = "generation")]
    mode: ModeArg,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    mm_repetitions: Option<usize>,
    #[command(flatten)]
    sampling: SamplingArgs,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match (&cli.config, &cli.out) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(out)) if out.join(CONFIG_FILE).exists() => PipelineConfig::load(&out.join(CONFIG_FILE))?,
        _ => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn stage(pipeline: &Pipeline, stage: Stage) -> Result<()> {
    let rec = pipeline.run(stage)?;
    print_json(&json!({"stage": stage.name(), "hash": rec.hash, "artifacts": rec.artifacts}))
}

fn or_default(path: &Option<PathBuf>, pipeline: &Pipeline, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| pipeline.path(name))
}

fn describe_parts() -> Result<()> {
    let parts: Vec<_> = Part::ALL
        .iter()
        .map(|p| {
            json!({
                "name": p.name(),
                "joints": p.joints(),
                "dim": p.dim(),
                "mirror": p.mirrored().name(),
                "columns": p.columns(),
            })
        })
        .collect();
    print_json(&json!({"parts": parts, "layout": layout_entries()}))
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    let mut pipeline = Pipeline::new(config)?;
    match &cli.command {
        Command::Corpus => stage(&pipeline, Stage::Corpus),
        Command::TrainVq => stage(&pipeline, Stage::Vq),
        Command::TrainT2m => stage(&pipeline, Stage::T2m),
        Command::TrainExtractors => stage(&pipeline, Stage::Extractors),
        Command::All => {
            for s in Stage::ALL {
                stage(&pipeline, s)?;
            }
            Ok(())
        }
        Command::Generate(a) => {
            let g = a.sampling.apply(&pipeline.config.generate);
            let out = or_default(&a.output, &pipeline, "generate");
            print_json(&pipeline.generate(&a.texts, &g, &out)?)
        }
        Command::Edit(a) => {
            let g = a.sampling.apply(&pipeline.config.generate);
            let out = or_default(&a.output, &pipeline, "edit");
            let source = import_motion(&a.input)?;
            print_json(&pipeline.edit(&source, &a.text, a.mode, &g, &out)?)
        }
        Command::Eval(a) => {
            if let Some(r) = a.repetitions {
                pipeline.config.eval.repetitions = r;
            }
            if let Some(r) = a.mm_repetitions {
                pipeline.config.eval.mm_repetitions = r;
            }
            pipeline.config.eval.validate()?;
            let mode = match a.mode {
                ModeArg::Real => EvalMode::Real,
                ModeArg::Reconstruction => EvalMode::Reconstruction,
                ModeArg::Generation => EvalMode::Generation,
                ModeArg::RandomTokens => EvalMode::RandomTokens,
            };
            let g = a.sampling.apply(&pipeline.config.generate);
            print_json(&pipeline.evaluate(mode, &g)?)
        }
        Command::Ablate => print_json(&pipeline.ablate()?),
        Command::Parts {
            command: PartsCommand::Describe,
        } => describe_parts(),
        Command::Vq { command } => vq(&pipeline, command),
        Command::Config => {
            println!("{}", pipeline.config.to_json());
            Ok(())
        }
    }
}

fn vq(pipeline: &Pipeline, command: &VqCommand) -> Result<()> {
    let tok = pipeline.tokenizer("vq")?;
    match command {
        VqCommand::Encode { input, output } => {
            let tokens = tok.tokenize(&import_motion(input)?)?;
            write(output, &serde_json::to_string(&json!({"tokens": tokens}))?)
        }
        VqCommand::Decode { input, output } => {
            let text = read(input)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let tokens: Vec<Vec<usize>> = serde_json::from_value(v["tokens"].clone())?;
            export_motion(&tok.decode(&tokens)?, output)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({"error": "usage", "message": e.to_string().lines().next().unwrap_or("").trim()});
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
