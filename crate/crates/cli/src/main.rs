use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use claims_ssl::models::ModelKind;
use claims_ssl_cli::{pipeline, report, PipelineConfig};

#[derive(Parser)]
#[command(name = "claims-ssl", version, about = "Claims pretraining, hospitalization models and stability evaluation")]
struct Cli {
    /// Pipeline configuration (JSON); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Byte-identical outputs for identical inputs and seed.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Workspace directory holding every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labeled cohort and the pretraining corpus.
    GenData,
    /// Build the token vocabulary from the pretraining corpus.
    BuildVocab,
    /// Train CBOW code embeddings.
    TrainEmbeddings,
    /// Masked-LM pretraining of the transformer encoder.
    PretrainMlm,
    /// Train one classifier on the training split.
    Train {
        /// risk-logit, bow-svm, embed-gbm or mlm
        #[arg(long)]
        model: ModelKind,
    },
    /// Score trained models on the test split.
    Evaluate {
        /// Repeatable; every trained model when omitted
        #[arg(long)]
        model: Vec<ModelKind>,
    },
    /// Nearest-embedding perturbation stability on the test split.
    Stability {
        /// Repeatable; the configured list when omitted
        #[arg(long)]
        model: Vec<ModelKind>,
        /// Test patients to perturb
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// LIME explanation of one patient's prediction.
    Explain {
        #[arg(long)]
        model: ModelKind,
        /// Patient id from the test split
        #[arg(long)]
        patient: String,
        /// LIME neighbourhood size
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Nearest same-kind tokens in the embedding space.
    Nearest {
        /// Token surface, e.g. DX_R062
        token: String,
        #[arg(short, default_value_t = 1)]
        k: usize,
    },
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    if let Some(out) = &cli.out {
        cfg.paths.root = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenData => {
            let summary = pipeline::gen_data(&cfg)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?)?;
        }
        Command::BuildVocab => {
            let vocab = pipeline::build_vocab_stage(&cfg)?;
            writeln!(stdout, "{} tokens -> {}", vocab.len(), cfg.paths.vocab().display())?;
        }
        Command::TrainEmbeddings => {
            let table = pipeline::train_embeddings_stage(&cfg)?;
            writeln!(stdout, "{} x {} -> {}", table.vocab().len(), table.dim(), cfg.paths.embeddings().display())?;
        }
        Command::PretrainMlm => {
            pipeline::pretrain_mlm_stage(&cfg)?;
            writeln!(stdout, "encoder -> {}", cfg.paths.encoder().display())?;
        }
        Command::Train { model } => {
            pipeline::train_stage(&cfg, model)?;
            writeln!(stdout, "{model} -> {}", cfg.paths.model(model).display())?;
        }
        Command::Evaluate { model } => {
            let r = pipeline::evaluate_stage(&cfg, &model)?;
            write!(stdout, "{}", report::render_metrics(&r))?;
        }
        Command::Stability { model, pairs } => {
            let r = pipeline::stability_stage(&cfg, &model, pairs)?;
            write!(stdout, "{}", report::render_stability(&r))?;
        }
        Command::Explain { model, patient, samples } => {
            let e = pipeline::explain_stage(&cfg, model, &patient, samples)?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&e)?)?;
        }
        Command::Nearest { token, k } => {
            for (surface, cos) in pipeline::nearest_stage(&cfg, &token, k)? {
                writeln!(stdout, "{surface}\t{cos:.6}")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "level={} {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
