use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsre_cli::{run_stage, synth_demo, CliError, PipelineConfig, Stage};
use dsre_core::sampling::NegativeKind;

/// Distant-supervision relation extraction pipeline.
///
/// Stages read earlier artifacts from the output directory and write their
/// own there. Run them in order: ingest, extract-triplets, gen-pos, gen-neg,
/// build-dataset, train, then eval, cross-test or predict.
#[derive(Parser)]
#[command(name = "dsre", version)]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize and sentence-split the corpus.
    Ingest,
    /// Load knowledge-base triplets, extract more from pages, extend along the hierarchy.
    ExtractTriplets,
    /// Distant-supervision positive bags.
    GenPos,
    /// Negative pool plus type 1 (spliced) and type 2 (similar natural) negatives.
    GenNeg {
        #[arg(long)]
        pool_size: Option<usize>,
    },
    /// Split positives and negatives into the type1, type2 and mix datasets.
    BuildDataset {
        #[arg(long)]
        split_fraction: Option<f64>,
    },
    /// Train the bag classifier.
    Train(TrainArgs),
    /// Metrics on the test split.
    Eval(DatasetArg),
    /// Test the model on every dataset's test split.
    CrossTest(DatasetArg),
    /// Predict labels for a bag file, or the test split.
    Predict {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Bags as JSON lines.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate a synthetic corpus and run every stage on it.
    SynthDemo(TrainArgs),
}

#[derive(Args)]
struct DatasetArg {
    /// type1, type2 or mix.
    #[arg(long)]
    dataset: Option<NegativeKind>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        self.dataset.apply(cfg);
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.train.learning_rate = lr;
        }
    }
}

impl DatasetArg {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(d) = self.dataset {
            cfg.dataset = d;
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Command::SynthDemo(_)) => PipelineConfig::synth_demo(),
        (None, _) => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match &cli.command {
        Command::GenNeg { pool_size: Some(n) } => cfg.sampler.pool_size = *n,
        Command::BuildDataset {
            split_fraction: Some(f),
        } => cfg.sampler.split_fraction = *f,
        Command::Train(a) | Command::SynthDemo(a) => a.apply(&mut cfg),
        Command::Eval(d) | Command::CrossTest(d) | Command::Predict { dataset: d, .. } => d.apply(&mut cfg),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("threads: {e}")))?;
    }
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::ExtractTriplets => Stage::ExtractTriplets,
        Command::GenPos => Stage::GenPos,
        Command::GenNeg { .. } => Stage::GenNeg,
        Command::BuildDataset { .. } => Stage::BuildDataset,
        Command::Train(_) => Stage::Train,
        Command::Eval(_) => Stage::Eval,
        Command::CrossTest(_) => Stage::CrossTest,
        Command::Predict { input, .. } => Stage::Predict { input },
        Command::SynthDemo(_) => {
            let m = synth_demo(&cfg)?;
            log::info!("synthetic test accuracy {:.4}", m.overall_accuracy);
            return Ok(());
        }
    };
    run_stage(&stage, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
