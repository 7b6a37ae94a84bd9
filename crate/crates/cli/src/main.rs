mod commands;
mod report;
mod workspace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cosfire_hash::config::PipelineConfig;
use cosfire_hash::Error as CoreError;

use crate::workspace::UsageError;

#[derive(Parser, Debug)]
#[command(name = "cosfire-hash", version, about = "COSFIRE descriptors, learned hash codes and Hamming retrieval")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// Pipeline configuration (JSON); unspecified fields take defaults.
    /// Relative `manifest` and `work_dir` entries resolve against the file's directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Work directory holding every stage's artifacts (overrides the config).
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,

    /// Seed for prototype sampling, weight initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Hash code length k.
    #[arg(long, global = true)]
    pub bits: Option<usize>,

    /// Number of ranked results printed by `query`.
    #[arg(long, global = true, default_value_t = 10)]
    pub top_n: usize,

    /// Cutoff k for mAP@k.
    #[arg(long, global = true)]
    pub k_eval: Option<usize>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print the JSON report to stdout instead of the text summary.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sigma-clip every manifest image into the work directory.
    Preprocess {
        /// Manifest CSV (`path,label,split`); overrides the config.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Configure a COSFIRE filter bank on training prototypes.
    BuildBank,
    /// Compute descriptors for every split.
    Describe,
    /// Train the hashing network.
    Train {
        /// Run the hyperparameter grid instead of a single configuration.
        #[arg(long)]
        grid: bool,
        /// Only the first N grid points per bit size.
        #[arg(long, requires = "grid")]
        grid_limit: Option<usize>,
    },
    /// Choose the binarization threshold on the validation split.
    SweepThreshold,
    /// Binarize every split into a codes file.
    Encode {
        /// Threshold to use instead of the swept one.
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
    },
    /// Rank the training codes against one query.
    Query {
        /// Query image (rawf32 or PGM); it is clipped and described first.
        #[arg(long, conflicts_with = "codes")]
        image: Option<PathBuf>,
        /// Codes file holding the query code.
        #[arg(long, requires = "record")]
        codes: Option<PathBuf>,
        /// Record id inside `--codes`.
        #[arg(long)]
        record: Option<u32>,
    },
    /// Test and validation retrieval metrics, class distances and FLOPs.
    Evaluate,
    /// FLOPs of the hashing network and the descriptor stage.
    Flops {
        /// Layer widths, input first (default: trained model, else 372,300,200,k).
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<usize>>,
    },
    /// Write a synthetic four-class blob dataset with a manifest.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 65)]
        size: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            if e.is_numerical() {
                return 3;
            }
            if matches!(e, CoreError::InvalidParameter(_)) {
                return 1;
            }
            return 2;
        }
    }
    2
}

fn load_config(g: &GlobalOpts) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            if !p.exists() {
                return Err(UsageError(format!("config file not found: {}", p.display())).into());
            }
            let mut cfg = PipelineConfig::load(p)?;
            let base = p.parent().unwrap_or(Path::new(""));
            if let Some(m) = cfg.manifest.as_mut().filter(|m| m.is_relative()) {
                *m = base.join(&*m);
            }
            if cfg.work_dir.is_relative() {
                cfg.work_dir = base.join(&cfg.work_dir);
            }
            cfg
        }
        None => PipelineConfig::default(),
    };
    if let Some(w) = &g.work_dir {
        cfg.work_dir = w.clone();
    }
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    if let Some(b) = g.bits {
        cfg.bits = b;
    }
    if let Some(k) = g.k_eval {
        cfg.k_eval = k;
        cfg.train.k_eval = k;
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(UsageError("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = &cli.global;
    if let Command::Synth { out, per_class, size } = &cli.command {
        return commands::synth(g, out, *per_class, *size);
    }
    let cfg = load_config(g)?;
    match cli.command {
        Command::Preprocess { manifest } => commands::preprocess(g, &cfg, manifest),
        Command::BuildBank => commands::build_bank(g, &cfg),
        Command::Describe => commands::describe(g, &cfg),
        Command::Train { grid: false, .. } => commands::train(g, &cfg),
        Command::Train { grid: true, grid_limit } => commands::train_grid(g, &cfg, grid_limit),
        Command::SweepThreshold => commands::sweep(g, &cfg),
        Command::Encode { threshold } => commands::encode(g, &cfg, threshold),
        Command::Query { image, codes, record } => commands::query(g, &cfg, image, codes, record),
        Command::Evaluate => commands::evaluate(g, &cfg),
        Command::Flops { layers } => commands::flops(g, &cfg, layers),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
