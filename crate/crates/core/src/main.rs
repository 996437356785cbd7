use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gentraffic::classifier::Task;
use gentraffic::report::{commands, Config, Outcome, RunError};

#[derive(Parser, Debug)]
#[command(name = "gentraffic", version, about = "Analyze GenAI chatbot traffic captures")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Window length in seconds.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Fail when a capture has no label file.
    #[arg(long, global = true)]
    require_labels: bool,
    /// Also write SVG figures.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Volume summary, windowed rates and per-packet series.
    Characterize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Payload-length/direction Markov chains.
    #[command(subcommand)]
    Markov(MarkovCmd),
    /// Protocol labels, SNI and TLS version shares.
    Dissect {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Minimum biflow share (percent) for a row of the SNI table.
        #[arg(long)]
        min_sni_pct: Option<f64>,
    },
    /// Payload-byte CNN classifier.
    #[command(subcommand)]
    Classify(ClassifyCmd),
    /// Synthetic captures for tests and demos.
    #[command(subcommand)]
    Fixtures(FixturesCmd),
}

#[derive(Subcommand, Debug)]
enum MarkovCmd {
    Fit {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// Fit one binning over all groups.
        #[arg(long)]
        shared_bins: bool,
        /// Reuse the binning of an existing model file.
        #[arg(long)]
        binning_from: Option<PathBuf>,
    },
    Generate {
        model: PathBuf,
        #[arg(long)]
        length: Option<usize>,
        /// Spacing between generated packets, in microseconds.
        #[arg(long)]
        iat_us: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
}

#[derive(Subcommand, Debug)]
enum ClassifyCmd {
    Train {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        args: TrainArgs,
    },
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Evaluate every sample, not only the checkpoint's test split.
        #[arg(long)]
        all: bool,
    },
    /// Evaluate with the SNI bytes zeroed.
    Occlude {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        all: bool,
    },
}

#[derive(Subcommand, Debug)]
enum FixturesCmd {
    Make {
        #[arg(long, default_value_t = 40)]
        flows_per_class: usize,
    },
}

fn resolve(g: &Global) -> Result<Config, RunError> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).map_err(RunError::Usage)?,
        None => Config::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = g.delta {
        cfg.delta = d;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    cfg.require_labels |= g.require_labels;
    cfg.svg |= g.svg;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome, RunError> {
    let mut cfg = resolve(&cli.global)?;
    let out: &Path = &cli.global.out;
    match cli.command {
        Command::Characterize { inputs } => {
            check(&cfg)?;
            commands::characterize(&cfg, &inputs, out)
        }
        Command::Markov(MarkovCmd::Fit {
            inputs,
            bins,
            shared_bins,
            binning_from,
        }) => {
            if let Some(b) = bins {
                cfg.markov.bins = b;
            }
            cfg.markov.shared_bins |= shared_bins;
            check(&cfg)?;
            commands::markov_fit(&cfg, &inputs, out, binning_from.as_deref())
        }
        Command::Markov(MarkovCmd::Generate { model, length, iat_us }) => {
            if let Some(l) = length {
                cfg.generate.length = l;
            }
            if let Some(i) = iat_us {
                cfg.generate.iat_us = i;
            }
            check(&cfg)?;
            commands::markov_generate(&cfg, &model, out)
        }
        Command::Dissect { inputs, min_sni_pct } => {
            if let Some(m) = min_sni_pct {
                cfg.dissect.min_sni_pct = m;
            }
            check(&cfg)?;
            commands::dissect(&cfg, &inputs, out)
        }
        Command::Classify(ClassifyCmd::Train { inputs, args }) => {
            let c = &mut cfg.classify;
            if let Some(t) = args.task {
                c.task = t;
            }
            if let Some(r) = args.repetitions {
                c.repetitions = r;
            }
            if let Some(e) = args.epochs {
                c.epochs = e;
            }
            if let Some(b) = args.batch {
                c.batch = b;
            }
            if let Some(l) = args.lr {
                c.lr = l;
            }
            check(&cfg)?;
            commands::classify_train(&cfg, &inputs, out)
        }
        Command::Classify(ClassifyCmd::Eval { checkpoint, inputs, all }) => {
            check(&cfg)?;
            commands::classify_eval(&cfg, &checkpoint, &inputs, out, false, all)
        }
        Command::Classify(ClassifyCmd::Occlude { checkpoint, inputs, all }) => {
            check(&cfg)?;
            commands::classify_eval(&cfg, &checkpoint, &inputs, out, true, all)
        }
        Command::Fixtures(FixturesCmd::Make { flows_per_class }) => {
            check(&cfg)?;
            commands::fixtures_make(&cfg, out, flows_per_class)
        }
    }
}

fn check(cfg: &Config) -> Result<(), RunError> {
    cfg.validate().map_err(RunError::Usage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            println!("wrote {} file(s) to {}", o.outputs.len() + 1, o.out_dir.display());
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(o.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
