//! Command-line front end: synthetic data, training, tracking, evaluation
//! and inspection.

mod commands;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dualtrack::config::{Config, KeyValues};
use dualtrack::{Error, Result};

/// Environment variable naming the config file used when `--config` is absent.
const CONFIG_ENV: &str = "DUALTRACK_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "dualtrack",
    version,
    about = "Online multi-object tracking with dual matching attention"
)]
struct Cli {
    /// Flat `section.key = value` file applied over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set pipeline.tau_s=0.3`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Print the resolved configuration before running.
    #[arg(long, global = true)]
    dump_config: bool,

    /// Cap on worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic sequence or an identity dataset.
    Generate(GenerateArgs),
    /// Run the tracker over a sequence.
    Track(TrackArgs),
    /// Train the spatial or the temporal attention network.
    Train(TrainArgs),
    /// Score tracking results against ground truth.
    Evaluate(EvaluateArgs),
    /// Dump attention maps, temporal weights or tracker confidence maps.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["scenario", "identities"]))]
struct GenerateArgs {
    /// Built-in scenario name or a scenario file.
    #[arg(long)]
    scenario: Option<String>,
    /// Render this many random identities as a training dataset instead.
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Sequence directory holding `frames/` and `det.txt`.
    #[arg(long)]
    seq: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    det: Option<PathBuf>,
    /// full, b1, b2, b3 or b4; defaults to `pipeline.mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Network checkpoint written by `train tan`.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write frames with id-colored boxes here.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    San,
    Tan,
}

#[derive(Debug, Args)]
struct TrainArgs {
    stage: Stage,
    /// Identity dataset: one subdirectory of crops per identity.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    /// Spatial network checkpoint; required for `tan`.
    #[arg(long)]
    san_ckpt: Option<PathBuf>,
    /// Checkpoint path; `<stage>.ckpt` by default.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss curve path; `<out>.loss.txt` by default.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Compare analytic and finite-difference gradients before training.
    #[arg(long)]
    grad_check: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth file; repeat together with `--res` for several sequences.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, required = true)]
    res: Vec<PathBuf>,
    /// Sequence names; default to the ground-truth parent directory names.
    #[arg(long)]
    name: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Write `<name>.metrics.txt` files here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[command(subcommand)]
    what: InspectWhat,
}

#[derive(Debug, Subcommand)]
enum InspectWhat {
    /// Spatial attention maps of an image pair.
    Attention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temporal attention weights of a tracklet against a detection.
    Temporal {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of tracklet images, taken in name order.
        #[arg(long)]
        tracklet: PathBuf,
        #[arg(long)]
        detection: PathBuf,
    },
    /// Confidence map of a tracker initialized on one frame, evaluated on the next.
    Confidence {
        #[arg(long)]
        frames: PathBuf,
        /// 1-based frame index holding the target.
        #[arg(long)]
        frame: u32,
        /// Target box as `x,y,w,h`.
        #[arg(long = "box")]
        bbox: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::default();
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    if let Some(path) = path {
        cfg.merge(&KeyValues::load(&path)?)?;
    }
    for pair in &cli.overrides {
        cfg.set_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(threads) = cli.threads {
        cfg.set("run.threads", &threads.to_string())?;
    }
    Ok(cfg)
}

fn init_threads(cfg: &Config) -> Result<()> {
    let n = cfg.usize("run.threads")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if cli.dump_config {
        print!("{}", cfg.dump());
    }
    let Some(command) = cli.command else {
        if cli.dump_config {
            return Ok(());
        }
        return Err(Error::Config("no command given; see --help".into()));
    };
    init_threads(&cfg)?;
    match command {
        Command::Generate(a) => commands::generate(&cfg, a.scenario.as_deref(), a.identities, &a.out),
        Command::Track(a) => {
            let frames = input_path(a.frames, a.seq.as_deref(), "frames", "--frames")?;
            let det = input_path(a.det, a.seq.as_deref(), "det.txt", "--det")?;
            let opts = commands::TrackOptions {
                frames,
                det,
                mode: a.mode,
                ckpt: a.ckpt,
                out: a.out,
                overlay: a.overlay,
            };
            commands::track(&cfg, &opts)
        }
        Command::Train(a) => {
            let out = a.out.unwrap_or_else(|| match a.stage {
                Stage::San => PathBuf::from("san.ckpt"),
                Stage::Tan => PathBuf::from("tan.ckpt"),
            });
            let log = a.log.unwrap_or_else(|| {
                let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                name.push(".loss.txt");
                out.with_file_name(name)
            });
            let opts = commands::TrainOptions {
                data: a.data,
                steps: a.steps,
                out,
                log,
                grad_check: a.grad_check,
            };
            match a.stage {
                Stage::San => commands::train_san(&cfg, &opts),
                Stage::Tan => {
                    let san = a
                        .san_ckpt
                        .ok_or_else(|| Error::Config("train tan needs --san-ckpt from a finished san stage".into()))?;
                    commands::train_tan(&cfg, &opts, &san)
                }
            }
        }
        Command::Evaluate(a) => commands::evaluate(&a.gt, &a.res, &a.name, a.iou, a.out.as_deref()),
        Command::Inspect(a) => match a.what {
            InspectWhat::Attention { ckpt, a, b, out } => commands::inspect_attention(&ckpt, &a, &b, &out),
            InspectWhat::Temporal {
                ckpt,
                tracklet,
                detection,
            } => commands::inspect_temporal(&ckpt, &tracklet, &detection),
            InspectWhat::Confidence {
                frames,
                frame,
                bbox,
                out,
            } => commands::inspect_confidence(&cfg, &frames, frame, &bbox, &out),
        },
    }
}

/// An explicit path, or `name` under the sequence directory.
fn input_path(explicit: Option<PathBuf>, seq: Option<&Path>, name: &str, flag: &str) -> Result<PathBuf> {
    explicit
        .or_else(|| seq.map(|s| s.join(name)))
        .ok_or_else(|| Error::Config(format!("give --seq or {flag}")))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericFailure { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_failures_exit_with_three() {
        let numeric = Error::NumericFailure {
            iteration: 12,
            context: "frame 12".into(),
        };
        assert_eq!(exit_code(&numeric), 3);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 2);
    }

    #[test]
    fn flags_override_the_config_file() {
        let cli = Cli::parse_from([
            "dualtrack",
            "--set",
            "pipeline.tau_s=0.4",
            "--seed",
            "5",
            "--threads",
            "1",
        ]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.get("pipeline.tau_s").unwrap(), "0.4");
        assert_eq!(cfg.u64("run.seed").unwrap(), 5);
        assert_eq!(cfg.usize("run.threads").unwrap(), 1);
    }
}
