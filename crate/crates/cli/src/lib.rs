//! Command-line front end: `train`, `eval`, `verify`, `replay` and `run`.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors (bad flags,
//! missing or malformed inputs), 2 for runtime failures (failed checks, replay
//! divergence, training blow-up, output I/O).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bridgesafe::bridging_env::read_trajectory;
use bridgesafe::harness::{self, replay_segment, run_eval, run_suites, run_train, Mode, RunConfig, Suite};
use bridgesafe::{Error, Variant};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bridgesafe", version, about = "Safe multi-agent bridging: train, evaluate, verify, replay")]
struct Cli {
    /// Print the annotated configuration schema and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a Q-network and write checkpoint and training metrics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override `[train] total_steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the master seed (and the training seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint greedily with the safety filter enforced.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 1_000_000)]
        seed_base: u64,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        wall_clock: bool,
    },
    /// Run verification suites and print a pass/fail table.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-simulate a trajectory log and require bit-identical records.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Execute the mode named in a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INVALID,
        message: e.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

/// Validation-class errors exit 1; everything else is a runtime failure.
fn classify(e: Error) -> Failure {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::Parse(_)
        | Error::VersionMismatch { .. }
        | Error::ShapeMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::UnsafeInitialConfiguration(..) => invalid(e),
        _ => runtime(e),
    }
}

/// Reading an input that is missing or unreadable is a validation error.
fn load<T>(r: bridgesafe::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        Error::Io { .. } => invalid(e),
        other => classify(other),
    })
}

fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let a = run_train(cfg).map_err(classify)?;
    println!(
        "trained {} steps ({} updates, {} episodes)",
        cfg.train.total_steps,
        a.output.updates,
        a.output.curve.len()
    );
    println!("checkpoint {}", a.checkpoint.display());
    println!("metrics {}", a.metrics.display());
    Ok(())
}

fn eval(checkpoint: &Path, episodes: usize, seed_base: u64, out: &Path, wall: bool) -> Result<(), Failure> {
    load(bridgesafe::Checkpoint::load(checkpoint))?;
    let a = run_eval(checkpoint, episodes, seed_base, out, wall).map_err(classify)?;
    print!("{}", std::fs::read_to_string(&a.summary).map_err(runtime)?);
    println!("metrics {}", a.metrics.display());
    println!("trajectories {}", a.trajectories.display());
    Ok(())
}

fn verify(suite: Suite, seed: u64) -> Result<(), Failure> {
    let reports = run_suites(suite, seed).map_err(classify)?;
    let mut ok = true;
    for r in &reports {
        print!("{}", r.table());
        ok &= r.passed();
    }
    if ok {
        println!("all checks passed");
        Ok(())
    } else {
        Err(runtime("verification failed"))
    }
}

fn replay(log: &Path) -> Result<(), Failure> {
    let segments = load(read_trajectory(log))?;
    let mut steps = 0;
    for s in &segments {
        let n = replay_segment(s).map_err(|e| runtime(format!("episode {}: {e}", s.header.episode)))?;
        println!("episode {} seed {}: {} steps identical", s.header.episode, s.header.seed, n);
        steps += n;
    }
    println!("replayed {} episodes, {} steps", segments.len(), steps);
    Ok(())
}

fn run_config(cfg: &RunConfig) -> Result<(), Failure> {
    let checkpoint = cfg.output_dir.join(harness::CHECKPOINT_FILE);
    let eval_dir = cfg.output_dir.join("eval");
    match cfg.mode {
        Mode::Train => {
            train(cfg)?;
            eval(&checkpoint, cfg.eval_episodes, cfg.eval_seed_base, &eval_dir, cfg.record_wall_clock)
        }
        Mode::Eval => eval(&checkpoint, cfg.eval_episodes, cfg.eval_seed_base, &eval_dir, cfg.record_wall_clock),
        Mode::Verify => verify(Suite::All, cfg.seed),
        Mode::Replay => replay(&eval_dir.join(harness::TRAJECTORY_FILE)),
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if cli.print_schema {
        print!("{}", RunConfig::schema());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(invalid("no subcommand given (try --help)"));
    };
    match command {
        Command::Train {
            config,
            variant,
            output,
            steps,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => load(RunConfig::load(&p))?,
                None => RunConfig::default(),
            };
            if let Some(v) = variant {
                cfg.env.variant = v;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            cfg.validate().map_err(classify)?;
            train(&cfg)
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed_base,
            output,
            wall_clock,
        } => {
            if episodes == 0 {
                return Err(invalid("--episodes must be positive"));
            }
            let out = output.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            eval(&checkpoint, episodes, seed_base, &out, wall_clock)
        }
        Command::Verify { suite, seed } => verify(suite.parse().map_err(invalid)?, seed),
        Command::Replay { log } => replay(&log),
        Command::Run { config } => run_config(&load(RunConfig::load(&config))?),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
