use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffvid_cli::{
    cmd_eval, cmd_gen_data, cmd_noise_stats, cmd_restore, cmd_train, noise_stats_table, reference_config, RestoreInput,
    RunConfig,
};
use diffvid_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "diffvid", version, about = "Video restoration with temporal-noise diffusion and test-time adaptation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on the corpus training split.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restore degraded frames with a trained checkpoint.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A directory of frame_*.png.
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        /// A corpus root; restores the test videos chosen by eval.videos.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        tta: Switch,
    },
    /// Score restored videos against the corpus clean frames.
    Eval {
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report directory (defaults to the restored directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjacent-frame correlation of sampled noise over a (phi, tau) grid.
    NoiseStats {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print (or write) the reference configuration with all defaults.
    ConfigReference {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = RunConfig::resolve(cli.global.config.as_deref(), cli.global.seed)?;
    match cli.command {
        Command::GenData { out } => {
            let m = cmd_gen_data(&cfg, &out)?;
            println!("wrote {} frame directories to {}", m.videos.len(), out.display());
        }
        Command::Train { corpus, out, resume } => {
            let s = cmd_train(&cfg, &corpus, &out, resume.as_deref())?;
            println!("trained iterations {}..{}; checkpoint {}", s.start_iter, s.start_iter + s.losses.len(), s.checkpoint.display());
        }
        Command::Restore { checkpoint, input, corpus, out, tta } => {
            let input = match (input, corpus) {
                (Some(dir), _) => RestoreInput::Frames(dir),
                (None, Some(root)) => RestoreInput::Corpus(root),
                (None, None) => unreachable!("clap requires one of --input/--corpus"),
            };
            let s = cmd_restore(&cfg, &checkpoint, &input, &out, matches!(tta, Switch::On))?;
            println!("restored {} videos ({} clips) into {}", s.videos.len(), s.clips, out.display());
            if s.warnings > 0 {
                eprintln!("warning: adaptation reverted in {} clip(s)", s.warnings);
            }
        }
        Command::Eval { restored, corpus, out } => {
            let out = out.unwrap_or_else(|| restored.clone());
            print!("{}", cmd_eval(&cfg, &restored, &corpus, &out)?.to_table());
        }
        Command::NoiseStats { out } => {
            print!("{}", noise_stats_table(&cmd_noise_stats(&cfg, out.as_deref())?));
        }
        Command::ConfigReference { out } => match out {
            Some(path) => std::fs::write(&path, reference_config()).map_err(|e| Error::io(path, e))?,
            None => print!("{}", reference_config()),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
