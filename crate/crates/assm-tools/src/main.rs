use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use assm_tools::commands;

#[derive(Parser)]
#[command(
    name = "assm",
    about = "Attentive state-space restoration toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the runtime property suite (scan/attention equivalences,
    /// round trips, gradient checks, statistics)
    Check {
        /// Only run properties whose name contains this substring
        #[arg(long)]
        filter: Option<String>,
        /// Deliberately break a property to prove the suite catches it
        #[arg(long, value_name = "NAME")]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the toy restoration model on synthetic patches
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the training step count
        #[arg(long)]
        steps: Option<usize>,
        /// Override the super-resolution scale (2, 3, or 4)
        #[arg(long)]
        scale: Option<usize>,
        /// Initialize from an existing checkpoint instead of random weights
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Restore an image with a trained checkpoint
    Infer {
        /// Input image (.png or .ppm)
        image: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Optional ground truth for PSNR/SSIM reporting
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export decay profiles and the kernel density of the decay factors
    Decay {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Weights to analyze; random initialization when omitted
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
    /// Compare SSM-stage cost against multi-directional scanning
    ScanCost {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        directions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Print the per-tensor parameter table
    CountParams {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export per-pixel routing labels and the grouping permutation
    ExportPlan {
        /// Input image (.png or .ppm)
        image: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> assm_tools::Result<i32> {
    match cli.command {
        Command::Check {
            filter,
            inject_fault,
            seed,
        } => commands::cmd_check(filter.as_deref(), inject_fault.as_deref(), seed),
        Command::Train {
            config,
            seed,
            out,
            steps,
            scale,
            warm_start,
        } => {
            let (mut mcfg, mut tcfg) = commands::load_configs(config.as_ref(), seed)?;
            commands::apply_overrides(&mut mcfg, Some(&mut tcfg), scale, steps)?;
            commands::cmd_train(&mcfg, &tcfg, &out, seed, warm_start.as_deref())
        }
        Command::Infer {
            image,
            checkpoint,
            config,
            out,
            ground_truth,
            scale,
            seed,
        } => {
            let (mut mcfg, _) = commands::load_configs(config.as_ref(), seed)?;
            commands::apply_overrides(&mut mcfg, None, scale, None)?;
            commands::cmd_infer(
                &image,
                &checkpoint,
                &mcfg,
                &out,
                ground_truth.as_deref(),
                seed,
            )
        }
        Command::Decay {
            config,
            checkpoint,
            out,
            seed,
        } => {
            let (mcfg, _) = commands::load_configs(config.as_ref(), seed)?;
            commands::cmd_decay(&mcfg, checkpoint.as_deref(), &out, seed)
        }
        Command::ScanCost {
            config,
            directions,
            out,
            seed,
        } => {
            let (mcfg, _) = commands::load_configs(config.as_ref(), seed)?;
            commands::cmd_scan_cost(&mcfg, directions, out.as_deref(), seed)
        }
        Command::CountParams { config } => {
            let (mcfg, _) = commands::load_configs(config.as_ref(), 0)?;
            commands::cmd_count_params(&mcfg)
        }
        Command::ExportPlan {
            image,
            checkpoint,
            config,
            out,
            seed,
        } => {
            let (mcfg, _) = commands::load_configs(config.as_ref(), seed)?;
            commands::cmd_export_plan(&image, checkpoint.as_deref(), &mcfg, &out, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's help/version on stdout with exit 0; real usage
            // errors exit 2
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
