mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xbar_core::XbarError;

#[derive(Parser, Debug)]
#[command(name = "xbar", version, about = "Memristor crossbar CNN inference simulator")]
struct Cli {
    /// Worker threads (falls back to XBAR_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON); every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one crossbar and write currents and node voltages as JSON.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Conductances in siemens, a JSON array of rows.
        #[arg(long)]
        conductance: PathBuf,
        /// Row voltages, a JSON array.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map, convert and calibrate a weight matrix into an engine file.
    BuildEngine {
        #[command(flatten)]
        common: Common,
        /// Weights (rows = inputs): JSON array of rows or a rank-2 tensor file.
        #[arg(long)]
        weights: PathBuf,
        /// Representative input vectors, same formats as --weights.
        #[arg(long)]
        samples: PathBuf,
        /// Engine descriptor; the conductance blob goes next to it as .bin.
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-layer accuracy experiment on synthetic kernels and inputs.
    LayerExp {
        #[command(flatten)]
        common: Common,
        /// 1 (Gaussian), 2 (dead zone) or 3 (ternary).
        #[arg(long)]
        kernel_type: u8,
        /// ROWSxCOLS, e.g. 144x16.
        #[arg(long)]
        crossbar_size: String,
        /// Comma-separated input sparsities.
        #[arg(long, default_value = "0.5")]
        sparsity: String,
        /// Also sweep the fixed conversion amplitudes of the config.
        #[arg(long)]
        conv_amp_sweep: bool,
        /// Comma-separated variants (default: all).
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        eval_samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Network inference at several quantizer bit widths with error taps.
    RunNet {
        #[command(flatten)]
        common: Common,
        /// Model manifest (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Images, a rank-3 or rank-4 tensor file.
        #[arg(long)]
        images: PathBuf,
        /// Class labels, a rank-1 tensor file.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Images used to prepare the engines (default: the first images).
        #[arg(long)]
        calibration_images: Option<PathBuf>,
        /// Comma-separated bit widths; "none" leaves converters analog.
        #[arg(long, default_value = "none")]
        bits: String,
        /// "all", "none" or comma-separated crossbar layer names.
        #[arg(long, default_value = "none")]
        taps: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a model with seeded random weights.
    GenModel {
        /// tiny or resnet20.
        #[arg(long)]
        arch: String,
        /// HxWxC input of the tiny model.
        #[arg(long, default_value = "8x8x3")]
        input: String,
        /// Classes of the tiny model.
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic images with values in (0, 1].
    GenImages {
        #[arg(long)]
        count: usize,
        /// HxWxC.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write labels: the software prediction of this model.
        #[arg(long, requires = "labels_out")]
        label_model: Option<PathBuf>,
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Crossbar sizes and iteration counts of the ResNet-20 mapping, as CSV.
    Table {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the JSON schema of the experiment config.
    Schema,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<XbarError>() {
        Some(XbarError::Io(_)) => 1,
        Some(e) if e.is_numeric() => 3,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 1,
    }
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("XBAR_THREADS") {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse()
                    .map_err(|_| XbarError::InvalidConfig(format!("XBAR_THREADS must be an integer, got {s:?}")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(XbarError::InvalidConfig("thread count must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate {
            common,
            conductance,
            input,
            out,
        } => commands::simulate(&common, &conductance, &input, &out),
        Command::BuildEngine {
            common,
            weights,
            samples,
            out,
        } => commands::build_engine(&common, &weights, &samples, &out),
        Command::LayerExp {
            common,
            kernel_type,
            crossbar_size,
            sparsity,
            conv_amp_sweep,
            variants,
            eval_samples,
            out,
        } => commands::layer_exp(
            &common,
            commands::LayerExpArgs {
                kernel_type,
                crossbar_size,
                sparsity,
                conv_amp_sweep,
                variants,
                eval_samples,
            },
            &out,
        ),
        Command::RunNet {
            common,
            model,
            images,
            labels,
            calibration_images,
            bits,
            taps,
            out,
        } => commands::run_net(
            &common,
            commands::RunNetArgs {
                model,
                images,
                labels,
                calibration_images,
                bits,
                taps,
            },
            &out,
        ),
        Command::GenModel {
            arch,
            input,
            classes,
            seed,
            out,
        } => commands::gen_model(&arch, &input, classes, seed, &out),
        Command::GenImages {
            count,
            shape,
            seed,
            out,
            label_model,
            labels_out,
        } => commands::gen_images(count, &shape, seed, &out, label_model.as_deref(), labels_out.as_deref()),
        Command::Table { out } => commands::table(out.as_deref()),
        Command::Schema => {
            print!("{}", config::SCHEMA);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
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
