use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pan_cli::commands::{self, Baseline};
use pan_cli::report;
use pan_cli::RunConfig;

#[derive(Parser)]
#[command(
    name = "pan",
    version,
    about = "Train and evaluate privacy-preserving feature encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value run configuration; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// overrides the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Dp,
    Fl,
    Dnn,
    Hybrid,
}

#[derive(Subcommand)]
enum Command {
    /// Train encoder, utility classifier, adversaries and write model files
    Train(Common),
    /// Score a trained encoder against freshly trained attackers
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// encoder model file; defaults to <out>/encoder.panw
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Train and evaluate over the configured lambda grid
    Sweep(Common),
    /// Run a comparison scheme over its parameter grid
    Baseline {
        #[arg(value_enum)]
        name: BaselineArg,
        #[command(flatten)]
        common: Common,
    },
    /// Encode samples with a trained encoder
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// IDX image file; defaults to the configured test split
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences
    Gradcheck(Common),
}

fn print_point(p: &pan_core::attack::TradeoffPoint) {
    println!("{}", report::row(p));
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load()?;
            let art = commands::cmd_train(&cfg, |r| {
                let p1 = r.c_p1.map_or("-".to_string(), |v| format!("{v:.4}"));
                eprintln!(
                    "epoch {:>3}  c_u {:.4}  c_p1 {p1}  c_p2 {:.5}  c_sum {:.4}  ({:.1}s)",
                    r.epoch, r.c_u, r.c_p2, r.c_sum, r.seconds
                );
            })?;
            for f in &art.files {
                println!("{}", f.display());
            }
        }
        Command::Evaluate { common, encoder } => {
            let cfg = common.load()?;
            let path = encoder.unwrap_or_else(|| cfg.output_dir.join(commands::ENCODER_FILE));
            let p = commands::cmd_evaluate(&cfg, &path)?;
            println!("{}", report::HEADER);
            print_point(&p);
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            println!("{}", report::HEADER);
            let res = commands::cmd_sweep(&cfg, print_point)?;
            eprintln!(
                "{} of {} points on the Pareto front",
                res.pareto.len(),
                res.points.len()
            );
        }
        Command::Baseline { name, common } => {
            let cfg = common.load()?;
            let which = match name {
                BaselineArg::Dp => Baseline::Dp,
                BaselineArg::Fl => Baseline::Fl,
                BaselineArg::Dnn => Baseline::Dnn,
                BaselineArg::Hybrid => Baseline::Hybrid,
            };
            println!("{}", report::HEADER);
            commands::cmd_baseline(&cfg, which, print_point)?;
        }
        Command::Encode {
            common,
            encoder,
            input,
        } => {
            let cfg = common.load()?;
            let path = encoder.unwrap_or_else(|| cfg.output_dir.join(commands::ENCODER_FILE));
            let s = commands::cmd_encode(&cfg, &path, input.as_deref())?;
            println!(
                "encoded {} samples to {:?} in {:.3} ms/sample -> {}",
                s.samples,
                s.feature_shape,
                s.seconds_per_sample * 1e3,
                s.path.display()
            );
        }
        Command::Gradcheck(c) => {
            let cfg = c.load()?;
            let report = commands::cmd_gradcheck(cfg.seed)?;
            print!("{report}");
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
