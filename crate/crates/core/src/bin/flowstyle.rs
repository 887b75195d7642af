use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowstyle::frequency::spectrum_profile;
use flowstyle::pipeline::{
    gen_synthetic, run_diagnose_attention, run_invert, run_masks, run_stylize, RunConfig, SyntheticSpec,
};
use flowstyle::tensor::load_grid;
use flowstyle::{Error, Result};

#[derive(Parser)]
#[command(name = "flowstyle", version, about = "Guided two-branch stylization of latent videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate content frames, stylized frames and flows from a spec.
    GenSynthetic {
        spec: PathBuf,
        /// Output directory; defaults to the spec's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert the encoded content and write noise and trajectory.
    Invert { config: PathBuf },
    /// Run the full stylization loop.
    Stylize { config: PathBuf },
    /// Write flow and reference masks.
    Masks { config: PathBuf },
    /// Write cross-frame attention diagnostics of the content latent.
    DiagnoseAttn { config: PathBuf },
    /// Print the radial spectrum profile of a grid file as CSV.
    Spectrum { grid: PathBuf },
}

fn gen(spec_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
    let dir = out.unwrap_or_else(|| spec_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    gen_synthetic(&spec)?.write(&dir)?;
    println!("wrote synthetic clip to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic { spec, out } => gen(&spec, out),
        Command::Invert { config } => {
            let err = run_invert(&RunConfig::load(&config)?)?;
            println!("round-trip max-abs error {err:e}");
            Ok(())
        }
        Command::Stylize { config } => {
            let digest = run_stylize(&RunConfig::load(&config)?)?;
            println!("{digest}");
            Ok(())
        }
        Command::Masks { config } => {
            let n = run_masks(&RunConfig::load(&config)?)?;
            println!("{n} flow correspondences");
            Ok(())
        }
        Command::DiagnoseAttn { config } => {
            let d = run_diagnose_attention(&RunConfig::load(&config)?)?;
            print!("{}", d.temporal_csv());
            Ok(())
        }
        Command::Spectrum { grid } => {
            print!("{}", spectrum_profile(&load_grid(&grid)?)?.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
