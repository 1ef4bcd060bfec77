//! `lesiongen` command-line front-end: one subcommand per pipeline stage.

mod commands;
mod error;
mod manifest;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "lesiongen", version, about = "Synthetic MS lesion generation for brain MRI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the subcommands that read a T1/FLAIR pair.
#[derive(Args, Debug, Clone)]
pub struct ImageArgs {
    #[arg(long)]
    pub t1: PathBuf,
    #[arg(long)]
    pub flair: PathBuf,
    /// Brain mask; voxels with FLAIR > 0 when absent.
    #[arg(long)]
    pub brain: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Threshold FLAIR into the hyperintensity mask and intensity-level bands.
    MakeMasks {
        #[arg(long)]
        flair: PathBuf,
        #[arg(long)]
        brain: Option<PathBuf>,
        /// GM mask for the threshold statistics; a 3-class mixture over the brain when absent.
        #[arg(long)]
        gm: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// In-paint the hyperintensity mask of a bank with WM-like intensities.
    Fill {
        #[command(flatten)]
        images: ImageArgs,
        #[arg(long)]
        bank_dir: PathBuf,
        /// Restricts the ring sample to WM.
        #[arg(long)]
        wm: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the generator on one subject or the subjects of a manifest.
    Train {
        #[arg(long, conflicts_with_all = ["t1", "flair"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "flair")]
        t1: Option<PathBuf>,
        #[arg(long, requires = "t1")]
        flair: Option<PathBuf>,
        #[arg(long)]
        brain: Option<PathBuf>,
        #[arg(long)]
        gm: Option<PathBuf>,
        #[arg(long)]
        wm: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        /// Generator configuration (TOML).
        #[arg(long, env = "LESIONGEN_CONFIG")]
        config: Option<PathBuf>,
        /// Overrides the configuration's `rng_seed`; also seeds the fills.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-create images from filled volumes and a (possibly edited) bank.
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        /// Output directory of `fill`.
        #[arg(long)]
        fill_dir: PathBuf,
        #[arg(long)]
        bank_dir: PathBuf,
        #[arg(long)]
        brain: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Graft a source subject's lesions into a target and synthesize it.
    Transplant {
        #[arg(long)]
        model: PathBuf,
        /// Target `fill` output directory.
        #[arg(long)]
        fill_dir: PathBuf,
        /// Target bank directory.
        #[arg(long)]
        bank_dir: PathBuf,
        #[arg(long)]
        brain: Option<PathBuf>,
        #[arg(long)]
        source_lesion: PathBuf,
        #[arg(long)]
        source_bank_dir: PathBuf,
        /// Source → target world affine (4×4 text matrix); identity when absent.
        #[arg(long)]
        affine: Option<PathBuf>,
        /// Displacement field (mm) on the target grid, 4-D NIfTI with 3 components.
        #[arg(long)]
        displacement: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        dilation: usize,
        /// Only copy voxels the source places in a band.
        #[arg(long)]
        additive: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Similarity (MSE, SSIM) and/or segmentation (DSC, detection) metrics as CSV.
    Evaluate {
        #[arg(long, requires = "gt")]
        seg: Option<PathBuf>,
        #[arg(long, requires = "seg")]
        gt: Option<PathBuf>,
        #[arg(long, requires = "real")]
        generated: Option<PathBuf>,
        #[arg(long, requires = "generated")]
        real: Option<PathBuf>,
        /// Region for similarity metrics; voxels > 0 of the real image when absent.
        #[arg(long)]
        brain: Option<PathBuf>,
        /// Odd SSIM window; 0 for a single global SSIM.
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value = "image")]
        image_id: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// ORG vs ORG+DA augmentation study on phantoms.
    Experiment {
        /// Experiment configuration (TOML); defaults when absent.
        #[arg(long, env = "LESIONGEN_CONFIG")]
        config: Option<PathBuf>,
        /// Pre-trained generator; trained on the configured pool when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training-set sizes to sweep; a single run with the configured size when absent.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write phantoms and a manifest listing them.
    Phantom {
        /// Phantom specification (TOML); defaults when absent.
        #[arg(long, env = "LESIONGEN_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        lesion_free: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Jet-colormap slice montage as PNG.
    Render {
        #[arg(long)]
        volume: PathBuf,
        /// Mask whose outline is drawn in white.
        #[arg(long)]
        outline: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        slices: Option<Vec<usize>>,
        /// Intensity window `low,high`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        range: Option<Vec<f64>>,
        #[arg(long, default_value_t = 4)]
        scale: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.report_line());
            return ExitCode::from(err.kind().1 as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report_line());
            ExitCode::from(e.kind().1 as u8)
        }
    }
}
