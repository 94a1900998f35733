use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

mod commands;

/// Raindrop removal: synthetic drops, pseudo masks, diffusion inpainting.
#[derive(Debug, Parser)]
#[command(name = "dropwiper", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Desk-scale profile: T=200, 32x32 gray patches, small synthetic sets.
    #[arg(long, global = true)]
    pub toy: bool,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskKind {
    Residual,
    Detector,
}

#[derive(Debug, Args, Default)]
pub struct MaskArgs {
    /// Mask generator.
    #[arg(long, value_enum)]
    pub method: Option<MaskKind>,
    /// Residual option: a/signed-rgb, b/absolute-rgb, c/signed-gray, d/absolute-gray.
    #[arg(long)]
    pub option: Option<String>,
    /// Residual threshold on 8-bit levels (strictly greater is raindrop).
    #[arg(long)]
    pub tau: Option<u8>,
    /// Histogram-equalize both images before differencing.
    #[arg(long)]
    pub equalize: bool,
    /// Detector checkpoint (implies --method detector).
    #[arg(long)]
    pub detector: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct DenoiserArgs {
    /// Trained MLP denoiser checkpoint; the analytic oracle is used otherwise.
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// Diffusion steps T.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render drops onto Cityscapes (or procedural) scenes in Raindrop layout.
    Synthesize {
        /// Cityscapes-style image root; procedural scenes when absent.
        #[arg(long)]
        cityscapes: Option<PathBuf>,
        /// Examples per split as TRAIN,VAL,TEST.
        #[arg(long, value_parser = parse_counts)]
        counts: Option<(usize, usize, usize)>,
        /// Output size as HEIGHTxWIDTH.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
    },
    /// Pseudo raindrop mask for one image.
    Mask {
        #[arg(long)]
        rainy: PathBuf,
        /// Clean partner (residual method).
        #[arg(long)]
        clean: Option<PathBuf>,
        #[command(flatten)]
        mask: MaskArgs,
    },
    /// Train the raindrop detector.
    TrainDetector {
        /// Synthesized dataset root; fresh procedural examples when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Train the MLP noise predictor on clean patches.
    TrainDenoiser {
        /// Raindrop-layout root; procedural scenes when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Optimizer steps.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Reconstruct the masked pixels of one image.
    Inpaint {
        #[arg(long)]
        image: PathBuf,
        /// White = regenerate.
        #[arg(long)]
        mask: PathBuf,
        #[command(flatten)]
        denoiser: DenoiserArgs,
    },
    /// PSNR/SSIM of reconstructions against clean images.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        clean: PathBuf,
    },
    /// Masks, reconstruction and scores for every test pair of a dataset.
    Pipeline {
        /// Raindrop-layout root.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        denoiser: DenoiserArgs,
        /// Reconstructed patch side.
        #[arg(long)]
        patch_size: Option<usize>,
    },
}

fn parse_counts(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad count '{p}'")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected TRAIN,VAL,TEST".into()),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HEIGHTxWIDTH")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad size '{v}'"));
    Ok((p(h)?, p(w)?))
}

fn init_logging(g: &GlobalArgs) {
    let level = match (g.quiet, g.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn exit_code(e: &anyhow::Error) -> i32 {
    use dropwiper::pipeline::PipelineError;
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return p.exit_code();
    }
    if let Some(i) = e.downcast_ref::<dropwiper::image::ImageError>() {
        return i.code();
    }
    if e.downcast_ref::<dropwiper::checkpoint::CheckpointError>().is_some() {
        return 5;
    }
    if e.downcast_ref::<dropwiper::detector::DetectorError>().is_some() {
        return 6;
    }
    if e.downcast_ref::<dropwiper::diffusion::DiffusionError>().is_some() {
        return 7;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.global);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e).clamp(1, 255) as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        assert_eq!(parse_counts("3,1,2"), Ok((3, 1, 2)));
        assert!(parse_counts("3,1").is_err());
        assert_eq!(parse_size("48x64"), Ok((48, 64)));
        assert!(parse_size("48").is_err());
        let cli = Cli::try_parse_from(["dropwiper", "pipeline", "--toy", "--seed", "9", "--tau", "30"]).unwrap();
        assert!(cli.global.toy);
        assert_eq!(cli.global.seed, Some(9));
        assert!(matches!(cli.command, Command::Pipeline { ref mask, .. } if mask.tau == Some(30)));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
