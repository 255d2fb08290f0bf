use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "demforge", version, about = "Occluded elevation-map datasets, baseline inpainting and metrics")]
pub struct Cli {
    /// Base seed; every sample seed is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "DEMFORGE_THREADS")]
    pub threads: Option<usize>,

    /// Output directory (synth, selfsup, inpaint) or report file (eval, bench).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Human-readable summary instead of JSON on stdout.
    #[arg(long, global = true)]
    pub pretty: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic split: terrain, ray-cast occlusion, optional augmentation.
    Synth(SynthArgs),
    /// Build self-supervised pairs by adding ray-cast occlusion to a dataset's grids.
    Selfsup(SelfsupArgs),
    /// Fill every input grid of a manifest with a classical baseline.
    Inpaint(InpaintArgs),
    /// Score predictions against a manifest.
    Eval(EvalArgs),
    /// Time the tiled map-scale inpainting pipeline on one core.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Terrain {
    Hills,
    Stairs,
    Boxes,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Method {
    Diffusion,
    FastMarching,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TargetArg {
    /// The source's ground-truth grid.
    Gt,
    /// The source's occluded input grid (ground truth if it has none).
    Input,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub terrain: Terrain,
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// JSON augmentation profile; missing fields take their defaults.
    #[arg(long)]
    pub augment: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelfsupArgs {
    /// Source manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub rmin: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rmax: f64,
    #[arg(long, default_value_t = 15)]
    pub max_iters: u32,
    #[arg(long, default_value_t = 0.1)]
    pub o_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub o_max: f64,
    #[arg(long, value_enum, default_value = "gt")]
    pub target: TargetArg,
}

#[derive(Args, Debug)]
pub struct InpaintArgs {
    /// Manifest whose input grids are filled.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "diffusion")]
    pub method: Method,
    #[arg(long, default_value_t = 3)]
    pub radius: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of `<id>.rec.dgm` (and optionally `<id>.comp.dgm`) files.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 300)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub tiles: usize,
    #[arg(long, default_value_t = 75)]
    pub tile_px: usize,
    #[arg(long, default_value_t = 64)]
    pub out_px: usize,
    #[arg(long, value_enum, default_value = "diffusion")]
    pub method: Method,
    #[arg(long, default_value_t = 20)]
    pub repeat: usize,
    /// Tiles more occluded than this are not inpainted.
    #[arg(long, default_value_t = 0.85)]
    pub max_occlusion: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout with status 0, usage errors to stderr with 2.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::USAGE } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
