use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sirf", version, about = "Joint registration and pan-sharpening of multispectral imagery")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for synthetic scenes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run every kernel on one thread so results are bit-reproducible.
    #[arg(long, global = true)]
    pub reference_mode: bool,

    /// Worker threads (also read from SIRF_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Where to write the run manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse an MS image with a Pan image.
    Fuse(FuseArgs),
    /// Estimate the warp aligning a Pan image to a multi-band image.
    Register(RegisterArgs),
    /// Gradient-guided denoising of an image against a reference.
    Denoise(DenoiseArgs),
    /// Score a fused image against ground truth.
    Metrics(MetricsArgs),
    /// Produce an MS/Pan pair from a ground-truth image or a synthetic scene.
    Simulate(SimulateArgs),
    /// Parameter studies: registration energy over shifts, or fusion over λ.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Time a fixed number of fusion iterations over growing image sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Transform {
    Translation,
    Affine,
}

impl From<Transform> for sirf_core::TransformKind {
    fn from(t: Transform) -> Self {
        match t {
            Transform::Translation => Self::Translation,
            Transform::Affine => Self::Affine,
        }
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ms: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Expected resolution ratio; checked against the image sizes.
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long = "register", overrides_with = "no_register", action = ArgAction::SetTrue)]
    pub register: bool,
    #[arg(long = "no-register", overrides_with = "register", action = ArgAction::SetTrue)]
    pub no_register: bool,
    #[arg(long, value_enum)]
    pub transform: Option<Transform>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Skip the joint rescaling of both inputs to 0–255.
    #[arg(long)]
    pub no_rescale: bool,
    /// Output image (.mbf, .png, .tif).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration CSV trace, written while the solver runs.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Bands written when the output format holds fewer channels than the image.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub rgb_bands: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Multi-band image at Pan resolution (for example a fused estimate).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long, value_enum)]
    pub transform: Option<Transform>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// Warp and trace as JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Single-band or same-band-count reference whose gradients are followed.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub fused: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Pan image for the filtered correlation score.
    #[arg(long)]
    pub pan: Option<PathBuf>,
    /// Resolution ratio used by ERGAS.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 255.0)]
    pub peak: f64,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Ground truth to degrade; a synthetic scene is generated when absent.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Synthetic scene size as HEIGHTxWIDTH.
    #[arg(long, default_value = "128x128")]
    pub size: String,
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Pan misalignment as TX,TY in pixels.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub shift: Option<Vec<f64>>,
    /// Pan weights per band; uniform when absent.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// Normalized registration energy at each integer shift along one axis.
    Shift(ShiftSweepArgs),
    /// Fuse once per λ and score each result against ground truth.
    Lambda(LambdaSweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Args)]
pub struct ShiftSweepArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long, value_enum, default_value = "x")]
    pub axis: Axis,
    #[arg(long, default_value_t = -10, allow_hyphen_values = true)]
    pub from: i32,
    #[arg(long, default_value_t = 10, allow_hyphen_values = true)]
    pub to: i32,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LambdaSweepArgs {
    #[arg(long)]
    pub ms: PathBuf,
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,1,2")]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub no_register: bool,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "128,256,384,512")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
