//! `meshpyr`: build, check and use mesh pyramids from the command line.
//!
//! Machine-readable output (JSON lines, CSV) goes to stdout or files, human
//! messages to stderr. Exit codes: 0 ok, 1 validation failure, 2 usage, 3 I/O.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::Fail;

#[derive(Parser, Debug)]
#[command(name = "meshpyr", version, about = "Mesh pyramids with bijective inter-level maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a generated test mesh as OBJ.
    Gen(GenArgs),
    /// Build a pyramid directory from an OBJ mesh.
    Build(BuildArgs),
    /// Run the invariant suite on a pyramid directory.
    Validate(ValidateArgs),
    /// Copy one artifact of a pyramid to a file or stdout.
    Export(ExportArgs),
    /// Dump the per-face input features of one level as CSV.
    Features(FeaturesArgs),
    /// Train the segmentation network on one labelled pyramid.
    TrainDemo(TrainArgs),
    /// Per-face labels from a trained checkpoint.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Shape {
    Icosphere,
    Torus,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    shape: Shape,
    /// Icosphere subdivisions (20 * 4^n faces).
    #[arg(long, default_value_t = 4)]
    subdiv: u32,
    /// Torus segments around the main ring.
    #[arg(long, default_value_t = 64)]
    major: usize,
    /// Torus segments around the tube.
    #[arg(long, default_value_t = 32)]
    minor: usize,
    #[arg(long, default_value_t = 1.0)]
    major_radius: f64,
    #[arg(long, default_value_t = 0.35)]
    minor_radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    /// Strictly descending face targets, finest first, e.g. 5120,1280,320.
    #[arg(long, value_delimiter = ',', required = true)]
    levels: Vec<usize>,
    /// Distortion weight in [0, 1].
    #[arg(long, default_value_t = meshpyr::selfparam::DEFAULT_DISTORTION_WEIGHT)]
    weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also build augmented variants into `variant_<k>/` subdirectories.
    #[arg(long)]
    augment: bool,
    /// Number of variants with --augment, the plain mesh included.
    #[arg(long, default_value_t = meshpyr::pyramid::DEFAULT_VARIANTS)]
    variants: usize,
    #[arg(long)]
    out: PathBuf,
    /// Rebuild even when the output already matches the input and config.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    pyramid: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Artifact {
    Mesh,
    Matrix,
    Triplets,
    Crossings,
    Cells,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    pyramid: PathBuf,
    #[arg(long, value_enum)]
    what: Artifact,
    /// Level index (0 is the coarsest); maps connect `level + 1` to `level`.
    #[arg(long)]
    level: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    pyramid: PathBuf,
    /// Level index (0 is the coarsest); the finest level when omitted.
    #[arg(long)]
    level: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    pyramid_dir: PathBuf,
    /// CSV `face_id,label` over the finest level; label -1 marks unlabelled faces.
    #[arg(long)]
    labels: PathBuf,
    /// JSON file with network and optimizer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `checkpoint.bin`, `metrics.csv` and `run.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    pyramid: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV `face_id,label`; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Fail> {
    let pool = commands::thread_pool()?;
    pool.install(|| match cli.cmd {
        Cmd::Gen(a) => commands::gen(a),
        Cmd::Build(a) => commands::build(a),
        Cmd::Validate(a) => commands::validate(a),
        Cmd::Export(a) => commands::export(a),
        Cmd::Features(a) => commands::features(a),
        Cmd::TrainDemo(a) => commands::train_demo(a),
        Cmd::Predict(a) => commands::predict(a),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("meshpyr: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
