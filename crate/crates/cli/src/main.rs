mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgz::Mode;

/// ECG compression toolkit: R-wave detection, quantizer design and
/// beat-synchronous compression.
#[derive(Debug, Parser)]
#[command(name = "ecgz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect R-waves and write their sample indices as JSON.
    Detect(DetectArgs),
    /// Variance of segment-to-segment KL distance versus window size (CSV).
    AnalyzeKl(KlArgs),
    /// Sweep quantizer designs and write the rate-distortion curve as JSON.
    Design(DesignArgs),
    /// Compress a record into an ECGZ file.
    Compress(CompressArgs),
    /// Reconstruct a CSV signal from an ECGZ file.
    Decompress(DecompressArgs),
    /// Rate-distortion points for every structure and the uniform baselines (CSV).
    Compare(CompareArgs),
    /// Generate a synthetic ECG record with ground-truth R-waves.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Signal file: one-column CSV, or MIT-BIH format 212 (`.dat`).
    #[arg(long)]
    pub input: PathBuf,
    /// Sampling rate in Hz (required for CSV; `.dat` defaults to 360).
    #[arg(long)]
    pub fs: Option<f64>,
    /// Channel to read from a `.dat` file.
    #[arg(long)]
    pub channel: Option<usize>,
    /// Interleaved channel count of a `.dat` file.
    #[arg(long)]
    pub channels: Option<usize>,
    /// JSON overrides for any option; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotationArgs {
    /// R-wave locations (JSON list or MIT `.atr`); detected when omitted.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Code the raw signal instead of the median-baseline-removed one.
    #[arg(long)]
    pub keep_baseline: bool,
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    /// Initial level counts for the design sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Lagrange multipliers, comma separated (default: scaled to the data).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KlArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Window sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub keep_baseline: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub ann: AnnotationArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    /// Also design the difference-frame curve for this mode.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Rate budget (bits per coefficient) for the chosen quantizer.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub ann: AnnotationArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Segments per joint group.
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Rate budget in bits per coefficient.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub ann: AnnotationArgs,
    #[command(flatten)]
    pub quant: QuantArgs,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub beats: usize,
    /// Mean R-to-R period in samples.
    #[arg(long, default_value_t = 300)]
    pub period: usize,
    /// Maximum period deviation in samples.
    #[arg(long, default_value_t = 10)]
    pub jitter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Additive white noise level; noiseless when omitted.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Linear baseline rise over the whole record.
    #[arg(long)]
    pub drift: Option<f64>,
    /// Signal CSV.
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth R-wave JSON.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::AnalyzeKl(a) => commands::analyze_kl(a),
        Command::Design(a) => commands::design(a),
        Command::Compress(a) => commands::compress(a),
        Command::Decompress(a) => commands::decompress(a),
        Command::Compare(a) => commands::compare(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ecgz: {e}");
            ExitCode::from(e.code())
        }
    }
}
