//! `ptkit`: corpus pairing, F0 analysis, delexification, listening-test
//! service and reporting from one binary.

mod output;
mod pipeline;
mod study;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptkit_core::pairing::Strategy;
use ptkit_core::pitch::YinConfig;
use ptkit_listensvc::report::Format;

/// Log verbosity is read from `PTKIT_LOG` (e.g. `PTKIT_LOG=debug`).
#[derive(Debug, Parser)]
#[command(name = "ptkit", version, about = "Prosody-transfer corpus and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a corpus manifest, optionally filter by text length and rewrite it.
    Ingest(IngestArgs),
    /// Estimate or load F0, compute speaker statistics and per-phone contours.
    Pitch(PitchArgs),
    /// Select (target, reference) training pairs.
    Pair(PairArgs),
    /// Build the held-out evaluation set from sentences unseen in training.
    Evalset(EvalsetArgs),
    /// Score synthesized F0 against references.
    Metrics(MetricsArgs),
    /// Low-pass filter a WAV file or a directory of WAV files.
    Delexify(DelexifyArgs),
    /// Run the listening-test service.
    Serve(ServeArgs),
    /// Compute result tables from a study export.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Corpus manifest (JSON Lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Keep utterances with at most this many characters.
    #[arg(long)]
    max_chars: Option<usize>,
    /// Write the validated (and filtered) manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct YinArgs {
    /// Analysis window length in seconds.
    #[arg(long, default_value_t = 0.025)]
    frame_s: f64,
    /// Frame hop in seconds.
    #[arg(long, default_value_t = 0.01)]
    hop_s: f64,
    /// Lowest F0 searched, Hz.
    #[arg(long, default_value_t = 50.0)]
    f0_min: f64,
    /// Highest F0 searched, Hz.
    #[arg(long, default_value_t = 500.0)]
    f0_max: f64,
    /// Aperiodicity threshold.
    #[arg(long, default_value_t = 0.15)]
    yin_threshold: f64,
    /// Frames quieter than this RMS are unvoiced.
    #[arg(long, default_value_t = 1e-4)]
    min_rms: f64,
}

impl YinArgs {
    fn config(&self) -> YinConfig {
        YinConfig {
            frame_s: self.frame_s,
            hop_s: self.hop_s,
            f0_min_hz: self.f0_min,
            f0_max_hz: self.f0_max,
            threshold: self.yin_threshold,
            min_rms: self.min_rms,
        }
    }
}

#[derive(Debug, Args)]
struct PitchArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory: tracks/, contours/ and speaker_stats.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Estimate F0 from audio even when the manifest names an F0 file.
    #[arg(long)]
    recompute: bool,
    #[command(flatten)]
    yin: YinArgs,
}

#[derive(Debug, Args)]
struct PairArgs {
    #[arg(long, value_parser = clap::value_parser!(Strategy))]
    strategy: Strategy,
    #[arg(long)]
    manifest: PathBuf,
    /// Contour directory written by `pitch` (f0 strategy only).
    #[arg(long, required_if_eq("strategy", "f0"))]
    contours: Option<PathBuf>,
    /// Pair manifest output.
    #[arg(long)]
    out: PathBuf,
    /// Skip report output [default: <out>.skipped.tsv].
    #[arg(long)]
    skips: Option<PathBuf>,
    /// Phone-count window as a fraction of the target's phone count.
    #[arg(long, default_value_t = 0.15)]
    length_tolerance: f64,
    /// Drop f0 pairs farther than mean + this many standard deviations.
    #[arg(long, default_value_t = 1.0)]
    cutoff_sigmas: f64,
    /// Limit the f0 search to this many nearest-length candidates.
    #[arg(long)]
    max_candidates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalsetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Training pair manifests whose utterances must stay unseen.
    #[arg(long = "pairs", num_args = 1..)]
    pairs: Vec<PathBuf>,
    #[arg(long, default_value_t = 60)]
    n_sentences: usize,
    /// Share of test sentences with a same-text reference.
    #[arg(long, default_value_t = 0.5)]
    same_text_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum MeanF0Reference {
    /// Target speaker's geometric-mean F0 from speaker_stats.json.
    Speaker,
    /// The job's ground-truth utterance.
    Utterance,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// JSON Lines jobs: pair_id, system, output, reference, target_speaker,
    /// optional ground_truth. Paths are relative to this file; `.wav` paths
    /// are analysed, anything else is read as an F0 track.
    #[arg(long)]
    jobs: PathBuf,
    /// speaker_stats.json written by `pitch`.
    #[arg(long)]
    speaker_stats: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MeanF0Reference::Speaker)]
    mean_f0_reference: MeanF0Reference,
    /// Metric report output (tab-separated).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    yin: YinArgs,
}

#[derive(Debug, Args)]
struct DelexifyArgs {
    /// Input WAV file or directory.
    #[arg(long)]
    input: PathBuf,
    /// Output WAV file, or directory when the input is a directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200.0)]
    cutoff_hz: f64,
    /// Roll-off in dB per octave; a multiple of 6.
    #[arg(long, default_value_t = 24.0)]
    rolloff_db_per_octave: f64,
    /// Output peak level in dBFS.
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    peak_dbfs: f64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Event journal; created if absent and replayed on start.
    #[arg(long)]
    journal: PathBuf,
    /// Root for stimulus references.
    #[arg(long)]
    audio_dir: Option<PathBuf>,
    /// Static files (browser client) served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Create this study (POST /studies body) on start unless it exists.
    #[arg(long)]
    create: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Study export (GET /studies/{id}/export).
    #[arg(long)]
    export: PathBuf,
    /// Metric report from `metrics`, for the objective table.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Write one file per table here instead of printing.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = clap::value_parser!(Format))]
    format: Format,
    /// Significance level of the paired t-tests.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => pipeline::ingest(&a),
        Command::Pitch(a) => pipeline::pitch(&a),
        Command::Pair(a) => pipeline::pair(&a),
        Command::Evalset(a) => pipeline::evalset(&a),
        Command::Metrics(a) => pipeline::metrics(&a),
        Command::Delexify(a) => pipeline::delexify(&a),
        Command::Serve(a) => study::serve(&a),
        Command::Report(a) => study::report(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PTKIT_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
