use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vamce_core::isnmf::BaselineConfig;
use vamce_core::mcem::{EnhancerConfig, GainInit};

/// Semi-supervised single-channel speech enhancement with a VAE speech prior
/// and an NMF noise model.
#[derive(Debug, Parser, Serialize)]
#[command(name = "vamce", version, about)]
#[command(after_help = "Environment: VAMCE_THREADS caps internal parallelism (0 = all cores). \
RUST_LOG controls log verbosity (default info).")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a seeded synthetic corpus of clean utterances and noisy mixtures.
    MakeCorpus(MakeCorpusArgs),
    /// Train the VAE speech model on a corpus' clean utterances.
    TrainVae(TrainVaeArgs),
    /// Train the IS-NMF speech dictionary for the baseline.
    TrainDict(TrainDictArgs),
    /// Enhance a mixture (or every mixture of a corpus) with the VAE + MCEM method.
    Enhance(EnhanceArgs),
    /// Enhance a mixture (or every mixture of a corpus) with the IS-NMF baseline.
    EnhanceNmf(EnhanceNmfArgs),
    /// SI-SDR report of enhanced estimates against a corpus' references.
    Evaluate(EvaluateArgs),
    /// Enhance one mixture at several input scalings with free and frozen gains.
    GainRobustness(GainRobustnessArgs),
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::MakeCorpus(a) => &a.common,
            Command::TrainVae(a) => &a.common,
            Command::TrainDict(a) => &a.common,
            Command::Enhance(a) => &a.common,
            Command::EnhanceNmf(a) => &a.common,
            Command::Evaluate(a) => &a.common,
            Command::GainRobustness(a) => &a.common,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct Common {
    /// Flat JSON file of flag values; flags given on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    #[serde(skip)]
    pub print_config: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct StftArgs {
    /// Analysis window length in milliseconds (sine window).
    #[arg(long, default_value_t = 64.0)]
    pub win_ms: f64,
    /// Overlap between consecutive frames, as a fraction of the window.
    #[arg(long, default_value_t = 0.75)]
    pub overlap: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct MakeCorpusArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n_clean: usize,
    #[arg(long, default_value_t = 20)]
    pub n_mixtures: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    /// Utterance length in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub secs: f64,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainVaeArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Latent dimension L.
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    /// Hidden layer width.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Use at most this many clean frames (all when absent).
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Epochs without validation improvement before early stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Write the per-epoch loss curve as CSV.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainDictArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Speech dictionary rank K_s.
    #[arg(long, default_value_t = 64)]
    pub rank: usize,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct McemArgs {
    /// Noise NMF rank K_b.
    #[arg(long, default_value_t = 10)]
    pub kb: usize,
    /// Random-walk proposal variance.
    #[arg(long, default_value_t = 0.01)]
    pub eps2: f64,
    /// Metropolis-Hastings iterations per E-step.
    #[arg(long, default_value_t = 40)]
    pub estep_iters: usize,
    #[arg(long, default_value_t = 30)]
    pub estep_burn_in: usize,
    /// Metropolis-Hastings iterations for the final mask.
    #[arg(long, default_value_t = 100)]
    pub recon_iters: usize,
    #[arg(long, default_value_t = 75)]
    pub recon_burn_in: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Relative improvement of the EM objective below which iteration stops.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Initial noise variance as a fraction of the mixture mean power.
    #[arg(long, default_value_t = 1e-4)]
    pub noise_init: f64,
    /// Starting gains when they are free: `ones`, or `mixture-level` (one
    /// common value matched to the mixture's loudness).
    #[arg(long, default_value_t = GainInit::MixtureLevel)]
    pub gain_init: GainInit,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl McemArgs {
    pub fn config(&self, update_gains: bool) -> EnhancerConfig {
        EnhancerConfig {
            estep_iterations: self.estep_iters,
            estep_burn_in: self.estep_burn_in,
            reconstruction_iterations: self.recon_iters,
            reconstruction_burn_in: self.recon_burn_in,
            proposal_variance: self.eps2,
            noise_rank: self.kb,
            noise_init_fraction: self.noise_init,
            tolerance: self.tol,
            max_iterations: self.max_iters,
            update_gains,
            gain_init: self.gain_init,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EnhanceArgs {
    /// Trained VAE (JSON).
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Mixture WAV, or a corpus directory to enhance all its mixtures.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    /// Output WAV, or a directory when `--in` is a corpus.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Pin every gain to 1.
    #[arg(long)]
    pub freeze_gains: bool,
    /// Per-iteration objective and acceptance CSV (a directory in corpus mode).
    #[arg(long, value_name = "PATH")]
    pub dump_trace: Option<PathBuf>,
    #[command(flatten)]
    pub mcem: McemArgs,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct EnhanceNmfArgs {
    #[arg(long, value_name = "FILE")]
    pub dict: PathBuf,
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Noise NMF rank K_b.
    #[arg(long, default_value_t = 10)]
    pub kb: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub noise_init: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub common: Common,
}

impl EnhanceNmfArgs {
    pub fn config(&self, speech_rank: usize) -> BaselineConfig {
        BaselineConfig {
            speech_rank,
            noise_rank: self.kb,
            max_iterations: self.max_iters,
            tolerance: self.tol,
            noise_init_fraction: self.noise_init,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// `METHOD=DIR` holding `<id>.wav` estimates; repeatable.
    #[arg(long, value_name = "METHOD=DIR", required = true)]
    pub estimates: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize)]
pub struct GainRobustnessArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub mixture: PathBuf,
    /// Clean reference for SI-SDR.
    #[arg(long, value_name = "FILE")]
    pub clean: PathBuf,
    /// Input power scalings in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-12,-6,0,6,12,18")]
    pub scalings: Vec<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub mcem: McemArgs,
    #[command(flatten)]
    pub stft: StftArgs,
    #[command(flatten)]
    pub common: Common,
}
