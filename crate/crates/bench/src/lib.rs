//! Fixtures shared by the criterion benches. Sizes follow the desk
//! experiment: 513 bins, a 2 s mixture (126 frames), L = 8, H_hid = 64.

use vamce_core::audio::{stft, StftConfig, Waveform};
use vamce_core::corpus::{generate_corpus, CorpusConfig};
use vamce_core::mcem::{init_chains, GainVector, LatentChain, NoiseNmf};
use vamce_core::numerics::{Matrix, RngStream};
use vamce_core::vae::{VaeDims, VaeParameters};

pub const FREQ_BINS: usize = 513;
pub const LATENT_DIM: usize = 8;
pub const HIDDEN_DIM: usize = 64;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed, 0);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_open_closed())
}

pub fn mixture(secs: f64) -> Waveform {
    let corpus = generate_corpus(&CorpusConfig {
        utterance_secs: secs,
        n_clean: 0,
        n_mixtures: 1,
        seed: 7,
        ..CorpusConfig::default()
    })
    .expect("valid corpus config");
    corpus.mixtures.into_iter().next().expect("one mixture").mixture
}

pub fn vae() -> VaeParameters {
    let dims = VaeDims {
        freq_bins: FREQ_BINS,
        latent_dim: LATENT_DIM,
        hidden_dim: HIDDEN_DIM,
    };
    VaeParameters::glorot_uniform(dims, &mut RngStream::new(3, 0)).expect("valid dims")
}

/// Everything one E-step needs, at desk size.
pub struct EStepFixture {
    pub power: Matrix,
    pub vae: VaeParameters,
    pub nmf: NoiseNmf,
    pub gains: GainVector,
    pub chains: Vec<LatentChain>,
}

pub fn estep_fixture() -> EStepFixture {
    let power = stft(&mixture(2.0), StftConfig::DEFAULT).expect("stft").power();
    let vae = vae();
    let (f, n) = power.shape();
    let nmf = NoiseNmf::random(f, n, 10, power.mean(), &mut RngStream::new(5, 0)).expect("noise init");
    let chains = init_chains(&power, &vae, 1).expect("chains");
    EStepFixture {
        gains: GainVector::ones(n),
        power,
        vae,
        nmf,
        chains,
    }
}
