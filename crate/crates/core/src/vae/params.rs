use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Layer sizes of the encoder/decoder pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaeDims {
    /// Frequency bins `F` (input of the encoder, output of the decoder).
    pub freq_bins: usize,
    /// Latent dimension `L`.
    pub latent_dim: usize,
    /// Width of the single tanh hidden layer on each side.
    pub hidden_dim: usize,
}

impl VaeDims {
    pub fn validate(&self) -> Result<()> {
        let VaeDims {
            freq_bins,
            latent_dim,
            hidden_dim,
        } = *self;
        if freq_bins == 0 || latent_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!("all VAE dimensions must be positive: {self:?}")));
        }
        if latent_dim >= freq_bins {
            return Err(Error::Config(format!(
                "latent dimension {latent_dim} must be smaller than the {freq_bins} frequency bins"
            )));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(*self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each weight/bias block inside the flat parameter vector.
///
/// Weight blocks are row-major `out × in`.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub enc_hidden_w: Range<usize>,
    pub enc_hidden_b: Range<usize>,
    pub enc_mean_w: Range<usize>,
    pub enc_mean_b: Range<usize>,
    pub enc_logvar_w: Range<usize>,
    pub enc_logvar_b: Range<usize>,
    pub dec_hidden_w: Range<usize>,
    pub dec_hidden_b: Range<usize>,
    pub dec_logvar_w: Range<usize>,
    pub dec_logvar_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(dims: VaeDims) -> Self {
        let VaeDims {
            freq_bins: f,
            latent_dim: l,
            hidden_dim: h,
        } = dims;
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let enc_hidden_w = take(h * f);
        let enc_hidden_b = take(h);
        let enc_mean_w = take(l * h);
        let enc_mean_b = take(l);
        let enc_logvar_w = take(l * h);
        let enc_logvar_b = take(l);
        let dec_hidden_w = take(h * l);
        let dec_hidden_b = take(h);
        let dec_logvar_w = take(f * h);
        let dec_logvar_b = take(f);
        Layout {
            enc_hidden_w,
            enc_hidden_b,
            enc_mean_w,
            enc_mean_b,
            enc_logvar_w,
            enc_logvar_b,
            dec_hidden_w,
            dec_hidden_b,
            dec_logvar_w,
            dec_logvar_b,
            total: cursor,
        }
    }

    /// `(weights, fan_in, fan_out)` for every dense layer.
    pub fn weight_blocks(&self, dims: VaeDims) -> [(Range<usize>, usize, usize); 5] {
        let VaeDims {
            freq_bins: f,
            latent_dim: l,
            hidden_dim: h,
        } = dims;
        [
            (self.enc_hidden_w.clone(), f, h),
            (self.enc_mean_w.clone(), h, l),
            (self.enc_logvar_w.clone(), h, l),
            (self.dec_hidden_w.clone(), l, h),
            (self.dec_logvar_w.clone(), h, f),
        ]
    }
}

/// Weights and biases of the recognition (encoder) and generative (decoder) networks.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParameters {
    dims: VaeDims,
    flat: Vec<f64>,
}

impl VaeParameters {
    pub fn zeros(dims: VaeDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            flat: vec![0.0; dims.param_count()],
        })
    }

    pub fn from_flat(dims: VaeDims, flat: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if flat.len() != dims.param_count() {
            return Err(Error::Shape(format!(
                "VAE {dims:?} has {} parameters, got {}",
                dims.param_count(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("VAE parameter".into()));
        }
        Ok(Self { dims, flat })
    }

    /// Glorot-uniform weights `U(±√(6 / (fan_in + fan_out)))`, zero biases.
    pub fn glorot_uniform(dims: VaeDims, rng: &mut RngStream) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        let layout = dims.layout();
        for (range, fan_in, fan_out) in layout.weight_blocks(dims) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut params.flat[range] {
                *w = limit * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(params)
    }

    pub fn dims(&self) -> VaeDims {
        self.dims
    }

    pub fn freq_bins(&self) -> usize {
        self.dims.freq_bins
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.latent_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.dims.hidden_dim
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub(crate) fn block(&self, range: &Range<usize>) -> &[f64] {
        &self.flat[range.clone()]
    }
}
