use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{VaeDims, VaeParameters};
use crate::error::{Error, Result};

pub const MODEL_SCHEMA: &str = "vamce-vae-1";

#[derive(Serialize, Deserialize)]
struct DenseLayer {
    /// Row-major `out × in`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EncoderFile {
    hidden: DenseLayer,
    mean: DenseLayer,
    log_variance: DenseLayer,
}

#[derive(Serialize, Deserialize)]
struct DecoderFile {
    hidden: DenseLayer,
    log_variance: DenseLayer,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    freq_bins: usize,
    latent_dim: usize,
    hidden_dim: usize,
    hidden_activation: String,
    output_activation: String,
    encoder: EncoderFile,
    decoder: DecoderFile,
}

fn layer(params: &VaeParameters, w: std::ops::Range<usize>, b: std::ops::Range<usize>) -> DenseLayer {
    DenseLayer {
        weights: params.block(&w).to_vec(),
        bias: params.block(&b).to_vec(),
    }
}

impl ModelFile {
    fn from_params(params: &VaeParameters) -> Self {
        let dims = params.dims();
        let l = dims.layout();
        ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            freq_bins: dims.freq_bins,
            latent_dim: dims.latent_dim,
            hidden_dim: dims.hidden_dim,
            hidden_activation: "tanh".into(),
            output_activation: "identity".into(),
            encoder: EncoderFile {
                hidden: layer(params, l.enc_hidden_w.clone(), l.enc_hidden_b.clone()),
                mean: layer(params, l.enc_mean_w.clone(), l.enc_mean_b.clone()),
                log_variance: layer(params, l.enc_logvar_w.clone(), l.enc_logvar_b.clone()),
            },
            decoder: DecoderFile {
                hidden: layer(params, l.dec_hidden_w.clone(), l.dec_hidden_b.clone()),
                log_variance: layer(params, l.dec_logvar_w.clone(), l.dec_logvar_b.clone()),
            },
        }
    }

    fn into_params(self) -> Result<VaeParameters> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Format(format!(
                "model schema {:?}, expected {MODEL_SCHEMA:?}",
                self.schema
            )));
        }
        if self.hidden_activation != "tanh" || self.output_activation != "identity" {
            return Err(Error::Format(format!(
                "unsupported activations {}/{}",
                self.hidden_activation, self.output_activation
            )));
        }
        let dims = VaeDims {
            freq_bins: self.freq_bins,
            latent_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
        };
        dims.validate()?;
        let layout = dims.layout();
        let blocks = [
            (layout.enc_hidden_w, self.encoder.hidden.weights),
            (layout.enc_hidden_b, self.encoder.hidden.bias),
            (layout.enc_mean_w, self.encoder.mean.weights),
            (layout.enc_mean_b, self.encoder.mean.bias),
            (layout.enc_logvar_w, self.encoder.log_variance.weights),
            (layout.enc_logvar_b, self.encoder.log_variance.bias),
            (layout.dec_hidden_w, self.decoder.hidden.weights),
            (layout.dec_hidden_b, self.decoder.hidden.bias),
            (layout.dec_logvar_w, self.decoder.log_variance.weights),
            (layout.dec_logvar_b, self.decoder.log_variance.bias),
        ];
        let mut flat = vec![0.0; layout.total];
        for (range, values) in blocks {
            if values.len() != range.len() {
                return Err(Error::Shape(format!(
                    "model block at {range:?} needs {} values, file has {}",
                    range.len(),
                    values.len()
                )));
            }
            flat[range].copy_from_slice(&values);
        }
        VaeParameters::from_flat(dims, flat)
    }
}

pub fn model_to_json(params: &VaeParameters) -> Result<String> {
    serde_json::to_string(&ModelFile::from_params(params)).map_err(|e| Error::Format(e.to_string()))
}

pub fn model_from_json(text: &str) -> Result<VaeParameters> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
    file.into_params()
}

/// Writes the model as JSON; floats use shortest round-trip formatting, so
/// loading restores the parameters bit for bit.
pub fn save_model(path: impl AsRef<Path>, params: &VaeParameters) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeParameters> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
