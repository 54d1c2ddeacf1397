//! Encoder and decoder wired together with their parameters.

use crate::encoder::{AttentionRecord, Encoder, EncoderConfig, PyramidFeatures};
use crate::error::Result;
use crate::nn::Initializer;
use crate::params::{Bound, ParamStore};
use crate::pld::{Pld, PldConfig, PldOutput};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub pld: PldConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
            pld: PldConfig::default(),
        }
    }
}

pub struct ModelOutput<T> {
    pub pyramid: PyramidFeatures,
    pub decoder: PldOutput,
    pub attention: Option<Vec<AttentionRecord<T>>>,
}

impl<T> ModelOutput<T> {
    pub fn logits(&self) -> Var {
        self.decoder.logits
    }
}

/// Layer structure plus its parameter store. Parameters are registered
/// encoder first, then decoder, all drawn from one seeded stream.
#[derive(Clone, Debug)]
pub struct SsFormer<T> {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Pld,
    pub params: ParamStore<T>,
}

impl<T: Scalar> SsFormer<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut init = Initializer::new(seed);
        let encoder = Encoder::new(&config.encoder, &mut params, &mut init)?;
        let decoder = Pld::new(&config.pld, config.encoder.stage_dims, &mut params, &mut init)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
            params,
        })
    }

    /// `images: [N, 3, H, W]` to logits `[N, 1, H, W]` plus intermediates.
    pub fn forward(&self, tape: &Tape<T>, p: &Bound, images: Var, record: bool) -> Result<ModelOutput<T>> {
        let enc = self.encoder.forward(tape, p, images, record)?;
        let decoder = self.decoder.forward(tape, p, &enc.features)?;
        Ok(ModelOutput {
            pyramid: enc.features,
            decoder,
            attention: enc.attention,
        })
    }

    /// Inference on a batch without recording gradients.
    pub fn predict_logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let x = tape.constant(images.clone());
        let out = self.forward(&tape, &p, x, false)?;
        let logits = tape.value(out.logits());
        Ok((*logits).clone())
    }

    pub fn cast<U: Scalar>(&self) -> SsFormer<U> {
        SsFormer {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            params: self.params.cast(),
        }
    }
}
