//! The two-pathway embedding network: `f` maps sheet snippets and `g` maps
//! spectrogram excerpts into the same unit sphere.

mod checkpoint;
mod pathway;
mod spec;

pub use checkpoint::{ModelCheckpoint, OptimizerSnapshot, FORMAT_VERSION, MAGIC};
pub use pathway::{Grads, Layer, Pathway, Trace};
pub use spec::{build_pathways, LayerSpec, PathwaySpec, BASE_CHANNELS};

use crate::error::{shape_err, Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Mode, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<T> {
    /// Sheet image pathway `f`.
    pub image: Pathway<T>,
    /// Audio pathway `g`.
    pub audio: Pathway<T>,
}

impl<T: Scalar> EmbeddingModel<T> {
    /// Fresh model at channel scale `kappa`, initialized from `seed`.
    pub fn new(kappa: f64, seed: u64) -> Result<Self> {
        let (f, g) = build_pathways(kappa)?;
        Ok(Self::from_specs(f, g, seed))
    }

    pub fn from_specs(image: PathwaySpec, audio: PathwaySpec, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::Init);
        let image = Pathway::new(image, &mut rng);
        let audio = Pathway::new(audio, &mut rng);
        Self { image, audio }
    }

    pub fn embed_image(&self, snippets: &Tensor4<T>, mode: Mode) -> Result<Matrix<T>> {
        self.image.embed(snippets, mode)
    }

    pub fn embed_audio(&self, excerpts: &Tensor4<T>, mode: Mode) -> Result<Matrix<T>> {
        self.audio.embed(excerpts, mode)
    }

    pub fn to_checkpoint(&self, epoch: u64) -> ModelCheckpoint {
        let dump = |p: &Pathway<T>| -> Vec<Vec<f32>> {
            p.state()
                .into_iter()
                .map(|a| a.iter().map(|v| v.to_f32().expect("finite parameter")).collect())
                .collect()
        };
        ModelCheckpoint {
            image_spec: self.image.spec,
            audio_spec: self.audio.spec,
            image_state: dump(&self.image),
            audio_state: dump(&self.audio),
            epoch,
            optimizer: None,
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        fn load<T: Scalar>(spec: PathwaySpec, state: &[Vec<f32>], what: &'static str) -> Result<Pathway<T>> {
            let mut p = Pathway::zeros(spec);
            let slots = p.state_mut();
            if slots.len() != state.len() {
                return Err(shape_err(what, format!("{} arrays", slots.len()), state.len()));
            }
            for (slot, src) in slots.into_iter().zip(state) {
                if slot.len() != src.len() {
                    return Err(shape_err(what, slot.len(), src.len()));
                }
                for (d, &s) in slot.iter_mut().zip(src) {
                    *d = T::lit(s as f64);
                }
            }
            Ok(p)
        }
        if ckpt.image_spec.embed_dim != ckpt.audio_spec.embed_dim {
            return Err(Error::InvalidArgument("pathways disagree on embedding dimension".into()));
        }
        Ok(Self {
            image: load(ckpt.image_spec, &ckpt.image_state, "checkpoint image pathway")?,
            audio: load(ckpt.audio_spec, &ckpt.audio_state, "checkpoint audio pathway")?,
        })
    }
}
