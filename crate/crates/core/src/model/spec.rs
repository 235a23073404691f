use serde::{Deserialize, Serialize};

use crate::domain::{EMBED_DIM, EXCERPT_FRAMES, SNIPPET_HEIGHT, SNIPPET_WIDTH, SPEC_BINS};
use crate::error::{Error, Result};
use crate::tensor::Kernel;

/// Conv block widths at full scale.
pub const BASE_CHANNELS: [usize; 4] = [12, 24, 48, 48];

/// One step of a pathway, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: Kernel,
    },
    BatchNorm {
        channels: usize,
    },
    Elu,
    MaxPool,
    GlobalAvgPool,
}

impl LayerSpec {
    pub fn name(&self) -> String {
        match self {
            LayerSpec::Conv {
                out_channels, kernel, ..
            } => match kernel {
                Kernel::K3 => format!("Conv(3, pad-1)-{out_channels}"),
                Kernel::K1 => format!("Conv(1, pad-0)-{out_channels}"),
            },
            LayerSpec::BatchNorm { .. } => "BN".into(),
            LayerSpec::Elu => "ELU".into(),
            LayerSpec::MaxPool => "MP(2)".into(),
            LayerSpec::GlobalAvgPool => "GlobalAveragePooling".into(),
        }
    }

    /// Output `(channels, height, width)` for a given input shape.
    pub fn output_shape(&self, [c, h, w]: [usize; 3]) -> [usize; 3] {
        match *self {
            LayerSpec::Conv { out_channels, .. } => [out_channels, h, w],
            LayerSpec::BatchNorm { .. } | LayerSpec::Elu => [c, h, w],
            LayerSpec::MaxPool => [c, h / 2, w / 2],
            LayerSpec::GlobalAvgPool => [c, 1, 1],
        }
    }
}

/// Geometry of one embedding pathway: four blocks of
/// `2 x [conv3x3 - BN - ELU] + maxpool`, then `conv1x1 - BN` (linear) and
/// global average pooling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathwaySpec {
    /// `(channels, height, width)` of one input sample.
    pub input: [usize; 3],
    pub block_channels: [usize; 4],
    pub embed_dim: usize,
    pub kappa: f64,
}

fn scaled_channels(kappa: f64) -> Result<[usize; 4]> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidArgument(format!("channel scale {kappa} not in (0, 1]")));
    }
    let mut out = [0; 4];
    for (o, &base) in out.iter_mut().zip(&BASE_CHANNELS) {
        *o = (base as f64 * kappa).round() as usize;
        if *o == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel scale {kappa} leaves a block with no channels"
            )));
        }
    }
    Ok(out)
}

impl PathwaySpec {
    pub fn image(kappa: f64) -> Result<Self> {
        Ok(Self {
            input: [1, SNIPPET_HEIGHT, SNIPPET_WIDTH],
            block_channels: scaled_channels(kappa)?,
            embed_dim: EMBED_DIM,
            kappa,
        })
    }

    pub fn audio(kappa: f64) -> Result<Self> {
        Ok(Self {
            input: [1, SPEC_BINS, EXCERPT_FRAMES],
            block_channels: scaled_channels(kappa)?,
            embed_dim: EMBED_DIM,
            kappa,
        })
    }

    /// A pathway over arbitrary input geometry; used for small gradient checks.
    pub fn custom(input: [usize; 3], block_channels: [usize; 4], embed_dim: usize) -> Self {
        Self {
            input,
            block_channels,
            embed_dim,
            kappa: 1.0,
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut c = self.input[0];
        for &out in &self.block_channels {
            for _ in 0..2 {
                layers.push(LayerSpec::Conv {
                    in_channels: c,
                    out_channels: out,
                    kernel: Kernel::K3,
                });
                layers.push(LayerSpec::BatchNorm { channels: out });
                layers.push(LayerSpec::Elu);
                c = out;
            }
            layers.push(LayerSpec::MaxPool);
        }
        layers.push(LayerSpec::Conv {
            in_channels: c,
            out_channels: self.embed_dim,
            kernel: Kernel::K1,
        });
        layers.push(LayerSpec::BatchNorm {
            channels: self.embed_dim,
        });
        layers.push(LayerSpec::GlobalAvgPool);
        layers
    }

    /// Each layer paired with the shape it produces.
    pub fn shape_walk(&self) -> Vec<(LayerSpec, [usize; 3])> {
        let mut shape = self.input;
        self.layers()
            .into_iter()
            .map(|l| {
                shape = l.output_shape(shape);
                (l, shape)
            })
            .collect()
    }

    /// Shape of the map entering global average pooling.
    pub fn pre_pool_shape(&self) -> [usize; 3] {
        let walk = self.shape_walk();
        walk[walk.len() - 2].1
    }
}

/// Image (`f`) and audio (`g`) pathway specs for a channel scale.
pub fn build_pathways(kappa: f64) -> Result<(PathwaySpec, PathwaySpec)> {
    Ok((PathwaySpec::image(kappa)?, PathwaySpec::audio(kappa)?))
}
