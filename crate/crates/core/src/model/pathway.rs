use rand::Rng;

use super::spec::{LayerSpec, PathwaySpec};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    elu_backward_from_output, elu_inplace, global_average_pool, global_average_pool_backward, l2_normalize_rows,
    l2_normalize_rows_backward, maxpool2x2, maxpool2x2_backward, BatchNorm, BatchNormCache,
    BatchNormGrads, Conv2d, ConvGrads, Matrix, Mode, Tensor4,
};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Elu,
    MaxPool,
    GlobalAvgPool,
}

/// One embedding network (`f` or `g`).
#[derive(Clone, Debug, PartialEq)]
pub struct Pathway<T> {
    pub spec: PathwaySpec,
    pub layers: Vec<Layer<T>>,
}

/// Per-layer auxiliary record of a forward pass.
enum Step<T> {
    Plain,
    BatchNorm(BatchNormCache<T>),
    MaxPool { dims: [usize; 4], argmax: Vec<u32> },
    GlobalAvgPool { dims: [usize; 4] },
}

/// Everything [`Pathway::backward`] needs from a forward pass.
///
/// `values[i]` is the input of layer `i` (and `values[i + 1]` its output);
/// only the tensors some backward step reads are kept: inputs of conv and
/// batch-norm layers and outputs of ELU layers.
pub struct Trace<T> {
    values: Vec<Option<Tensor4<T>>>,
    steps: Vec<Step<T>>,
    pooled: Matrix<T>,
    mode: Mode,
}

impl<T: Scalar> Trace<T> {
    /// Embeddings before normalization.
    pub fn raw_embeddings(&self) -> &Matrix<T> {
        &self.pooled
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn value(&self, i: usize) -> &Tensor4<T> {
        self.values[i].as_ref().expect("activation kept for backward")
    }
}

/// Gradients for the trainable arrays, in [`Pathway::params`] order.
pub type Grads<T> = Vec<Vec<T>>;

impl<T: Scalar> Pathway<T> {
    /// Fan-in scaled uniform conv weights, unit BN scale, zero shift.
    pub fn new<R: Rng + ?Sized>(spec: PathwaySpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for layer in &mut p.layers {
            if let Layer::Conv(conv) = layer {
                conv.init_uniform(rng);
            }
        }
        p
    }

    /// All conv weights zero; BN at identity.
    pub fn zeros(spec: PathwaySpec) -> Self {
        let layers = spec
            .layers()
            .into_iter()
            .map(|l| match l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => Layer::Conv(Conv2d::zeros(in_channels, out_channels, kernel)),
                LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm::new(channels)),
                LayerSpec::Elu => Layer::Elu,
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            })
            .collect();
        Self { spec, layers }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let [_, c, h, w] = x.dims();
        if [c, h, w] != self.spec.input {
            return Err(shape_err(
                "pathway input",
                format!("{:?}", self.spec.input),
                format!("{:?}", [c, h, w]),
            ));
        }
        Ok(())
    }

    /// Unit-norm embeddings, one row per sample; keeps no intermediates.
    pub fn embed(&self, x: &Tensor4<T>, mode: Mode) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut pooled = None;
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => cur = conv.forward(&cur)?,
                Layer::BatchNorm(bn) => cur = bn.forward(&cur, mode)?.0,
                Layer::Elu => elu_inplace(&mut cur),
                Layer::MaxPool => cur = maxpool2x2(&cur)?.0,
                Layer::GlobalAvgPool => pooled = Some(global_average_pool(&cur)),
            }
        }
        l2_normalize_rows(&pooled.expect("pathway ends in global pooling"))
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Matrix<T>, Trace<T>)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut values = Vec::with_capacity(n + 1);
        let mut steps = Vec::with_capacity(n);
        let mut cur = x.clone();
        let mut pooled = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let keep = matches!(layer, Layer::Conv(_) | Layer::BatchNorm(_))
                || (i > 0 && matches!(self.layers[i - 1], Layer::Elu));
            let (out, step) = match layer {
                Layer::Conv(conv) => (conv.forward(&cur)?, Step::Plain),
                Layer::BatchNorm(bn) => {
                    let (out, cache) = bn.forward(&cur, mode)?;
                    (out, Step::BatchNorm(cache))
                }
                Layer::Elu => {
                    let mut out = if keep {
                        cur.clone()
                    } else {
                        std::mem::replace(&mut cur, Tensor4::zeros([0; 4]))
                    };
                    elu_inplace(&mut out);
                    (out, Step::Plain)
                }
                Layer::MaxPool => {
                    let dims = cur.dims();
                    let (out, argmax) = maxpool2x2(&cur)?;
                    (out, Step::MaxPool { dims, argmax })
                }
                Layer::GlobalAvgPool => {
                    pooled = Some(global_average_pool(&cur));
                    (Tensor4::zeros([0; 4]), Step::GlobalAvgPool { dims: cur.dims() })
                }
            };
            let input = std::mem::replace(&mut cur, out);
            values.push(keep.then_some(input));
            steps.push(step);
        }
        let pooled = pooled.expect("pathway ends in global pooling");
        let embeddings = l2_normalize_rows(&pooled)?;
        Ok((
            embeddings,
            Trace {
                values,
                steps,
                pooled,
                mode,
            },
        ))
    }

    /// Parameter gradients for a gradient w.r.t. the normalized embeddings.
    pub fn backward(&self, trace: &Trace<T>, grad_embeddings: &Matrix<T>) -> Result<Grads<T>> {
        Ok(self.backward_impl(trace, grad_embeddings, false)?.0)
    }

    /// Like [`Pathway::backward`], also returning the gradient w.r.t. the input.
    pub fn backward_with_input(
        &self,
        trace: &Trace<T>,
        grad_embeddings: &Matrix<T>,
    ) -> Result<(Grads<T>, Tensor4<T>)> {
        let (g, gi) = self.backward_impl(trace, grad_embeddings, true)?;
        Ok((g, gi.expect("input gradient requested")))
    }

    fn backward_impl(
        &self,
        trace: &Trace<T>,
        grad_embeddings: &Matrix<T>,
        want_input: bool,
    ) -> Result<(Grads<T>, Option<Tensor4<T>>)> {
        let grad_pooled = l2_normalize_rows_backward(&trace.pooled, grad_embeddings)?;
        let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); self.layers.len()];
        let mut grad: Option<Tensor4<T>> = None;
        for (i, (layer, step)) in self.layers.iter().zip(&trace.steps).enumerate().rev() {
            if let (Layer::GlobalAvgPool, Step::GlobalAvgPool { dims }) = (layer, step) {
                grad = Some(global_average_pool_backward(*dims, &grad_pooled)?);
                continue;
            }
            let g = grad.take().expect("gradient flows from the top");
            grad = match (layer, step) {
                (Layer::MaxPool, Step::MaxPool { dims, argmax }) => Some(maxpool2x2_backward(*dims, argmax, &g)?),
                (Layer::Elu, Step::Plain) => Some(elu_backward_from_output(trace.value(i + 1), &g)?),
                (Layer::BatchNorm(bn), Step::BatchNorm(cache)) => {
                    let mut pg = BatchNormGrads::zeros_like(bn);
                    let gi = bn.backward(trace.value(i), cache, &g, &mut pg)?;
                    per_layer[i] = vec![pg.gamma, pg.beta];
                    Some(gi)
                }
                (Layer::Conv(conv), Step::Plain) => {
                    let mut pg = ConvGrads::zeros_like(conv);
                    let gi = conv.backward(trace.value(i), &g, &mut pg, i > 0 || want_input)?;
                    per_layer[i] = vec![pg.weight, pg.bias];
                    gi
                }
                _ => unreachable!("trace recorded by a different pathway"),
            };
        }
        Ok((per_layer.into_iter().flatten().collect(), grad))
    }

    /// Moves batch statistics of a train-mode trace into the running statistics.
    pub fn commit_batch_stats(&mut self, trace: &Trace<T>) {
        for (layer, step) in self.layers.iter_mut().zip(&trace.steps) {
            if let (Layer::BatchNorm(bn), Step::BatchNorm(cache)) = (layer, step) {
                bn.update_running(cache);
            }
        }
    }

    /// Trainable arrays: conv weight and bias, BN scale and shift, in layer order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weight.as_slice(), c.bias.as_slice()]),
                Layer::BatchNorm(b) => out.extend([b.gamma.as_slice(), b.beta.as_slice()]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Every stored array in declaration order: trainable parameters plus BN
    /// running mean and variance.
    pub fn state(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weight.as_slice(), c.bias.as_slice()]),
                Layer::BatchNorm(b) => out.extend([
                    b.gamma.as_slice(),
                    b.beta.as_slice(),
                    b.running_mean.as_slice(),
                    b.running_var.as_slice(),
                ]),
                _ => {}
            }
        }
        out
    }

    pub fn state_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                    out.push(&mut b.running_mean);
                    out.push(&mut b.running_var);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
