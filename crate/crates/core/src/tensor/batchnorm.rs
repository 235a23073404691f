use super::{reduce, Tensor4};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization with learned scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    /// Weight of the old running statistic in each update.
    pub momentum: T,
}

/// Statistics a forward pass used, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    pub mean: Vec<T>,
    /// Biased variance over batch and spatial positions.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNormGrads<T> {
    pub fn zeros_like(bn: &BatchNorm<T>) -> Self {
        Self {
            gamma: vec![T::zero(); bn.channels()],
            beta: vec![T::zero(); bn.channels()],
        }
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: T::lit(DEFAULT_EPS),
            momentum: T::lit(DEFAULT_MOMENTUM),
        }
    }

    pub fn with_eps(mut self, eps: T) -> Self {
        self.eps = eps;
        self
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.channels() {
            return Err(shape_err(
                "batchnorm",
                format!("{} channels", self.channels()),
                format!("{} (input dims {:?})", x.channels(), x.dims()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
        self.check(x)?;
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        let count = n * hw;
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::SingleElementBatchNorm);
                }
                let inv = T::one() / T::lit(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for s in 0..n {
                        acc += reduce::sum(&x.data()[(s * c + ch) * hw..][..hw]);
                    }
                    let m = acc * inv;
                    let mut sq = T::zero();
                    for s in 0..n {
                        sq += reduce::sum_sq_dev(&x.data()[(s * c + ch) * hw..][..hw], m);
                    }
                    mean[ch] = m;
                    var[ch] = sq * inv;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();

        let mut out = Tensor4::zeros(x.dims());
        for s in 0..n {
            for ch in 0..c {
                let scale = self.gamma[ch] * inv_std[ch];
                let shift = self.beta[ch] - mean[ch] * scale;
                let off = (s * c + ch) * hw;
                for (o, &v) in out.data_mut()[off..off + hw].iter_mut().zip(&x.data()[off..off + hw]) {
                    *o = v * scale + shift;
                }
            }
        }
        Ok((
            out,
            BatchNormCache {
                mode,
                mean,
                var,
                inv_std,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode pass into the running ones.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let keep = self.momentum;
        let take = T::one() - keep;
        for ch in 0..self.channels() {
            self.running_mean[ch] = keep * self.running_mean[ch] + take * cache.mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + take * cache.var[ch];
        }
    }

    pub fn backward(
        &self,
        x: &Tensor4<T>,
        cache: &BatchNormCache<T>,
        grad_out: &Tensor4<T>,
        grads: &mut BatchNormGrads<T>,
    ) -> Result<Tensor4<T>> {
        self.check(x)?;
        if grad_out.dims() != x.dims() {
            return Err(shape_err(
                "batchnorm backward",
                format!("{:?}", x.dims()),
                format!("{:?}", grad_out.dims()),
            ));
        }
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        let count = T::lit((n * hw) as f64);
        let mut grad_in = Tensor4::zeros(x.dims());
        for ch in 0..c {
            let (m, is) = (cache.mean[ch], cache.inv_std[ch]);
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for s in 0..n {
                let off = (s * c + ch) * hw;
                let g = &grad_out.data()[off..off + hw];
                sum_dy += reduce::sum(g);
                sum_dy_xhat += reduce::dot_dev(&x.data()[off..off + hw], g, m);
            }
            sum_dy_xhat *= is;
            grads.gamma[ch] += sum_dy_xhat;
            grads.beta[ch] += sum_dy;

            let gamma = self.gamma[ch];
            for s in 0..n {
                let off = (s * c + ch) * hw;
                let src = x.data()[off..off + hw].iter().zip(&grad_out.data()[off..off + hw]);
                let dst = &mut grad_in.data_mut()[off..off + hw];
                match cache.mode {
                    Mode::Train => {
                        let k = gamma * is / count;
                        for (d, (&v, &g)) in dst.iter_mut().zip(src) {
                            let xhat = (v - m) * is;
                            *d = k * (count * g - sum_dy - xhat * sum_dy_xhat);
                        }
                    }
                    Mode::Eval => {
                        for (d, (_, &g)) in dst.iter_mut().zip(src) {
                            *d = g * gamma * is;
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{numeric_grad, random_tensor, rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_mode_hand_normalized() {
        let mut bn = BatchNorm::<f64>::new(1).with_eps(0.0);
        bn.running_mean = vec![2.0];
        bn.running_var = vec![1.0];
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_scale_gives_shift() {
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma = vec![0.0, 0.0];
        bn.beta = vec![0.7, -1.5];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor([3, 2, 2, 2], &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = bn.forward(&x, mode).unwrap();
            for s in 0..3 {
                for ch in 0..2 {
                    for i in 0..4 {
                        assert_eq!(y.get(s, ch, i / 2, i % 2), bn.beta[ch]);
                    }
                }
            }
        }
    }

    #[test]
    fn train_mode_rejects_single_element() {
        let bn = BatchNorm::<f64>::new(1);
        let x = Tensor4::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::SingleElementBatchNorm)));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn train_mode_output_has_zero_mean_unit_variance() {
        let bn = BatchNorm::<f64>::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor([4, 3, 3, 5], &mut rng).map(|v| 3.0 * v + 2.0);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 3 + ch) * 15..][..15].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Tensor4::from_vec([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let (_, cache) = bn.forward(&x, Mode::Train).unwrap();
        bn.update_running(&cache);
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0)).abs() < 1e-12);
        assert!(bn.running_var[0] > 0.0);
    }

    fn check(mode: Mode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma = vec![1.3, -0.4, 0.8];
        bn.beta = vec![0.1, 0.2, -0.3];
        bn.running_mean = vec![0.2, -0.1, 0.05];
        bn.running_var = vec![0.5, 1.5, 0.9];
        let x = random_tensor([2, 3, 3, 4], &mut rng);
        let proj = random_tensor([2, 3, 3, 4], &mut rng);
        let loss = |b: &BatchNorm<f64>, x: &Tensor4<f64>| -> f64 {
            let (y, _) = b.forward(x, mode).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = bn.forward(&x, mode).unwrap();
        let mut grads = BatchNormGrads::zeros_like(&bn);
        let gx = bn.backward(&x, &cache, &proj, &mut grads).unwrap();

        let num_x = numeric_grad(x.data(), |v| loss(&bn, &Tensor4::from_vec(x.dims(), v.to_vec()).unwrap()));
        assert!(rel_error(gx.data(), &num_x) < 1e-4);
        let num_g = numeric_grad(&bn.gamma, |v| {
            let mut b = bn.clone();
            b.gamma = v.to_vec();
            loss(&b, &x)
        });
        assert!(rel_error(&grads.gamma, &num_g) < 1e-4);
        let num_b = numeric_grad(&bn.beta, |v| {
            let mut b = bn.clone();
            b.beta = v.to_vec();
            loss(&b, &x)
        });
        assert!(rel_error(&grads.beta, &num_b) < 1e-4);
    }

    #[test]
    fn gradient_train_mode() {
        check(Mode::Train, 20);
    }

    #[test]
    fn gradient_eval_mode() {
        check(Mode::Eval, 21);
    }
}
