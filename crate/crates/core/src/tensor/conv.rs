use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reduce, Tensor4};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Supported convolution geometries, both with stride 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kernel {
    /// 3x3, zero padding 1.
    K3,
    /// 1x1, no padding.
    K1,
}

impl Kernel {
    #[inline]
    pub fn size(self) -> usize {
        match self {
            Kernel::K3 => 3,
            Kernel::K1 => 1,
        }
    }

    #[inline]
    pub fn taps(self) -> usize {
        self.size() * self.size()
    }
}

const DIRECT_MAX_CHANNEL_PRODUCT: usize = 18;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Kernel,
    /// `(out, in, k, k)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(conv: &Conv2d<T>) -> Self {
        Self {
            weight: vec![T::zero(); conv.weight.len()],
            bias: vec![T::zero(); conv.bias.len()],
        }
    }
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: Kernel) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel.taps()],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.taps()
    }

    /// Uniform in `[-b, b]` with `b = sqrt(6 / fan_in)`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = (6.0 / self.fan_in() as f64).sqrt();
        for w in &mut self.weight {
            *w = T::lit(rng.gen_range(-bound..bound));
        }
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.channels() != self.in_channels {
            return Err(shape_err(
                "conv2d",
                format!("{} input channels", self.in_channels),
                format!("{} (input dims {:?})", x.channels(), x.dims()),
            ));
        }
        let expected = self.out_channels * self.fan_in();
        if self.weight.len() != expected || self.bias.len() != self.out_channels {
            return Err(shape_err(
                "conv2d",
                format!("{expected} weights and {} biases", self.out_channels),
                format!("{} weights and {} biases", self.weight.len(), self.bias.len()),
            ));
        }
        Ok(())
    }

    /// Few channels make the unfolded product too thin for GEMM to pay off.
    fn direct(&self) -> bool {
        self.kernel == Kernel::K3 && self.in_channels * self.out_channels <= DIRECT_MAX_CHANNEL_PRODUCT
    }

    /// Output has the same spatial size as the input for both kernels.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.dims();
        let hw = h * w;
        let k = self.fan_in();
        let mut out = Tensor4::zeros([n, self.out_channels, h, w]);
        if self.direct() {
            for s in 0..n {
                let dst = out.sample_mut(s);
                for (plane, &b) in dst.chunks_exact_mut(hw).zip(&self.bias) {
                    plane.iter_mut().for_each(|v| *v = b);
                }
                direct3_forward(&self.weight, x.sample(s), self.in_channels, self.out_channels, h, w, dst);
            }
            return Ok(out);
        }
        let mut col = match self.kernel {
            Kernel::K3 => vec![T::zero(); k * hw],
            Kernel::K1 => Vec::new(),
        };
        for s in 0..n {
            let cols: &[T] = match self.kernel {
                Kernel::K3 => {
                    im2col3(x.sample(s), self.in_channels, h, w, &mut col);
                    &col
                }
                Kernel::K1 => x.sample(s),
            };
            let dst = out.sample_mut(s);
            for (plane, &b) in dst.chunks_exact_mut(hw).zip(&self.bias) {
                plane.iter_mut().for_each(|v| *v = b);
            }
            T::gemm(
                self.out_channels,
                k,
                hw,
                T::one(),
                &self.weight,
                (k, 1),
                cols,
                (hw, 1),
                T::one(),
                dst,
                (hw, 1),
            );
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients into `grads` and returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor4<T>,
        grad_out: &Tensor4<T>,
        grads: &mut ConvGrads<T>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor4<T>>> {
        self.check_input(x)?;
        let [n, _, h, w] = x.dims();
        if grad_out.dims() != [n, self.out_channels, h, w] {
            return Err(shape_err(
                "conv2d backward",
                format!("{:?}", [n, self.out_channels, h, w]),
                format!("{:?}", grad_out.dims()),
            ));
        }
        let hw = h * w;
        let k = self.fan_in();
        if self.direct() {
            let mut grad_in = want_input_grad.then(|| Tensor4::zeros(x.dims()));
            for s in 0..n {
                let dy = grad_out.sample(s);
                for (plane, gb) in dy.chunks_exact(hw).zip(grads.bias.iter_mut()) {
                    *gb += reduce::sum(plane);
                }
                let (cin, cout) = (self.in_channels, self.out_channels);
                direct3_weight_grad(x.sample(s), dy, cin, cout, h, w, &mut grads.weight);
                if let Some(gi) = grad_in.as_mut() {
                    direct3_input_grad(&self.weight, dy, cin, cout, h, w, gi.sample_mut(s));
                }
            }
            return Ok(grad_in);
        }
        let mut col = vec![T::zero(); k * hw];
        let mut dcol = match self.kernel {
            Kernel::K3 if want_input_grad => vec![T::zero(); k * hw],
            _ => Vec::new(),
        };
        let mut grad_in = want_input_grad.then(|| Tensor4::zeros(x.dims()));

        for s in 0..n {
            let dy = grad_out.sample(s);
            for (plane, gb) in dy.chunks_exact(hw).zip(grads.bias.iter_mut()) {
                *gb += reduce::sum(plane);
            }
            let cols: &[T] = match self.kernel {
                Kernel::K3 => {
                    im2col3(x.sample(s), self.in_channels, h, w, &mut col);
                    &col
                }
                Kernel::K1 => x.sample(s),
            };
            // dW += dY * col^T
            T::gemm(
                self.out_channels,
                hw,
                k,
                T::one(),
                dy,
                (hw, 1),
                cols,
                (1, hw),
                T::one(),
                &mut grads.weight,
                (k, 1),
            );
            if let Some(gi) = grad_in.as_mut() {
                // dcol = W^T * dY
                match self.kernel {
                    Kernel::K3 => {
                        T::gemm(
                            k,
                            self.out_channels,
                            hw,
                            T::one(),
                            &self.weight,
                            (1, k),
                            dy,
                            (hw, 1),
                            T::zero(),
                            &mut dcol,
                            (hw, 1),
                        );
                        col2im3(&dcol, self.in_channels, h, w, gi.sample_mut(s));
                    }
                    Kernel::K1 => {
                        T::gemm(
                            k,
                            self.out_channels,
                            hw,
                            T::one(),
                            &self.weight,
                            (1, k),
                            dy,
                            (hw, 1),
                            T::zero(),
                            gi.sample_mut(s),
                            (hw, 1),
                        );
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

/// `dst[x] += k0 * src[x - 1] + k1 * src[x] + k2 * src[x + 1]`, zero outside `src`.
#[inline]
fn row3<T: Scalar>(dst: &mut [T], src: &[T], k0: T, k1: T, k2: T) {
    let w = dst.len();
    debug_assert_eq!(src.len(), w);
    if w == 1 {
        dst[0] += k1 * src[0];
        return;
    }
    dst[0] += k1 * src[0] + k2 * src[1];
    dst[w - 1] += k0 * src[w - 2] + k1 * src[w - 1];
    let inner = &mut dst[1..w - 1];
    let (a, b, c) = (&src[..w - 2], &src[1..w - 1], &src[2..]);
    for (((d, &a), &b), &c) in inner.iter_mut().zip(a).zip(b).zip(c) {
        *d += k0 * a + k1 * b + k2 * c;
    }
}

/// Row-wise 3x3 convolution of one sample; `dst` already holds the bias.
fn direct3_forward<T: Scalar>(weight: &[T], src: &[T], cin: usize, cout: usize, h: usize, w: usize, dst: &mut [T]) {
    let hw = h * w;
    for y in 0..h {
        for o in 0..cout {
            let drow = &mut dst[o * hw + y * w..][..w];
            for c in 0..cin {
                let wk = &weight[(o * cin + c) * 9..][..9];
                for ky in 0..3 {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                        continue;
                    };
                    let srow = &src[c * hw + sy * w..][..w];
                    row3(drow, srow, wk[ky * 3], wk[ky * 3 + 1], wk[ky * 3 + 2]);
                }
            }
        }
    }
}

/// Input gradient of [`direct3_forward`], accumulated into `dx`.
fn direct3_input_grad<T: Scalar>(weight: &[T], dy: &[T], cin: usize, cout: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for yi in 0..h {
        for c in 0..cin {
            let drow = &mut dx[c * hw + yi * w..][..w];
            for o in 0..cout {
                let wk = &weight[(o * cin + c) * 9..][..9];
                for ky in 0..3 {
                    let Some(y) = (yi + 1).checked_sub(ky).filter(|&y| y < h) else {
                        continue;
                    };
                    let grow = &dy[o * hw + y * w..][..w];
                    row3(drow, grow, wk[ky * 3 + 2], wk[ky * 3 + 1], wk[ky * 3]);
                }
            }
        }
    }
}

/// Weight gradient of [`direct3_forward`], accumulated into `dw`.
fn direct3_weight_grad<T: Scalar>(src: &[T], dy: &[T], cin: usize, cout: usize, h: usize, w: usize, dw: &mut [T]) {
    let hw = h * w;
    for y in 0..h {
        for o in 0..cout {
            let grow = &dy[o * hw + y * w..][..w];
            for c in 0..cin {
                let gw = &mut dw[(o * cin + c) * 9..][..9];
                for ky in 0..3 {
                    let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                        continue;
                    };
                    let srow = &src[c * hw + sy * w..][..w];
                    gw[ky * 3 + 1] += reduce::dot(grow, srow);
                    if w > 1 {
                        gw[ky * 3] += reduce::dot(&grow[1..], &srow[..w - 1]);
                        gw[ky * 3 + 2] += reduce::dot(&grow[..w - 1], &srow[1..]);
                    }
                }
            }
        }
    }
}

/// Column extents `[lo, hi)` of valid output positions for a horizontal tap
/// offset `d` in `{-1, 0, 1}`.
#[inline]
fn valid_range(d: isize, len: usize) -> (usize, usize) {
    match d {
        -1 => (1, len),
        1 => (0, len.saturating_sub(1)),
        _ => (0, len),
    }
}

/// Unfolds one `(c, h, w)` sample into a `(c * 9, h * w)` matrix for a 3x3
/// pad-1 convolution.
fn im2col3<T: Scalar>(src: &[T], channels: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &src[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let row = &mut col[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                let (xlo, xhi) = valid_range(dx, w);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..xlo].iter_mut().for_each(|v| *v = T::zero());
                    dst[xhi..].iter_mut().for_each(|v| *v = T::zero());
                    let s0 = (xlo as isize + dx) as usize;
                    dst[xlo..xhi].copy_from_slice(&srow[s0..s0 + (xhi - xlo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col3`]: scatters a column matrix back onto the image,
/// overwriting `dst`.
fn col2im3<T: Scalar>(col: &[T], channels: usize, h: usize, w: usize, dst: &mut [T]) {
    let hw = h * w;
    dst.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..channels {
        let plane = &mut dst[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let row = &col[((c * 3 + ky) * 3 + kx) * hw..][..hw];
                let (xlo, xhi) = valid_range(dx, w);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (xlo as isize + dx) as usize;
                    let prow = &mut plane[sy as usize * w + s0..][..xhi - xlo];
                    for (p, &g) in prow.iter_mut().zip(&row[y * w + xlo..y * w + xhi]) {
                        *p += g;
                    }
                }
            }
        }
    }
}
