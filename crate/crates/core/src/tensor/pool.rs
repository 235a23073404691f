use super::{reduce, Matrix, Tensor4};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Non-overlapping 2x2 max pooling with stride 2. Odd trailing rows and
/// columns are dropped. Returns the pooled tensor and, per output element,
/// the flat input offset of the maximum (first one in scan order on ties).
pub fn maxpool2x2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims();
    if h < 2 || w < 2 {
        return Err(shape_err("maxpool2x2", "height and width >= 2", format!("{h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let p = base + 2 * y * w + 2 * xx;
                let mut best = p;
                for q in [p + 1, p + w, p + w + 1] {
                    if src[q] > src[best] {
                        best = q;
                    }
                }
                dst[o] = src[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    input_dims: [usize; 4],
    argmax: &[u32],
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if argmax.len() != grad_out.data().len() {
        return Err(shape_err("maxpool2x2 backward", argmax.len(), grad_out.data().len()));
    }
    let mut grad_in = Tensor4::zeros(input_dims);
    let gi = grad_in.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gi[idx as usize] += g;
    }
    Ok(grad_in)
}

/// Spatial mean per channel, giving a `batch x channels` matrix.
pub fn global_average_pool<T: Scalar>(x: &Tensor4<T>) -> Matrix<T> {
    let [n, c, ..] = x.dims();
    let hw = x.plane_len();
    let inv = T::one() / T::lit(hw as f64);
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|plane| reduce::sum(plane) * inv)
        .collect();
    Matrix::from_vec(n, c, data).expect("one value per plane")
}

pub fn global_average_pool_backward<T: Scalar>(input_dims: [usize; 4], grad_out: &Matrix<T>) -> Result<Tensor4<T>> {
    let [n, c, h, w] = input_dims;
    if grad_out.rows() != n || grad_out.cols() != c {
        return Err(shape_err(
            "global_average_pool backward",
            format!("{n}x{c}"),
            format!("{}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let inv = T::one() / T::lit((h * w) as f64);
    let mut grad_in = Tensor4::zeros(input_dims);
    for (plane, &g) in grad_in.data_mut().chunks_exact_mut(h * w).zip(grad_out.data()) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{numeric_grad, random_tensor, rel_error};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window() {
        let x = Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2x2(&x).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn odd_dims_floor() {
        let (y, _) = maxpool2x2(&Tensor4::<f32>::zeros([2, 3, 5, 5])).unwrap();
        assert_eq!(y.dims(), [2, 3, 2, 2]);
        let (y, _) = maxpool2x2(&Tensor4::<f32>::zeros([1, 1, 45, 50])).unwrap();
        assert_eq!((y.height(), y.width()), (22, 25));
    }

    #[test]
    fn rejects_tiny_input() {
        assert!(maxpool2x2(&Tensor4::<f32>::zeros([1, 1, 1, 4])).is_err());
    }

    #[test]
    fn maxpool_gradient_tie_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        // distinct entries spaced far apart relative to the probe step
        let dims = [2, 2, 5, 4];
        let n: usize = dims.iter().product();
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        vals.shuffle(&mut rng);
        let x = Tensor4::from_vec(dims, vals).unwrap();
        let (y, arg) = maxpool2x2(&x).unwrap();
        let proj = random_tensor(y.dims(), &mut rng);
        let gx = maxpool2x2_backward(dims, &arg, &proj).unwrap();
        let num = numeric_grad(x.data(), |v| {
            let t = Tensor4::from_vec(dims, v.to_vec()).unwrap();
            let (y, _) = maxpool2x2(&t).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        });
        assert!(rel_error(gx.data(), &num) < 1e-4);
    }

    #[test]
    fn gap_constant_channel() {
        let x = Tensor4::<f64>::filled([1, 2, 3, 4], 2.5);
        let y = global_average_pool(&x);
        assert_eq!(y.data(), &[2.5, 2.5]);
    }

    #[test]
    fn gap_single_pixel_is_identity() {
        let x = Tensor4::<f64>::from_vec([2, 3, 1, 1], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(global_average_pool(&x).data(), x.data());
    }

    #[test]
    fn gap_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_tensor([2, 3, 3, 2], &mut rng);
        let proj = Matrix::from_vec(2, 3, random_tensor([1, 1, 2, 3], &mut rng).into_data()).unwrap();
        let gx = global_average_pool_backward(x.dims(), &proj).unwrap();
        let num = numeric_grad(x.data(), |v| {
            let t = Tensor4::from_vec(x.dims(), v.to_vec()).unwrap();
            global_average_pool(&t).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        });
        assert!(rel_error(gx.data(), &num) < 1e-4);
    }
}
