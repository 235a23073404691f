use super::Tensor4;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

pub const ELU_ALPHA: f64 = 1.0;

/// `x` for positive inputs, `alpha * (exp(x) - 1)` otherwise.
pub fn elu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let mut y = x.clone();
    elu_inplace(&mut y);
    y
}

pub fn elu_inplace<T: Scalar>(x: &mut Tensor4<T>) {
    let alpha = T::lit(ELU_ALPHA);
    for v in x.data_mut() {
        let neg = alpha * v.min(T::zero()).exp_m1_nonpos();
        *v = if *v > T::zero() { *v } else { neg };
    }
}

/// Gradient w.r.t. the ELU input, computed from the ELU output `y`
/// (`alpha * exp(x) = y + alpha` on the negative branch).
pub fn elu_backward_from_output<T: Scalar>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if y.dims() != grad_out.dims() {
        return Err(shape_err(
            "elu backward",
            format!("{:?}", y.dims()),
            format!("{:?}", grad_out.dims()),
        ));
    }
    let alpha = T::lit(ELU_ALPHA);
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { g * (v + alpha) })
        .collect();
    Tensor4::from_vec(y.dims(), data)
}

/// Gradient w.r.t. the ELU input `x`.
pub fn elu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if x.dims() != grad_out.dims() {
        return Err(shape_err(
            "elu backward",
            format!("{:?}", x.dims()),
            format!("{:?}", grad_out.dims()),
        ));
    }
    let alpha = T::lit(ELU_ALPHA);
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { g * alpha * v.exp() })
        .collect();
    Tensor4::from_vec(x.dims(), data)
}
