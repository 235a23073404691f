use super::{dot, Matrix};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let norm = dot(v, v).sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

/// Gradient w.r.t. the raw vector `v` given the gradient w.r.t. `v / |v|`.
pub fn l2_normalize_backward<T: Scalar>(v: &[T], grad_out: &[T]) -> Result<Vec<T>> {
    if v.len() != grad_out.len() {
        return Err(shape_err("l2_normalize backward", v.len(), grad_out.len()));
    }
    let norm = dot(v, v).sqrt();
    if norm == T::zero() {
        return Err(Error::ZeroVector);
    }
    let inv = T::one() / norm;
    // (g - u (u . g)) / |v| with u = v / |v|
    let ug = dot(v, grad_out) * inv;
    Ok(v.iter()
        .zip(grad_out)
        .map(|(&x, &g)| (g - x * inv * ug) * inv)
        .collect())
}

pub fn l2_normalize_rows<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = Vec::with_capacity(m.data().len());
    for row in m.iter_rows() {
        out.extend(l2_normalize(row)?);
    }
    Matrix::from_vec(m.rows(), m.cols(), out)
}

pub fn l2_normalize_rows_backward<T: Scalar>(raw: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
    if raw.rows() != grad_out.rows() || raw.cols() != grad_out.cols() {
        return Err(shape_err(
            "l2_normalize_rows backward",
            format!("{}x{}", raw.rows(), raw.cols()),
            format!("{}x{}", grad_out.rows(), grad_out.cols()),
        ));
    }
    let mut out = Vec::with_capacity(raw.data().len());
    for (r, g) in raw.iter_rows().zip(grad_out.iter_rows()) {
        out.extend(l2_normalize_backward(r, g)?);
    }
    Matrix::from_vec(raw.rows(), raw.cols(), out)
}
