use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dot, Matrix};

/// `s(x, y) = x . y`, the cosine similarity of unit vectors.
pub fn cosine_score<T: Scalar>(x: &[T], y: &[T]) -> T {
    dot(x, y)
}

/// Score matrix `S[j][k] = s(x_j, y_k)`.
pub fn score_matrix<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<Matrix<T>> {
    if x.cols() != y.cols() {
        return Err(shape_err("score matrix", x.cols(), y.cols()));
    }
    // one dot product per entry, so equal rows give bit-identical scores
    let data = x.iter_rows().flat_map(|xr| y.iter_rows().map(move |yr| dot(xr, yr))).collect();
    Matrix::from_vec(x.rows(), y.rows(), data)
}

/// Pairwise ranking loss and its gradients w.r.t. both embedding batches.
#[derive(Clone, Debug)]
pub struct RankingLoss<T> {
    /// Sum of all hinge terms.
    pub loss: T,
    pub grad_x: Matrix<T>,
    pub grad_y: Matrix<T>,
    /// Hinge terms with a positive value.
    pub active_terms: usize,
}

/// Every hinge term `alpha - s(x_j, y_j) + s(x_j, y_k)` for `k != j`, as
/// `(j, k, value)` before clamping. With `symmetric`, audio anchors add the
/// terms `alpha - s(x_j, y_j) + s(x_k, y_j)`.
pub fn hinge_terms<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, margin: T, symmetric: bool) -> Result<Vec<(usize, usize, T)>> {
    check_batch(x, y)?;
    let s = score_matrix(x, y)?;
    let n = x.rows();
    let mut out = Vec::with_capacity(n * (n - 1) * if symmetric { 2 } else { 1 });
    for j in 0..n {
        let pos = s.row(j)[j];
        for k in (0..n).filter(|&k| k != j) {
            out.push((j, k, margin + (s.row(j)[k] - pos)));
        }
    }
    if symmetric {
        for j in 0..n {
            let pos = s.row(j)[j];
            for k in (0..n).filter(|&k| k != j) {
                out.push((j, k, margin + (s.row(k)[j] - pos)));
            }
        }
    }
    Ok(out)
}

fn check_batch<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<()> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(shape_err(
            "ranking batch",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    if x.rows() < 2 {
        return Err(Error::InvalidArgument("ranking batch needs at least two pairs".into()));
    }
    Ok(())
}

/// `sum_j sum_{k != j} max(0, alpha - s(x_j, y_j) + s(x_j, y_k))` with image
/// anchors; `symmetric` adds the same sum with audio anchors. Rows of `x`
/// and `y` are matching pairs and are expected to be unit norm.
pub fn ranking_loss<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>, margin: T, symmetric: bool) -> Result<RankingLoss<T>> {
    check_batch(x, y)?;
    let n = x.rows();
    let s = score_matrix(x, y)?;
    // gradient of the loss w.r.t. the score matrix
    let mut gs = Matrix::zeros(n, n);
    let mut loss = T::zero();
    let mut active = 0;
    for j in 0..n {
        let pos = s.row(j)[j];
        for k in (0..n).filter(|&k| k != j) {
            let h = margin + (s.row(j)[k] - pos);
            if h > T::zero() {
                loss += h;
                active += 1;
                gs.row_mut(j)[j] -= T::one();
                gs.row_mut(j)[k] += T::one();
            }
        }
        if symmetric {
            for k in (0..n).filter(|&k| k != j) {
                let h = margin + (s.row(k)[j] - pos);
                if h > T::zero() {
                    loss += h;
                    active += 1;
                    gs.row_mut(j)[j] -= T::one();
                    gs.row_mut(k)[j] += T::one();
                }
            }
        }
    }
    let d = x.cols();
    let mut grad_x = Matrix::zeros(n, d);
    let mut grad_y = Matrix::zeros(n, d);
    // dX = G Y, dY = G^T X
    T::gemm(n, n, d, T::one(), gs.data(), (n, 1), y.data(), (d, 1), T::zero(), grad_x.data_mut(), (d, 1));
    T::gemm(n, n, d, T::one(), gs.data(), (1, n), x.data(), (d, 1), T::zero(), grad_y.data_mut(), (d, 1));
    Ok(RankingLoss {
        loss,
        grad_x,
        grad_y,
        active_terms: active,
    })
}
