//! Inner loops shared by forward and backward ops.
//!
//! Every reduction runs in a fixed sequential order: the k-loop of a matmul
//! is the outer loop so each output element accumulates along an independent
//! chain, which the compiler can vectorize without reassociating. Results
//! are therefore bitwise identical run to run on a fixed build.

use crate::tensor::Scalar;

/// out += a @ b, with a: [m, k], b: [k, n], out: [m, n], all row-major.
pub fn matmul_acc<E: Scalar>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
}

/// Transpose a [rows, cols] matrix into a [cols, rows] buffer.
pub fn transpose_2d<E: Scalar>(src: &[E], dst: &mut [E], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        let srow = &src[r * cols..(r + 1) * cols];
        for (c, &v) in srow.iter().enumerate() {
            dst[c * rows + r] = v;
        }
    }
}

/// Numerically-stable sigmoid: never evaluates exp of a large positive value.
#[inline]
pub fn sigmoid<E: Scalar>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

/// Stable softplus ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|).
#[inline]
pub fn softplus<E: Scalar>(x: E) -> E {
    x.maximum(E::ZERO) + (E::ONE + (-x.abs()).exp()).ln()
}

/// In-place softmax over contiguous rows of length `width`, max-subtracted.
pub fn softmax_rows<E: Scalar>(data: &mut [E], width: usize) {
    debug_assert_eq!(data.len() % width, 0);
    for row in data.chunks_mut(width) {
        let mut m = row[0];
        for &v in row.iter() {
            m = m.maximum(v);
        }
        let mut sum = E::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Normalize contiguous rows to zero mean, unit variance. Returns per-row
/// (mean, 1/sqrt(var + eps)) pairs for the backward pass.
pub fn layer_norm_rows<E: Scalar>(data: &mut [E], width: usize, eps: f64) -> Vec<(E, E)> {
    debug_assert_eq!(data.len() % width, 0);
    let mut aux = Vec::with_capacity(data.len() / width);
    let inv_w = E::from_f64(1.0 / width as f64);
    for row in data.chunks_mut(width) {
        let mut mean = E::ZERO;
        for &v in row.iter() {
            mean += v;
        }
        mean = mean * inv_w;
        let mut var = E::ZERO;
        for &v in row.iter() {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_w;
        let rstd = E::ONE / (var + E::from_f64(eps)).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * rstd;
        }
        aux.push((mean, rstd));
    }
    aux
}
