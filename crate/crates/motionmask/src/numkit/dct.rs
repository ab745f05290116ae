//! Orthonormal DCT-II along the leading (time) axis of a `[T, P]` matrix.
//! The basis is orthonormal, so the inverse transform is a multiply by the
//! transposed matrix.

use super::{kernels, Tensor};
use std::f64::consts::PI;

/// Orthonormal DCT-II matrix of size `[t, t]`; rows are the basis vectors.
pub fn dct_matrix(t: usize) -> Tensor {
    assert!(t >= 1, "dct_matrix needs T >= 1");
    let mut data = vec![0.0; t * t];
    let norm0 = (1.0 / t as f64).sqrt();
    let norm = (2.0 / t as f64).sqrt();
    for k in 0..t {
        let c = if k == 0 { norm0 } else { norm };
        for i in 0..t {
            data[k * t + i] = c * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * t as f64)).cos();
        }
    }
    Tensor::new(vec![t, t], data).expect("square matrix")
}

/// Frequency-domain representation of `x: [T, P]` (DCT applied per column).
pub fn dct_apply(x: &[f64], t: usize, p: usize) -> Vec<f64> {
    let m = dct_matrix(t);
    kernels::matmul_2d(m.data(), x, t, t, p)
}

/// Inverse of [`dct_apply`]: multiply by the transposed basis.
pub fn idct_apply(freq: &[f64], t: usize, p: usize) -> Vec<f64> {
    let m = dct_matrix(t);
    // M^T . F without materializing the transpose
    let mut out = vec![0.0; t * p];
    for k in 0..t {
        let frow = &freq[k * p..(k + 1) * p];
        for i in 0..t {
            let w = m.data()[k * t + i];
            if w == 0.0 {
                continue;
            }
            let orow = &mut out[i * p..(i + 1) * p];
            for (o, f) in orow.iter_mut().zip(frow) {
                *o += w * f;
            }
        }
    }
    out
}
