//! Dense row-major kernels used by the models. Loops are written so the
//! inner dimension is contiguous.

/// `y += alpha * x`.
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[i, :] = bias + Σ_k input[i, k] * w[k, :]` for an `in × out` weight
/// matrix. Zero inputs are skipped, which pays off after ReLU and dropout.
pub fn affine_forward(input: &[f64], rows: usize, w: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_out = bias.len();
    let n_in = w.len() / n_out;
    debug_assert_eq!(input.len(), rows * n_in);
    debug_assert_eq!(out.len(), rows * n_out);
    for i in 0..rows {
        let row = &mut out[i * n_out..(i + 1) * n_out];
        row.copy_from_slice(bias);
        for (k, &v) in input[i * n_in..(i + 1) * n_in].iter().enumerate() {
            if v != 0.0 {
                axpy(row, v, &w[k * n_out..(k + 1) * n_out]);
            }
        }
    }
}

/// Accumulates `dw += inputᵀ dout` and `dbias += Σ_i dout[i, :]`.
pub fn affine_backward_params(input: &[f64], rows: usize, dout: &[f64], dw: &mut [f64], dbias: &mut [f64]) {
    let n_out = dbias.len();
    let n_in = dw.len() / n_out;
    for i in 0..rows {
        let g = &dout[i * n_out..(i + 1) * n_out];
        axpy(dbias, 1.0, g);
        for (k, &v) in input[i * n_in..(i + 1) * n_in].iter().enumerate() {
            if v != 0.0 {
                axpy(&mut dw[k * n_out..(k + 1) * n_out], v, g);
            }
        }
    }
}

/// `din[i, k] = Σ_j dout[i, j] w[k, j]`, only where `keep[i, k]` is nonzero
/// (other entries are left at zero).
pub fn affine_backward_input(dout: &[f64], rows: usize, w: &[f64], keep: &[f64], din: &mut [f64]) {
    let n_in = keep.len() / rows;
    let n_out = w.len() / n_in;
    for i in 0..rows {
        let g = &dout[i * n_out..(i + 1) * n_out];
        for k in 0..n_in {
            din[i * n_in + k] = if keep[i * n_in + k] != 0.0 {
                dot(g, &w[k * n_out..(k + 1) * n_out])
            } else {
                0.0
            };
        }
    }
}
