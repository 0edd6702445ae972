//! Forward kernels shared by the differentiable graph and by callers that
//! only need values.
//!
//! All kernels are pure: they read their inputs and allocate a fresh output.
//! Every public kernel rejects non-finite results.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Added to the per-row variance before taking the square root.
pub const LAYER_NORM_EPS: f64 = 1e-6;

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

/// `a` (n×k) times `b` (k×m).
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let (k2, m) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * m];
    gemm_nn(a.data(), b.data(), &mut out, n, k, m);
    check_finite("matmul", Tensor::new(vec![n, m], out)?)
}

/// out (n×m) += a (n×k) · b (k×m)
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out (n×m) += a (n×k) · bᵀ where b is (m×k)
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * m + j] += s;
        }
    }
}

/// out (k×m) += aᵀ · b where a is (n×k) and b is (n×m)
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let b_row = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    expect_rank("transpose", a, 2)?;
    let (n, m) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = src[i * m + j];
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Softmax along `axis`, using max subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(TensorError::InvalidAxis {
            op: "softmax",
            axis,
            rank: x.rank(),
        });
    }
    if !x.is_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let shape = x.shape();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * extent + j) * inner + i;
            let max = (0..extent)
                .map(|j| src[idx(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..extent {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..extent {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Row-wise softmax of a matrix where columns with `keep[j] == false` get
/// zero weight. A row with every column masked is all zeros.
pub fn masked_softmax_rows(x: &Tensor, keep: Option<&[bool]>) -> Result<Tensor> {
    expect_rank("masked_softmax_rows", x, 2)?;
    let (n, m) = (x.shape()[0], x.shape()[1]);
    if let Some(k) = keep {
        if k.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax_rows",
                left: x.shape().to_vec(),
                right: vec![k.len()],
            });
        }
    }
    let allowed = |j: usize| keep.is_none_or(|k| k[j]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = x.row(i);
        let max = (0..m)
            .filter(|&j| allowed(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for j in (0..m).filter(|&j| allowed(j)) {
            let e = (row[j] - max).exp();
            out[i * m + j] = e;
            total += e;
        }
        for v in &mut out[i * m..(i + 1) * m] {
            *v /= total;
        }
    }
    check_finite("masked_softmax_rows", Tensor::new(vec![n, m], out)?)
}

/// Per-row statistics kept for the backward pass.
pub(crate) struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LayerNormCache)> {
    expect_rank("layer_norm", x, 2)?;
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut normalized = Tensor::zeros(&[n, d]);
    let mut out = Tensor::zeros(&[n, d]);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(i);
        for (o, v) in nrow.iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = normalized.at2(i, j) * gain.data()[j] + bias.data()[j];
        }
    }
    let out = check_finite("layer_norm", out)?;
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Normalizes each row of `x` to zero mean and unit variance, then applies
/// the per-feature `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    layer_norm_forward(x, gain, bias).map(|(y, _)| y)
}

/// Same-length 1-d convolution over the rows of `x` (N×C_in) with a kernel of
/// shape `[width, C_in, C_out]` and bias `[C_out]`. Positions outside the
/// sequence read as zero.
pub fn conv1d(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank("conv1d", x, 2)?;
    expect_rank("conv1d", kernel, 3)?;
    let (n, cin) = (x.shape()[0], x.shape()[1]);
    let (width, kin, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if width % 2 == 0 {
        return Err(TensorError::EvenKernelWidth(width));
    }
    if kin != cin || bias.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            left: x.shape().to_vec(),
            right: kernel.shape().to_vec(),
        });
    }
    let half = width / 2;
    let mut out = vec![0.0; n * cout];
    for i in 0..n {
        out[i * cout..(i + 1) * cout].copy_from_slice(bias.data());
    }
    for tap in 0..width {
        let w = &kernel.data()[tap * cin * cout..(tap + 1) * cin * cout];
        // output row i reads input row i + tap - half
        let lo = half.saturating_sub(tap);
        let hi = (n + half).saturating_sub(tap).min(n);
        if lo >= hi {
            continue;
        }
        let src_start = lo + tap - half;
        let rows = hi - lo;
        gemm_nn(
            &x.data()[src_start * cin..(src_start + rows) * cin],
            w,
            &mut out[lo * cout..hi * cout],
            rows,
            cin,
            cout,
        );
    }
    check_finite("conv1d", Tensor::new(vec![n, cout], out)?)
}

/// `log Σ exp(x)` over a slice, with max subtraction.
pub fn logsumexp_slice(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(TensorError::EmptyInput { op: "logsumexp" });
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(TensorError::NonFinite { op: "logsumexp" });
    }
    let total: f64 = xs.iter().map(|v| (v - max).exp()).sum();
    Ok(max + total.ln())
}

/// `log Σ exp` over every element of `xs`.
pub fn logsumexp(xs: &Tensor) -> Result<f64> {
    logsumexp_slice(xs.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let c = matmul(&Tensor::identity(2), &a).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn matmul_hand_expansion() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 1])).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![4, 1],
            }
        );
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 1]"));
    }

    #[test]
    fn softmax_symmetric_and_shifted() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1000.0, 1000.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let s = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]), 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (k, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((s.data()[k] - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_along_first_axis_of_matrix() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]);
        let s = softmax(&x, 0).unwrap();
        assert!((s.at2(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.at2(0, 1) + s.at2(1, 1) - 1.0).abs() < 1e-15);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&Tensor::vector(vec![f64::NAN, 0.0]), 0).is_err());
    }

    #[test]
    fn masked_softmax_ignores_masked_columns() {
        let x = Tensor::from_rows(&[vec![5.0, 1.0, 1.0]]);
        let s = masked_softmax_rows(&x, Some(&[false, true, true])).unwrap();
        assert_eq!(s.data(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::filled(&[1, 4], 3.0);
        let y = layer_norm(&x, &Tensor::filled(&[4], 1.0), &Tensor::zeros(&[4])).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_two_points() {
        let x = Tensor::from_rows(&[vec![1.0, 3.0]]);
        let y = layer_norm(&x, &Tensor::filled(&[2], 1.0), &Tensor::zeros(&[2])).unwrap();
        // variance 1, so the epsilon only perturbs the sixth decimal
        assert!((y.data()[0] + 1.0).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_fn(&[6, 2], |i| i as f64 * 0.5 - 1.0);
        let mut k = Tensor::zeros(&[5, 2, 2]);
        // center tap is index 2
        k.data_mut()[2 * 4] = 1.0;
        k.data_mut()[2 * 4 + 3] = 1.0;
        let y = conv1d(&x, &k, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn width_one_conv_is_affine_map() {
        let x = Tensor::from_fn(&[4, 3], |i| (i as f64).sin());
        let w = Tensor::from_fn(&[3, 2], |i| (i as f64 * 0.7).cos());
        let b = Tensor::vector(vec![0.1, -0.2]);
        let y = conv1d(&x, &w.reshape(&[1, 3, 2]).unwrap(), &b).unwrap();
        let mut expected = matmul(&x, &w).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                expected.row_mut(i)[j] += b.data()[j];
            }
        }
        assert!(y.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn conv_rejects_even_width() {
        let err = conv1d(
            &Tensor::zeros(&[3, 1]),
            &Tensor::zeros(&[4, 1, 1]),
            &Tensor::zeros(&[1]),
        );
        assert_eq!(err.unwrap_err(), TensorError::EvenKernelWidth(4));
    }

    #[test]
    fn conv_receptive_field() {
        let n = 9;
        let x = Tensor::from_fn(&[n, 2], |i| ((i * 7) % 5) as f64 - 2.0);
        let k = Tensor::from_fn(&[5, 2, 3], |i| ((i * 3) % 7) as f64 * 0.1 - 0.3);
        let b = Tensor::zeros(&[3]);
        let base = conv1d(&x, &k, &b).unwrap();
        let i = 3;
        let mut perturbed = x.clone();
        perturbed.row_mut(i + 3)[0] += 10.0;
        let y = conv1d(&perturbed, &k, &b).unwrap();
        assert_eq!(base.row(i), y.row(i));
        // i + 2 is inside the window
        let mut perturbed = x.clone();
        perturbed.row_mut(i + 2)[0] += 10.0;
        let y = conv1d(&perturbed, &k, &b).unwrap();
        assert_ne!(base.row(i), y.row(i));
    }

    #[test]
    fn logsumexp_examples() {
        assert_eq!(logsumexp_slice(&[4.25]).unwrap(), 4.25);
        let direct = (1f64.exp() + 2f64.exp()).ln();
        assert!((logsumexp_slice(&[1.0, 2.0]).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 2.3133).abs() < 1e-4);
        let shifted = logsumexp_slice(&[1000.0, 1001.0]).unwrap();
        assert!((shifted - (1000.0 + direct - 1.0)).abs() < 1e-12);
        assert!((shifted - 1001.3133).abs() < 1e-4);
        assert!(logsumexp_slice(&[]).is_err());
    }
}
