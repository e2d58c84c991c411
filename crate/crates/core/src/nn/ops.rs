//! Differentiable primitives with hand-derived backward rules.
//!
//! Every forward function is pure; the matching `*_backward` takes the upstream
//! gradient together with whatever the forward pass produced and returns the
//! gradients of the inputs.

use crate::error::{Error, Result};
use crate::nn::scalar::{gemm, Scalar};
use crate::nn::tensor::Tensor;

fn require_rank2<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::dim(op, format!("expected rank 2, got {other:?}"))),
    }
}

/// `A[M×K] · B[K×N]`.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = require_rank2("matmul", a)?;
    let (k2, n) = require_rank2("matmul", b)?;
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("inner extents disagree: {m}x{k} · {k2}x{n}"),
        ));
    }
    let mut c = Tensor::zeros(&[m, n]);
    gemm(F::ONE, a.as_mat(), b.as_mat(), F::ZERO, c.as_mat_mut());
    Ok(c)
}

/// Returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    dc: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let (m, k) = a.dims2();
    let (_, n) = b.dims2();
    assert_eq!(dc.dims2(), (m, n), "matmul_backward upstream shape");
    let mut da = Tensor::zeros(&[m, k]);
    let mut db = Tensor::zeros(&[k, n]);
    gemm(F::ONE, dc.as_mat(), b.as_mat().t(), F::ZERO, da.as_mat_mut());
    gemm(F::ONE, a.as_mat().t(), dc.as_mat(), F::ZERO, db.as_mat_mut());
    (da, db)
}

/// `(outer, len, inner)` decomposition of a shape around `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax<F: Scalar>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    if axis >= x.rank() {
        return Err(Error::dim(
            "softmax",
            format!("axis {axis} out of range for rank {}", x.rank()),
        ));
    }
    let (outer, len, inner) = axis_layout(x.shape(), axis);
    let mut y = x.clone();
    let data = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            softmax_strided(data, base, len, inner);
        }
    }
    Ok(Tensor::from_vec(x.shape(), y.into_data()).expect("same shape"))
}

/// In-place softmax of `data[base + j*stride]` for `j < len`.
pub(crate) fn softmax_strided<F: Scalar>(data: &mut [F], base: usize, len: usize, stride: usize) {
    let mut max = data[base];
    for j in 1..len {
        max = max.max(data[base + j * stride]);
    }
    let mut total = F::ZERO;
    for j in 0..len {
        let e = (data[base + j * stride] - max).exp();
        data[base + j * stride] = e;
        total += e;
    }
    let inv = F::ONE / total;
    for j in 0..len {
        data[base + j * stride] *= inv;
    }
}

/// In-place softmax over each row of a dense `rows × cols` buffer.
pub(crate) fn softmax_rows_in_place<F: Scalar>(data: &mut [F], cols: usize) {
    for row in data.chunks_exact_mut(cols) {
        softmax_strided(row, 0, cols, 1);
    }
}

/// Given `y = softmax(x)` and `dy`, returns `dx = y ⊙ (dy − Σ dy⊙y)` along `axis`.
pub fn softmax_backward<F: Scalar>(y: &Tensor<F>, dy: &Tensor<F>, axis: usize) -> Tensor<F> {
    assert_eq!(y.shape(), dy.shape(), "softmax_backward shapes");
    let (outer, len, inner) = axis_layout(y.shape(), axis);
    let mut dx = Tensor::zeros(y.shape());
    let (yd, dyd) = (y.data(), dy.data());
    let dxd = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = F::ZERO;
            for j in 0..len {
                let idx = base + j * inner;
                dot += yd[idx] * dyd[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dxd[idx] = yd[idx] * (dyd[idx] - dot);
            }
        }
    }
    dx
}

/// Row-wise softmax backward over dense buffers, writing into `dx`.
pub(crate) fn softmax_rows_backward_into<F: Scalar>(y: &[F], dy: &[F], dx: &mut [F], cols: usize) {
    for ((yr, dyr), dxr) in y
        .chunks_exact(cols)
        .zip(dy.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
    {
        let dot: F = yr.iter().zip(dyr).map(|(a, b)| *a * *b).sum();
        for ((d, yv), dyv) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = *yv * (*dyv - dot);
        }
    }
}

/// Normalized activations and inverse standard deviations kept for backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    pub xhat: Vec<F>,
    pub rstd: Vec<F>,
    pub width: usize,
}

/// Normalizes every length-`D` row over the last axis, then applies `gamma`, `beta`.
pub fn layer_norm<F: Scalar>(
    x: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: F,
) -> Result<(Tensor<F>, LayerNormCache<F>)> {
    let d = *x.shape().last().expect("rank >= 1");
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::dim(
            "layer_norm",
            format!(
                "last extent {d} vs gamma {} / beta {}",
                gamma.numel(),
                beta.numel()
            ),
        ));
    }
    let rows = x.numel() / d;
    let inv_d = F::ONE / F::from_f64(d as f64);
    let mut y = Tensor::zeros(x.shape());
    let mut xhat = vec![F::ZERO; x.numel()];
    let mut rstd = vec![F::ZERO; rows];
    let (g, b) = (gamma.data(), beta.data());
    for r in 0..rows {
        let xr = &x.data()[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<F>() * inv_d;
        let var = xr
            .iter()
            .map(|v| (*v - mean) * (*v - mean))
            .sum::<F>()
            * inv_d;
        let rs = F::ONE / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let yr = &mut y.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            xh[j] = (xr[j] - mean) * rs;
            yr[j] = xh[j] * g[j] + b[j];
        }
    }
    Ok((
        y,
        LayerNormCache {
            xhat,
            rstd,
            width: d,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<F: Scalar>(
    cache: &LayerNormCache<F>,
    gamma: &Tensor<F>,
    dy: &Tensor<F>,
) -> (Tensor<F>, Vec<F>, Vec<F>) {
    let d = cache.width;
    let rows = cache.rstd.len();
    let inv_d = F::ONE / F::from_f64(d as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![F::ZERO; d];
    let mut dbeta = vec![F::ZERO; d];
    let g = gamma.data();
    let mut dxhat = vec![F::ZERO; d];
    for r in 0..rows {
        let dyr = &dy.data()[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut sum_dxhat = F::ZERO;
        let mut sum_dxhat_xhat = F::ZERO;
        for j in 0..d {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xh[j];
        }
        let rs = cache.rstd[r];
        let dxr = &mut dx.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            dxr[j] = rs * (dxhat[j] - inv_d * sum_dxhat - xh[j] * inv_d * sum_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu_scalar<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    half * x * (F::ONE + (x * F::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    let cdf = half * (F::ONE + (x * F::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = F::from_f64(INV_SQRT_2PI) * (-half * x * x).exp();
    cdf + x * pdf
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let data = x.data().iter().map(|v| gelu_scalar(*v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub fn gelu_backward<F: Scalar>(x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(v, g)| gelu_grad_scalar(*v) * *g)
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Loss value plus gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy<F> {
    pub loss: F,
    pub dlogits: Tensor<F>,
}

/// Mean over all `T` rows of `−log softmax(logits)[t, target_t]`.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, targets: &[usize]) -> Result<CrossEntropy<F>> {
    cross_entropy_prefix(logits, targets, targets.len())
}

/// Cross entropy averaged over the first `positions` rows only; rows past it
/// receive zero gradient.
pub fn cross_entropy_prefix<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[usize],
    positions: usize,
) -> Result<CrossEntropy<F>> {
    let (t, k) = require_rank2("cross_entropy", logits)?;
    if targets.len() != t {
        return Err(Error::dim(
            "cross_entropy",
            format!("{t} logit rows but {} targets", targets.len()),
        ));
    }
    if positions == 0 || positions > t {
        return Err(Error::dim(
            "cross_entropy",
            format!("positions {positions} outside 1..={t}"),
        ));
    }
    if let Some(&id) = targets.iter().find(|&&id| id >= k) {
        return Err(Error::Label { id, classes: k });
    }
    let mut probs = logits.data()[..positions * k].to_vec();
    softmax_rows_in_place(&mut probs, k);
    let scale = F::ONE / F::from_f64(positions as f64);
    let mut loss = F::ZERO;
    let mut dlogits = Tensor::zeros(&[t, k]);
    let dd = dlogits.data_mut();
    for (row, &target) in targets.iter().enumerate().take(positions) {
        // log-sum-exp form keeps the loss finite when the target prob underflows.
        let lr = &logits.data()[row * k..(row + 1) * k];
        let max = lr.iter().copied().fold(lr[0], Scalar::max);
        let lse = lr.iter().map(|v| (*v - max).exp()).sum::<F>().ln() + max;
        loss += lse - lr[target];
        for j in 0..k {
            let p = probs[row * k + j];
            let onehot = if j == target { F::ONE } else { F::ZERO };
            dd[row * k + j] = (p - onehot) * scale;
        }
    }
    Ok(CrossEntropy {
        loss: loss * scale,
        dlogits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let eye = t2(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let b = t2(3, 2, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);

        let a = t2(2, 2, &[1., 2., 3., 4.]);
        let c = t2(2, 1, &[0., 1.]);
        assert_eq!(matmul(&a, &c).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = t2(2, 3, &[0.; 6]);
        let b = t2(2, 3, &[0.; 6]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sum_of_product_gradient_is_broadcast_column_sums() {
        // d/dA sum(A·B) = 1·Bᵀ: every row equals the row-sums of B.
        let a = t2(2, 3, &[0.3, -1.0, 2.0, 0.5, 0.1, -0.7]);
        let b = t2(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let ones = Tensor::full(&[2, 2], 1.0);
        let (da, _) = matmul_backward(&a, &b, &ones);
        assert_eq!(da.data(), &[3., 7., 11., 3., 7., 11.]);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let y = softmax(&Tensor::<f64>::zeros(&[3]), 0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax(&Tensor::from_vec(&[2], vec![1000.0f32, 0.0]).unwrap(), 0).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-6);
        assert!(y.data()[1] < 1e-6);
    }

    #[test]
    fn softmax_axis_zero_normalizes_columns() {
        let x = t2(2, 3, &[1., 2., 3., -1., 0., 5.]);
        let y = softmax(&x, 0).unwrap();
        for c in 0..3 {
            let s = y.data()[c] + y.data()[3 + c];
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = t2(1, 4, &[2.5; 4]);
        let g = Tensor::full(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let (y, _) = layer_norm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_norm_two_values() {
        let x = t2(1, 2, &[1., 3.]);
        let g = Tensor::full(&[2], 1.0);
        let b = Tensor::zeros(&[2]);
        let (y, _) = layer_norm(&x, &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(1.0f64) - 0.841_344_746).abs() < 1e-4);
        assert!((gelu_scalar(20.0f64) - 20.0).abs() < 1e-9);
        assert!(gelu_scalar(-20.0f64).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_is_log_k() {
        let logits = Tensor::<f64>::zeros(&[4, 38]);
        let ce = cross_entropy(&logits, &[0, 5, 37, 1]).unwrap();
        assert!((ce.loss - 38f64.ln()).abs() < 1e-12);
        assert!((ce.loss - 3.6376).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_vanishes_with_confident_logit() {
        let mut prev = f64::INFINITY;
        for mag in [1.0, 5.0, 20.0, 100.0] {
            let mut logits = Tensor::<f64>::zeros(&[1, 5]);
            logits.data_mut()[2] = mag;
            let ce = cross_entropy(&logits, &[2]).unwrap();
            assert!(ce.loss < prev);
            prev = ce.loss;
        }
        assert!(prev < 1e-30);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::<f64>::zeros(&[2, 5]);
        assert!(matches!(
            cross_entropy(&logits, &[0, 5]),
            Err(Error::Label { id: 5, classes: 5 })
        ));
    }
}
