use crate::error::{Error, Result};
use crate::nn::layers::{join, Linear, Module};
use crate::nn::ops::{softmax_rows_backward_into, softmax_rows_in_place};
use crate::nn::scalar::{gemm, MatMut, MatRef, Scalar};
use crate::nn::tensor::Tensor;

/// Multi-head scaled dot-product self-attention.
///
/// Q, K and V come from one fused `D → 3D` projection laid out as
/// `[Q | K | V]`; head `h` owns columns `h·d_h .. (h+1)·d_h` of each block.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention<F> {
    pub qkv: Linear<F>,
    pub proj: Linear<F>,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    x: Tensor<F>,
    qkv: Tensor<F>,
    /// Row-stochastic attention weights, one `n × n` block per head.
    probs: Vec<F>,
    concat: Tensor<F>,
}

impl<F> AttentionCache<F> {
    /// Attention weights of head `h`, row-major `n × n`.
    pub fn head_weights(&self, h: usize, n: usize) -> &[F] {
        &self.probs[h * n * n..(h + 1) * n * n]
    }
}

impl<F: Scalar> MultiHeadSelfAttention<F> {
    pub fn new(dim: usize, heads: usize, seed: u64, name: &str) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            qkv: Linear::new(dim, 3 * dim, seed, &join(name, "qkv")),
            proj: Linear::new(dim, dim, seed, &join(name, "proj")),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.proj.out_dim()
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, AttentionCache<F>)> {
        let (n, d) = x.dims2();
        if d != self.dim() {
            return Err(Error::dim(
                "attention",
                format!("input width {d}, expected {}", self.dim()),
            ));
        }
        let dh = d / self.heads;
        let scale = F::ONE / F::from_f64(dh as f64).sqrt();
        let qkv = self.qkv.forward(x)?;
        let q = qkv.data();
        let mut probs = vec![F::ZERO; self.heads * n * n];
        let mut concat = Tensor::zeros(&[n, d]);
        for h in 0..self.heads {
            let p = &mut probs[h * n * n..(h + 1) * n * n];
            let qh = MatRef::columns(q, n, 3 * d, h * dh, dh);
            let kh = MatRef::columns(q, n, 3 * d, d + h * dh, dh);
            let vh = MatRef::columns(q, n, 3 * d, 2 * d + h * dh, dh);
            gemm(scale, qh, kh.t(), F::ZERO, MatMut::dense(p, n, n));
            softmax_rows_in_place(p, n);
            gemm(
                F::ONE,
                MatRef::dense(p, n, n),
                vh,
                F::ZERO,
                MatMut::columns(concat.data_mut(), n, d, h * dh, dh),
            );
        }
        let y = self.proj.forward(&concat)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                qkv,
                probs,
                concat,
            },
        ))
    }

    pub fn backward(&mut self, cache: &AttentionCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let (n, d) = cache.x.dims2();
        let dh = d / self.heads;
        let scale = F::ONE / F::from_f64(dh as f64).sqrt();
        let dconcat = self.proj.backward(&cache.concat, dy);
        let q = cache.qkv.data();
        let mut dqkv = Tensor::zeros(&[n, 3 * d]);
        let mut dp = vec![F::ZERO; n * n];
        let mut ds = vec![F::ZERO; n * n];
        for h in 0..self.heads {
            let p = &cache.probs[h * n * n..(h + 1) * n * n];
            let qh = MatRef::columns(q, n, 3 * d, h * dh, dh);
            let kh = MatRef::columns(q, n, 3 * d, d + h * dh, dh);
            let vh = MatRef::columns(q, n, 3 * d, 2 * d + h * dh, dh);
            let doh = MatRef::columns(dconcat.data(), n, d, h * dh, dh);
            // dP = dO·Vᵀ, dV = Pᵀ·dO
            gemm(F::ONE, doh, vh.t(), F::ZERO, MatMut::dense(&mut dp, n, n));
            gemm(
                F::ONE,
                MatRef::dense(p, n, n).t(),
                doh,
                F::ZERO,
                MatMut::columns(dqkv.data_mut(), n, 3 * d, 2 * d + h * dh, dh),
            );
            softmax_rows_backward_into(p, &dp, &mut ds, n);
            // S = scale·Q·Kᵀ  ⇒  dQ = scale·dS·K, dK = scale·dSᵀ·Q
            gemm(
                scale,
                MatRef::dense(&ds, n, n),
                kh,
                F::ZERO,
                MatMut::columns(dqkv.data_mut(), n, 3 * d, h * dh, dh),
            );
            gemm(
                scale,
                MatRef::dense(&ds, n, n).t(),
                qh,
                F::ZERO,
                MatMut::columns(dqkv.data_mut(), n, 3 * d, d + h * dh, dh),
            );
        }
        self.qkv.backward(&cache.x, &dqkv)
    }
}

impl<F: Scalar> Module<F> for MultiHeadSelfAttention<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        self.proj.visit_params(&join(prefix, "proj"), f);
        self.qkv.visit_params(&join(prefix, "qkv"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        self.proj.visit_params_mut(&join(prefix, "proj"), f);
        self.qkv.visit_params_mut(&join(prefix, "qkv"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::{param_rng, trunc_normal};

    fn random_input(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let v = trunc_normal(&mut param_rng(seed, "input"), n * d, 1.0);
        Tensor::from_vec(&[n, d], v).unwrap()
    }

    #[test]
    fn rejects_indivisible_width() {
        assert!(matches!(
            MultiHeadSelfAttention::<f32>::new(10, 3, 0, "a"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut att = MultiHeadSelfAttention::<f64>::new(6, 2, 1, "a").unwrap();
        att.visit_params_mut("", &mut |_, t| t.data_mut().fill(0.0));
        let (y, _) = att.forward(&random_input(5, 6, 2)).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_token_attends_to_itself() {
        let att = MultiHeadSelfAttention::<f64>::new(6, 3, 1, "a").unwrap();
        let (_, cache) = att.forward(&random_input(1, 6, 3)).unwrap();
        for h in 0..3 {
            assert_eq!(cache.head_weights(h, 1), &[1.0]);
        }
    }

    #[test]
    fn row_permutation_is_equivariant() {
        let (n, d) = (4, 6);
        let att = MultiHeadSelfAttention::<f64>::new(d, 2, 5, "a").unwrap();
        let x = random_input(n, d, 6);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Tensor::zeros(&[n, d]);
        for (i, &src) in perm.iter().enumerate() {
            xp.row_mut(i).copy_from_slice(x.row(src));
        }
        let (y, _) = att.forward(&x).unwrap();
        let (yp, _) = att.forward(&xp).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in yp.row(i).iter().zip(y.row(src)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
