//! Adaptive addressing and aggregation (A³) modules and classification heads.
//!
//! Each granularity owns one A³ module and one head with independent
//! parameters. The A³ module turns the `(N+1)×D` encoder output into `T`
//! aggregated tokens:
//!
//! ```text
//! A  = z_L·α + b_α           (N+1)×T  per-token attention logits
//! M  = softmax over tokens    T×(N+1)  row i is mᵢᵀ
//! z̃ = z_L·U + b_U            (N+1)×D
//! Y  = M·z̃                   T×D      yᵢ = mᵢᵀ·z̃
//! G  = Y·Wᵀ + b_W            T×K
//! ```

use crate::error::{Error, Result};
use crate::granularity::Granularity;
use crate::nn::init::{param_rng, trunc_normal, INIT_STD};
use crate::nn::ops::{softmax_rows_backward_into, softmax_rows_in_place};
use crate::nn::{gemm, join, Linear, MatMut, MatRef, Module, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct A3Module<F> {
    /// α: `D → T`, one 1×1 "group convolution" per output slot.
    pub alpha: Linear<F>,
    /// U: `D → D` feature map.
    pub u: Linear<F>,
}

/// Row-stochastic `T × (N+1)` spatial attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMasks<F>(pub Tensor<F>);

impl<F: Scalar> AttentionMasks<F> {
    pub fn slots(&self) -> usize {
        self.0.rows()
    }

    pub fn tokens(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[F] {
        self.0.row(i)
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct A3Cache<F> {
    z: Tensor<F>,
    features: Tensor<F>,
    masks: Tensor<F>,
}

impl<F: Scalar> A3Module<F> {
    pub fn new(dim: usize, slots: usize, seed: u64, name: &str) -> Self {
        Self {
            alpha: Linear::new(dim, slots, seed, &join(name, "alpha")),
            u: Linear::new(dim, dim, seed, &join(name, "u")),
        }
    }

    pub fn slots(&self) -> usize {
        self.alpha.out_dim()
    }

    pub fn forward(&self, z: &Tensor<F>) -> Result<(Tensor<F>, AttentionMasks<F>, A3Cache<F>)> {
        let (n1, _) = z.dims2();
        let t = self.slots();
        let logits = self.alpha.forward(z)?;
        // Transpose to T×(N+1) so each slot's distribution over tokens is a row.
        let mut masks = Tensor::zeros(&[t, n1]);
        {
            let md = masks.data_mut();
            let ld = logits.data();
            for tok in 0..n1 {
                for slot in 0..t {
                    md[slot * n1 + tok] = ld[tok * t + slot];
                }
            }
            softmax_rows_in_place(md, n1);
        }
        let features = self.u.forward(z)?;
        let d = features.cols();
        let mut y = Tensor::zeros(&[t, d]);
        gemm(F::ONE, masks.as_mat(), features.as_mat(), F::ZERO, y.as_mat_mut());
        let cache = A3Cache {
            z: z.clone_values(),
            features,
            masks: masks.clone(),
        };
        Ok((y, AttentionMasks(masks), cache))
    }

    /// Accumulates parameter gradients and returns dL/dz_L.
    pub fn backward(&mut self, cache: &A3Cache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let (t, n1) = cache.masks.dims2();
        let d = cache.features.cols();
        let mut dmasks = vec![F::ZERO; t * n1];
        gemm(
            F::ONE,
            dy.as_mat(),
            cache.features.as_mat().t(),
            F::ZERO,
            MatMut::dense(&mut dmasks, t, n1),
        );
        let mut dfeatures = Tensor::zeros(&[n1, d]);
        gemm(
            F::ONE,
            cache.masks.as_mat().t(),
            dy.as_mat(),
            F::ZERO,
            dfeatures.as_mat_mut(),
        );
        let mut dscores = vec![F::ZERO; t * n1];
        softmax_rows_backward_into(cache.masks.data(), &dmasks, &mut dscores, n1);
        let mut dlogits = Tensor::zeros(&[n1, t]);
        {
            let dl = dlogits.data_mut();
            for slot in 0..t {
                for tok in 0..n1 {
                    dl[tok * t + slot] = dscores[slot * n1 + tok];
                }
            }
        }
        let mut dz = self.alpha.backward(&cache.z, &dlogits);
        let dz_u = self.u.backward(&cache.z, &dfeatures);
        for (a, b) in dz.data_mut().iter_mut().zip(dz_u.data()) {
            *a += *b;
        }
        dz
    }
}

impl<F: Scalar> Module<F> for A3Module<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        self.alpha.visit_params(&join(prefix, "alpha"), f);
        self.u.visit_params(&join(prefix, "u"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        self.alpha.visit_params_mut(&join(prefix, "alpha"), f);
        self.u.visit_params_mut(&join(prefix, "u"), f);
    }
}

/// Classification head `G = Y·Wᵀ + b` with `W: [K × D]`.
#[derive(Debug, Clone)]
pub struct Head<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> Head<F> {
    pub fn new(dim: usize, classes: usize, seed: u64, name: &str) -> Self {
        let w = trunc_normal(&mut param_rng(seed, &join(name, "weight")), classes * dim, INIT_STD);
        Self {
            weight: Tensor::param(&[classes, dim], w).expect("shape"),
            bias: Tensor::param(&[classes], vec![F::ZERO; classes]).expect("shape"),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn classify(&self, y: &Tensor<F>) -> Result<Tensor<F>> {
        let (t, d) = y.dims2();
        if d != self.weight.cols() {
            return Err(Error::dim(
                "classify",
                format!("feature width {d}, head expects {}", self.weight.cols()),
            ));
        }
        let k = self.classes();
        let mut g = Tensor::zeros(&[t, k]);
        for row in g.data_mut().chunks_exact_mut(k) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(F::ONE, y.as_mat(), self.weight.as_mat().t(), F::ONE, g.as_mat_mut());
        Ok(g)
    }

    pub fn backward(&mut self, y: &Tensor<F>, dg: &Tensor<F>) -> Tensor<F> {
        let (t, k) = dg.dims2();
        let d = y.cols();
        if let Some(gw) = self.weight.grad_mut() {
            gemm(F::ONE, dg.as_mat().t(), y.as_mat(), F::ONE, MatMut::dense(gw, k, d));
        }
        if let Some(gb) = self.bias.grad_mut() {
            for r in 0..t {
                for (g, v) in gb.iter_mut().zip(&dg.data()[r * k..(r + 1) * k]) {
                    *g += *v;
                }
            }
        }
        let mut dy = Tensor::zeros(&[t, d]);
        gemm(F::ONE, dg.as_mat(), self.weight.as_mat(), F::ZERO, dy.as_mat_mut());
        dy
    }
}

impl<F: Scalar> Module<F> for Head<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

/// One prediction branch: A³ module plus classifier for a single granularity.
#[derive(Debug, Clone)]
pub struct Branch<F> {
    pub granularity: Granularity,
    pub a3: A3Module<F>,
    pub head: Head<F>,
}

#[derive(Debug, Clone)]
pub struct BranchOutput<F> {
    pub granularity: Granularity,
    pub logits: Tensor<F>,
    pub masks: AttentionMasks<F>,
}

#[derive(Debug, Clone)]
pub struct BranchCache<F> {
    a3: A3Cache<F>,
    y: Tensor<F>,
}

impl<F: Scalar> Branch<F> {
    pub fn new(
        granularity: Granularity,
        dim: usize,
        slots: usize,
        classes: usize,
        seed: u64,
        prefix: &str,
    ) -> Self {
        let name = join(prefix, granularity.as_str());
        Self {
            granularity,
            a3: A3Module::new(dim, slots, seed, &join(&name, "a3")),
            head: Head::new(dim, classes, seed, &join(&name, "classifier")),
        }
    }

    pub fn forward(&self, z: &Tensor<F>) -> Result<(BranchOutput<F>, BranchCache<F>)> {
        let (y, masks, a3) = self.a3.forward(z)?;
        let logits = self.head.classify(&y)?;
        Ok((
            BranchOutput {
                granularity: self.granularity,
                logits,
                masks,
            },
            BranchCache { a3, y },
        ))
    }

    pub fn backward(&mut self, cache: &BranchCache<F>, dlogits: &Tensor<F>) -> Tensor<F> {
        let dy = self.head.backward(&cache.y, dlogits);
        self.a3.backward(&cache.a3, &dy)
    }
}

impl<F: Scalar> Module<F> for Branch<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        let name = join(prefix, self.granularity.as_str());
        self.a3.visit_params(&join(&name, "a3"), f);
        self.head.visit_params(&join(&name, "classifier"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        let name = join(prefix, self.granularity.as_str());
        self.a3.visit_params_mut(&join(&name, "a3"), f);
        self.head.visit_params_mut(&join(&name, "classifier"), f);
    }
}

/// Aggregates `values` rows with row-stochastic `weights`: `weights · values`.
pub fn aggregate<F: Scalar>(weights: &Tensor<F>, values: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(&[weights.rows(), values.cols()]);
    gemm(
        F::ONE,
        MatRef::dense(weights.data(), weights.rows(), weights.cols()),
        values.as_mat(),
        F::ZERO,
        out.as_mat_mut(),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, seed: u64, std: f64) -> Tensor<f64> {
        Tensor::from_vec(
            &[rows, cols],
            trunc_normal(&mut param_rng(seed, "probe"), rows * cols, std),
        )
        .unwrap()
    }

    #[test]
    fn zero_alpha_gives_uniform_masks_and_mean_features() {
        let (n1, d, t) = (9, 6, 4);
        let mut a3 = A3Module::<f64>::new(d, t, 1, "a3");
        a3.alpha.visit_params_mut("", &mut |_, p| p.data_mut().fill(0.0));
        let z = random(n1, d, 2, 1.0);
        let (y, masks, _) = a3.forward(&z).unwrap();
        for i in 0..t {
            for v in masks.row(i) {
                assert!((v - 1.0 / n1 as f64).abs() < 1e-15);
            }
        }
        let feats = a3.u.forward(&z).unwrap();
        for j in 0..d {
            let mean = (0..n1).map(|r| feats.row(r)[j]).sum::<f64>() / n1 as f64;
            for i in 0..t {
                assert!((y.row(i)[j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn peaked_alpha_selects_a_single_token() {
        // Token target[i] carries a 1 in coordinate i+1, which α routes to
        // slot i with weight 50.
        let (n1, d, t) = (5, 6, 3);
        let mut a3 = A3Module::<f64>::new(d, t, 3, "a3");
        a3.alpha.visit_params_mut("", &mut |_, p| p.data_mut().fill(0.0));
        let target = [2usize, 4, 1];
        let mut zz = random(n1, d, 4, 0.1);
        for (slot, &tok) in target.iter().enumerate() {
            zz.row_mut(tok)[slot + 1] = 1.0;
            a3.alpha.weight.data_mut()[(slot + 1) * t + slot] = 50.0;
        }
        let (y, _, _) = a3.forward(&zz).unwrap();
        let feats = a3.u.forward(&zz).unwrap();
        for (slot, &tok) in target.iter().enumerate() {
            for j in 0..d {
                assert!((y.row(slot)[j] - feats.row(tok)[j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn classify_shapes_and_zero_weight() {
        let mut head = Head::<f64>::new(6, 38, 0, "h");
        let y = random(27, 6, 5, 1.0);
        assert_eq!(head.classify(&y).unwrap().shape(), &[27, 38]);
        head.weight.data_mut().fill(0.0);
        assert!(head.classify(&y).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(head.classify(&random(27, 5, 5, 1.0)).is_err());
    }

    #[test]
    fn masks_permute_with_tokens() {
        let (n1, d, t) = (7, 6, 3);
        let a3 = A3Module::<f64>::new(d, t, 8, "a3");
        let z = random(n1, d, 9, 1.0);
        let perm = [0usize, 3, 1, 6, 2, 5, 4];
        let mut zp = Tensor::zeros(&[n1, d]);
        for (i, &src) in perm.iter().enumerate() {
            zp.row_mut(i).copy_from_slice(z.row(src));
        }
        let (y, m, _) = a3.forward(&z).unwrap();
        let (yp, mp, _) = a3.forward(&zp).unwrap();
        for slot in 0..t {
            for (i, &src) in perm.iter().enumerate() {
                assert!((mp.row(slot)[i] - m.row(slot)[src]).abs() < 1e-14);
            }
        }
        for (a, b) in y.data().iter().zip(yp.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let direct = aggregate(m.tensor(), &a3.u.forward(&z).unwrap());
        for (a, b) in y.data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
