use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::init::{param_rng, trunc_normal, INIT_STD};
use crate::nn::ops::{self, LayerNormCache};
use crate::nn::scalar::{gemm, MatMut, Scalar};
use crate::nn::tensor::Tensor;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning named trainable tensors.
pub trait Module<F: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, t| t.zero_grad());
    }
}

/// Ordered name → tensor map, iterated lexicographically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<F> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn from_module<M: Module<F> + ?Sized>(module: &M) -> Self {
        let mut tensors = BTreeMap::new();
        module.visit_params("", &mut |name, t| {
            let prev = tensors.insert(name.to_string(), t.clone());
            assert!(prev.is_none(), "duplicate parameter name {name}");
        });
        Self { tensors }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.tensors.insert(name, t.into_param());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Copies every value into `module`. Names and shapes must match one to one.
    pub fn load_into<M: Module<F> + ?Sized>(&self, module: &mut M) -> Result<()> {
        let mut seen = 0usize;
        let mut failure = None;
        module.visit_params_mut("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                Some(src) if src.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(src.data());
                    t.zero_grad();
                    seen += 1;
                }
                Some(src) => {
                    failure = Some(format!(
                        "parameter {name}: shape {:?} vs expected {:?}",
                        src.shape(),
                        t.shape()
                    ))
                }
                None => failure = Some(format!("missing parameter {name}")),
            }
        });
        if let Some(msg) = failure {
            return Err(Error::Config(msg));
        }
        if seen != self.tensors.len() {
            return Err(Error::Config(format!(
                "{} stored parameters but the model has {seen}",
                self.tensors.len()
            )));
        }
        Ok(())
    }
}

/// Affine map `y = x·W + b` with `W: [in × out]`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64, name: &str) -> Self {
        let w = trunc_normal(
            &mut param_rng(seed, &join(name, "weight")),
            in_dim * out_dim,
            INIT_STD,
        );
        Self {
            weight: Tensor::param(&[in_dim, out_dim], w).expect("shape"),
            bias: Tensor::param(&[out_dim], vec![F::ZERO; out_dim]).expect("shape"),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, d) = x.dims2();
        if d != self.in_dim() {
            return Err(Error::dim(
                "linear",
                format!("input width {d}, expected {}", self.in_dim()),
            ));
        }
        let out = self.out_dim();
        let mut y = Tensor::zeros(&[n, out]);
        for row in y.data_mut().chunks_exact_mut(out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(F::ONE, x.as_mat(), self.weight.as_mat(), F::ONE, y.as_mat_mut());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
        self.accumulate(x, dy);
        let mut dx = Tensor::zeros(&[x.rows(), self.in_dim()]);
        gemm(
            F::ONE,
            dy.as_mat(),
            self.weight.as_mat().t(),
            F::ZERO,
            dx.as_mat_mut(),
        );
        dx
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn accumulate(&mut self, x: &Tensor<F>, dy: &Tensor<F>) {
        let (rows, out) = dy.dims2();
        let in_dim = self.in_dim();
        if let Some(gw) = self.weight.grad_mut() {
            gemm(
                F::ONE,
                x.as_mat().t(),
                dy.as_mat(),
                F::ONE,
                MatMut::dense(gw, in_dim, out),
            );
        }
        if let Some(gb) = self.bias.grad_mut() {
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&dy.data()[r * out..(r + 1) * out]) {
                    *g += *d;
                }
            }
        }
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&join(prefix, "bias"), &self.bias);
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&join(prefix, "bias"), &mut self.bias);
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LayerNorm<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub eps: F,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::param(&[dim], vec![F::ONE; dim]).expect("shape"),
            beta: Tensor::param(&[dim], vec![F::ZERO; dim]).expect("shape"),
            eps: F::from_f64(LN_EPS),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>)> {
        ops::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let (dx, dg, db) = ops::layer_norm_backward(cache, &self.gamma, dy);
        self.gamma.accumulate_grad(&dg);
        self.beta.accumulate_grad(&db);
        dx
    }
}

impl<F: Scalar> Module<F> for LayerNorm<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "gamma"), &self.gamma);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "gamma"), &mut self.gamma);
    }
}

/// Two-layer perceptron `D → hidden → D` with GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    x: Tensor<F>,
    pre: Tensor<F>,
    act: Tensor<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn new(dim: usize, hidden: usize, seed: u64, name: &str) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, seed, &join(name, "fc1")),
            fc2: Linear::new(hidden, dim, seed, &join(name, "fc2")),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<(Tensor<F>, MlpCache<F>)> {
        let pre = self.fc1.forward(x)?;
        let act = ops::gelu(&pre);
        let y = self.fc2.forward(&act)?;
        Ok((
            y,
            MlpCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MlpCache<F>, dy: &Tensor<F>) -> Tensor<F> {
        let dact = self.fc2.backward(&cache.act, dy);
        let dpre = ops::gelu_backward(&cache.pre, &dact);
        self.fc1.backward(&cache.x, &dpre)
    }
}

impl<F: Scalar> Module<F> for Mlp<F> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<F>)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<F>)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}

/// Adds `src` into `dst` element-wise.
pub(crate) fn add_into<F: Scalar>(dst: &mut Tensor<F>, src: &Tensor<F>) {
    assert_eq!(dst.shape(), src.shape(), "add_into shapes");
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_adds_bias() {
        let mut lin = Linear::<f64>::new(2, 3, 0, "l");
        lin.weight
            .data_mut()
            .copy_from_slice(&[1., 0., 2., 0., 1., 3.]);
        lin.bias.data_mut().copy_from_slice(&[0.5, -0.5, 0.0]);
        let x = Tensor::from_vec(&[1, 2], vec![1., 2.]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().data(), &[1.5, 1.5, 8.0]);
        let bad = Tensor::from_vec(&[1, 3], vec![1., 2., 3.]).unwrap();
        assert!(lin.forward(&bad).is_err());
    }

    #[test]
    fn param_set_is_lexicographic_and_round_trips() {
        let mlp = Mlp::<f64>::new(4, 8, 3, "mlp");
        let set = ParamSet::from_module(&mlp);
        let names: Vec<_> = set.iter().map(|(n, _)| n.to_string()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names.len(), 4);
        assert_eq!(set.num_values(), mlp.num_params());

        let mut other = Mlp::<f64>::new(4, 8, 99, "mlp");
        set.load_into(&mut other).unwrap();
        assert_eq!(ParamSet::from_module(&other), set);

        let mut wrong = Mlp::<f64>::new(4, 6, 3, "mlp");
        assert!(set.load_into(&mut wrong).is_err());
    }
}
