use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{Module, Tensor};

/// Adadelta with running averages of squared gradients and squared updates.
///
/// `lr` scales the applied step; the update accumulator tracks the unscaled
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adadelta {
    pub rho: f64,
    pub eps: f64,
    square_avg: BTreeMap<String, Vec<f32>>,
    acc_delta: BTreeMap<String, Vec<f32>>,
}

impl Adadelta {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            square_avg: BTreeMap::new(),
            acc_delta: BTreeMap::new(),
        }
    }

    /// Applies one step from the gradients stored on `module`'s parameters.
    pub fn step<M: Module<f32> + ?Sized>(&mut self, module: &mut M, lr: f64) {
        let rho = self.rho as f32;
        let eps = self.eps as f32;
        let lr = lr as f32;
        let (sq_all, acc_all) = (&mut self.square_avg, &mut self.acc_delta);
        module.visit_params_mut("", &mut |name, t| {
            let n = t.numel();
            let sq = sq_all.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let acc = acc_all.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let (data, grad) = t.data_and_grad_mut();
            let Some(grad) = grad else { return };
            for i in 0..n {
                let g = grad[i];
                sq[i] = rho * sq[i] + (1.0 - rho) * g * g;
                let delta = ((acc[i] + eps).sqrt() / (sq[i] + eps).sqrt()) * g;
                acc[i] = rho * acc[i] + (1.0 - rho) * delta * delta;
                data[i] -= lr * delta;
            }
        });
    }

    /// State tensors named `square_avg.<param>` and `acc_delta.<param>`.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        for (prefix, map) in [("acc_delta", &self.acc_delta), ("square_avg", &self.square_avg)] {
            for (name, v) in map {
                let t = Tensor::from_vec(&[v.len()], v.clone()).expect("nonempty state");
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out
    }

    pub fn load_state(&mut self, tensors: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let mut square_avg = BTreeMap::new();
        let mut acc_delta = BTreeMap::new();
        for (name, t) in tensors {
            let (map, param) = if let Some(p) = name.strip_prefix("square_avg.") {
                (&mut square_avg, p)
            } else if let Some(p) = name.strip_prefix("acc_delta.") {
                (&mut acc_delta, p)
            } else {
                return Err(Error::Config(format!("unexpected optimizer tensor {name}")));
            };
            map.insert(param.to_string(), t.into_data());
        }
        self.square_avg = square_avg;
        self.acc_delta = acc_delta;
        Ok(())
    }
}

/// Euclidean norm of every parameter gradient.
pub fn grad_norm<M: Module<f32> + ?Sized>(module: &M) -> f64 {
    let mut sum = 0.0f64;
    module.visit_params("", &mut |_, t| {
        if let Some(g) = t.grad() {
            sum += g.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>();
        }
    });
    sum.sqrt()
}

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<M: Module<f32> + ?Sized>(module: &mut M, max_norm: f64) -> f64 {
    let norm = grad_norm(module);
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        module.visit_params_mut("", &mut |_, t| {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        });
    }
    norm
}

/// Multiplies all gradients by `scale`.
pub fn scale_grads<M: Module<f32> + ?Sized>(module: &mut M, scale: f32) {
    module.visit_params_mut("", &mut |_, t| {
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    });
}
