//! Central finite-difference gradient checking at double precision.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::Module;
use crate::nn::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, idx: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((name.to_string(), idx, analytic, numeric));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err && other.worst.is_some() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// `(f(x+h) − f(x−h)) / 2h` for one coordinate of `x`.
pub fn central_difference(
    x: &mut Tensor<f64>,
    idx: usize,
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
) -> f64 {
    let orig = x.data()[idx];
    x.data_mut()[idx] = orig + FD_STEP;
    let plus = f(x);
    x.data_mut()[idx] = orig - FD_STEP;
    let minus = f(x);
    x.data_mut()[idx] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Compares `analytic` (dL/dx) against finite differences of `f` over every
/// coordinate of `x`.
pub fn check_input(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape");
    let mut probe = x.clone();
    let mut report = GradCheckReport::default();
    for idx in 0..x.numel() {
        let numeric = central_difference(&mut probe, idx, &mut f);
        report.record("input", idx, analytic.data()[idx], numeric);
    }
    report
}

/// Like [`check_input`] on `count` coordinates drawn with `seed`.
pub fn check_input_sampled(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    count: usize,
    seed: u64,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = x.clone();
    let mut report = GradCheckReport::default();
    for idx in sample(&mut rng, x.numel(), count.min(x.numel())) {
        let numeric = central_difference(&mut probe, idx, &mut f);
        report.record("input", idx, analytic.data()[idx], numeric);
    }
    report
}

fn perturb<M: Module<f64>>(module: &mut M, name: &str, idx: usize, delta: f64) {
    module.visit_params_mut("", &mut |n, t| {
        if n == name {
            t.data_mut()[idx] += delta;
        }
    });
}

/// Checks parameter gradients of `module`.
///
/// `backprop` must zero the gradients, run forward and backward, and leave the
/// accumulated dL/dθ in the parameters. `loss` evaluates the same scalar
/// without touching gradients. At most `per_tensor` randomly chosen
/// coordinates of each parameter are checked.
pub fn check_params<M: Module<f64>>(
    module: &mut M,
    mut backprop: impl FnMut(&mut M),
    mut loss: impl FnMut(&M) -> f64,
    per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    backprop(module);
    let mut targets: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    module.visit_params("", &mut |name, t| {
        let grad = t.grad().expect("parameter tensors carry gradients");
        let count = per_tensor.min(t.numel());
        let picks = sample(&mut rng, t.numel(), count)
            .into_iter()
            .map(|i| (i, grad[i]))
            .collect();
        targets.push((name.to_string(), picks));
    });
    let mut report = GradCheckReport::default();
    for (name, picks) in targets {
        for (idx, analytic) in picks {
            perturb(module, &name, idx, FD_STEP);
            let plus = loss(module);
            perturb(module, &name, idx, -2.0 * FD_STEP);
            let minus = loss(module);
            perturb(module, &name, idx, FD_STEP);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            report.record(&name, idx, analytic, numeric);
        }
    }
    report
}
