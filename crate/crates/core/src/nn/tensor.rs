use crate::error::{Error, Result};
use crate::nn::scalar::{MatMut, MatRef, Scalar};

/// Dense row-major array of rank 1 to 4.
///
/// Parameters carry a gradient accumulator of the same shape; plain
/// activations do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::dim(
            "tensor",
            format!("rank must be 1..=4, got {}", shape.len()),
        ));
    }
    if shape.contains(&0) {
        return Err(Error::dim(
            "tensor",
            format!("extents must be positive, got {shape:?}"),
        ));
    }
    Ok(shape.iter().product())
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![F::ZERO; numel],
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Trainable tensor with a zeroed gradient accumulator.
    pub fn param(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let mut t = Self::from_vec(shape, data)?;
        t.grad = Some(vec![F::ZERO; t.data.len()]);
        Ok(t)
    }

    pub fn into_param(mut self) -> Self {
        if self.grad.is_none() {
            self.grad = Some(vec![F::ZERO; self.data.len()]);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [F]> {
        self.grad.as_deref_mut()
    }

    /// Splits into the value and gradient buffers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [F], Option<&mut [F]>) {
        (&mut self.data, self.grad.as_deref_mut())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(F::ZERO);
        }
    }

    /// Adds `delta` into the gradient accumulator. No-op for non-parameters.
    pub fn accumulate_grad(&mut self, delta: &[F]) {
        if let Some(g) = self.grad.as_mut() {
            assert_eq!(g.len(), delta.len(), "gradient shape");
            for (g, d) in g.iter_mut().zip(delta) {
                *g += *d;
            }
        }
    }

    /// Copy of the values without any gradient buffer.
    pub fn clone_values(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel = check_shape(shape)?;
        if numel != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(rows, cols)` of a rank-2 tensor; a rank-1 tensor is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => panic!("expected rank 1 or 2, got shape {other:?}"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn as_mat(&self) -> MatRef<'_, F> {
        let (r, c) = self.dims2();
        MatRef::dense(&self.data, r, c)
    }

    pub fn as_mat_mut(&mut self) -> MatMut<'_, F> {
        let (r, c) = self.dims2();
        MatMut::dense(&mut self.data, r, c)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Element-wise cast, dropping any gradient buffer.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
            grad: self.grad.as_ref().map(|g| vec![G::ZERO; g.len()]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f32>::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn param_has_matching_grad() {
        let mut p = Tensor::<f64>::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(p.requires_grad());
        p.accumulate_grad(&[1.0, 1.0, 1.0, 1.0]);
        p.accumulate_grad(&[0.5, 0.0, 0.0, 0.0]);
        assert_eq!(p.grad().unwrap(), &[1.5, 1.0, 1.0, 1.0]);
        p.zero_grad();
        assert_eq!(p.grad().unwrap(), &[0.0; 4]);

        let mut a = Tensor::<f64>::zeros(&[2]);
        a.accumulate_grad(&[1.0, 1.0]);
        assert!(a.grad().is_none());
    }
}
