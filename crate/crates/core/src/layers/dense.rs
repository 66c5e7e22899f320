use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{gemm, Op, Tensor};

use super::init::glorot_uniform;

/// Affine map `y = W x + b`; `weight` is `[units, inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, units: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: glorot_uniform(vec![units, inputs], inputs, units, rng),
            bias: Tensor::zeros(vec![units]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[0]
    }

    pub(crate) fn check_input(&self, n: usize) -> Result<()> {
        if n != self.inputs() {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: vec![n],
                right: self.weight.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 1 {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: x.shape().to_vec(),
                right: self.weight.shape().to_vec(),
            });
        }
        self.check_input(x.len())?;
        let mut y = self.bias.data().to_vec();
        gemm(
            Op::N,
            Op::N,
            self.units(),
            self.inputs(),
            1,
            T::one(),
            self.weight.data(),
            x.data(),
            T::one(),
            &mut y,
        );
        Ok(Tensor::vector(y))
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        if grad_out.shape() != [self.units()] {
            return Err(Error::ShapeMismatch {
                op: "dense backward",
                left: grad_out.shape().to_vec(),
                right: vec![self.units()],
            });
        }
        let (gw, gb) = grads.split_at_mut(1);
        // outer product dY x^T
        gemm(
            Op::N,
            Op::N,
            self.units(),
            1,
            self.inputs(),
            T::one(),
            grad_out.data(),
            x.data(),
            T::one(),
            gw[0].data_mut(),
        );
        gb[0].add_assign(grad_out)?;
        let mut gx = vec![T::zero(); self.inputs()];
        gemm(
            Op::T,
            Op::N,
            self.inputs(),
            self.units(),
            1,
            T::one(),
            self.weight.data(),
            grad_out.data(),
            T::zero(),
            &mut gx,
        );
        Ok(Tensor::vector(gx))
    }
}
