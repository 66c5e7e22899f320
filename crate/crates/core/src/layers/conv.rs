use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{gemm, Op, Tensor};

use super::init::glorot_uniform;

/// Valid (unpadded) stride-1 1-D cross-correlation.
///
/// `weight` is `[filters, in_channels, kernel]`, `bias` is `[filters]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    /// im2col matrix, `[in_channels * kernel, t_out]`.
    cols: Vec<T>,
    t_in: usize,
    t_out: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(in_channels: usize, filters: usize, kernel: usize, rng: &mut Rng) -> Self {
        Conv1d {
            weight: glorot_uniform(
                vec![filters, in_channels, kernel],
                in_channels * kernel,
                filters * kernel,
                rng,
            ),
            bias: Tensor::zeros(vec![filters]),
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub(crate) fn check_input(&self, channels: usize, len: usize) -> Result<()> {
        if channels != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: vec![channels, len],
                right: self.weight.shape().to_vec(),
            });
        }
        if len < self.kernel() {
            return Err(Error::SequenceTooShort {
                layer: "conv1d",
                len,
                required: self.kernel(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (c_in, t_in) = x.dims2()?;
        self.check_input(c_in, t_in)?;
        let k = self.kernel();
        let f = self.filters();
        let t_out = t_in - k + 1;

        let rows = c_in * k;
        let mut cols = vec![T::zero(); rows * t_out];
        let xd = x.data();
        for c in 0..c_in {
            let src = &xd[c * t_in..(c + 1) * t_in];
            for j in 0..k {
                let dst = &mut cols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
                dst.copy_from_slice(&src[j..j + t_out]);
            }
        }

        let mut out = vec![T::zero(); f * t_out];
        for (o, row) in out.chunks_mut(t_out).enumerate() {
            let b = self.bias.data()[o];
            row.iter_mut().for_each(|v| *v = b);
        }
        gemm(
            Op::N,
            Op::N,
            f,
            rows,
            t_out,
            T::one(),
            self.weight.data(),
            &cols,
            T::one(),
            &mut out,
        );
        Ok((Tensor::new(vec![f, t_out], out)?, ConvCache { cols, t_in, t_out }))
    }

    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        let f = self.filters();
        let c_in = self.in_channels();
        let k = self.kernel();
        let t_out = cache.t_out;
        if grad_out.shape() != [f, t_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d backward",
                left: grad_out.shape().to_vec(),
                right: vec![f, t_out],
            });
        }
        let rows = c_in * k;
        let g = grad_out.data();

        let (gw, gb) = grads.split_at_mut(1);
        // dW += dY * cols^T
        gemm(
            Op::N,
            Op::T,
            f,
            t_out,
            rows,
            T::one(),
            g,
            &cache.cols,
            T::one(),
            gw[0].data_mut(),
        );
        for (o, row) in g.chunks(t_out).enumerate() {
            gb[0].data_mut()[o] += row.iter().copied().sum::<T>();
        }

        // dcols = W^T * dY, then scatter back (col2im).
        let mut dcols = vec![T::zero(); rows * t_out];
        gemm(
            Op::T,
            Op::N,
            rows,
            f,
            t_out,
            T::one(),
            self.weight.data(),
            g,
            T::zero(),
            &mut dcols,
        );
        let t_in = cache.t_in;
        let mut gx = vec![T::zero(); c_in * t_in];
        for c in 0..c_in {
            let dst = &mut gx[c * t_in..(c + 1) * t_in];
            for j in 0..k {
                let src = &dcols[(c * k + j) * t_out..(c * k + j + 1) * t_out];
                for (d, &s) in dst[j..j + t_out].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Tensor::new(vec![c_in, t_in], gx)
    }
}
