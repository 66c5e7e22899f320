use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-overlapping max pooling over time (window = stride = `pool`).
/// Trailing elements that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub pool: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    argmax: Vec<usize>,
    in_shape: (usize, usize),
}

impl MaxPool1d {
    pub(crate) fn check(&self, len: usize) -> Result<()> {
        if len < self.pool {
            return Err(Error::SequenceTooShort {
                layer: "maxpool1d",
                len,
                required: self.pool,
            });
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
        let (c, t) = x.dims2()?;
        self.check(t)?;
        let t_out = t / self.pool;
        let mut out = Vec::with_capacity(c * t_out);
        let mut argmax = Vec::with_capacity(c * t_out);
        for ch in 0..c {
            let row = x.row(ch);
            for w in 0..t_out {
                let start = w * self.pool;
                let mut best = start;
                for i in start + 1..start + self.pool {
                    // strict: ties keep the first index
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(ch * t + best);
            }
        }
        Ok((
            Tensor::new(vec![c, t_out], out)?,
            PoolCache {
                argmax,
                in_shape: (c, t),
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::ShapeMismatch {
                op: "maxpool1d backward",
                left: grad_out.shape().to_vec(),
                right: vec![cache.in_shape.0, cache.in_shape.1 / self.pool],
            });
        }
        let (c, t) = cache.in_shape;
        let mut gx = Tensor::zeros(vec![c, t]);
        for (&src, &g) in cache.argmax.iter().zip(grad_out.data()) {
            gx.data_mut()[src] += g;
        }
        Ok(gx)
    }
}

/// Global average pooling: `[C, T] -> [C]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gap;

#[derive(Debug, Clone)]
pub struct GapCache {
    in_shape: (usize, usize),
}

impl Gap {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GapCache)> {
        let (c, t) = x.dims2()?;
        if t == 0 {
            return Err(Error::Empty("gap"));
        }
        let inv = T::one() / T::lit(t as f64);
        let out = (0..c).map(|ch| x.row(ch).iter().copied().sum::<T>() * inv).collect();
        Ok((Tensor::vector(out), GapCache { in_shape: (c, t) }))
    }

    pub fn backward<T: Scalar>(&self, cache: &GapCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, t) = cache.in_shape;
        if grad_out.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "gap backward",
                left: grad_out.shape().to_vec(),
                right: vec![c],
            });
        }
        let inv = T::one() / T::lit(t as f64);
        Ok(Tensor::from_fn(vec![c, t], |i| grad_out.data()[i / t] * inv))
    }
}
