use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};

use super::Mode;

fn same_len<T: Scalar>(op: &'static str, a: &Tensor<T>, b_len: usize) -> Result<()> {
    if a.len() != b_len {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: vec![b_len],
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Relu;

impl Relu {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| if v > T::zero() { v } else { T::zero() })
    }

    /// Subgradient at exactly zero is zero.
    pub fn backward<T: Scalar>(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        same_len("relu backward", grad_out, x.len())?;
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Inverted dropout: in training each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`; inference is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate })
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> (Tensor<T>, Option<Vec<T>>) {
        if mode == Mode::Infer || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.bernoulli(keep) { scale } else { T::zero() })
            .collect();
        let y = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )
        .expect("mask matches input length");
        (y, Some(mask))
    }

    pub fn backward<T: Scalar>(&self, mask: Option<&[T]>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match mask {
            None => Ok(grad_out.clone()),
            Some(m) => {
                same_len("dropout backward", grad_out, m.len())?;
                Tensor::new(
                    grad_out.shape().to_vec(),
                    grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect(),
                )
            }
        }
    }
}

/// `y = x / max(|x|, eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Norm {
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct L2Cache<T> {
    y: Tensor<T>,
    norm: T,
}

impl L2Norm {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> (Tensor<T>, L2Cache<T>) {
        let norm = x.norm();
        let denom = norm.max(T::lit(self.eps));
        let y = x.map(|v| v / denom);
        (y.clone(), L2Cache { y, norm })
    }

    pub fn backward<T: Scalar>(&self, cache: &L2Cache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        same_len("l2norm backward", grad_out, cache.y.len())?;
        let eps = T::lit(self.eps);
        if cache.norm > eps {
            // (I - y y^T) g / |x|
            let proj = dot(cache.y.data(), grad_out.data());
            let inv = T::one() / cache.norm;
            Tensor::new(
                grad_out.shape().to_vec(),
                grad_out
                    .data()
                    .iter()
                    .zip(cache.y.data())
                    .map(|(&g, &y)| (g - y * proj) * inv)
                    .collect(),
            )
        } else {
            Ok(grad_out.map(|g| g / eps))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::gradcheck;
    use crate::layers::LayerSpec;

    #[test]
    fn relu_values_and_mask() {
        let x = Tensor::vector(vec![-1.0f64, 0.0, 2.0]);
        assert_eq!(Relu.forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Relu.backward(&x, &Tensor::vector(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = Rng::new(0, 0);
        let x = Tensor::vector(vec![1.0f32, -2.0, 3.0]);
        let d = Dropout::new(0.0).unwrap();
        assert_eq!(d.forward(&x, Mode::Train, &mut rng).0, x);
        assert_eq!(d.forward(&x, Mode::Infer, &mut rng).0, x);
    }

    #[test]
    fn dropout_inference_is_bitwise_identity() {
        let mut rng = Rng::new(0, 0);
        let x = Tensor::vector(vec![0.1f32, f32::MIN_POSITIVE, -3.3e7]);
        let (y, mask) = Dropout::new(0.5).unwrap().forward(&x, Mode::Infer, &mut rng);
        assert!(mask.is_none());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&x));
    }

    #[test]
    fn dropout_rejects_rate_one() {
        assert!(Dropout::new(1.0).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let mut rng = Rng::new(123, 4);
        let n = 100_000;
        let x = Tensor::full(vec![n], 1.0f64);
        let (y, _) = Dropout::new(0.5).unwrap().forward(&x, Mode::Train, &mut rng);
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((kept - 0.5).abs() < 0.01, "kept {kept}");
        let mean: f64 = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn l2norm_zero_vector_is_finite() {
        let l = L2Norm { eps: 1e-12 };
        let (y, c) = l.forward(&Tensor::vector(vec![0.0f64; 4]));
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = l.backward(&c, &Tensor::vector(vec![1e-13; 4])).unwrap();
        assert!(g.all_finite());
    }

    #[test]
    fn gradchecks() {
        for seed in 0..3 {
            for spec in [
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::L2norm { eps: 1e-12 },
            ] {
                let r = gradcheck(&spec, &[9], seed, 1e-6).unwrap();
                assert!(r.passed, "{r}");
            }
        }
    }
}
