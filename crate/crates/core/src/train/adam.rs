use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update. `names` label the tensors in error messages.
    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>], names: &[String], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Training(format!(
                "adam: {} params and {} grads for {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, g) in grads.iter().enumerate() {
            if g.shape() != self.m[k].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: g.shape().to_vec(),
                    right: self.m[k].shape().to_vec(),
                });
            }
            if !g.all_finite() {
                let name = names.get(k).cloned().unwrap_or_else(|| format!("#{k}"));
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let step_size = T::lit(lr / (1.0 - self.beta1.powi(t)));
        let v_corr = T::lit(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = T::lit(self.eps);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[k].data()).zip(m).zip(v) {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *w -= step_size * *m / ((*v * v_corr).sqrt() + eps);
            }
        }
        Ok(())
    }
}
