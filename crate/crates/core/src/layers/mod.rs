//! Layer forward/backward passes.
//!
//! Layers hold only parameters. `forward` returns the output together with a
//! [`Cache`] of whatever activations `backward` needs, so several samples can
//! be in flight at once (a contrastive batch must be fully forwarded before
//! any sample can be back-propagated). Parameter gradients are accumulated
//! into caller-owned buffers, in call order.

mod activation;
mod conv;
mod dense;
pub mod gradcheck;
mod init;
mod lstm;
mod pool;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use activation::{Dropout, L2Cache, L2Norm, Relu};
pub use conv::Conv1d;
pub use dense::Dense;
pub use init::glorot_uniform;
pub use lstm::{BiLstm, Lstm};
pub use pool::{Gap, MaxPool1d};

/// Training applies dropout; inference never does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

/// Kind and hyperparameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
    },
    #[serde(rename = "maxpool1d")]
    MaxPool1d { pool: usize },
    Gap,
    Dense { inputs: usize, units: usize },
    Relu,
    Dropout { rate: f64 },
    Lstm { inputs: usize, units: usize },
    Bilstm { inputs: usize, units: usize },
    L2norm { eps: f64 },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Gap => "gap",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Bilstm { .. } => "bilstm",
            LayerSpec::L2norm { .. } => "l2norm",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::invalid(format!("{}: {name} must be positive", self.kind())))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
            } => {
                positive("in_channels", in_channels)?;
                positive("filters", filters)?;
                positive("kernel", kernel)
            }
            LayerSpec::MaxPool1d { pool } => positive("pool", pool),
            LayerSpec::Dense { inputs, units }
            | LayerSpec::Lstm { inputs, units }
            | LayerSpec::Bilstm { inputs, units } => {
                positive("inputs", inputs)?;
                positive("units", units)
            }
            LayerSpec::Dropout { rate } => {
                if (0.0..1.0).contains(&rate) {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")))
                }
            }
            LayerSpec::L2norm { eps } => {
                if eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("l2norm eps must be positive"))
                }
            }
            LayerSpec::Gap | LayerSpec::Relu => Ok(()),
        }
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    MaxPool1d(MaxPool1d),
    Gap(Gap),
    Dense(Dense<T>),
    Relu(Relu),
    Dropout(Dropout),
    Lstm(Lstm<T>),
    Bilstm(BiLstm<T>),
    L2norm(L2Norm),
}

/// Activations saved by `forward` for use by `backward`.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv1d(conv::ConvCache<T>),
    MaxPool1d(pool::PoolCache),
    Gap(pool::GapCache),
    Dense(Tensor<T>),
    Relu(Tensor<T>),
    Dropout(Option<Vec<T>>),
    Lstm(lstm::LstmCache<T>),
    Bilstm(lstm::LstmCache<T>, lstm::LstmCache<T>),
    L2norm(activation::L2Cache<T>),
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer, drawing initial weights from `rng`.
    pub fn build(spec: &LayerSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
            } => Layer::Conv1d(Conv1d::new(in_channels, filters, kernel, rng)),
            LayerSpec::MaxPool1d { pool } => Layer::MaxPool1d(MaxPool1d { pool }),
            LayerSpec::Gap => Layer::Gap(Gap),
            LayerSpec::Dense { inputs, units } => Layer::Dense(Dense::new(inputs, units, rng)),
            LayerSpec::Relu => Layer::Relu(Relu),
            LayerSpec::Dropout { rate } => Layer::Dropout(Dropout { rate }),
            LayerSpec::Lstm { inputs, units } => Layer::Lstm(Lstm::new(inputs, units, rng)),
            LayerSpec::Bilstm { inputs, units } => Layer::Bilstm(BiLstm::new(inputs, units, rng)),
            LayerSpec::L2norm { eps } => Layer::L2norm(L2Norm { eps }),
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(l) => LayerSpec::Conv1d {
                in_channels: l.in_channels(),
                filters: l.filters(),
                kernel: l.kernel(),
            },
            Layer::MaxPool1d(p) => LayerSpec::MaxPool1d { pool: p.pool },
            Layer::Gap(_) => LayerSpec::Gap,
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs(),
                units: d.units(),
            },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
            Layer::Lstm(l) => LayerSpec::Lstm {
                inputs: l.inputs(),
                units: l.units(),
            },
            Layer::Bilstm(l) => LayerSpec::Bilstm {
                inputs: l.forward.inputs(),
                units: l.forward.units(),
            },
            Layer::L2norm(l) => LayerSpec::L2norm { eps: l.eps },
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv1d(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Lstm(l) => l.params(),
            Layer::Bilstm(l) => {
                let mut p = l.forward.params();
                p.extend(l.backward.params());
                p
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv1d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Lstm(l) => l.params_mut(),
            Layer::Bilstm(l) => {
                let mut p = l.forward.params_mut();
                p.extend(l.backward.params_mut());
                p
            }
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            Layer::Conv1d(_) | Layer::Dense(_) => vec!["weight", "bias"],
            Layer::Lstm(_) => vec!["w_input", "w_hidden", "bias"],
            Layer::Bilstm(_) => vec![
                "fwd.w_input",
                "fwd.w_hidden",
                "fwd.bias",
                "bwd.w_input",
                "bwd.w_hidden",
                "bwd.bias",
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Zero tensors shaped like each parameter.
    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params()
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect()
    }

    /// Output shape for a given input shape, or the reason it is invalid.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let kind = self.spec().kind();
        let need_rank = |r: usize| {
            if input.len() == r {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{kind}: expected a rank-{r} input, got shape {input:?}"
                )))
            }
        };
        match self {
            Layer::Conv1d(l) => {
                need_rank(2)?;
                l.check_input(input[0], input[1])?;
                Ok(vec![l.filters(), input[1] - l.kernel() + 1])
            }
            Layer::MaxPool1d(p) => {
                need_rank(2)?;
                p.check(input[1])?;
                Ok(vec![input[0], input[1] / p.pool])
            }
            Layer::Gap(_) => {
                need_rank(2)?;
                if input[1] == 0 {
                    return Err(Error::Empty("gap"));
                }
                Ok(vec![input[0]])
            }
            Layer::Dense(d) => {
                need_rank(1)?;
                d.check_input(input[0])?;
                Ok(vec![d.units()])
            }
            Layer::Lstm(l) => {
                need_rank(2)?;
                l.check_input(input[0], input[1])?;
                Ok(vec![l.units()])
            }
            Layer::Bilstm(l) => {
                need_rank(2)?;
                l.forward.check_input(input[0], input[1])?;
                Ok(vec![2 * l.forward.units()])
            }
            Layer::Relu(_) | Layer::Dropout(_) | Layer::L2norm(_) => Ok(input.to_vec()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, Cache<T>)> {
        match self {
            Layer::Conv1d(l) => l.forward(x).map(|(y, c)| (y, Cache::Conv1d(c))),
            Layer::MaxPool1d(l) => l.forward(x).map(|(y, c)| (y, Cache::MaxPool1d(c))),
            Layer::Gap(l) => l.forward(x).map(|(y, c)| (y, Cache::Gap(c))),
            Layer::Dense(l) => l.forward(x).map(|y| (y, Cache::Dense(x.clone()))),
            Layer::Relu(l) => Ok((l.forward(x), Cache::Relu(x.clone()))),
            Layer::Dropout(l) => {
                let (y, mask) = l.forward(x, mode, rng);
                Ok((y, Cache::Dropout(mask)))
            }
            Layer::Lstm(l) => l.forward(x).map(|(y, c)| (y, Cache::Lstm(c))),
            Layer::Bilstm(l) => l.forward_pass(x).map(|(y, f, b)| (y, Cache::Bilstm(f, b))),
            Layer::L2norm(l) => {
                let (y, c) = l.forward(x);
                Ok((y, Cache::L2norm(c)))
            }
        }
    }

    /// Returns the input gradient and adds parameter gradients into `grads`
    /// (one tensor per entry of [`Layer::params`]).
    pub fn backward(&self, cache: &Cache<T>, grad_out: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        let kind = self.spec().kind();
        if grads.len() != self.params().len() {
            return Err(Error::invalid(format!(
                "{kind}: expected {} gradient buffers, got {}",
                self.params().len(),
                grads.len()
            )));
        }
        match (self, cache) {
            (Layer::Conv1d(l), Cache::Conv1d(c)) => l.backward(c, grad_out, grads),
            (Layer::MaxPool1d(l), Cache::MaxPool1d(c)) => l.backward(c, grad_out),
            (Layer::Gap(l), Cache::Gap(c)) => l.backward(c, grad_out),
            (Layer::Dense(l), Cache::Dense(x)) => l.backward(x, grad_out, grads),
            (Layer::Relu(l), Cache::Relu(x)) => l.backward(x, grad_out),
            (Layer::Dropout(l), Cache::Dropout(mask)) => l.backward(mask.as_deref(), grad_out),
            (Layer::Lstm(l), Cache::Lstm(c)) => l.backward(c, grad_out, grads),
            (Layer::Bilstm(l), Cache::Bilstm(f, b)) => l.backward_pass(f, b, grad_out, grads),
            (Layer::L2norm(l), Cache::L2norm(c)) => l.backward(c, grad_out),
            _ => Err(Error::BackwardBeforeForward(kind)),
        }
    }
}

/// A layer bundled with its most recent forward cache and accumulated
/// parameter gradients; the single-sample convenience API.
#[derive(Debug, Clone)]
pub struct LayerState<T> {
    pub layer: Layer<T>,
    pub grads: Vec<Tensor<T>>,
    cache: Option<Cache<T>>,
}

/// Gradients produced by one [`LayerState::backward`] call.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> LayerState<T> {
    pub fn new(layer: Layer<T>) -> Self {
        let grads = layer.zero_grads();
        LayerState {
            layer,
            grads,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        let (y, cache) = self.layer.forward(x, mode, rng)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Gradients of this call alone; also accumulated into `self.grads`.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward(self.layer.spec().kind()))?;
        let mut params = self.layer.zero_grads();
        let input = self.layer.backward(cache, grad_out, &mut params)?;
        for (acc, g) in self.grads.iter_mut().zip(&params) {
            acc.add_assign(g)?;
        }
        Ok(Gradients { input, params })
    }
}

/// Ordered stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn build(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        specs
            .iter()
            .map(|s| Layer::build(s, rng))
            .collect::<Result<Vec<_>>>()
            .map(Sequential::new)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// `"<layer index>.<param name>"` for every parameter tensor.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_names().into_iter().map(move |n| format!("{i}.{n}")))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.layers.iter().flat_map(Layer::zero_grads).collect()
    }

    /// Shape after every layer, starting with `input`.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut trace = vec![input.to_vec()];
        for l in &self.layers {
            let next = l.output_shape(trace.last().expect("trace starts non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(&cur, mode, rng)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Forward pass that keeps no caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        // Inference never draws randomness; the stream is a placeholder.
        let mut rng = Rng::new(0, 0);
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur, Mode::Infer, &mut rng)?.0;
        }
        Ok(cur)
    }

    /// Back-propagates through every layer; `grads` is aligned with
    /// [`Sequential::params`].
    pub fn backward(&self, caches: &[Cache<T>], grad_out: &Tensor<T>, grads: &mut [Tensor<T>]) -> Result<Tensor<T>> {
        if caches.len() != self.layers.len() {
            return Err(Error::BackwardBeforeForward("sequential"));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.params().len();
        }
        if grads.len() != off {
            return Err(Error::invalid(format!(
                "sequential: expected {off} gradient buffers, got {}",
                grads.len()
            )));
        }
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let n = l.params().len();
            g = l.backward(&caches[i], &g, &mut grads[offsets[i]..offsets[i] + n])?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        assert!(LayerSpec::Dropout { rate: 0.0 }.validate().is_ok());
        assert!(LayerSpec::Conv1d {
            in_channels: 6,
            filters: 0,
            kernel: 10
        }
        .validate()
        .is_err());
        assert!(LayerSpec::MaxPool1d { pool: 0 }.validate().is_err());
    }

    #[test]
    fn spec_serde_tags() {
        let s = serde_json::to_string(&LayerSpec::MaxPool1d { pool: 2 }).unwrap();
        assert_eq!(s, r#"{"kind":"maxpool1d","pool":2}"#);
        let back: LayerSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, LayerSpec::MaxPool1d { pool: 2 });
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut rng = Rng::new(0, 0);
        let layer = Layer::<f64>::build(
            &LayerSpec::Conv1d {
                in_channels: 2,
                filters: 3,
                kernel: 2,
            },
            &mut rng,
        )
        .unwrap();
        let mut state = LayerState::new(layer);
        let err = state.backward(&Tensor::zeros(vec![3, 4])).unwrap_err();
        assert!(matches!(err, Error::BackwardBeforeForward("conv1d")));
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let mut rng = Rng::new(0, 0);
        let dense = Layer::<f64>::build(&LayerSpec::Dense { inputs: 2, units: 2 }, &mut rng).unwrap();
        let mut grads = dense.zero_grads();
        let err = dense
            .backward(&Cache::Relu(Tensor::zeros(vec![2])), &Tensor::zeros(vec![2]), &mut grads)
            .unwrap_err();
        assert!(matches!(err, Error::BackwardBeforeForward("dense")));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        for (spec, shape) in gradcheck::standard_cases() {
            let mut rng = Rng::new(4, 4);
            let layer = Layer::<f64>::build(&spec, &mut rng).unwrap();
            let x = Tensor::from_fn(shape.clone(), |_| rng.uniform_range(-1.0, 1.0));
            let (y, cache) = layer.forward(&x, Mode::Train, &mut rng).unwrap();
            let mut grads = layer.zero_grads();
            let gx = layer
                .backward(&cache, &Tensor::zeros(y.shape().to_vec()), &mut grads)
                .unwrap();
            assert!(gx.data().iter().all(|&v| v == 0.0), "{}", spec.kind());
            assert!(
                grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)),
                "{}",
                spec.kind()
            );
        }
    }
}
