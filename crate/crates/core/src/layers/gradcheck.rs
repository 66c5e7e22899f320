//! Central finite-difference verification of analytic gradients (64-bit).
//!
//! The probed scalar is `L = sum(w * f(x))` for a fixed random `w`, so the
//! analytic side is a single backward pass with upstream gradient `w`.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

use super::{Layer, LayerSpec, Mode, Sequential};

pub const STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Gradient magnitudes below this are treated as absolute rather than
/// relative when forming the error ratio.
pub const SCALE_FLOOR: f64 = 1e-7;

/// A differentiable map with parameters, as seen by the checker.
pub trait Differentiable {
    /// Forward value; must be deterministic across calls.
    fn value(&self, x: &Tensor<f64>) -> Result<Tensor<f64>>;

    /// Input gradient and one gradient per parameter tensor for upstream `w`.
    fn gradients(&self, x: &Tensor<f64>, upstream: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Tensor<f64>>)>;

    fn param_names(&self) -> Vec<String>;

    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>>;
}

/// A layer run in training mode with a dropout stream that is re-seeded on
/// every call, so all finite-difference evaluations share one mask.
#[derive(Debug, Clone)]
pub struct LayerProbe {
    pub layer: Layer<f64>,
    seed: u64,
}

impl LayerProbe {
    pub fn new(layer: Layer<f64>, seed: u64) -> Self {
        LayerProbe { layer, seed }
    }

    fn rng(&self) -> Rng {
        Rng::keyed(self.seed, Stream::Dropout, &[0])
    }
}

impl Differentiable for LayerProbe {
    fn value(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.layer.forward(x, Mode::Train, &mut self.rng())?.0)
    }

    fn gradients(&self, x: &Tensor<f64>, upstream: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Tensor<f64>>)> {
        let (_, cache) = self.layer.forward(x, Mode::Train, &mut self.rng())?;
        let mut grads = self.layer.zero_grads();
        let gx = self.layer.backward(&cache, upstream, &mut grads)?;
        Ok((gx, grads))
    }

    fn param_names(&self) -> Vec<String> {
        self.layer.param_names().into_iter().map(String::from).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.layer.params_mut()
    }
}

/// A whole layer stack in training mode.
#[derive(Debug, Clone)]
pub struct SequentialProbe {
    pub seq: Sequential<f64>,
    seed: u64,
}

impl SequentialProbe {
    pub fn new(seq: Sequential<f64>, seed: u64) -> Self {
        SequentialProbe { seq, seed }
    }

    fn rng(&self) -> Rng {
        Rng::keyed(self.seed, Stream::Dropout, &[0])
    }
}

impl Differentiable for SequentialProbe {
    fn value(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.seq.forward(x, Mode::Train, &mut self.rng())?.0)
    }

    fn gradients(&self, x: &Tensor<f64>, upstream: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Tensor<f64>>)> {
        let (_, caches) = self.seq.forward(x, Mode::Train, &mut self.rng())?;
        let mut grads = self.seq.zero_grads();
        let gx = self.seq.backward(&caches, upstream, &mut grads)?;
        Ok((gx, grads))
    }

    fn param_names(&self) -> Vec<String> {
        self.seq.param_names()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.seq.params_mut()
    }
}

/// Wraps a target and scales the gradient of its first parameter, as a
/// negative control for the checker.
#[derive(Debug, Clone)]
pub struct Perturbed<D> {
    pub inner: D,
    pub factor: f64,
}

impl<D: Differentiable> Differentiable for Perturbed<D> {
    fn value(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.inner.value(x)
    }

    fn gradients(&self, x: &Tensor<f64>, upstream: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Tensor<f64>>)> {
        let (mut gx, mut gp) = self.inner.gradients(x, upstream)?;
        match gp.first_mut() {
            Some(g) => g.scale(self.factor),
            None => gx.scale(self.factor),
        }
        Ok((gx, gp))
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.inner.params_mut()
    }
}

/// One representative spec per layer kind, with a compatible input shape.
pub fn standard_cases() -> Vec<(LayerSpec, Vec<usize>)> {
    vec![
        (
            LayerSpec::Conv1d {
                in_channels: 3,
                filters: 2,
                kernel: 4,
            },
            vec![3, 20],
        ),
        (LayerSpec::MaxPool1d { pool: 2 }, vec![4, 30]),
        (LayerSpec::Gap, vec![3, 7]),
        (LayerSpec::Dense { inputs: 5, units: 4 }, vec![5]),
        (LayerSpec::Relu, vec![9]),
        (LayerSpec::Dropout { rate: 0.5 }, vec![12]),
        (LayerSpec::Lstm { inputs: 6, units: 5 }, vec![6, 12]),
        (LayerSpec::Bilstm { inputs: 6, units: 5 }, vec![6, 12]),
        (LayerSpec::L2norm { eps: 1e-12 }, vec![8]),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub component: String,
    pub tolerance: f64,
    pub groups: Vec<GroupError>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    /// Builds a report from per-group `(name, analytic, numeric)` triples.
    pub fn from_groups(component: impl Into<String>, tolerance: f64, groups: Vec<(String, Vec<f64>, Vec<f64>)>) -> Self {
        let groups: Vec<GroupError> = groups
            .into_iter()
            .map(|(name, a, n)| {
                let (abs, rel) = compare(&a, &n);
                GroupError {
                    name,
                    max_abs_err: abs,
                    max_rel_err: rel,
                    passed: rel < tolerance,
                }
            })
            .collect();
        let passed = groups.iter().all(|g| g.passed);
        GradcheckReport {
            component: component.into(),
            tolerance,
            groups,
            passed,
        }
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} [{}] tol {:e}",
            self.component,
            if self.passed { "ok" } else { "FAIL" },
            self.tolerance
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<16} max rel {:.3e}  max abs {:.3e}{}",
                g.name,
                g.max_rel_err,
                g.max_abs_err,
                if g.passed { "" } else { "  <-- exceeds tolerance" }
            )?;
        }
        Ok(())
    }
}

/// Normwise comparison: `max|a - n| / max(|a|_inf, |n|_inf, SCALE_FLOOR)`.
pub fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, f64) {
    let abs = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(SCALE_FLOOR, f64::max);
    (abs, abs / scale)
}

/// Central difference of `f` with respect to every coordinate of `values`.
pub fn central_differences(values: &mut [f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + STEP;
        let plus = f(values)?;
        values[i] = orig - STEP;
        let minus = f(values)?;
        values[i] = orig;
        out.push((plus - minus) / (2.0 * STEP));
    }
    Ok(out)
}

fn weighted(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Checks every parameter tensor and the input of `target` at `x`.
pub fn check_target<D: Differentiable>(
    target: &mut D,
    component: &str,
    x: &Tensor<f64>,
    seed: u64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let y = target.value(x)?;
    let mut rng = Rng::keyed(seed, Stream::Gradcheck, &[1]);
    let w = Tensor::from_fn(y.shape().to_vec(), |_| rng.uniform_range(-1.0, 1.0));
    let (gx, gparams) = target.gradients(x, &w)?;
    gx.check_finite(&format!("{component}: input gradient"))?;

    let names = target.param_names();
    let mut groups = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        gparams[idx].check_finite(&format!("{component}: gradient of {name}"))?;
        let mut values = target.params_mut()[idx].data().to_vec();
        let numeric = central_differences(&mut values, |v| {
            let original = {
                let p = &mut target.params_mut()[idx];
                let saved = p.data().to_vec();
                p.data_mut().copy_from_slice(v);
                saved
            };
            let out = target.value(x);
            target.params_mut()[idx].data_mut().copy_from_slice(&original);
            let val = weighted(&out?, &w);
            if val.is_finite() {
                Ok(val)
            } else {
                Err(Error::NonFinite(format!("{component}: loss while perturbing {name}")))
            }
        })?;
        groups.push((name.clone(), gparams[idx].as_f64_vec(), numeric));
    }

    let mut xs = x.data().to_vec();
    let shape = x.shape().to_vec();
    let numeric = central_differences(&mut xs, |v| {
        let xt = Tensor::new(shape.clone(), v.to_vec())?;
        let val = weighted(&target.value(&xt)?, &w);
        if val.is_finite() {
            Ok(val)
        } else {
            Err(Error::NonFinite(format!("{component}: loss while perturbing input")))
        }
    })?;
    groups.push(("input".to_string(), gx.as_f64_vec(), numeric));

    Ok(GradcheckReport::from_groups(component, tolerance, groups))
}

/// Builds the layer described by `spec` from `seed`, draws a random input of
/// `input_shape`, and checks all its gradients.
pub fn gradcheck(spec: &LayerSpec, input_shape: &[usize], seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let mut rng = Rng::keyed(seed, Stream::Gradcheck, &[0]);
    let mut layer = Layer::<f64>::build(spec, &mut rng)?;
    // Non-zero biases so bias paths are exercised.
    for p in layer.params_mut() {
        if p.rank() == 1 {
            p.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.uniform_range(-0.5, 0.5));
        }
    }
    let x = Tensor::from_fn(input_shape.to_vec(), |_| rng.uniform_range(-1.0, 1.0));
    let mut probe = LayerProbe::new(layer, seed);
    check_target(&mut probe, spec.kind(), &x, seed, tolerance)
}
