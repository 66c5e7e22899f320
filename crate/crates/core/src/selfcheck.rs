//! Gradient self-check suite run by `sclair gradcheck`.

use serde::Serialize;

use crate::error::Result;
use crate::layers::gradcheck::{
    central_differences, check_target, compare, standard_cases, Differentiable, GradcheckReport, LayerProbe, Perturbed,
    SequentialProbe,
};
use crate::layers::{Layer, LayerSpec, Sequential};
use crate::losses::{supcon_grad_anchor, supcon_grad_total, supcon_loss, SupConBatch};
use crate::model::{ArchKind, EncoderArch};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub arch: ArchKind,
    pub seed: u64,
    pub tolerance: f64,
    /// Corrupt the dense-layer weight gradient by 1%.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub component: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl From<&GradcheckReport> for CheckResult {
    fn from(r: &GradcheckReport) -> Self {
        CheckResult {
            component: r.component.clone(),
            max_rel_err: r.max_rel_err(),
            tolerance: r.tolerance,
            passed: r.passed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Random unit-norm rows with labels drawn from `classes` letters.
pub fn random_batch(rng: &mut Rng, n: usize, d: usize, classes: usize, tau: f64) -> SupConBatch<f64> {
    let mut z = Tensor::from_fn(vec![n, d], |_| rng.normal());
    for i in 0..n {
        let row = z.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let labels = (0..n).map(|_| rng.below(classes as u64) as usize).collect();
    SupConBatch::new(z, labels, tau).expect("unit rows")
}

fn sim(z: &Tensor<f64>, a: usize, b: usize) -> f64 {
    z.row(a).iter().zip(z.row(b)).map(|(x, y)| x * y).sum()
}

/// Anchor `i`'s own loss term, by direct summation. `None` without positives.
pub fn anchor_term_reference(z: &Tensor<f64>, labels: &[usize], tau: f64, i: usize) -> Option<f64> {
    let n = labels.len();
    let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let logits: Vec<f64> = (0..n).filter(|&a| a != i).map(|a| sim(z, i, a) / tau).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|s| (s - m).exp()).sum();
    let mut total = 0.0;
    for &p in &pos {
        total += -((sim(z, i, p) / tau - m).exp() / denom).ln();
    }
    Some(total / pos.len() as f64)
}

/// Closed form of the anchor gradient,
/// `(1/tau) { sum_p z_p (P_ip - 1/|P|) + sum_n z_n P_in }`, by explicit loops.
pub fn anchor_gradient_reference(z: &Tensor<f64>, labels: &[usize], tau: f64, i: usize) -> Option<Vec<f64>> {
    let n = labels.len();
    let d = z.shape()[1];
    let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let m = (0..n).filter(|&a| a != i).map(|a| sim(z, i, a) / tau).fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (sim(z, i, a) / tau - m).exp()).sum();
    let p_of = |j: usize| (sim(z, i, j) / tau - m).exp() / denom;
    let mut g = vec![0.0; d];
    for &p in &pos {
        let c = p_of(p) - 1.0 / pos.len() as f64;
        for (gk, zk) in g.iter_mut().zip(z.row(p)) {
            *gk += zk * c;
        }
    }
    for neg in (0..n).filter(|&a| labels[a] != labels[i]) {
        let c = p_of(neg);
        for (gk, zk) in g.iter_mut().zip(z.row(neg)) {
            *gk += zk * c;
        }
    }
    g.iter_mut().for_each(|v| *v /= tau);
    Some(g)
}

fn supcon_checks(seed: u64, tolerance: f64) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::keyed(seed, Stream::Gradcheck, &[10]);
    let (mut closed, mut fd_anchor, mut fd_total) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let n = 2 + rng.below(9) as usize;
        let d = 2 + rng.below(5) as usize;
        let classes = 1 + rng.below(3) as usize;
        let tau = [0.05, 0.1, 0.5, 1.0][rng.below(4) as usize];
        let batch = random_batch(&mut rng, n, d, classes, tau);
        let (z, labels) = (batch.z().clone(), batch.labels().to_vec());
        for i in 0..n {
            let Some(reference) = anchor_gradient_reference(&z, &labels, tau, i) else {
                continue;
            };
            let analytic = supcon_grad_anchor(&batch, i)?.into_data();
            closed = closed.max(compare(&analytic, &reference).1);
            let mut zi = z.row(i).to_vec();
            let numeric = central_differences(&mut zi, |v| {
                let mut zz = z.clone();
                zz.row_mut(i).copy_from_slice(v);
                Ok(anchor_term_reference(&zz, &labels, tau, i).expect("positives unchanged"))
            })?;
            fd_anchor = fd_anchor.max(compare(&analytic, &numeric).1);
        }
        let analytic = supcon_grad_total(&batch).into_data();
        let mut flat = z.data().to_vec();
        let numeric = central_differences(&mut flat, |v| {
            let b = SupConBatch::new_unchecked(Tensor::new(vec![n, d], v.to_vec())?, labels.clone(), tau)?;
            Ok(supcon_loss(&b).loss)
        })?;
        fd_total = fd_total.max(compare(&analytic, &numeric).1);
    }
    Ok([
        ("supcon anchor gradient vs closed form", closed),
        ("supcon anchor gradient vs finite differences", fd_anchor),
        ("supcon total gradient vs finite differences", fd_total),
    ]
    .into_iter()
    .map(|(c, e)| CheckResult {
        component: c.into(),
        max_rel_err: e,
        tolerance,
        passed: e < tolerance,
    })
    .collect())
}

/// Miniature of `arch` (same layer sequence, small widths) plus the
/// normalization of `r`.
pub fn miniature_encoder(arch: ArchKind, seed: u64) -> Result<(Sequential<f64>, Vec<usize>)> {
    let mini = EncoderArch {
        filters_early: 3,
        filters_late: 4,
        kernel: 3,
        lstm_units: 3,
        ..EncoderArch::new(arch)
    };
    let mut specs = mini.layer_specs(6);
    specs.push(LayerSpec::L2norm { eps: 1e-12 });
    let mut rng = Rng::keyed(seed, Stream::Gradcheck, &[20]);
    Ok((Sequential::build(&specs, &mut rng)?, vec![6, 18]))
}

fn probe_check<D: Differentiable>(target: D, fault: bool, name: &str, x: &Tensor<f64>, seed: u64, tol: f64) -> Result<GradcheckReport> {
    if fault {
        check_target(&mut Perturbed { inner: target, factor: 1.01 }, name, x, seed, tol)
    } else {
        let mut t = target;
        check_target(&mut t, name, x, seed, tol)
    }
}

/// Every layer kind, the contrastive-loss gradients and a miniature encoder
/// of the chosen architecture, all in `f64`.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    for (spec, shape) in standard_cases() {
        let mut rng = Rng::keyed(cfg.seed, Stream::Gradcheck, &[0]);
        let mut layer = Layer::<f64>::build(&spec, &mut rng)?;
        for p in layer.params_mut() {
            if p.rank() == 1 {
                p.data_mut().iter_mut().for_each(|v| *v += rng.uniform_range(-0.5, 0.5));
            }
        }
        let x = Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0));
        let fault = cfg.inject_fault && matches!(spec, LayerSpec::Dense { .. });
        let report = probe_check(LayerProbe::new(layer, cfg.seed), fault, spec.kind(), &x, cfg.seed, cfg.tolerance)?;
        checks.push(CheckResult::from(&report));
    }
    checks.extend(supcon_checks(cfg.seed, cfg.tolerance)?);

    let (seq, shape) = miniature_encoder(cfg.arch, cfg.seed)?;
    let mut rng = Rng::keyed(cfg.seed, Stream::Gradcheck, &[21]);
    let x = Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0));
    let name = format!("{} encoder", cfg.arch);
    let report = probe_check(SequentialProbe::new(seq, cfg.seed), false, &name, &x, cfg.seed, cfg.tolerance)?;
    checks.push(CheckResult::from(&report));

    let passed = checks.iter().all(|c| c.passed);
    Ok(SuiteReport { checks, passed })
}
