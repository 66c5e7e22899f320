//! Supervised contrastive loss and cross-entropy, forward and backward.
//!
//! For a batch of unit vectors `z_1..z_N` with labels, temperature `tau` and
//! logits `s_ij = z_i . z_j / tau`, anchor `i` contributes
//!
//! ```text
//! l_i = -1/|P(i)| * sum_{p in P(i)} log( exp(s_ip) / sum_{a != i} exp(s_ia) )
//!     = lse_i - mean_{p in P(i)} s_ip
//! ```
//!
//! where `P(i)` are the other samples sharing `i`'s label. The batch loss is
//! the plain sum over anchors. Anchors without positives contribute zero and
//! are counted as skipped.
//!
//! Differentiating `l_i` with respect to `s_ij` gives the coefficient
//! `G_ij = softmax_i(j) - [j in P(i)] / |P(i)|`, from which both the
//! anchor-only partial `(1/tau) sum_j G_ij z_j` and the full gradient
//! `(1/tau) (G + G^T) Z` follow.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, log_sum_exp, softmax_slice, Op, Tensor};
use crate::NUM_CLASSES;

/// Tolerance on the unit-norm check of each row of `z`.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// Projection outputs, labels and temperature for one contrastive batch.
#[derive(Debug, Clone)]
pub struct SupConBatch<T> {
    z: Tensor<T>,
    labels: Vec<usize>,
    tau: T,
}

impl<T: Scalar> SupConBatch<T> {
    /// Validates `N >= 2`, `tau > 0`, labels in range and unit-norm rows.
    pub fn new(z: Tensor<T>, labels: Vec<usize>, tau: T) -> Result<Self> {
        let batch = Self::new_unchecked(z, labels, tau)?;
        for i in 0..batch.len() {
            let n = batch.z.row(i).iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "supcon: row {i} of z has norm {n}, expected 1"
                )));
            }
        }
        Ok(batch)
    }

    /// Skips the unit-norm check. Finite-difference probes perturb rows off
    /// the sphere and need this.
    pub fn new_unchecked(z: Tensor<T>, labels: Vec<usize>, tau: T) -> Result<Self> {
        let (n, _) = z.dims2()?;
        if n < 2 {
            return Err(Error::invalid(format!("supcon: batch of {n} rows, need at least 2")));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "supcon: {} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::invalid(format!("supcon: label {bad} outside 0..{NUM_CLASSES}")));
        }
        if !(tau > T::zero()) {
            return Err(Error::invalid(format!("supcon: temperature {tau} must be positive")));
        }
        Ok(SupConBatch { z, labels, tau })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn z(&self) -> &Tensor<T> {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    /// Logits `s_ij = z_i . z_j / tau`, `[N, N]`.
    pub fn logits(&self) -> Tensor<T> {
        let (n, d) = self.z.dims2().expect("validated as a matrix");
        let mut sim = vec![T::zero(); n * n];
        gemm(
            Op::N,
            Op::T,
            n,
            d,
            n,
            T::one() / self.tau,
            self.z.data(),
            self.z.data(),
            T::zero(),
            &mut sim,
        );
        Tensor::new(vec![n, n], sim).expect("n x n")
    }

    pub fn positives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let li = self.labels[i];
        (0..self.len()).filter(move |&j| j != i && self.labels[j] == li)
    }
}

#[derive(Debug, Clone)]
pub struct SupConLoss<T> {
    /// Sum over anchors.
    pub loss: T,
    /// One term per anchor; zero for skipped anchors.
    pub per_anchor: Vec<T>,
    /// Anchors with no positive in the batch.
    pub skipped: usize,
}

impl<T: Scalar> SupConLoss<T> {
    pub fn active_anchors(&self) -> usize {
        self.per_anchor.len() - self.skipped
    }

    /// Sum divided by the number of non-skipped anchors (the logged value).
    pub fn mean_per_active_anchor(&self) -> Option<T> {
        match self.active_anchors() {
            0 => None,
            n => Some(self.loss / T::lit(n as f64)),
        }
    }
}

pub fn supcon_loss<T: Scalar>(batch: &SupConBatch<T>) -> SupConLoss<T> {
    supcon_from_logits(&batch.logits(), &batch.labels).expect("batch validated")
}

/// The loss evaluated from a precomputed `[N, N]` logit matrix (diagonal ignored).
pub fn supcon_from_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<SupConLoss<T>> {
    let (n, m) = logits.dims2()?;
    if n != m || labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "supcon_from_logits",
            left: logits.shape().to_vec(),
            right: vec![labels.len(), labels.len()],
        });
    }
    let mut per_anchor = vec![T::zero(); n];
    let mut skipped = 0;
    for i in 0..n {
        let row = logits.row(i);
        let (pos_sum, pos_count) = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .fold((T::zero(), 0usize), |(s, c), j| (s + row[j], c + 1));
        if pos_count == 0 {
            skipped += 1;
            continue;
        }
        let lse = log_sum_exp(others(row, i));
        per_anchor[i] = lse - pos_sum / T::lit(pos_count as f64);
    }
    let loss = per_anchor.iter().copied().sum();
    Ok(SupConLoss {
        loss,
        per_anchor,
        skipped,
    })
}

fn others<T: Scalar>(row: &[T], skip: usize) -> impl Iterator<Item = T> + Clone + '_ {
    row.iter()
        .enumerate()
        .filter(move |(j, _)| *j != skip)
        .map(|(_, &v)| v)
}

/// `dl_i / ds_ij` for every anchor (rows of skipped anchors are zero).
fn coefficients<T: Scalar>(batch: &SupConBatch<T>) -> Tensor<T> {
    let logits = batch.logits();
    let n = batch.len();
    let mut g = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        if let Some(row) = anchor_coefficients(batch, &logits, i) {
            g.row_mut(i).copy_from_slice(&row);
        }
    }
    g
}

fn anchor_coefficients<T: Scalar>(batch: &SupConBatch<T>, logits: &Tensor<T>, i: usize) -> Option<Vec<T>> {
    let n = batch.len();
    let pos: Vec<usize> = batch.positives(i).collect();
    if pos.is_empty() {
        return None;
    }
    let row = logits.row(i);
    let probs = softmax_slice(&others(row, i).collect::<Vec<_>>());
    let mut coef = vec![T::zero(); n];
    for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
        coef[j] = probs[k];
    }
    // P_ip - 1/|P| cancels when the positives hold almost all the mass, so
    // use the equivalent (1/|P|) { sum_p' (P_ip - P_ip') - sum_n P_in } with
    // P_ip - P_ip' = P_ip' expm1(s_ip - s_ip').
    let inv = T::one() / T::lit(pos.len() as f64);
    let neg_mass = (0..n)
        .filter(|&j| j != i && !pos.contains(&j))
        .fold(T::zero(), |acc, j| acc + coef[j]);
    let pos_coef: Vec<T> = pos
        .iter()
        .map(|&p| {
            let spread = pos
                .iter()
                .filter(|&&q| q != p)
                .fold(T::zero(), |acc, &q| acc + coef[q] * (row[p] - row[q]).exp_m1());
            inv * (spread - neg_mass)
        })
        .collect();
    for (&p, c) in pos.iter().zip(pos_coef) {
        coef[p] = c;
    }
    Some(coef)
}

/// Partial derivative of anchor `i`'s own term with respect to `z_i`,
/// holding every other row fixed:
/// `(1/tau) { sum_p z_p (P_ip - 1/|P(i)|) + sum_n z_n P_in }`.
pub fn supcon_grad_anchor<T: Scalar>(batch: &SupConBatch<T>, i: usize) -> Result<Tensor<T>> {
    if i >= batch.len() {
        return Err(Error::invalid(format!("anchor {i} outside batch of {}", batch.len())));
    }
    let logits = batch.logits();
    let coef = anchor_coefficients(batch, &logits, i).ok_or_else(|| {
        Error::invalid(format!("anchor {i} has no positives; its gradient is undefined"))
    })?;
    let (_, d) = batch.z.dims2()?;
    let mut out = vec![T::zero(); d];
    gemm(
        Op::N,
        Op::N,
        1,
        batch.len(),
        d,
        T::one() / batch.tau,
        &coef,
        batch.z.data(),
        T::zero(),
        &mut out,
    );
    Ok(Tensor::vector(out))
}

/// Gradient of the summed loss with respect to every row of `z`, `[N, D]`.
/// Each `z_k` appears as an anchor and inside other anchors' terms; both
/// routes are included.
pub fn supcon_grad_total<T: Scalar>(batch: &SupConBatch<T>) -> Tensor<T> {
    let n = batch.len();
    let (_, d) = batch.z.dims2().expect("validated");
    let g = coefficients(batch);
    let mut sym = g.clone();
    for i in 0..n {
        for j in 0..n {
            sym.data_mut()[i * n + j] += g.data()[j * n + i];
        }
    }
    let mut out = vec![T::zero(); n * d];
    gemm(
        Op::N,
        Op::N,
        n,
        n,
        d,
        T::one() / batch.tau,
        sym.data(),
        batch.z.data(),
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![n, d], out).expect("n x d")
}

/// Loss and total gradient in one pass.
pub fn supcon_forward_backward<T: Scalar>(batch: &SupConBatch<T>) -> (SupConLoss<T>, Tensor<T>) {
    (supcon_loss(batch), supcon_grad_total(batch))
}

#[derive(Debug, Clone)]
pub struct CrossEntropy<T> {
    /// Batch mean of `-log p(true class)`.
    pub loss: T,
    /// Gradient with respect to the pre-softmax logits, `(p - onehot) / N`.
    pub grad_logits: Tensor<T>,
}

/// Probabilities below this are clamped before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of softmax outputs `probs` (`[N, K]`) against `labels`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<CrossEntropy<T>> {
    let (n, k) = probs.dims2()?;
    if n == 0 {
        return Err(Error::Empty("cross_entropy"));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("cross_entropy: {} labels for {n} rows", labels.len())));
    }
    let floor = T::lit(PROB_FLOOR);
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        if y >= k || y >= NUM_CLASSES {
            return Err(Error::invalid(format!(
                "cross_entropy: label {y} outside 0..{}",
                k.min(NUM_CLASSES)
            )));
        }
        let row = probs.row(i);
        let s: f64 = row.iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("cross_entropy: row {i} sums to {s}, not 1")));
        }
        loss -= row[y].max(floor).ln();
        let g = grad.row_mut(i);
        g[y] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(CrossEntropy {
        loss: loss * inv_n,
        grad_logits: grad,
    })
}
