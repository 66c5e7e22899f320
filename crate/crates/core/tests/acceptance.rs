//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=1,5,9` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sclair::data::{loso_splits, preprocess, preprocess_all, synth_recordings, ImuRecording, PreprocessConfig, PreprocessedSample, SynthConfig};
use sclair::layers::gradcheck::{gradcheck, standard_cases};
use sclair::losses::{supcon_grad_anchor, supcon_grad_total, supcon_loss, SupConBatch};
use sclair::model::{ArchKind, CountForm, ModelBundle, ModelConfig};
use sclair::rng::{Rng, Stream};
use sclair::train::{
    finetune, finetune_loso, fold_seed, loso_run, train_pipeline, train_stage1, train_stage2, LossMode, TrainConfig, TrainData,
};
use sclair::{Tensor, NUM_CLASSES};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const TAUS: [f64; 4] = [0.05, 0.1, 0.5, 1.0];
const ARCHS: [ArchKind; 5] = [ArchKind::Cnn1d, ArchKind::Lstm, ArchKind::Bilstm, ArchKind::Cnn1dLstm, ArchKind::Cnn1dBilstm];

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    let s = elapsed.as_secs_f64();
    if s < limit_s {
        Ok(())
    } else {
        Err(format!("took {s:.1} s, limit {limit_s} s"))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `||a - b|| / ||b||`, or `||a||` when `b` is zero.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(b);
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

struct RandomBatch {
    z: Vec<Vec<f64>>,
    labels: Vec<usize>,
    tau: f64,
}

impl RandomBatch {
    fn draw(rng: &mut Rng) -> Self {
        let n = 2 + rng.below(15) as usize;
        let d = 2 + rng.below(7) as usize;
        let classes = 1 + rng.below(4) as usize;
        let tau = TAUS[rng.below(4) as usize];
        let z = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let s = norm(&v);
                v.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let labels = (0..n).map(|_| rng.below(classes as u64) as usize).collect();
        RandomBatch { z, labels, tau }
    }

    fn tensor(&self) -> Tensor<f64> {
        Tensor::from_rows(&self.z).unwrap()
    }

    fn batch(&self) -> SupConBatch<f64> {
        SupConBatch::new(self.tensor(), self.labels.clone(), self.tau).unwrap()
    }

    fn positives(&self, i: usize) -> Vec<usize> {
        (0..self.z.len()).filter(|&p| p != i && self.labels[p] == self.labels[i]).collect()
    }

    /// `P_ia = exp(s_ia) / sum_{a' != i} exp(s_ia')`, zero at `a = i`.
    fn softmax_row(&self, i: usize) -> Vec<f64> {
        let n = self.z.len();
        let e: Vec<f64> = (0..n)
            .map(|a| if a == i { 0.0 } else { (dot(&self.z[i], &self.z[a]) / self.tau).exp() })
            .collect();
        let denom: f64 = e.iter().sum();
        e.into_iter().map(|x| x / denom).collect()
    }

    fn oracle_anchor(&self, i: usize) -> f64 {
        let pos = self.positives(i);
        if pos.is_empty() {
            return 0.0;
        }
        let n = self.z.len();
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (dot(&self.z[i], &self.z[a]) / self.tau).exp()).sum();
        let s: f64 = pos
            .iter()
            .map(|&p| ((dot(&self.z[i], &self.z[p]) / self.tau).exp() / denom).ln())
            .sum();
        -s / pos.len() as f64
    }

    /// Anchor `i`'s term with `z_i` replaced by `zi`, as
    /// `mean_p log1p(sum_{a != i, p} exp(zi . (z_a - z_p) / tau))`, which
    /// keeps full relative precision when the positives dominate.
    fn anchor_term_at(&self, i: usize, zi: &[f64]) -> f64 {
        let pos = self.positives(i);
        let n = self.z.len();
        let total: f64 = pos
            .iter()
            .map(|&p| {
                let x: f64 = (0..n)
                    .filter(|&a| a != i && a != p)
                    .map(|a| {
                        let diff: Vec<f64> = self.z[a].iter().zip(&self.z[p]).map(|(u, v)| u - v).collect();
                        (dot(zi, &diff) / self.tau).exp()
                    })
                    .sum();
                x.ln_1p()
            })
            .sum();
        total / pos.len() as f64
    }

    fn oracle_loss(&self) -> f64 {
        (0..self.z.len()).map(|i| self.oracle_anchor(i)).sum()
    }

    /// `(1/tau) { sum_p z_p (P_ip - 1/|P|) + sum_n z_n P_in }`, with the
    /// positive weights written as
    /// `(1/|P|) { sum_p' P_ip' (exp(s_ip - s_ip') - 1) - sum_n P_in }`
    /// so saturated anchors keep their precision.
    fn oracle_anchor_grad(&self, i: usize) -> Vec<f64> {
        let pos = self.positives(i);
        let p = self.softmax_row(i);
        let d = self.z[0].len();
        let neg_mass: f64 = (0..self.z.len()).filter(|&a| a != i && !pos.contains(&a)).map(|a| p[a]).sum();
        let mut g = vec![0.0; d];
        for a in 0..self.z.len() {
            if a == i {
                continue;
            }
            let coef = if pos.contains(&a) {
                let spread: f64 = pos
                    .iter()
                    .filter(|&&q| q != a)
                    .map(|&q| {
                        let diff: Vec<f64> = self.z[a].iter().zip(&self.z[q]).map(|(u, v)| u - v).collect();
                        p[q] * (dot(&self.z[i], &diff) / self.tau).exp_m1()
                    })
                    .sum();
                (spread - neg_mass) / pos.len() as f64
            } else {
                p[a]
            };
            for k in 0..d {
                g[k] += coef * self.z[a][k] / self.tau;
            }
        }
        g
    }
}

fn unchecked(z: &Tensor<f64>, labels: &[usize], tau: f64) -> SupConBatch<f64> {
    SupConBatch::new_unchecked(z.clone(), labels.to_vec(), tau).unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::keyed(1, Stream::Gradcheck, &[1]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rb = RandomBatch::draw(&mut rng);
        let got = supcon_loss(&rb.batch()).loss;
        let want = rb.oracle_loss();
        let err = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
        worst = worst.max(err);
        ensure!(err < 1e-10, "loss {got} vs oracle {want}: rel err {err:e}");
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("100 batches, worst rel err {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::keyed(2, Stream::Gradcheck, &[2]);
    let (mut worst_cf, mut worst_fd, mut anchors) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let rb = RandomBatch::draw(&mut rng);
        let batch = rb.batch();
        let d = rb.z[0].len();
        for i in 0..rb.z.len() {
            if rb.positives(i).is_empty() {
                continue;
            }
            anchors += 1;
            let got = supcon_grad_anchor(&batch, i).unwrap().as_f64_vec();
            let err = rel_err(&got, &rb.oracle_anchor_grad(i));
            worst_cf = worst_cf.max(err);
            ensure!(err < 1e-10, "anchor {i}: closed-form rel err {err:e}");
            let h = 1e-5;
            let fd: Vec<f64> = (0..d)
                .map(|k| {
                    let mut zi = rb.z[i].clone();
                    zi[k] += h;
                    let lp = rb.anchor_term_at(i, &zi);
                    zi[k] -= 2.0 * h;
                    let lm = rb.anchor_term_at(i, &zi);
                    (lp - lm) / (2.0 * h)
                })
                .collect();
            let err = rel_err(&got, &fd);
            worst_fd = worst_fd.max(err);
            ensure!(err < 1e-6, "anchor {i}: finite-difference rel err {err:e}");
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("{anchors} anchors, closed form {worst_cf:.2e}, finite differences {worst_fd:.2e}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::keyed(3, Stream::Gradcheck, &[3]);
    let mut worst = 0.0f64;
    for b in 0..20 {
        let rb = RandomBatch::draw(&mut rng);
        let z = rb.tensor();
        let got = supcon_grad_total(&rb.batch()).as_f64_vec();
        let h = 1e-5;
        let fd: Vec<f64> = (0..z.len())
            .map(|k| {
                let mut zp = z.clone();
                zp.data_mut()[k] += h;
                let mut zm = z.clone();
                zm.data_mut()[k] -= h;
                let lp = supcon_loss(&unchecked(&zp, &rb.labels, rb.tau)).loss;
                let lm = supcon_loss(&unchecked(&zm, &rb.labels, rb.tau)).loss;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let err = rel_err(&got, &fd);
        worst = worst.max(err);
        ensure!(err < 1e-5, "batch {b}: rel err {err:e}");
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("20 batches, worst rel err {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let cases = standard_cases();
    for (spec, shape) in &cases {
        for seed in 1..=3 {
            let report = gradcheck(spec, shape, seed, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_err());
            ensure!(report.passed, "{} seed {seed}: max rel err {:e}", report.component, report.max_rel_err());
        }
    }
    ensure!(cases.len() == 9, "{} layer kinds covered, expected 9", cases.len());
    within(start.elapsed(), 60.0)?;
    Ok(format!("9 kinds x 3 seeds, worst rel err {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::keyed(5, Stream::Gradcheck, &[5]);
    let mut checked = 0;
    for trial in 0..200 {
        let k = 2 + rng.below(6) as usize;
        let tau = TAUS[trial % 4];
        // Negative similarities, sorted and at least 1e-3 apart.
        let mut c: Vec<f64> = Vec::new();
        while c.len() < k {
            let v = rng.uniform_range(-0.95, 0.95);
            if c.iter().all(|x| (x - v).abs() > 1e-3) {
                c.push(v);
            }
        }
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = k + 2;
        let axis = |j: usize, w0: f64, wj: f64| {
            let mut v = vec![0.0; d];
            v[0] = w0;
            v[j] = wj;
            v
        };
        let phi = rng.uniform_range(0.1, 1.4);
        let mut rows = vec![axis(0, 1.0, 1.0), axis(1, phi.cos(), phi.sin())];
        for (j, &cj) in c.iter().enumerate() {
            rows.push(axis(j + 2, cj, (1.0 - cj * cj).sqrt()));
        }
        let mut labels = vec![0, 0];
        labels.extend((0..k).map(|j| 1 + j % (NUM_CLASSES - 1)));
        let batch = SupConBatch::new(Tensor::from_rows(&rows).unwrap(), labels, tau).unwrap();
        let g = supcon_grad_anchor(&batch, 0).unwrap().as_f64_vec();
        let denom: f64 = (phi.cos() / tau).exp() + c.iter().map(|cj| (cj / tau).exp()).sum::<f64>();
        let mut prev = f64::NEG_INFINITY;
        for (j, &cj) in c.iter().enumerate() {
            // Only negative j has a component on axis j + 2.
            let magnitude = g[j + 2].abs() / (1.0 - cj * cj).sqrt();
            let want = (cj / tau).exp() / denom / tau;
            ensure!(
                ((magnitude - want) / want).abs() < 1e-12,
                "trial {trial}: negative {j} contributes {magnitude:e}, expected {want:e}"
            );
            ensure!(magnitude > prev, "trial {trial}: contribution not increasing at similarity {cj}");
            prev = magnitude;
            checked += 1;
        }
    }
    Ok(format!("200 constructed batches, {checked} negatives strictly ordered"))
}

/// Conv `(C k + 1) F`, LSTM `4 H (I + H + 1)`, dense `(I + 1) O`.
fn scripted_count(kind: ArchKind) -> usize {
    let conv = |c: usize, f: usize| (c * 10 + 1) * f;
    let lstm = |i: usize, h: usize| 4 * h * (i + h + 1);
    let early = conv(6, 100) + conv(100, 100);
    let (body, width) = match kind {
        ArchKind::Cnn1d => (early + conv(100, 160) + conv(160, 160), 160),
        ArchKind::Lstm => (lstm(6, 256), 256),
        ArchKind::Bilstm => (2 * lstm(6, 256), 512),
        ArchKind::Cnn1dLstm => (early + lstm(100, 256), 256),
        ArchKind::Cnn1dBilstm => (early + 2 * lstm(100, 256), 512),
    };
    body + (width + 1) * NUM_CLASSES
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    for kind in ARCHS {
        let config = ModelConfig::new(kind);
        let scl = ModelBundle::<f32>::build(config.clone(), true, 42).map_err(|e| e.to_string())?.discard_projection();
        let ce = ModelBundle::<f32>::build(config, false, 42).map_err(|e| e.to_string())?;
        let (a, b) = (scl.param_count(CountForm::Inference), ce.param_count(CountForm::Inference));
        ensure!(a == b, "{kind}: scl inference {a} vs ce {b}");
        ensure!(a == scripted_count(kind), "{kind}: {a} parameters, scripted {}", scripted_count(kind));
        parts.push(format!("{kind} {a}"));
    }
    ensure!(scripted_count(ArchKind::Cnn1d) == 526_706, "1dcnn scripted count drifted");
    Ok(parts.join(", "))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::keyed(7, Stream::Gradcheck, &[7]);
    let config = PreprocessConfig::default();
    let mut checked_channels = 0;
    for case in 0..1000 {
        let len = 10 + rng.below(491) as usize;
        let rate = [62.0, 200.0, 400.0][rng.below(3) as usize];
        let resampled_len = ((len - 1) as f64 * 62.0 / rate).floor() as usize + 1;
        let mut data = Vec::with_capacity(6 * len);
        let mut constant = [false; 6];
        for (ch, flag) in constant.iter_mut().enumerate() {
            let offset = rng.uniform_range(-50.0, 50.0);
            let scale = 10f64.powf(rng.uniform_range(-3.0, 2.0));
            match rng.below(10) {
                0 => {
                    *flag = true;
                    data.extend(std::iter::repeat_n(0.0, len));
                }
                1 => {
                    *flag = resampled_len >= 155;
                    data.extend(std::iter::repeat_n(offset, len));
                }
                _ => data.extend((0..len).map(|t| offset + scale * ((t as f64 * 0.1 + ch as f64).sin() + rng.normal()))),
            }
        }
        let rec = ImuRecording::new(Tensor::new(vec![6, len], data).unwrap(), rate, case % NUM_CLASSES, "S01", 0).unwrap();
        let out: PreprocessedSample<f64> = preprocess(&rec, &config).map_err(|e| e.to_string())?;
        ensure!(out.matrix.shape() == [6, 155], "case {case}: shape {:?}", out.matrix.shape());
        for (ch, &flat) in constant.iter().enumerate() {
            let row = out.matrix.row(ch);
            let mean = row.iter().sum::<f64>() / 155.0;
            let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 155.0).sqrt();
            ensure!(mean.abs() < 1e-5, "case {case} channel {ch}: mean {mean:e}");
            if !flat {
                ensure!((std - 1.0).abs() <= 1e-3, "case {case} channel {ch}: std {std}");
                checked_channels += 1;
            }
        }
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!("1000 recordings, {checked_channels} non-constant channels at unit std"))
}

fn train_config(loss_mode: LossMode, arch: ArchKind) -> TrainConfig {
    TrainConfig {
        loss_mode,
        arch,
        ..TrainConfig::default()
    }
}

fn synthetic<T: sclair::Scalar>(cfg: &SynthConfig) -> Vec<PreprocessedSample<T>> {
    preprocess_all(&synth_recordings(cfg).unwrap(), &PreprocessConfig::default()).unwrap()
}

fn synth_small(subjects: usize, reps: usize) -> SynthConfig {
    SynthConfig {
        n_subjects: subjects,
        n_reps: reps,
        ..SynthConfig::default()
    }
}

fn criterion_8() -> Outcome {
    let samples: Vec<PreprocessedSample<f32>> = synthetic(&SynthConfig::default());
    let ids: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    let folds = loso_splits(&ids).map_err(|e| e.to_string())?;
    ensure!(folds.len() == 10, "{} folds", folds.len());
    for fold in &folds {
        let (train_idx, test_idx) = fold.partition(ids.iter().copied());
        let data = TrainData::split_subset(&samples, &train_idx, 0.2, fold_seed(42, fold.index)).map_err(|e| e.to_string())?;
        let subjects = |idx: &[usize]| idx.iter().map(|&i| ids[i]).collect::<BTreeSet<_>>();
        let test_subjects = subjects(&test_idx);
        ensure!(test_subjects.len() == 1 && test_subjects.contains(fold.test_subject.as_str()), "fold {}: test set spans {test_subjects:?}", fold.index);
        for part in [&data.train, &data.val] {
            ensure!(subjects(part).is_disjoint(&test_subjects), "fold {}: held-out subject leaks into training", fold.index);
        }
        let mut seen: Vec<usize> = data.train.iter().chain(&data.val).copied().collect();
        seen.sort_unstable();
        ensure!(seen == train_idx, "fold {}: train + val is not the training pool", fold.index);
        let mut counts: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
        for &i in &train_idx {
            counts.entry(samples[i].label).or_default().0 += 1;
        }
        for &i in &data.train {
            counts.entry(samples[i].label).or_default().1 += 1;
        }
        for &i in &data.val {
            counts.entry(samples[i].label).or_default().2 += 1;
        }
        ensure!(counts.len() == NUM_CLASSES, "fold {}: {} classes", fold.index, counts.len());
        for (label, (pool, train, val)) in counts {
            let want = (pool * 4).div_ceil(5);
            ensure!(train == want && val == pool - want, "fold {} class {label}: {train}/{val} of {pool}", fold.index);
        }
    }
    Ok("10 folds, disjoint subjects, 36/9 per class".into())
}

/// Projected wall time with folds spread over four workers. Folds are
/// assumed equally long.
fn four_core_projection(elapsed: Duration, folds: usize, jobs: usize) -> f64 {
    let rounds_here = folds.div_ceil(jobs);
    let rounds_four = folds.div_ceil(4);
    elapsed.as_secs_f64() * rounds_four as f64 / rounds_here as f64
}

fn criterion_9() -> Outcome {
    let samples: Vec<PreprocessedSample<f32>> = synthetic(&SynthConfig::default());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = cores.min(4);
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for mode in [LossMode::Scl, LossMode::Ce] {
        let config = train_config(mode, ArchKind::Cnn1d);
        let start = Instant::now();
        let outcome = loso_run(&samples, &config, jobs).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let projected = four_core_projection(elapsed, outcome.folds.len(), jobs);
        let acc = outcome.report.mean_accuracy;
        parts.push(format!(
            "{} mean {acc:.4} (pooled {:.4}) in {:.0} s on {jobs} job(s), {:.0} s projected on 4 cores",
            mode.tag(),
            outcome.report.pooled_accuracy,
            elapsed.as_secs_f64(),
            projected
        ));
        if acc < 0.90 {
            failures.push(format!("{} mean accuracy {acc:.4} < 0.90", mode.tag()));
        }
        if projected >= 15.0 * 60.0 {
            failures.push(format!("{} projected {projected:.0} s exceeds 15 minutes", mode.tag()));
        }
    }
    if failures.is_empty() {
        Ok(parts.join("; "))
    } else {
        Err(format!("{}; {}", failures.join("; "), parts.join("; ")))
    }
}

fn criterion_10() -> Outcome {
    let source_cfg = SynthConfig::default();
    let target_cfg = SynthConfig {
        n_subjects: 5,
        ..source_cfg.target_device()
    };
    let source: Vec<PreprocessedSample<f32>> = synthetic(&source_cfg);
    let target: Vec<PreprocessedSample<f32>> = synthetic(&target_cfg);
    let config = train_config(LossMode::Scl, ArchKind::Cnn1d);
    let data = TrainData::split(&source, config.val_ratio, config.seed).map_err(|e| e.to_string())?;
    let (bundle, _) = train_pipeline(&data, &config).map_err(|e| e.to_string())?;
    let transfer = finetune_loso(&bundle, &target, &config, 1).map_err(|e| e.to_string())?;
    let (zs, ft) = (transfer.zero_shot.mean_accuracy, transfer.finetuned.mean_accuracy);
    ensure!(ft >= zs, "finetuned {ft:.4} < zero-shot {zs:.4}");
    Ok(format!("zero-shot {zs:.4} -> finetuned {ft:.4}"))
}

fn encoder_bits(b: &ModelBundle<f32>) -> Vec<Vec<u32>> {
    b.encoder.params().iter().map(|t| t.data().iter().map(|v| v.to_bits()).collect()).collect()
}

fn criterion_11() -> Outcome {
    let samples: Vec<PreprocessedSample<f32>> = synthetic(&synth_small(3, 4));
    let config = TrainConfig {
        max_epochs: 2,
        ..train_config(LossMode::Scl, ArchKind::Cnn1d)
    };
    let data = TrainData::split(&samples, config.val_ratio, config.seed).map_err(|e| e.to_string())?;
    let (stage1, _) = train_stage1(&data, &config).map_err(|e| e.to_string())?;
    let frozen = encoder_bits(&stage1);
    let head_before = stage1.classifier.clone();
    let (stage2, _) = train_stage2(stage1.clone(), &data, &config).map_err(|e| e.to_string())?;
    ensure!(encoder_bits(&stage2) == frozen, "stage 2 changed encoder bytes");
    ensure!(stage2.classifier != head_before, "stage 2 left the classifier untouched");
    let (tuned, _) = finetune(&stage2, &data, &config, 0).map_err(|e| e.to_string())?;
    ensure!(encoder_bits(&tuned) == frozen, "finetune changed encoder bytes");
    let before = stage1.param_count(CountForm::Stage1);
    let expected = stage1.config.projection_param_count();
    let discarded = stage1.discard_projection();
    let removed = before - discarded.param_count(CountForm::Stage1);
    ensure!(removed == expected, "discard removed {removed} parameters, projection holds {expected}");
    ensure!(encoder_bits(&discarded) == frozen, "discard changed encoder bytes");
    Ok(format!("encoder fixed through stage 2 and finetune, discard removed {removed}"))
}

fn criterion_12() -> Outcome {
    let samples: Vec<PreprocessedSample<f32>> = synthetic(&synth_small(3, 5));
    let mut reports = Vec::new();
    for mode in [LossMode::Scl, LossMode::Ce] {
        let config = TrainConfig {
            max_epochs: 10,
            ..train_config(mode, ArchKind::Cnn1d)
        };
        let runs: Vec<String> = (0..2)
            .map(|_| loso_run(&samples, &config, 1).and_then(|o| o.to_json()).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        ensure!(runs[0] == runs[1], "{} reports differ between identical runs", mode.tag());
        reports.push(format!("{} {} bytes", mode.tag(), runs[0].len()));
    }
    Ok(format!("identical reports: {}", reports.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "supcon forward oracle", criterion_1),
        (2, "anchor gradient fidelity", criterion_2),
        (3, "total gradient check", criterion_3),
        (4, "layer gradchecks", criterion_4),
        (5, "hard-mining monotonicity", criterion_5),
        (6, "parameter counts", criterion_6),
        (7, "preprocessing invariants", criterion_7),
        (8, "loso hygiene", criterion_8),
        (9, "end-to-end learning", criterion_9),
        (10, "transfer direction", criterion_10),
        (11, "freeze/discard contracts", criterion_11),
        (12, "determinism", criterion_12),
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {id:>2} {name}: PASS ({detail}) [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({detail}) [{secs:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
