use log::{debug, info};

use super::{AdamState, EarlyStopping, EpochRecord, History, LossMode, StageHistory, TrainConfig, Verdict};
use crate::data::{make_batches, train_val_split, BatchMode, PreprocessedSample};
use crate::error::{Error, Result};
use crate::layers::{Cache, L2Cache, Mode, Sequential};
use crate::losses::{cross_entropy, supcon_forward_backward, supcon_loss, SupConBatch};
use crate::model::{ModelBundle, Stage};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::tensor::{softmax_stable, Tensor};

/// Samples plus the indices used for training and validation.
#[derive(Debug, Clone)]
pub struct TrainData<'a, T> {
    pub samples: &'a [PreprocessedSample<T>],
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl<'a, T: Scalar> TrainData<'a, T> {
    pub fn new(samples: &'a [PreprocessedSample<T>], train: Vec<usize>, val: Vec<usize>) -> Self {
        TrainData { samples, train, val }
    }

    /// Stratified split of the samples at `indices`.
    pub fn split_subset(samples: &'a [PreprocessedSample<T>], indices: &[usize], val_ratio: f64, seed: u64) -> Result<Self> {
        let labels: Vec<usize> = indices.iter().map(|&i| samples[i].label).collect();
        let split = train_val_split(&labels, 1.0 - val_ratio, seed)?;
        Ok(TrainData {
            samples,
            train: split.train.iter().map(|&k| indices[k]).collect(),
            val: split.val.iter().map(|&k| indices[k]).collect(),
        })
    }

    /// Stratified split of every sample.
    pub fn split(samples: &'a [PreprocessedSample<T>], val_ratio: f64, seed: u64) -> Result<Self> {
        let all: Vec<usize> = (0..samples.len()).collect();
        Self::split_subset(samples, &all, val_ratio, seed)
    }

    fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    fn require(&self, what: &str) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Training(format!("{what}: no training samples")));
        }
        if self.val.is_empty() {
            return Err(Error::Training(format!("{what}: no validation samples")));
        }
        Ok(())
    }
}

fn prefixed(prefix: &str, seq: &Sequential<impl Scalar>) -> Vec<String> {
    seq.param_names().into_iter().map(|n| format!("{prefix}.{n}")).collect()
}

struct Optimizer<T> {
    state: AdamState<T>,
    names: Vec<String>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    fn new(prefix: &str, seq: &Sequential<T>) -> Self {
        Optimizer {
            state: AdamState::new(seq.params()),
            names: prefixed(prefix, seq),
            grads: seq.zero_grads(),
        }
    }

    fn step(&mut self, seq: &mut Sequential<T>, lr: f64) -> Result<()> {
        self.state.update(seq.params_mut(), &self.grads, &self.names, lr)?;
        self.grads.iter_mut().for_each(Tensor::fill_zero);
        Ok(())
    }
}

/// Encoder activations kept for the backward pass.
struct EncoderTape<T> {
    caches: Vec<Cache<T>>,
    norm: Option<L2Cache<T>>,
}

fn encode_train<T: Scalar>(bundle: &ModelBundle<T>, x: &Tensor<T>, rng: &mut Rng) -> Result<(Tensor<T>, EncoderTape<T>)> {
    let (h, caches) = bundle.encoder.forward(x, Mode::Train, rng)?;
    Ok(match bundle.r_norm() {
        Some(n) => {
            let (r, c) = n.forward(&h);
            (r, EncoderTape { caches, norm: Some(c) })
        }
        None => (h, EncoderTape { caches, norm: None }),
    })
}

fn encode_backward<T: Scalar>(
    bundle: &ModelBundle<T>,
    tape: &EncoderTape<T>,
    grad_r: &Tensor<T>,
    grads: &mut [Tensor<T>],
) -> Result<()> {
    let grad_h = match (&tape.norm, bundle.r_norm()) {
        (Some(c), Some(n)) => n.backward(c, grad_r)?,
        _ => grad_r.clone(),
    };
    bundle.encoder.backward(&tape.caches, &grad_h, grads)?;
    Ok(())
}

fn stack<T: Scalar>(rows: &[Tensor<T>]) -> Result<Tensor<T>> {
    let d = rows.first().map_or(0, Tensor::len);
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        data.extend_from_slice(r.data());
    }
    Tensor::new(vec![rows.len(), d], data)
}

fn row_tensor<T: Scalar>(m: &Tensor<T>, i: usize) -> Tensor<T> {
    Tensor::vector(m.row(i).to_vec())
}

struct EpochTally {
    loss: f64,
    weight: f64,
    skipped: usize,
}

impl EpochTally {
    fn new() -> Self {
        EpochTally {
            loss: 0.0,
            weight: 0.0,
            skipped: 0,
        }
    }

    fn mean(&self) -> f64 {
        if self.weight > 0.0 {
            self.loss / self.weight
        } else {
            f64::NAN
        }
    }
}

/// Mean contrastive loss per active anchor on fixed validation batches.
fn scl_val_loss<T: Scalar>(bundle: &ModelBundle<T>, samples: &[PreprocessedSample<T>], batches: &[Vec<usize>], tau: f64) -> Result<(f64, usize)> {
    let mut tally = EpochTally::new();
    for batch in batches {
        let mut zs = Vec::with_capacity(batch.len());
        for &i in batch {
            zs.push(bundle.project(&bundle.encode(&samples[i].matrix)?)?);
        }
        let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();
        let sb = SupConBatch::new_unchecked(stack(&zs)?, labels, T::lit(tau))?;
        let l = supcon_loss(&sb);
        tally.loss += l.loss.as_f64();
        tally.weight += l.active_anchors() as f64;
        tally.skipped += l.skipped;
    }
    if tally.weight == 0.0 {
        return Err(Error::Training(
            "no validation anchor has a same-letter partner in its batch, so the contrastive validation loss is undefined; \
             use more repetitions per letter or a larger val_ratio"
                .into(),
        ));
    }
    Ok((tally.mean(), tally.skipped))
}

/// Stage 1: encoder and projection head trained with the contrastive loss.
pub fn train_stage1<T: Scalar>(data: &TrainData<T>, config: &TrainConfig) -> Result<(ModelBundle<T>, StageHistory)> {
    config.validate()?;
    if config.loss_mode != LossMode::Scl {
        return Err(Error::invalid("train_stage1 requires loss_mode scl"));
    }
    data.require("stage 1")?;
    let seed = config.seed;
    let labels = data.labels();
    let mut bundle = ModelBundle::<T>::build(config.model_config(), true, seed)?;
    bundle.provenance.loss_mode = "scl".into();
    let mut enc_opt = Optimizer::new("encoder", &bundle.encoder);
    let mut proj_opt = Optimizer::new("projection", bundle.projection.as_ref().expect("stage-1 bundle"));
    let val_batches = make_batches(&data.val, &labels, config.batch_size, seed, u64::MAX, BatchMode::Scl, config.balanced_batches)?.batches;
    let tau = T::lit(config.tau);

    let mut early = EarlyStopping::with_min_delta(config.patience, config.min_delta);
    let mut best: Option<(Sequential<T>, Sequential<T>)> = None;
    let mut history = StageHistory::new("stage1");
    for epoch in 1..=config.max_epochs {
        let batches = make_batches(&data.train, &labels, config.batch_size, seed, epoch as u64, BatchMode::Scl, config.balanced_batches)?;
        let mut rng = Rng::keyed(seed, Stream::Dropout, &[1, epoch as u64]);
        let mut tally = EpochTally::new();
        for batch in &batches.batches {
            let projection = bundle.projection.as_ref().expect("stage-1 bundle");
            let mut zs = Vec::with_capacity(batch.len());
            let mut tapes = Vec::with_capacity(batch.len());
            for &i in batch {
                let (r, tape) = encode_train(&bundle, &data.samples[i].matrix, &mut rng)?;
                let (z, pc) = projection.forward(&r, Mode::Train, &mut rng)?;
                zs.push(z);
                tapes.push((tape, pc));
            }
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let sb = SupConBatch::new_unchecked(stack(&zs)?, batch_labels, tau)?;
            let (loss, grad_z) = supcon_forward_backward(&sb);
            tally.skipped += loss.skipped;
            let active = loss.active_anchors();
            if active == 0 {
                continue;
            }
            tally.loss += loss.loss.as_f64();
            tally.weight += active as f64;
            let scale = T::lit(1.0 / active as f64);
            for (k, (tape, pc)) in tapes.iter().enumerate() {
                let mut gz = row_tensor(&grad_z, k);
                gz.scale(scale);
                let gr = projection.backward(pc, &gz, &mut proj_opt.grads)?;
                encode_backward(&bundle, tape, &gr, &mut enc_opt.grads)?;
            }
            enc_opt.step(&mut bundle.encoder, config.learning_rate)?;
            proj_opt.step(bundle.projection.as_mut().expect("stage-1 bundle"), config.learning_rate)?;
        }
        if tally.weight == 0.0 {
            return Err(Error::Training(format!(
                "stage 1 epoch {epoch}: every anchor was skipped (no batch contained a same-class pair); \
                 increase batch_size or enable balanced batches"
            )));
        }
        let (val_loss, _) = scl_val_loss(&bundle, data.samples, &val_batches, config.tau)?;
        debug!("stage1 epoch {epoch}: train {:.5} val {val_loss:.5}", tally.mean());
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: tally.mean(),
            val_loss,
            val_accuracy: None,
            skipped_anchors: tally.skipped,
        });
        let verdict = early.observe(epoch, val_loss)?;
        if verdict == Verdict::Improved {
            best = Some((bundle.encoder.clone(), bundle.projection.clone().expect("stage-1 bundle")));
        }
        if verdict == Verdict::Stop {
            history.stopped_early = true;
            break;
        }
    }
    history.finish(&early);
    if config.restore_best {
        if let Some((enc, proj)) = best {
            bundle.encoder = enc;
            bundle.projection = Some(proj);
        }
    }
    info!(
        "stage1 finished after {} epochs, best epoch {} (val {:.5})",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss
    );
    Ok((bundle, history))
}

/// Classifier outputs for a set of cached representations.
fn classifier_eval<T: Scalar>(classifier: &Sequential<T>, reps: &[Tensor<T>], labels: &[usize]) -> Result<(f64, f64)> {
    let mut probs = Vec::with_capacity(reps.len());
    let mut correct = 0usize;
    for (r, &y) in reps.iter().zip(labels) {
        let p = softmax_stable(&classifier.infer(r)?)?;
        correct += usize::from(p.argmax() == Some(y));
        probs.push(p);
    }
    let ce = cross_entropy(&stack(&probs)?, labels)?;
    Ok((ce.loss.as_f64(), correct as f64 / reps.len() as f64))
}

/// Trains only the classifier head on frozen representations.
fn train_classifier<T: Scalar>(bundle: &mut ModelBundle<T>, data: &TrainData<T>, config: &TrainConfig, stage: &str, stream: u64) -> Result<StageHistory> {
    data.require(stage)?;
    let seed = config.seed;
    let encode_all = |idx: &[usize]| -> Result<Vec<Tensor<T>>> { idx.iter().map(|&i| bundle.encode(&data.samples[i].matrix)).collect() };
    let r_train = encode_all(&data.train)?;
    let r_val = encode_all(&data.val)?;
    let y_train: Vec<usize> = data.train.iter().map(|&i| data.samples[i].label).collect();
    let y_val: Vec<usize> = data.val.iter().map(|&i| data.samples[i].label).collect();
    let positions: Vec<usize> = (0..r_train.len()).collect();

    let mut opt = Optimizer::new("classifier", &bundle.classifier);
    let mut early = EarlyStopping::with_min_delta(config.patience, config.min_delta);
    let mut best = None;
    let mut history = StageHistory::new(stage);
    for epoch in 1..=config.max_epochs {
        let batches = make_batches(&positions, &y_train, config.batch_size, seed, (stream << 32) | epoch as u64, BatchMode::Ce, config.balanced_batches)?;
        let mut rng = Rng::keyed(seed, Stream::Dropout, &[stream, epoch as u64]);
        let mut tally = EpochTally::new();
        for batch in &batches.batches {
            let mut probs = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            for &k in batch {
                let (logits, c) = bundle.classifier.forward(&r_train[k], Mode::Train, &mut rng)?;
                probs.push(softmax_stable(&logits)?);
                caches.push(c);
            }
            let labels: Vec<usize> = batch.iter().map(|&k| y_train[k]).collect();
            let ce = cross_entropy(&stack(&probs)?, &labels)?;
            tally.loss += ce.loss.as_f64() * batch.len() as f64;
            tally.weight += batch.len() as f64;
            for (k, c) in caches.iter().enumerate() {
                bundle.classifier.backward(c, &row_tensor(&ce.grad_logits, k), &mut opt.grads)?;
            }
            opt.step(&mut bundle.classifier, config.learning_rate)?;
        }
        let (val_loss, val_acc) = classifier_eval(&bundle.classifier, &r_val, &y_val)?;
        debug!("{stage} epoch {epoch}: train {:.5} val {val_loss:.5} acc {val_acc:.4}", tally.mean());
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: tally.mean(),
            val_loss,
            val_accuracy: Some(val_acc),
            skipped_anchors: 0,
        });
        let verdict = early.observe(epoch, val_loss)?;
        if verdict == Verdict::Improved {
            best = Some(bundle.classifier.clone());
        }
        if verdict == Verdict::Stop {
            history.stopped_early = true;
            break;
        }
    }
    history.finish(&early);
    if config.restore_best {
        if let Some(c) = best {
            bundle.classifier = c;
        }
    }
    bundle.provenance.classifier_trained = true;
    bundle.provenance.stage = Stage::Inference;
    Ok(history)
}

/// Stage 2: projection discarded, classifier trained on the frozen encoder.
pub fn train_stage2<T: Scalar>(bundle: ModelBundle<T>, data: &TrainData<T>, config: &TrainConfig) -> Result<(ModelBundle<T>, StageHistory)> {
    config.validate()?;
    if bundle.projection.is_none() {
        return Err(Error::invalid("train_stage2 expects a stage-1 bundle with a projection head"));
    }
    let mut bundle = bundle.discard_projection();
    let history = train_classifier(&mut bundle, data, config, "stage2", 2)?;
    Ok((bundle, history))
}

/// Single-stage cross-entropy baseline: encoder and classifier trained
/// jointly, no projection head.
pub fn train_ce<T: Scalar>(data: &TrainData<T>, config: &TrainConfig) -> Result<(ModelBundle<T>, StageHistory)> {
    config.validate()?;
    if config.loss_mode != LossMode::Ce {
        return Err(Error::invalid("train_ce requires loss_mode ce"));
    }
    data.require("ce")?;
    let seed = config.seed;
    let labels = data.labels();
    let mut bundle = ModelBundle::<T>::build(config.model_config(), false, seed)?;
    bundle.provenance.loss_mode = "ce".into();
    let mut enc_opt = Optimizer::new("encoder", &bundle.encoder);
    let mut cls_opt = Optimizer::new("classifier", &bundle.classifier);
    let y_val: Vec<usize> = data.val.iter().map(|&i| labels[i]).collect();

    let mut early = EarlyStopping::with_min_delta(config.patience, config.min_delta);
    let mut best = None;
    let mut history = StageHistory::new("ce");
    for epoch in 1..=config.max_epochs {
        let batches = make_batches(&data.train, &labels, config.batch_size, seed, epoch as u64, BatchMode::Ce, config.balanced_batches)?;
        let mut rng = Rng::keyed(seed, Stream::Dropout, &[3, epoch as u64]);
        let mut tally = EpochTally::new();
        for batch in &batches.batches {
            let mut probs = Vec::with_capacity(batch.len());
            let mut tapes = Vec::with_capacity(batch.len());
            for &i in batch {
                let (r, tape) = encode_train(&bundle, &data.samples[i].matrix, &mut rng)?;
                let (logits, c) = bundle.classifier.forward(&r, Mode::Train, &mut rng)?;
                probs.push(softmax_stable(&logits)?);
                tapes.push((tape, c));
            }
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let ce = cross_entropy(&stack(&probs)?, &batch_labels)?;
            tally.loss += ce.loss.as_f64() * batch.len() as f64;
            tally.weight += batch.len() as f64;
            for (k, (tape, c)) in tapes.iter().enumerate() {
                let gr = bundle.classifier.backward(c, &row_tensor(&ce.grad_logits, k), &mut cls_opt.grads)?;
                encode_backward(&bundle, tape, &gr, &mut enc_opt.grads)?;
            }
            enc_opt.step(&mut bundle.encoder, config.learning_rate)?;
            cls_opt.step(&mut bundle.classifier, config.learning_rate)?;
        }
        let r_val: Vec<Tensor<T>> = data.val.iter().map(|&i| bundle.encode(&data.samples[i].matrix)).collect::<Result<_>>()?;
        let (val_loss, val_acc) = classifier_eval(&bundle.classifier, &r_val, &y_val)?;
        debug!("ce epoch {epoch}: train {:.5} val {val_loss:.5} acc {val_acc:.4}", tally.mean());
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: tally.mean(),
            val_loss,
            val_accuracy: Some(val_acc),
            skipped_anchors: 0,
        });
        let verdict = early.observe(epoch, val_loss)?;
        if verdict == Verdict::Improved {
            best = Some((bundle.encoder.clone(), bundle.classifier.clone()));
        }
        if verdict == Verdict::Stop {
            history.stopped_early = true;
            break;
        }
    }
    history.finish(&early);
    if config.restore_best {
        if let Some((enc, cls)) = best {
            bundle.encoder = enc;
            bundle.classifier = cls;
        }
    }
    bundle.provenance.classifier_trained = true;
    info!("ce finished after {} epochs, best epoch {}", history.epochs.len(), history.best_epoch);
    Ok((bundle, history))
}

/// Runs the configured pipeline: two stages for `scl`, one for `ce`.
pub fn train_pipeline<T: Scalar>(data: &TrainData<T>, config: &TrainConfig) -> Result<(ModelBundle<T>, History)> {
    let mut history = History::default();
    let bundle = match config.loss_mode {
        LossMode::Scl => {
            let (b, h1) = train_stage1(data, config)?;
            history.stages.push(h1);
            let (b, h2) = train_stage2(b, data, config)?;
            history.stages.push(h2);
            b
        }
        LossMode::Ce => {
            let (b, h) = train_ce(data, config)?;
            history.stages.push(h);
            b
        }
    };
    Ok((bundle, history))
}

/// Retrains the classifier head on target data with the encoder frozen.
/// `round` keys the fresh head so LOSO folds get independent inits.
pub fn finetune<T: Scalar>(bundle: &ModelBundle<T>, data: &TrainData<T>, config: &TrainConfig, round: u64) -> Result<(ModelBundle<T>, StageHistory)> {
    config.validate()?;
    if bundle.config.arch.kind != config.arch {
        return Err(Error::invalid(format!(
            "architecture mismatch: model is {}, config asks for {}",
            bundle.config.arch.kind, config.arch
        )));
    }
    if data.train.is_empty() {
        return Err(Error::Training("fine-tuning needs at least one labelled target sample".into()));
    }
    let mut tuned = bundle.clone();
    if tuned.projection.is_some() {
        tuned = tuned.discard_projection();
    }
    if !config.warm_start_head {
        tuned.reset_classifier(config.seed, round + 1)?;
    }
    let history = train_classifier(&mut tuned, data, config, "finetune", 4 + round)?;
    Ok((tuned, history))
}

impl StageHistory {
    fn new(stage: &str) -> Self {
        StageHistory {
            stage: stage.into(),
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_loss: f64::NAN,
            stopped_early: false,
        }
    }

    fn finish(&mut self, early: &EarlyStopping) {
        self.best_epoch = early.best_epoch().unwrap_or(0);
        self.best_val_loss = early.best_loss().unwrap_or(f64::NAN);
    }
}
