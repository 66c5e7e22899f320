use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;
use serde::{Deserialize, Serialize};

use super::eval::tally;
use super::{finetune, train_pipeline, ConfusionMatrix, EvalReport, History, TrainConfig, TrainData};
use crate::data::{loso_splits, Fold, PreprocessedSample};
use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::rng::{stream_id, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_subject: String,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub history: History,
    pub encoder_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosoOutcome {
    pub report: EvalReport,
    pub folds: Vec<FoldOutcome>,
}

#[derive(Serialize)]
struct LosoReport<'a> {
    command: &'static str,
    #[serde(flatten)]
    report: &'a EvalReport,
    folds: &'a [FoldOutcome],
}

impl LosoOutcome {
    /// The report as written by the `loso` command.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&LosoReport {
            command: "loso",
            report: &self.report,
            folds: &self.folds,
        })?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub zero_shot: EvalReport,
    pub finetuned: EvalReport,
    pub folds: Vec<FoldOutcome>,
    pub encoder_digest: String,
}

struct FoldResult {
    outcome: FoldOutcome,
    tallies: BTreeMap<String, (u64, u64)>,
    confusion: ConfusionMatrix,
}

/// Seed owned by one fold.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    stream_id(Stream::Fold, &[seed, fold as u64])
}

fn subject_ids<T>(samples: &[PreprocessedSample<T>]) -> Vec<&str> {
    samples.iter().map(|s| s.subject_id.as_str()).collect()
}

/// Runs `work` on every fold, `jobs` at a time, returning results in fold
/// order. The first failure aborts with its fold id.
fn run_folds<R: Send>(folds: &[Fold], jobs: usize, work: impl Fn(&Fold) -> Result<R> + Sync) -> Result<Vec<R>> {
    let wrap = |f: &Fold, e: Error| Error::Evaluation(format!("fold {} (subject {}) failed: {e}", f.index, f.test_subject));
    if jobs <= 1 {
        return folds.iter().map(|f| work(f).map_err(|e| wrap(f, e))).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..folds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(folds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= folds.len() {
                    break;
                }
                let r = work(&folds[i]);
                results.lock().expect("fold results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("fold results lock")
        .into_iter()
        .zip(folds)
        .map(|(r, f)| r.expect("every fold ran").map_err(|e| wrap(f, e)))
        .collect()
}

fn check_hygiene<T>(samples: &[PreprocessedSample<T>], data: &TrainData<T>, fold: &Fold) -> Result<()> {
    for &i in data.train.iter().chain(&data.val) {
        if samples[i].subject_id == fold.test_subject {
            return Err(Error::Evaluation(format!(
                "subject {} leaked into the training data of its own fold",
                fold.test_subject
            )));
        }
    }
    Ok(())
}

fn aggregate(results: Vec<FoldResult>) -> Result<(EvalReport, Vec<FoldOutcome>)> {
    let mut tallies = BTreeMap::new();
    let mut cm = ConfusionMatrix::default();
    let mut folds = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for r in results {
        tallies.extend(r.tallies);
        cm.merge(&r.confusion);
        skipped += r.outcome.history.skipped_anchors();
        folds.push(r.outcome);
    }
    let mut report = EvalReport::from_tallies(&tallies, cm, 5)?;
    report.skipped_anchors = skipped;
    Ok((report, folds))
}

/// Leave-one-subject-out: train on every other subject (stratified
/// train/validation split), evaluate on the held-out one.
pub fn loso_run<T: Scalar>(samples: &[PreprocessedSample<T>], config: &TrainConfig, jobs: usize) -> Result<LosoOutcome> {
    config.validate()?;
    let ids = subject_ids(samples);
    let folds = loso_splits(&ids)?;
    let results = run_folds(&folds, jobs, |fold| {
        let (train_idx, test_idx) = fold.partition(ids.iter().copied());
        let cfg = TrainConfig {
            seed: fold_seed(config.seed, fold.index),
            ..config.clone()
        };
        let data = TrainData::split_subset(samples, &train_idx, cfg.val_ratio, cfg.seed)?;
        check_hygiene(samples, &data, fold)?;
        let (bundle, history) = train_pipeline(&data, &cfg)?;
        let mut tallies = BTreeMap::new();
        let mut confusion = ConfusionMatrix::default();
        tally(&bundle, test_idx.iter().map(|&i| &samples[i]), &mut tallies, &mut confusion)?;
        let accuracy = confusion.accuracy();
        info!("fold {} ({}): accuracy {accuracy:.4}", fold.index, fold.test_subject);
        Ok(FoldResult {
            outcome: FoldOutcome {
                fold: fold.index,
                test_subject: fold.test_subject.clone(),
                accuracy,
                n_train: data.train.len(),
                n_val: data.val.len(),
                n_test: test_idx.len(),
                history,
                encoder_digest: bundle.encoder_digest(),
            },
            tallies,
            confusion,
        })
    })?;
    let (report, folds) = aggregate(results)?;
    Ok(LosoOutcome { report, folds })
}

/// Zero-shot evaluation of `bundle` on the target samples, then LOSO over
/// the target subjects with only the classifier head retrained.
pub fn finetune_loso<T: Scalar>(bundle: &ModelBundle<T>, target: &[PreprocessedSample<T>], config: &TrainConfig, jobs: usize) -> Result<TransferOutcome> {
    config.validate()?;
    if target.is_empty() {
        return Err(Error::Training("fine-tuning needs at least one labelled target sample".into()));
    }
    let base = if bundle.projection.is_some() {
        bundle.clone().discard_projection()
    } else {
        bundle.clone()
    };
    let digest = base.encoder_digest();
    let zero_shot = super::evaluate(&base, target)?;
    let ids = subject_ids(target);
    let folds = loso_splits(&ids)?;
    let results = run_folds(&folds, jobs, |fold| {
        let (train_idx, test_idx) = fold.partition(ids.iter().copied());
        let data = TrainData::split_subset(target, &train_idx, config.val_ratio, fold_seed(config.seed, fold.index))?;
        check_hygiene(target, &data, fold)?;
        let (tuned, history) = finetune(&base, &data, config, fold.index as u64)?;
        let fold_digest = tuned.encoder_digest();
        if fold_digest != digest {
            return Err(Error::Training("encoder weights changed during fine-tuning".into()));
        }
        let mut tallies = BTreeMap::new();
        let mut confusion = ConfusionMatrix::default();
        tally(&tuned, test_idx.iter().map(|&i| &target[i]), &mut tallies, &mut confusion)?;
        Ok(FoldResult {
            outcome: FoldOutcome {
                fold: fold.index,
                test_subject: fold.test_subject.clone(),
                accuracy: confusion.accuracy(),
                n_train: data.train.len(),
                n_val: data.val.len(),
                n_test: test_idx.len(),
                history: History { stages: vec![history] },
                encoder_digest: fold_digest,
            },
            tallies,
            confusion,
        })
    })?;
    let (finetuned, folds) = aggregate(results)?;
    Ok(TransferOutcome {
        zero_shot,
        finetuned,
        folds,
        encoder_digest: digest,
    })
}
