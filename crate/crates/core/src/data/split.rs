use std::collections::BTreeSet;

use log::warn;

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::NUM_CLASSES;

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test_subject: String,
    pub train_subjects: Vec<String>,
}

impl Fold {
    /// Indices of `subjects` belonging to the training subjects and to the
    /// held-out subject.
    pub fn partition<'a>(&self, subjects: impl IntoIterator<Item = &'a str>) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in subjects.into_iter().enumerate() {
            if s == self.test_subject {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// One fold per distinct subject, in sorted subject order.
pub fn loso_splits<S: AsRef<str>>(subject_ids: &[S]) -> Result<Vec<Fold>> {
    let subjects: BTreeSet<&str> = subject_ids.iter().map(AsRef::as_ref).collect();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    Ok(subjects
        .iter()
        .enumerate()
        .map(|(index, &test)| Fold {
            index,
            test_subject: test.to_string(),
            train_subjects: subjects
                .iter()
                .filter(|&&s| s != test)
                .map(|s| s.to_string())
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    /// Positions into the labels slice, ascending.
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Per class, shuffle with a seeded stream and send the first
/// `ceil(ratio * n_c)` to training.
pub fn train_val_split(labels: &[usize], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("train ratio {ratio} outside (0, 1]")));
    }
    let mut warnings = Vec::new();
    if ratio == 1.0 {
        warnings.push("train ratio 1.0 leaves the validation set empty".to_string());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        if l >= NUM_CLASSES {
            return Err(Error::invalid(format!("label {l} outside 0..{NUM_CLASSES}")));
        }
        by_class[l].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        let letter = crate::data::index_to_letter(class);
        match members.len() {
            0 => {
                warnings.push(format!("class {letter} has no samples"));
                continue;
            }
            n if n < 5 => warnings.push(format!("class {letter} has only {n} samples")),
            _ => {}
        }
        let mut rng = Rng::keyed(seed, Stream::Split, &[class as u64]);
        rng.shuffle(&mut members);
        // guard against ratio * n landing a hair above an integer
        let n_train = ((ratio * members.len() as f64) - 1e-9).ceil() as usize;
        let n_train = n_train.min(members.len());
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..]);
    }
    for w in &warnings {
        warn!("{w}");
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Split { train, val, warnings })
}

/// Contrastive batches need at least two samples; cross-entropy batches
/// do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Scl,
    Ce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batches {
    pub batches: Vec<Vec<usize>>,
    /// Samples left out because their batch had a single member (SCL only).
    pub dropped: usize,
}

/// Shuffles `items` with a stream keyed by `(seed, epoch)` and chunks them.
/// With `balanced`, classes are interleaved so each batch spans as many
/// classes as possible.
pub fn make_batches(
    items: &[usize],
    labels: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    mode: BatchMode,
    balanced: bool,
) -> Result<Batches> {
    if batch_size == 0 || (mode == BatchMode::Scl && batch_size < 2) {
        return Err(Error::invalid(format!("batch size {batch_size} too small for {mode:?}")));
    }
    let mut rng = Rng::keyed(seed, Stream::Batch, &[epoch]);
    let order: Vec<usize> = if balanced {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
        for &i in items {
            by_class[labels[i]].push(i);
        }
        for c in by_class.iter_mut() {
            rng.shuffle(c);
        }
        let mut class_order: Vec<usize> = (0..NUM_CLASSES).collect();
        rng.shuffle(&mut class_order);
        let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::with_capacity(items.len());
        for round in 0..longest {
            for &c in &class_order {
                if let Some(&i) = by_class[c].get(round) {
                    out.push(i);
                }
            }
        }
        out
    } else {
        let mut v = items.to_vec();
        rng.shuffle(&mut v);
        v
    };
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    let mut dropped = 0;
    if mode == BatchMode::Scl && batches.last().is_some_and(|b| b.len() == 1) {
        batches.pop();
        dropped = 1;
    }
    Ok(Batches { batches, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loso_fold_counts_and_hygiene() {
        for n in [20usize, 55] {
            let subjects: Vec<String> = (0..n).map(|i| format!("s{i:02}")).collect();
            let folds = loso_splits(&subjects).unwrap();
            assert_eq!(folds.len(), n);
            for f in &folds {
                assert!(!f.train_subjects.contains(&f.test_subject));
                assert_eq!(f.train_subjects.len(), n - 1);
            }
        }
        assert!(loso_splits(&["only"]).is_err());
    }

    #[test]
    fn folds_are_sorted_by_subject() {
        let folds = loso_splits(&["b", "a", "c", "a"]).unwrap();
        let order: Vec<&str> = folds.iter().map(|f| f.test_subject.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        let (train, test) = folds[0].partition(["b", "a", "c", "a"]);
        assert_eq!(test, [1, 3]);
        assert_eq!(train, [0, 2]);
    }

    #[test]
    fn stratified_counts() {
        let labels: Vec<usize> = (0..26).flat_map(|c| std::iter::repeat(c).take(10)).collect();
        let s = train_val_split(&labels, 0.8, 3).unwrap();
        assert_eq!(s.train.len(), 208);
        assert_eq!(s.val.len(), 52);
        for c in 0..26 {
            assert_eq!(s.train.iter().filter(|&&i| labels[i] == c).count(), 8);
            assert_eq!(s.val.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert_eq!(s, train_val_split(&labels, 0.8, 3).unwrap());
        assert_ne!(s.train, train_val_split(&labels, 0.8, 4).unwrap().train);
    }

    #[test]
    fn ratio_one_warns() {
        let labels: Vec<usize> = (0..26).flat_map(|c| std::iter::repeat(c).take(5)).collect();
        let s = train_val_split(&labels, 1.0, 0).unwrap();
        assert!(s.val.is_empty());
        assert!(s.warnings.iter().any(|w| w.contains("empty")));
    }

    #[test]
    fn ceil_is_robust_to_float_noise() {
        let labels = vec![0usize; 15];
        let s = train_val_split(&labels, 0.8, 0).unwrap();
        assert_eq!(s.train.len(), 12);
    }

    #[test]
    fn batches_of_65() {
        let items: Vec<usize> = (0..65).collect();
        let labels = vec![0usize; 65];
        let scl = make_batches(&items, &labels, 32, 1, 0, BatchMode::Scl, false).unwrap();
        assert_eq!(scl.batches.iter().map(Vec::len).collect::<Vec<_>>(), [32, 32]);
        assert_eq!(scl.dropped, 1);
        let ce = make_batches(&items, &labels, 32, 1, 0, BatchMode::Ce, false).unwrap();
        assert_eq!(ce.batches.iter().map(Vec::len).collect::<Vec<_>>(), [32, 32, 1]);
        let mut all: Vec<usize> = ce.batches.concat();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(ce, make_batches(&items, &labels, 32, 1, 0, BatchMode::Ce, false).unwrap());
        assert_ne!(ce, make_batches(&items, &labels, 32, 1, 1, BatchMode::Ce, false).unwrap());
    }

    #[test]
    fn balanced_batches_cover_classes() {
        let labels: Vec<usize> = (0..26).flat_map(|c| std::iter::repeat(c).take(4)).collect();
        let items: Vec<usize> = (0..labels.len()).collect();
        let b = make_batches(&items, &labels, 26, 0, 0, BatchMode::Scl, true).unwrap();
        let first: BTreeSet<usize> = b.batches[0].iter().map(|&i| labels[i]).collect();
        assert_eq!(first.len(), 26);
        let mut all = b.batches.concat();
        all.sort();
        assert_eq!(all, items);
    }
}
