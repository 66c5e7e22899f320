use sclair::data::{loso_splits, preprocess_all, synth_recordings, PreprocessConfig, PreprocessedSample, SynthConfig};
use sclair::NUM_CLASSES;

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn nearest_centroid_beats_chance_tenfold_on_held_out_subjects() {
    let samples: Vec<PreprocessedSample<f64>> =
        preprocess_all(&synth_recordings(&SynthConfig::default()).unwrap(), &PreprocessConfig::default()).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    let width = samples[0].matrix.len();
    let mut accuracies = Vec::new();
    for fold in loso_splits(&ids).unwrap() {
        let (train, test) = fold.partition(ids.iter().copied());
        let mut centroids = vec![vec![0.0; width]; NUM_CLASSES];
        let mut counts = [0usize; NUM_CLASSES];
        for &i in &train {
            let s = &samples[i];
            counts[s.label] += 1;
            for (c, v) in centroids[s.label].iter_mut().zip(s.matrix.data()) {
                *c += v;
            }
        }
        for (c, n) in centroids.iter_mut().zip(counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let correct = test
            .iter()
            .filter(|&&i| {
                let x = samples[i].matrix.data();
                let nearest = (0..NUM_CLASSES)
                    .min_by(|&a, &b| squared_distance(x, &centroids[a]).total_cmp(&squared_distance(x, &centroids[b])))
                    .unwrap();
                nearest == samples[i].label
            })
            .count();
        accuracies.push(correct as f64 / test.len() as f64);
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    assert!(mean >= 10.0 / NUM_CLASSES as f64, "nearest-centroid mean accuracy {mean:.4}");
}
