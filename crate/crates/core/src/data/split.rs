use rand::seq::SliceRandom;
use rand::Rng;

use super::Samples;

/// Apportions `total` items over `weights` (not necessarily normalized) by the
/// largest-remainder method. Ties in the fractional part go to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Test-set size per class: `round(count · fraction)`, capped so at least one
/// example stays in train; singleton classes stay entirely in train.
pub fn stratified_test_counts(class_counts: &[usize], fraction: f64) -> Vec<usize> {
    class_counts
        .iter()
        .map(|&c| {
            if c < 2 {
                0
            } else {
                ((c as f64 * fraction).round() as usize).min(c - 1)
            }
        })
        .collect()
}

/// Splits `samples` per class into (train, test), drawing test members
/// uniformly with `rng`. Both halves keep the original row order.
pub(crate) fn stratified_split<R: Rng + ?Sized>(
    samples: &Samples,
    n_classes: usize,
    fraction: f64,
    rng: &mut R,
) -> (Samples, Samples) {
    let hist = samples.histogram(n_classes);
    let n_test = stratified_test_counts(&hist, fraction);
    let mut is_test = vec![false; samples.len()];
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..samples.len())
            .filter(|&i| samples.labels[i] == class)
            .collect();
        members.shuffle(rng);
        for &i in members.iter().take(n_test[class]) {
            is_test[i] = true;
        }
    }
    let train: Vec<usize> = (0..samples.len()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..samples.len()).filter(|&i| is_test[i]).collect();
    (samples.subset(&train), samples.subset(&test))
}
