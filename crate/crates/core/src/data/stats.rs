use serde::{Deserialize, Serialize};

use super::{Federation, Samples};

/// Size and class-mix summary of a federation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub client_sizes: Vec<usize>,
    pub client_histograms: Vec<Vec<usize>>,
    pub global_histogram: Vec<usize>,
    /// Population standard deviation of client sizes.
    pub client_size_std: f64,
    /// Population standard deviation of the global per-class counts.
    pub class_count_std: f64,
}

pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

pub fn stats(federation: &Federation) -> ImbalanceReport {
    let c = federation.n_classes;
    let client_histograms: Vec<Vec<usize>> = federation
        .clients
        .iter()
        .map(|client| {
            Samples::concat(&[&client.train, &client.test])
                .map(|all| all.histogram(c))
                .unwrap_or_else(|_| client.class_counts.clone())
        })
        .collect();
    let mut global_histogram = vec![0; c];
    for h in &client_histograms {
        for (g, v) in global_histogram.iter_mut().zip(h) {
            *g += v;
        }
    }
    let client_sizes: Vec<usize> = federation.clients.iter().map(|c| c.size()).collect();
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    ImbalanceReport {
        client_size_std: population_std(&as_f64(&client_sizes)),
        class_count_std: population_std(&as_f64(&global_histogram)),
        client_sizes,
        client_histograms,
        global_histogram,
    }
}
