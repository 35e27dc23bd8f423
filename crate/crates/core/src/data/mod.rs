//! Federated datasets: per-client train/test splits, the pooled global test
//! set, long-tailed synthesis and tabular ingestion.

mod ingest;
mod manifest;
mod split;
mod stats;
mod synth;

pub use ingest::{ingest_tabular, TabularSchema};
pub use manifest::{write_client_files, ClientSummary, DataSource, FederationManifest};
pub use split::{largest_remainder, stratified_test_counts};
pub use stats::{population_std, stats, ImbalanceReport};
pub use synth::{synthesize, FederationSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Batch, Matrix};

/// Row-aligned examples. `ids` are unique across a federation, so two sets are
/// disjoint exactly when their id sets are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

impl Samples {
    pub fn empty(dim: usize) -> Self {
        Samples {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn concat(parts: &[&Samples]) -> Result<Samples> {
        let dim = parts.first().map_or(0, |s| s.dim());
        let matrices: Vec<&Matrix> = parts.iter().map(|s| &s.features).collect();
        let features = if matrices.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::vstack(&matrices)?
        };
        Ok(Samples {
            features,
            labels: parts.iter().flat_map(|s| s.labels.iter().copied()).collect(),
            ids: parts.iter().flat_map(|s| s.ids.iter().copied()).collect(),
        })
    }

    pub fn batch(&self, indices: &[usize], n_classes: usize) -> Result<Batch> {
        Batch::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes,
        )
    }

    pub fn as_batch(&self, n_classes: usize) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone(), n_classes)
    }

    pub fn histogram(&self, n_classes: usize) -> Vec<usize> {
        let mut h = vec![0; n_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// One client's private data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Samples,
    pub test: Samples,
    /// Per-class counts of `train`.
    pub class_counts: Vec<usize>,
}

impl ClientDataset {
    pub fn new(client_id: usize, train: Samples, test: Samples, n_classes: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data(format!("client {client_id} has an empty train split")));
        }
        let class_counts = train.histogram(n_classes);
        Ok(ClientDataset {
            client_id,
            train,
            test,
            class_counts,
        })
    }

    pub fn size(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

/// A complete federation plus the pooled test set every client contributes to.
#[derive(Clone, Debug, PartialEq)]
pub struct Federation {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub clients: Vec<ClientDataset>,
    /// Multiset union of the client test splits, in client order.
    pub global_test: Samples,
    /// Class names indexed by encoded label.
    pub label_names: Vec<String>,
    pub client_names: Vec<String>,
    /// Per-client class rank order used by the long-tailed synthesizer.
    pub class_permutations: Option<Vec<Vec<usize>>>,
}

impl Federation {
    pub(crate) fn assemble(
        n_classes: usize,
        feature_dim: usize,
        clients: Vec<ClientDataset>,
        label_names: Vec<String>,
        client_names: Vec<String>,
        class_permutations: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        let tests: Vec<&Samples> = clients.iter().map(|c| &c.test).collect();
        let global_test = if tests.is_empty() {
            Samples::empty(feature_dim)
        } else {
            Samples::concat(&tests)?
        };
        Ok(Federation {
            n_classes,
            feature_dim,
            clients,
            global_test,
            label_names,
            client_names,
            class_permutations,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }
}
