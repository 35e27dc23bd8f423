use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{stats, Federation, FederationSpec, TabularSchema};
use crate::error::Result;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Where a federation comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(FederationSpec),
    Tabular {
        path: String,
        schema: TabularSchema,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Federation> {
        match self {
            DataSource::Synthetic(spec) => super::synthesize(spec),
            DataSource::Tabular { path, schema } => super::ingest_tabular(Path::new(path), schema),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DataSource::Synthetic(spec) => spec.seed,
            DataSource::Tabular { schema, .. } => schema.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary {
    pub client_id: usize,
    pub name: String,
    pub train_size: usize,
    pub test_size: usize,
    /// Per-class counts over train and test.
    pub class_histogram: Vec<usize>,
    /// Class ranking drawn for this client, head class first (synthetic only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub class_permutation: Option<Vec<usize>>,
}

/// Audit record of a generated or ingested federation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationManifest {
    pub schema_version: u32,
    pub source: DataSource,
    pub seed: u64,
    pub n_classes: usize,
    pub feature_dim: usize,
    /// `label_encoding[k]` is the original name of encoded class `k`.
    pub label_encoding: Vec<String>,
    pub clients: Vec<ClientSummary>,
    pub global_histogram: Vec<usize>,
    pub global_test_size: usize,
    pub client_size_std: f64,
    pub class_count_std: f64,
}

impl FederationManifest {
    pub fn new(source: &DataSource, federation: &Federation) -> Self {
        let report = stats(federation);
        let clients = federation
            .clients
            .iter()
            .enumerate()
            .map(|(m, c)| ClientSummary {
                client_id: c.client_id,
                name: federation.client_names.get(m).cloned().unwrap_or_else(|| m.to_string()),
                train_size: c.train.len(),
                test_size: c.test.len(),
                class_histogram: report.client_histograms[m].clone(),
                class_permutation: federation
                    .class_permutations
                    .as_ref()
                    .map(|p| p[m].clone()),
            })
            .collect();
        FederationManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            source: source.clone(),
            seed: source.seed(),
            n_classes: federation.n_classes,
            feature_dim: federation.feature_dim,
            label_encoding: federation.label_names.clone(),
            clients,
            global_histogram: report.global_histogram,
            global_test_size: federation.global_test.len(),
            client_size_std: report.client_size_std,
            class_count_std: report.class_count_std,
        }
    }
}

/// Writes one `client_NNN.csv` per client with columns
/// `id,split,label,x0..x{d-1}`.
pub fn write_client_files(federation: &Federation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for client in &federation.clients {
        let mut out = String::from("id,split,label");
        for j in 0..federation.feature_dim {
            let _ = write!(out, ",x{j}");
        }
        out.push('\n');
        for (split, samples) in [("train", &client.train), ("test", &client.test)] {
            for i in 0..samples.len() {
                let _ = write!(out, "{},{split},{}", samples.ids[i], samples.labels[i]);
                for v in samples.features.row(i) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        fs::write(dir.join(format!("client_{:03}.csv", client.client_id)), out)?;
    }
    Ok(())
}
