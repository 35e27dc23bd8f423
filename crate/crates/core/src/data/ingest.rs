use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::stratified_split;
use super::{ClientDataset, Federation, Samples};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Column layout of a delimited file with one example per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    /// Column whose value assigns each row to a client.
    pub client_column: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fixed label vocabulary; rows with other labels are rejected. When
    /// absent, labels are encoded in order of first appearance.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// Clients that must be present; any without rows is an error.
    #[serde(default)]
    pub clients: Option<Vec<String>>,
}

fn default_delimiter() -> char {
    ','
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Reads a headed, delimited UTF-8 file into a federation. Clients are indexed
/// in order of first appearance unless `schema.clients` fixes the order. Error
/// rows are reported 1-based, counting data rows after the header.
pub fn ingest_tabular(path: &Path, schema: &TabularSchema) -> Result<Federation> {
    if !(schema.test_fraction >= 0.0 && schema.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in [0, 1), got {}",
            schema.test_fraction
        )));
    }
    if schema.feature_columns.is_empty() {
        return Err(Error::Config("no feature columns listed".into()));
    }
    if !schema.delimiter.is_ascii() {
        return Err(Error::Config("delimiter must be a single ASCII character".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column `{name}` not found in header")))
    };
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&schema.label_column)?;
    let client_idx = column(&schema.client_column)?;

    let mut label_names: Vec<String> = schema.labels.clone().unwrap_or_default();
    let mut label_codes: HashMap<String, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    let mut client_names: Vec<String> = schema.clients.clone().unwrap_or_default();
    let mut client_codes: HashMap<String, usize> = client_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();

    let d = feature_idx.len();
    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |idx: usize, name: &str| -> Result<&str> {
            match record.get(idx).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Row {
                    row,
                    column: name.to_string(),
                    message: "missing field".into(),
                }),
            }
        };
        let mut x = Vec::with_capacity(d);
        for (&idx, name) in feature_idx.iter().zip(&schema.feature_columns) {
            let raw = cell(idx, name)?;
            let v: f64 = raw.parse().map_err(|_| Error::Row {
                row,
                column: name.clone(),
                message: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Row {
                    row,
                    column: name.clone(),
                    message: "non-finite value".into(),
                });
            }
            x.push(v);
        }
        let label = cell(label_idx, &schema.label_column)?;
        let code = match label_codes.get(label) {
            Some(&code) => code,
            None if schema.labels.is_some() => {
                return Err(Error::Row {
                    row,
                    column: schema.label_column.clone(),
                    message: format!("unknown label `{label}`"),
                })
            }
            None => {
                label_names.push(label.to_string());
                label_codes.insert(label.to_string(), label_names.len() - 1);
                label_names.len() - 1
            }
        };
        let client = cell(client_idx, &schema.client_column)?;
        let client_code = match client_codes.get(client) {
            Some(&c) => c,
            None if schema.clients.is_some() => {
                return Err(Error::Row {
                    row,
                    column: schema.client_column.clone(),
                    message: format!("client `{client}` not in the declared client list"),
                })
            }
            None => {
                client_names.push(client.to_string());
                client_codes.insert(client.to_string(), client_names.len() - 1);
                client_names.len() - 1
            }
        };
        rows.push((client_code, x, code));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }

    let n_classes = label_names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(schema.seed);
    let mut clients = Vec::with_capacity(client_names.len());
    for (m, name) in client_names.iter().enumerate() {
        let members: Vec<(u64, &(usize, Vec<f64>, usize))> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.0 == m)
            .map(|(i, r)| (i as u64, r))
            .collect();
        if members.is_empty() {
            return Err(Error::Data(format!("client `{name}` has no rows")));
        }
        let mut features = Matrix::zeros(members.len(), d);
        for (k, (_, r)) in members.iter().enumerate() {
            features.row_mut(k).copy_from_slice(&r.1);
        }
        let all = Samples {
            features,
            labels: members.iter().map(|(_, r)| r.2).collect(),
            ids: members.iter().map(|(id, _)| *id).collect(),
        };
        let (train, test) = stratified_split(&all, n_classes, schema.test_fraction, &mut rng);
        clients.push(ClientDataset::new(m, train, test, n_classes)?);
    }
    Federation::assemble(n_classes, d, clients, label_names, client_names, None)
}
