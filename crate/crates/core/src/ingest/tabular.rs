use serde::{Deserialize, Serialize};

use super::{IngestError, Result};
use crate::matrix::Matrix;

/// Column names of the diabetes progression benchmark.
pub const BENCHMARK_FEATURES: [&str; 10] = [
    "age", "sex", "bmi", "bp", "s1", "s2", "s3", "s4", "s5", "s6",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub features: Matrix,
    pub target: Vec<f64>,
    /// Binary risk label from a median split of `target`, once derived.
    pub risk_label: Option<Vec<u8>>,
}

impl TabularDataset {
    pub fn new(feature_names: Vec<String>, features: Matrix, target: Vec<f64>) -> Self {
        assert_eq!(features.n_rows(), target.len(), "row count != target length");
        assert_eq!(features.n_cols(), feature_names.len(), "column count mismatch");
        Self {
            feature_names,
            features,
            target,
            risk_label: None,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Rows `indices`, in order, with labels carried along.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            features: self.features.select_rows(indices),
            target: indices.iter().map(|&i| self.target[i]).collect(),
            risk_label: self
                .risk_label
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Labels as `0.0`/`1.0`, the form the classifiers train on.
    pub fn labels_f64(&self) -> Option<Vec<f64>> {
        self.risk_label
            .as_ref()
            .map(|l| l.iter().map(|&v| f64::from(v)).collect())
    }

    /// Per-feature population standard deviation.
    pub fn feature_std(&self) -> Vec<f64> {
        let n = self.n_rows() as f64;
        (0..self.n_features())
            .map(|j| {
                let col = self.features.column(j);
                let mean = col.iter().sum::<f64>() / n;
                (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}

/// Loads the benchmark profile: exactly ten feature columns plus `target`.
pub fn load_tabular(bytes: &[u8]) -> Result<TabularDataset> {
    load_tabular_with(bytes, Some(BENCHMARK_FEATURES.len()))
}

/// Loads a CSV whose header names the feature columns and one `target`
/// column (in any position). `expected_features` pins the feature count.
pub fn load_tabular_with(bytes: &[u8], expected_features: Option<usize>) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Format(e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(IngestError::Format("missing header".into()));
    }
    let target_col = header
        .iter()
        .position(|h| h == "target")
        .ok_or_else(|| IngestError::Format("missing `target` column".into()))?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| i != target_col).collect();
    if let Some(k) = expected_features {
        if feature_cols.len() != k {
            return Err(IngestError::Format(format!(
                "expected {k} feature columns, found {}",
                feature_cols.len()
            )));
        }
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| header[i].to_string()).collect();

    let mut features = Matrix::empty(feature_cols.len());
    let mut target = Vec::new();
    let mut row_buf = vec![0.0; feature_cols.len()];
    for (idx, rec) in reader.records().enumerate() {
        let line = idx as u64 + 2;
        let rec = rec.map_err(|e| IngestError::Record {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(IngestError::Record {
                line,
                message: format!("expected {} columns, found {}", header.len(), rec.len()),
            });
        }
        let cell = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| IngestError::Record {
                line,
                message: format!("non-numeric cell {:?} in column `{}`", &rec[i], &header[i]),
            })
        };
        for (slot, &c) in row_buf.iter_mut().zip(&feature_cols) {
            *slot = cell(c)?;
        }
        target.push(cell(target_col)?);
        features.push_row(&row_buf);
    }
    Ok(TabularDataset::new(feature_names, features, target))
}

/// Median; the mean of the two central order statistics for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Labels each row 1 when its target is strictly above the median, else 0.
pub fn derive_risk_labels(ds: &TabularDataset) -> TabularDataset {
    let mut out = ds.clone();
    out.risk_label = Some(match median(&ds.target) {
        Some(m) => ds.target.iter().map(|&t| u8::from(t > m)).collect(),
        None => Vec::new(),
    });
    out
}

/// Writes the dataset back as CSV (features then `target`).
pub fn export_tabular_csv(ds: &TabularDataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push("target");
    w.write_record(&header).expect("in-memory write");
    for (row, t) in ds.features.rows().zip(&ds.target) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(t.to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}
