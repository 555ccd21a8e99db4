//! From-scratch supervised models with deterministic, seeded training.
//!
//! Every trainer returns an immutable [`TrainedModel`]: a kind, the config it
//! was trained with, a model-specific parameter payload and a SHA-256
//! fingerprint of config plus training data. Prediction is a pure function
//! of the parameters and the input.

pub mod forest;
pub mod gbm;
pub mod linear;
pub mod logistic;
pub mod mlp;
pub mod tree;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::Matrix;

pub use forest::{train_forest, train_forest_classifier, ForestConfig, ForestParams};
pub use gbm::{train_gbm, train_gbm_classifier, GbmConfig, GbmParams};
pub use linear::{train_linear, LinearParams};
pub use logistic::{train_logistic, LogisticConfig};
pub use mlp::{train_mlp, train_mlp_classifier, MlpConfig, MlpParams};

/// Version tag of the serialized model document.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{rows} rows in X but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels must be 0/1 with both classes present")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("{0:?} model does not produce class probabilities")]
    NotAClassifier(ModelKind),
    #[error("model document: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
    Forest,
    Gbm,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Linear,
    Logistic(LogisticConfig),
    Forest(ForestConfig),
    Gbm(GbmConfig),
    Mlp(MlpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameters {
    Linear(LinearParams),
    Logistic(LinearParams),
    Forest(ForestParams),
    Gbm(GbmParams),
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    format_version: u32,
    kind: ModelKind,
    task: Task,
    n_features: usize,
    config: ModelConfig,
    parameters: Parameters,
    fingerprint: String,
}

impl TrainedModel {
    pub(crate) fn new(
        task: Task,
        n_features: usize,
        config: ModelConfig,
        parameters: Parameters,
        fingerprint: String,
    ) -> Self {
        let kind = match parameters {
            Parameters::Linear(_) => ModelKind::Linear,
            Parameters::Logistic(_) => ModelKind::Logistic,
            Parameters::Forest(_) => ModelKind::Forest,
            Parameters::Gbm(_) => ModelKind::Gbm,
            Parameters::Mlp(_) => ModelKind::Mlp,
        };
        Self {
            format_version: MODEL_FORMAT_VERSION,
            kind,
            task,
            n_features,
            config,
            parameters,
            fingerprint,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &Parameters {
        &self.parameters
    }

    /// Hex SHA-256 of the training config and data.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(match &self.parameters {
            Parameters::Linear(p) => p.score(x),
            Parameters::Logistic(p) => sigmoid(p.score(x)),
            Parameters::Forest(p) => p.predict_row(x),
            Parameters::Gbm(p) => p.predict_row(x),
            Parameters::Mlp(p) => p.predict_row(x),
        })
    }

    /// Regression output, or the class-1 probability for classifiers.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: x.n_cols(),
            });
        }
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    /// Class-1 probabilities; errors for regression-only models.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if self.task != Task::Classification {
            return Err(ModelError::NotAClassifier(self.kind));
        }
        self.predict(x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self =
            serde_json::from_str(s).map_err(|e| ModelError::Serialization(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Serialization(format!(
                "unsupported format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn fingerprint(task: Task, config: &ModelConfig, x: &Matrix, y: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(task, config)).expect("config serializes"));
    h.update((x.n_rows() as u64).to_le_bytes());
    h.update((x.n_cols() as u64).to_le_bytes());
    for v in x.as_slice() {
        h.update(v.to_le_bytes());
    }
    for v in y {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub(crate) fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(ModelError::LengthMismatch {
            rows: x.n_rows(),
            targets: y.len(),
        });
    }
    if x.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if !x.all_finite() || !y.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(())
}

pub(crate) fn check_binary(y: &[f64]) -> Result<()> {
    let mut seen = [false; 2];
    for &v in y {
        if v == 0.0 {
            seen[0] = true;
        } else if v == 1.0 {
            seen[1] = true;
        } else {
            return Err(ModelError::InvalidLabel(v));
        }
    }
    if seen[0] && seen[1] {
        Ok(())
    } else {
        Err(ModelError::SingleClass)
    }
}

/// Column means and population standard deviations (zero sd mapped to 1).
pub(crate) fn column_scaling(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.n_rows() as f64;
    let d = x.n_cols();
    let mut mean = vec![0.0; d];
    for r in x.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x.rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let sd = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert!(sigmoid(1000.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn binary_check() {
        assert!(check_binary(&[0.0, 1.0]).is_ok());
        assert_eq!(check_binary(&[1.0, 1.0]), Err(ModelError::SingleClass));
        assert_eq!(check_binary(&[0.0, 2.0]), Err(ModelError::InvalidLabel(2.0)));
    }
}
