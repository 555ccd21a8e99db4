//! Train/test splits, metrics and the multi-seed benchmark runner.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{derive_risk_labels, TabularDataset};
use crate::models::{
    train_forest, train_forest_classifier, train_gbm, train_gbm_classifier, train_linear,
    train_logistic, train_mlp, train_mlp_classifier, ForestConfig, GbmConfig, LogisticConfig,
    MlpConfig, ModelError, Task, TrainedModel,
};
use crate::rng::rng_from_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("train_fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no values to score")]
    Empty,
    #[error("R² is undefined for a constant target")]
    ConstantTarget,
    #[error("AUC needs both classes present")]
    SingleClass,
    #[error("no seeds given")]
    NoSeeds,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Seeded Fisher–Yates permutation of `0..n`; the first `⌊fraction·n⌋`
/// indices train, the rest test.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(EvalError::InvalidFraction(spec.train_fraction));
    }
    if n < 5 {
        return Err(EvalError::TooFewRows { needed: 5, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(spec.seed));
    let cut = (spec.train_fraction * n as f64).floor() as usize;
    let test = idx.split_off(cut);
    Ok((idx, test))
}

pub fn split(ds: &TabularDataset, spec: &SplitSpec) -> Result<(TabularDataset, TabularDataset)> {
    let (train, test) = split_indices(ds.n_rows(), spec)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn mae(y: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(y.len(), pred.len())?;
    Ok(y.iter().zip(pred).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(y.len(), pred.len())?;
    Ok((y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

pub fn r2(y: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(y.len(), pred.len())?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(EvalError::ConstantTarget);
    }
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

pub fn accuracy(labels: &[u8], predicted: &[u8]) -> Result<f64> {
    check_pair(labels.len(), predicted.len())?;
    let hits = labels.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney rank statistic, with tied
/// scores receiving average ranks (half credit per tied pair).
pub fn compute_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    check_pair(labels.len(), scores.len())?;
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps average ranks integral.
    let mut pos_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                pos_rank_sum2 += rank2;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = pos_rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// One entry of the benchmark line-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BenchmarkModel {
    GradientBoosting(GbmConfig),
    LinearRegression,
    RandomForest(ForestConfig),
    Mlp(MlpConfig),
    RandomForestClassifier(ForestConfig),
    LogisticRegression(LogisticConfig),
    GradientBoostingClassifier(GbmConfig),
    MlpClassifier(MlpConfig),
}

impl BenchmarkModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GradientBoosting(_) => "gradient_boosting",
            Self::LinearRegression => "linear_regression",
            Self::RandomForest(_) => "random_forest",
            Self::Mlp(_) => "mlp",
            Self::RandomForestClassifier(_) => "random_forest_classifier",
            Self::LogisticRegression(_) => "logistic_regression",
            Self::GradientBoostingClassifier(_) => "gradient_boosting_classifier",
            Self::MlpClassifier(_) => "mlp_classifier",
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Self::GradientBoosting(_)
            | Self::LinearRegression
            | Self::RandomForest(_)
            | Self::Mlp(_) => Task::Regression,
            _ => Task::Classification,
        }
    }

    /// Trains on `train`. Seeded models take `seed` in place of their
    /// configured seed.
    pub fn train(&self, train: &TabularDataset, seed: u64) -> Result<TrainedModel> {
        let x = &train.features;
        let y = &train.target;
        let labels = || {
            train
                .labels_f64()
                .unwrap_or_else(|| derive_risk_labels(train).labels_f64().unwrap_or_default())
        };
        Ok(match self {
            Self::GradientBoosting(c) => train_gbm(x, y, c)?,
            Self::LinearRegression => train_linear(x, y)?,
            Self::RandomForest(c) => train_forest(x, y, &ForestConfig { seed, ..c.clone() })?,
            Self::Mlp(c) => train_mlp(x, y, &MlpConfig { seed, ..c.clone() })?,
            Self::RandomForestClassifier(c) => {
                train_forest_classifier(x, &labels(), &ForestConfig { seed, ..c.clone() })?
            }
            Self::LogisticRegression(c) => train_logistic(x, &labels(), c)?,
            Self::GradientBoostingClassifier(c) => train_gbm_classifier(x, &labels(), c)?,
            Self::MlpClassifier(c) => {
                train_mlp_classifier(x, &labels(), &MlpConfig { seed, ..c.clone() })?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub train_fraction: f64,
    /// Report order follows this list.
    pub models: Vec<BenchmarkModel>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            models: vec![
                BenchmarkModel::GradientBoosting(GbmConfig::default()),
                BenchmarkModel::LinearRegression,
                BenchmarkModel::RandomForest(ForestConfig::default()),
                BenchmarkModel::Mlp(MlpConfig::default()),
                BenchmarkModel::RandomForestClassifier(ForestConfig::default()),
                BenchmarkModel::LogisticRegression(LogisticConfig::default()),
                BenchmarkModel::GradientBoostingClassifier(GbmConfig::default()),
                BenchmarkModel::MlpClassifier(MlpConfig::default()),
            ],
        }
    }
}

impl BenchmarkConfig {
    pub fn regression_only() -> Self {
        let mut cfg = Self::default();
        cfg.models.retain(|m| m.task() == Task::Regression);
        cfg
    }

    pub fn classification_only() -> Self {
        let mut cfg = Self::default();
        cfg.models.retain(|m| m.task() == Task::Classification);
        cfg
    }
}

/// Metrics of one model on one split, or the mean over seeds when `seed`
/// is `None`. Regression rows carry MAE/RMSE/R²; classification rows carry
/// accuracy/AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub seed: Option<u64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub r2: Option<f64>,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    /// Per model in config order: one row per seed, then the mean row.
    pub rows: Vec<EvalRow>,
}

pub const REPORT_CSV_HEADER: &str = "model,seed,mae,rmse,r2,accuracy,auc";

impl EvalReport {
    pub fn mean(&self, model: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.seed.is_none())
    }

    pub fn per_seed<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a EvalRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.model == model && r.seed.is_some())
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let seed = r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.model,
                seed,
                cell(r.mae),
                cell(r.rmse),
                cell(r.r2),
                cell(r.accuracy),
                cell(r.auc)
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn evaluate(
    model: &BenchmarkModel,
    trained: &TrainedModel,
    test: &TabularDataset,
    seed: u64,
) -> Result<EvalRow> {
    let mut row = EvalRow {
        model: model.name().to_string(),
        seed: Some(seed),
        mae: None,
        rmse: None,
        r2: None,
        accuracy: None,
        auc: None,
    };
    match model.task() {
        Task::Regression => {
            let pred = trained.predict(&test.features)?;
            row.mae = Some(mae(&test.target, &pred)?);
            row.rmse = Some(rmse(&test.target, &pred)?);
            row.r2 = Some(r2(&test.target, &pred)?);
        }
        Task::Classification => {
            let labels = test.risk_label.as_deref().unwrap_or_default();
            let proba = trained.predict_proba(&test.features)?;
            let hard: Vec<u8> = proba.iter().map(|&p| u8::from(p >= 0.5)).collect();
            row.accuracy = Some(accuracy(labels, &hard)?);
            row.auc = Some(compute_auc(labels, &proba)?);
        }
    }
    Ok(row)
}

fn mean_row(model: &str, rows: &[EvalRow]) -> EvalRow {
    let avg = |f: fn(&EvalRow) -> Option<f64>| {
        let v: Option<Vec<f64>> = rows.iter().map(f).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    EvalRow {
        model: model.to_string(),
        seed: None,
        mae: avg(|r| r.mae),
        rmse: avg(|r| r.rmse),
        r2: avg(|r| r.r2),
        accuracy: avg(|r| r.accuracy),
        auc: avg(|r| r.auc),
    }
}

/// For every seed: split, train every configured model, score regressors
/// on the continuous target and classifiers on the median-split risk label.
/// Seeds run concurrently; the report is seed-ordered.
pub fn run_benchmark(ds: &TabularDataset, cfg: &BenchmarkConfig, seeds: &[u64]) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let labelled = if ds.risk_label.is_some() {
        ds.clone()
    } else {
        derive_risk_labels(ds)
    };
    let per_seed: Vec<Vec<EvalRow>> = seeds
        .par_iter()
        .map(|&seed| {
            let (train, test) = split(
                &labelled,
                &SplitSpec {
                    train_fraction: cfg.train_fraction,
                    seed,
                },
            )?;
            cfg.models
                .iter()
                .map(|m| evaluate(m, &m.train(&train, seed)?, &test, seed))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cfg.models.len() * (seeds.len() + 1));
    for (k, m) in cfg.models.iter().enumerate() {
        let model_rows: Vec<EvalRow> = per_seed.iter().map(|r| r[k].clone()).collect();
        let mean = mean_row(m.name(), &model_rows);
        rows.extend(model_rows);
        rows.push(mean);
    }
    Ok(EvalReport {
        train_fraction: cfg.train_fraction,
        seeds: seeds.to_vec(),
        rows,
    })
}
