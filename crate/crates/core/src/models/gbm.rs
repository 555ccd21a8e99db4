//! Gradient boosting over depth-limited regression trees.
//!
//! The model is `F(x) = F₀ + Σ_m γ_m h_m(x)` with every stage weight γ_m equal
//! to the learning rate. Regression boosts squared loss: F₀ is the target
//! mean and each `h_m` is fit to the residuals of the previous stage. The
//! classifier boosts the logistic loss in log-odds space: trees are fit to
//! `y − p` and their leaves replaced with the Newton step `Σ(y−p) / Σp(1−p)`.

use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeParams};
use super::{
    check_binary, check_xy, fingerprint, sigmoid, ModelConfig, ModelError, Parameters, Result,
    Task, TrainedModel,
};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 2,
        }
    }
}

impl GbmConfig {
    fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(ModelError::InvalidConfig("n_estimators must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(ModelError::InvalidConfig("learning_rate must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    /// F₀: target mean (regression) or prior log-odds (classification).
    pub init: f64,
    /// γ_m per stage.
    pub stage_weights: Vec<f64>,
    /// h_m per stage.
    pub trees: Vec<Tree>,
    /// Classifiers map the raw score through the logistic function.
    pub logistic_link: bool,
}

impl GbmParams {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        let mut acc = self.init;
        for (g, t) in self.stage_weights.iter().zip(&self.trees) {
            acc += g * t.predict_row(x);
        }
        acc
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let s = self.raw_score(x);
        if self.logistic_link {
            sigmoid(s)
        } else {
            s
        }
    }

    pub fn stages(&self) -> impl Iterator<Item = (f64, &Tree)> {
        self.stage_weights.iter().copied().zip(&self.trees)
    }
}

fn tree_params(cfg: &GbmConfig) -> TreeParams {
    TreeParams {
        max_depth: Some(cfg.max_depth),
        min_samples_leaf: cfg.min_samples_leaf,
        features_per_split: None,
    }
}

fn check_rows(x: &Matrix, cfg: &GbmConfig) -> Result<()> {
    let needed = 2 * cfg.min_samples_leaf.max(1);
    if x.n_rows() < needed {
        return Err(ModelError::TooFewRows {
            needed,
            got: x.n_rows(),
        });
    }
    Ok(())
}

pub fn train_gbm(x: &Matrix, y: &[f64], cfg: &GbmConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    cfg.validate()?;
    check_rows(x, cfg)?;
    let n = x.n_rows();
    let samples: Vec<usize> = (0..n).collect();
    let params = tree_params(cfg);

    let init = y.iter().sum::<f64>() / n as f64;
    let mut f = vec![init; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    for _ in 0..cfg.n_estimators {
        for ((r, t), p) in residual.iter_mut().zip(y).zip(&f) {
            *r = t - p;
        }
        let tree = Tree::fit(x, &residual, &samples, &params, None);
        for (i, p) in f.iter_mut().enumerate() {
            *p += cfg.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }

    let config = ModelConfig::Gbm(cfg.clone());
    let fp = fingerprint(Task::Regression, &config, x, y);
    Ok(TrainedModel::new(
        Task::Regression,
        x.n_cols(),
        config,
        Parameters::Gbm(GbmParams {
            init,
            stage_weights: vec![cfg.learning_rate; trees.len()],
            trees,
            logistic_link: false,
        }),
        fp,
    ))
}

pub fn train_gbm_classifier(x: &Matrix, y: &[f64], cfg: &GbmConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    check_binary(y)?;
    cfg.validate()?;
    check_rows(x, cfg)?;
    let n = x.n_rows();
    let samples: Vec<usize> = (0..n).collect();
    let params = tree_params(cfg);

    let prior = y.iter().sum::<f64>() / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let mut f = vec![init; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(cfg.n_estimators);
    for _ in 0..cfg.n_estimators {
        for ((r, t), s) in residual.iter_mut().zip(y).zip(&f) {
            *r = t - sigmoid(*s);
        }
        let mut tree = Tree::fit(x, &residual, &samples, &params, None);

        let mut num = vec![0.0; tree.nodes().len()];
        let mut den = vec![0.0; tree.nodes().len()];
        let leaves: Vec<usize> = (0..n).map(|i| tree.leaf_index(x.row(i))).collect();
        for (i, &leaf) in leaves.iter().enumerate() {
            let p = sigmoid(f[i]);
            num[leaf] += residual[i];
            den[leaf] += p * (1.0 - p);
        }
        for leaf in 0..num.len() {
            if den[leaf] > 0.0 {
                let step = if den[leaf] < 1e-150 { 0.0 } else { num[leaf] / den[leaf] };
                tree.set_leaf_value(leaf, step);
            }
        }
        for (i, &leaf) in leaves.iter().enumerate() {
            if let super::tree::Node::Leaf { value } = tree.nodes()[leaf] {
                f[i] += cfg.learning_rate * value;
            }
        }
        trees.push(tree);
    }

    let config = ModelConfig::Gbm(cfg.clone());
    let fp = fingerprint(Task::Classification, &config, x, y);
    Ok(TrainedModel::new(
        Task::Classification,
        x.n_cols(),
        config,
        Parameters::Gbm(GbmParams {
            init,
            stage_weights: vec![cfg.learning_rate; trees.len()],
            trees,
            logistic_link: true,
        }),
        fp,
    ))
}
