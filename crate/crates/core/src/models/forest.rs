//! Bagged regression trees. The classifier grows the same trees on 0/1
//! labels, so each leaf holds a class-1 fraction and the forest averages
//! them into a probability.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{Tree, TreeParams};
use super::{
    check_binary, check_xy, fingerprint, ModelConfig, ModelError, Parameters, Result, Task,
    TrainedModel,
};
use crate::matrix::Matrix;
use crate::rng::sub_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees to purity.
    pub max_depth: Option<usize>,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn resolved_features(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<Tree>,
}

impl ForestParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn grow(x: &Matrix, y: &[f64], cfg: &ForestConfig) -> Result<Vec<Tree>> {
    if cfg.n_trees == 0 {
        return Err(ModelError::InvalidConfig("n_trees must be at least 1".into()));
    }
    let n = x.n_rows();
    if n < 2 {
        return Err(ModelError::TooFewRows { needed: 2, got: n });
    }
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_samples_leaf: 1,
        features_per_split: Some(cfg.resolved_features(x.n_cols())),
    };
    Ok((0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = sub_rng(cfg.seed, t as u64);
            let samples: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            Tree::fit(x, y, &samples, &params, Some(&mut rng))
        })
        .collect())
}

pub fn train_forest(x: &Matrix, y: &[f64], cfg: &ForestConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    let trees = grow(x, y, cfg)?;
    let config = ModelConfig::Forest(cfg.clone());
    let fp = fingerprint(Task::Regression, &config, x, y);
    Ok(TrainedModel::new(
        Task::Regression,
        x.n_cols(),
        config,
        Parameters::Forest(ForestParams { trees }),
        fp,
    ))
}

pub fn train_forest_classifier(x: &Matrix, y: &[f64], cfg: &ForestConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    check_binary(y)?;
    let trees = grow(x, y, cfg)?;
    let config = ModelConfig::Forest(cfg.clone());
    let fp = fingerprint(Task::Classification, &config, x, y);
    Ok(TrainedModel::new(
        Task::Classification,
        x.n_cols(),
        config,
        Parameters::Forest(ForestParams { trees }),
        fp,
    ))
}
