//! Binary logistic regression by full-batch gradient ascent.
//!
//! Features are standardised internally; the returned coefficients are
//! mapped back to the original feature space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    check_binary, check_xy, column_scaling, fingerprint, sigmoid, LinearParams, ModelConfig,
    ModelError, Parameters, Result, Task, TrainedModel,
};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iterations: usize,
    /// Ascent step on the mean log-likelihood gradient. Capped at 1/L where L
    /// bounds the curvature of the standardised problem.
    pub step_size: f64,
    /// Stop once the gradient's max-norm drops below this.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            step_size: 1.0,
            tolerance: 1e-6,
        }
    }
}

pub fn train_logistic(x: &Matrix, y: &[f64], cfg: &LogisticConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    check_binary(y)?;
    if !(cfg.step_size > 0.0) {
        return Err(ModelError::InvalidConfig("step_size must be positive".into()));
    }
    let n = x.n_rows();
    let d = x.n_cols();
    let nf = n as f64;
    let (mean, sd) = column_scaling(x);
    let z = Matrix::from_flat(
        n,
        d,
        x.rows()
            .flat_map(|r| r.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s))
            .collect(),
    );

    // Curvature bound of the mean log-likelihood: 0.25 * λmax([1 Z]ᵀ[1 Z] / n).
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { z.get(i, j - 1) });
    let gram = design.transpose() * &design / nf;
    let lmax = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let step = cfg.step_size.min(1.0 / (0.25 * lmax).max(1e-12));

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut grad_w = vec![0.0; d];
    for _ in 0..cfg.max_iterations {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &t) in z.rows().zip(y) {
            let s = b + w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>();
            let r = t - sigmoid(s);
            grad_b += r;
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        grad_b /= nf;
        grad_w.iter_mut().for_each(|g| *g /= nf);
        let norm = grad_w.iter().fold(grad_b.abs(), |m, g| m.max(g.abs()));
        if norm < cfg.tolerance {
            break;
        }
        b += step * grad_b;
        for (a, g) in w.iter_mut().zip(&grad_w) {
            *a += step * g;
        }
    }

    let coefficients: Vec<f64> = w.iter().zip(&sd).map(|(a, s)| a / s).collect();
    let intercept = b - coefficients
        .iter()
        .zip(&mean)
        .map(|(c, m)| c * m)
        .sum::<f64>();

    let config = ModelConfig::Logistic(cfg.clone());
    let fp = fingerprint(Task::Classification, &config, x, y);
    Ok(TrainedModel::new(
        Task::Classification,
        d,
        config,
        Parameters::Logistic(LinearParams {
            coefficients,
            intercept,
        }),
        fp,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::compute_auc;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn separable_data_is_fit_exactly() {
        let x = Matrix::from_rows(&[[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]]);
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let m = train_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let p = m.predict_proba(&x).unwrap();
        let acc = p
            .iter()
            .zip(&y)
            .filter(|(p, &t)| (**p > 0.5) == (t == 1.0))
            .count();
        assert_eq!(acc, 6);
    }

    #[test]
    fn symmetric_pair_boundary_at_midpoint() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]);
        let m = train_logistic(&x, &[0.0, 1.0], &LogisticConfig::default()).unwrap();
        let Parameters::Logistic(p) = m.parameters() else {
            unreachable!()
        };
        let boundary = -p.intercept / p.coefficients[0];
        assert!((boundary - 2.0).abs() < 1e-4, "boundary {boundary}");
    }

    #[test]
    fn independent_labels_give_chance_auc() {
        let mut rng = rng_from_seed(5);
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y: Vec<f64> = (0..200).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let x = Matrix::from_rows(&rows);
        let m = train_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let labels: Vec<u8> = y.iter().map(|&v| v as u8).collect();
        let auc = compute_auc(&labels, &m.predict_proba(&x).unwrap()).unwrap();
        assert!((0.4..=0.6).contains(&auc), "auc {auc}");
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]);
        assert_eq!(
            train_logistic(&x, &[1.0, 1.0], &LogisticConfig::default()),
            Err(ModelError::SingleClass)
        );
    }

    #[test]
    fn zero_weights_give_half() {
        let m = TrainedModel::new(
            Task::Classification,
            2,
            ModelConfig::Logistic(LogisticConfig::default()),
            Parameters::Logistic(LinearParams {
                coefficients: vec![0.0, 0.0],
                intercept: 0.0,
            }),
            String::new(),
        );
        let p = m
            .predict_proba(&Matrix::from_rows(&[[1.0, -4.0], [9.0, 2.0]]))
            .unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }
}
