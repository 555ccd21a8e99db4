//! Ordinary least squares through the normal equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_xy, fingerprint, ModelConfig, Parameters, Result, Task, TrainedModel};
use crate::matrix::Matrix;

/// Ridge term added to the centred Gram matrix when it is numerically
/// singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;
/// Condition number above which the ridge fallback engages.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearParams {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }
}

/// Solves `(G + λI) β = b` for a symmetric positive semi-definite `G`,
/// engaging the ridge only when `G` is ill-conditioned. Returns β and
/// whether the ridge was used.
pub(crate) fn solve_normal_equations(gram: DMatrix<f64>, rhs: DVector<f64>) -> (DVector<f64>, bool) {
    let d = gram.nrows();
    if d == 0 {
        return (DVector::zeros(0), false);
    }
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = !(min > 0.0) || max / min > CONDITION_LIMIT;
    let system = if singular {
        gram + DMatrix::identity(d, d) * RIDGE_FALLBACK
    } else {
        gram
    };
    match system.clone().cholesky() {
        Some(ch) => (ch.solve(&rhs), singular),
        None => {
            // Gram with all-zero columns: eigen-solve, discarding null directions.
            let eig = system.symmetric_eigen();
            let mut beta = DVector::zeros(d);
            for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
                if lambda > 0.0 {
                    let u = eig.eigenvectors.column(k);
                    beta += u * (u.dot(&rhs) / lambda);
                }
            }
            (beta, true)
        }
    }
}

pub fn train_linear(x: &Matrix, y: &[f64]) -> Result<TrainedModel> {
    check_xy(x, y)?;
    let n = x.n_rows();
    let d = x.n_cols();
    let nf = n as f64;

    let x_mean: Vec<f64> = (0..d).map(|j| x.column(j).iter().sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;

    let xc = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * yc;
    let (beta, _) = solve_normal_equations(gram, rhs);

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(w, m)| w * m)
            .sum::<f64>();

    let config = ModelConfig::Linear;
    let fp = fingerprint(Task::Regression, &config, x, y);
    Ok(TrainedModel::new(
        Task::Regression,
        d,
        config,
        Parameters::Linear(LinearParams {
            coefficients,
            intercept,
        }),
        fp,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelError;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn params(m: &TrainedModel) -> &LinearParams {
        match m.parameters() {
            Parameters::Linear(p) => p,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_line() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]);
        let m = train_linear(&x, &[2.0, 4.0, 6.0]).unwrap();
        let p = params(&m);
        assert!((p.coefficients[0] - 2.0).abs() < 1e-9);
        assert!(p.intercept.abs() < 1e-9);
    }

    #[test]
    fn constant_target() {
        let x = Matrix::from_rows(&[[1.0, 0.5], [2.0, -1.0], [3.0, 4.0], [0.0, 2.0]]);
        let m = train_linear(&x, &[7.0; 4]).unwrap();
        let p = params(&m);
        assert!(p.coefficients.iter().all(|&w| w.abs() < 1e-12));
        assert!((p.intercept - 7.0).abs() < 1e-12);
    }

    #[test]
    fn predict_at_origin_is_intercept() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 0.0]]);
        let m = train_linear(&x, &[1.0, 3.0, 2.0, 8.0]).unwrap();
        let p = m.predict(&Matrix::from_rows(&[[0.0, 0.0]])).unwrap();
        assert_eq!(p[0], params(&m).intercept);
    }

    #[test]
    fn matches_pseudoinverse() {
        let mut rng = rng_from_seed(11);
        let (n, d) = (50, 3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 1.5 * r[0] - 0.7 * r[1] + 0.2 * r[2] + 3.0 + rng.random_range(-0.5..0.5))
            .collect();
        let x = Matrix::from_rows(&rows);
        let m = train_linear(&x, &y).unwrap();

        // Oracle: Moore-Penrose pseudoinverse of the design with a bias column.
        let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let pinv = design.clone().pseudo_inverse(1e-14).unwrap();
        let beta = pinv * DVector::from_vec(y.clone());
        let oracle = design * beta;

        let pred = m.predict(&x).unwrap();
        for (p, o) in pred.iter().zip(oracle.iter()) {
            assert!((p - o).abs() <= 1e-8 * o.abs().max(1.0), "{p} vs {o}");
        }
    }

    #[test]
    fn collinear_columns_use_ridge() {
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64 + 1.0).collect();
        let m = train_linear(&Matrix::from_rows(&rows), &y).unwrap();
        let pred = m.predict(&Matrix::from_rows(&rows)).unwrap();
        for (p, t) in pred.iter().zip(&y) {
            assert!((p - t).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(
            train_linear(&Matrix::empty(2), &[]),
            Err(ModelError::EmptyTrainingSet)
        );
    }
}
