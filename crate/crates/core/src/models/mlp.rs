//! Single-hidden-layer perceptron `ŷ = W₂·relu(W₁x + b₁) + b₂` trained with
//! Adam on mini-batches.
//!
//! Inputs are standardised per column. Regression targets are standardised
//! too and mapped back at prediction time. The classifier keeps raw 0/1
//! labels, trains on binary cross-entropy and applies the logistic function
//! to the output.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    check_binary, check_xy, column_scaling, fingerprint, sigmoid, ModelConfig, ModelError,
    Parameters, Result, Task, TrainedModel,
};
use crate::matrix::Matrix;
use crate::rng::sub_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Clipped to the number of rows.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 500,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(ModelError::InvalidConfig("hidden_units must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ModelError::InvalidConfig("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Output loss of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean of `(ŷ − y)² / 2`.
    Squared,
    /// Mean binary cross-entropy of `sigmoid(ŷ)` against 0/1 labels.
    CrossEntropy,
}

/// Raw network weights as one flat vector laid out `W₁ (h×d, row-major) ‖
/// b₁ (h) ‖ W₂ (h) ‖ b₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub inputs: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl Network {
    pub fn parameter_count(inputs: usize, hidden: usize) -> usize {
        hidden * inputs + 2 * hidden + 1
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`, zero biases.
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = sub_rng(seed, 0);
        let mut theta = vec![0.0; Self::parameter_count(inputs, hidden)];
        let a1 = (6.0 / (inputs + hidden) as f64).sqrt();
        for w in &mut theta[..hidden * inputs] {
            *w = rng.random_range(-a1..=a1);
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let off = hidden * inputs + hidden;
        for w in &mut theta[off..off + hidden] {
            *w = rng.random_range(-a2..=a2);
        }
        Self {
            inputs,
            hidden,
            theta,
        }
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden * self.inputs]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.hidden * self.inputs;
        &self.theta[o..o + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.hidden * self.inputs + self.hidden;
        &self.theta[o..o + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    /// Pre-activation output for one row.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let (d, h) = (self.inputs, self.hidden);
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut out = self.b2();
        for k in 0..h {
            let z = b1[k] + dot(&w1[k * d..(k + 1) * d], x);
            if z > 0.0 {
                out += w2[k] * z;
            }
        }
        out
    }

    /// Mean loss over `rows` of `(x, y)`.
    pub fn loss(&self, x: &Matrix, y: &[f64], rows: &[usize], loss: Loss) -> f64 {
        let mut grad = vec![0.0; self.theta.len()];
        let mut hidden = vec![0.0; self.hidden];
        self.accumulate(x, y, rows, loss, &mut grad, &mut hidden, false)
    }

    /// Mean loss and its gradient with respect to `theta`.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[f64], rows: &[usize], loss: Loss) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.theta.len()];
        let mut hidden = vec![0.0; self.hidden];
        let l = self.accumulate(x, y, rows, loss, &mut grad, &mut hidden, true);
        (l, grad)
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        x: &Matrix,
        y: &[f64],
        rows: &[usize],
        loss: Loss,
        grad: &mut [f64],
        hidden: &mut [f64],
        want_grad: bool,
    ) -> f64 {
        let (d, h) = (self.inputs, self.hidden);
        let scale = 1.0 / rows.len() as f64;
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for &i in rows {
            let xi = x.row(i);
            let mut out = self.b2();
            for k in 0..h {
                let z = b1[k] + dot(&w1[k * d..(k + 1) * d], xi);
                hidden[k] = z.max(0.0);
                out += w2[k] * hidden[k];
            }
            let (l, g) = match loss {
                Loss::Squared => {
                    let r = out - y[i];
                    (0.5 * r * r, r)
                }
                Loss::CrossEntropy => {
                    // log(1 + e^out) − y·out, written to avoid overflow
                    let sp = out.max(0.0) + (-out.abs()).exp().ln_1p();
                    (sp - y[i] * out, sigmoid(out) - y[i])
                }
            };
            total += l;
            if !want_grad {
                continue;
            }
            let g = g * scale;
            let (gw1, rest) = grad.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(h);
            gb2[0] += g;
            for k in 0..h {
                if hidden[k] <= 0.0 {
                    continue;
                }
                gw2[k] += g * hidden[k];
                let delta = g * w2[k];
                gb1[k] += delta;
                for (gw, v) in gw1[k * d..(k + 1) * d].iter_mut().zip(xi) {
                    *gw += delta * v;
                }
            }
        }
        total * scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub network: Network,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
    pub logistic_link: bool,
}

impl MlpParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.x_mean)
            .zip(&self.x_sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let out = self.network.forward(&z);
        if self.logistic_link {
            sigmoid(out)
        } else {
            self.y_mean + self.y_sd * out
        }
    }
}

fn standardize(x: &Matrix, mean: &[f64], sd: &[f64]) -> Matrix {
    Matrix::from_flat(
        x.n_rows(),
        x.n_cols(),
        x.rows()
            .flat_map(|r| r.iter().zip(mean).zip(sd).map(|((v, m), s)| (v - m) / s))
            .collect(),
    )
}

fn fit(x: &Matrix, y: &[f64], cfg: &MlpConfig, loss: Loss) -> Result<MlpParams> {
    cfg.validate()?;
    let n = x.n_rows();
    let (x_mean, x_sd) = column_scaling(x);
    let z = standardize(x, &x_mean, &x_sd);
    let (y_mean, y_sd, t) = match loss {
        Loss::Squared => {
            let m = y.iter().sum::<f64>() / n as f64;
            let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let sd = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            (m, sd, y.iter().map(|v| (v - m) / sd).collect::<Vec<_>>())
        }
        Loss::CrossEntropy => (0.0, 1.0, y.to_vec()),
    };

    let mut net = Network::init(x.n_cols(), cfg.hidden_units, cfg.seed);
    let p = net.theta.len();
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut hidden = vec![0.0; cfg.hidden_units];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = sub_rng(cfg.seed, 1);
    let batch = cfg.batch_size.min(n);
    let mut step = 0i32;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for rows in order.chunks(batch) {
            let l = net.accumulate(&z, &t, rows, loss, &mut grad, &mut hidden, true);
            epoch_loss += l * rows.len() as f64;
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for (((w, g), m), v) in net.theta.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
        if !epoch_loss.is_finite() || !net.theta.iter().all(|w| w.is_finite()) {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
    }

    Ok(MlpParams {
        network: net,
        x_mean,
        x_sd,
        y_mean,
        y_sd,
        logistic_link: loss == Loss::CrossEntropy,
    })
}

pub fn train_mlp(x: &Matrix, y: &[f64], cfg: &MlpConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    let params = fit(x, y, cfg, Loss::Squared)?;
    let config = ModelConfig::Mlp(cfg.clone());
    let fp = fingerprint(Task::Regression, &config, x, y);
    Ok(TrainedModel::new(
        Task::Regression,
        x.n_cols(),
        config,
        Parameters::Mlp(params),
        fp,
    ))
}

pub fn train_mlp_classifier(x: &Matrix, y: &[f64], cfg: &MlpConfig) -> Result<TrainedModel> {
    check_xy(x, y)?;
    check_binary(y)?;
    let params = fit(x, y, cfg, Loss::CrossEntropy)?;
    let config = ModelConfig::Mlp(cfg.clone());
    let fp = fingerprint(Task::Classification, &config, x, y);
    Ok(TrainedModel::new(
        Task::Classification,
        x.n_cols(),
        config,
        Parameters::Mlp(params),
        fp,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn max_relative_fd_error(net: &Network, x: &Matrix, y: &[f64], loss: Loss) -> f64 {
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let (_, grad) = net.loss_and_grad(x, y, &rows, loss);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..net.theta.len() {
            let mut plus = net.clone();
            plus.theta[i] += h;
            let mut minus = net.clone();
            minus.theta[i] -= h;
            let fd = (plus.loss(x, y, &rows, loss) - minus.loss(x, y, &rows, loss)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(err);
        }
        worst
    }

    fn small_problem() -> (Network, Matrix, Vec<f64>) {
        let mut rng = rng_from_seed(17);
        let rows: Vec<[f64; 3]> = (0..8)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let y = (0..8).map(|i| f64::from(i % 2 == 0)).collect();
        let mut net = Network::init(3, 2, 9);
        // keep every hidden unit active on some rows but away from the kink
        net.theta[6] = 0.3;
        net.theta[7] = -0.2;
        (net, Matrix::from_rows(&rows), y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (net, x, y) = small_problem();
        let err = max_relative_fd_error(&net, &x, &y, Loss::Squared);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let (net, x, y) = small_problem();
        let err = max_relative_fd_error(&net, &x, &y, Loss::CrossEntropy);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn learns_a_line() {
        let rows: Vec<[f64; 1]> = (0..100).map(|i| [i as f64 / 99.0 * 4.0 - 2.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let x = Matrix::from_rows(&rows);
        let m = train_mlp(&x, &y, &MlpConfig::default()).unwrap();
        let p = m.predict(&x).unwrap();
        let rmse = (p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(rmse < 0.1, "rmse {rmse}");
    }

    #[test]
    fn zero_epochs_is_the_initial_network() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.0], [2.0, 2.0]]);
        let y = [1.0, 2.0, 0.0, 5.0];
        let cfg = MlpConfig {
            epochs: 0,
            hidden_units: 5,
            seed: 21,
            ..Default::default()
        };
        let m = train_mlp(&x, &y, &cfg).unwrap();
        let net = Network::init(2, 5, 21);
        let (mean, sd) = column_scaling(&x);
        let y_mean = 2.0;
        let y_sd = (((1.0f64 - 2.0).powi(2) + 0.0 + 4.0 + 9.0) / 4.0).sqrt();
        for r in x.rows() {
            let z: Vec<f64> = r.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v - m) / s).collect();
            let expected = y_mean + y_sd * net.forward(&z);
            assert_eq!(m.predict_row(r).unwrap(), expected);
        }
    }

    #[test]
    fn glorot_bounds() {
        let net = Network::init(10, 64, 3);
        let a1 = (6.0f64 / 74.0).sqrt();
        let a2 = (6.0f64 / 65.0).sqrt();
        assert!(net.w1().iter().all(|w| w.abs() <= a1));
        assert!(net.w2().iter().all(|w| w.abs() <= a2));
        assert!(net.b1().iter().all(|&b| b == 0.0));
        assert_eq!(net.b2(), 0.0);
    }

    #[test]
    fn batch_larger_than_data_is_clipped() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]);
        let cfg = MlpConfig {
            batch_size: 100,
            epochs: 5,
            ..Default::default()
        };
        assert!(train_mlp(&x, &[0.0, 1.0, 2.0], &cfg).is_ok());
    }

    #[test]
    fn divergence_reports_epoch() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]);
        let cfg = MlpConfig {
            learning_rate: 1e300,
            epochs: 50,
            ..Default::default()
        };
        assert!(matches!(
            train_mlp(&x, &[0.0, 1.0, 0.0, 1.0], &cfg),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn zero_hidden_units_rejected() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]);
        let cfg = MlpConfig {
            hidden_units: 0,
            ..Default::default()
        };
        assert!(matches!(train_mlp(&x, &[0.0, 1.0], &cfg), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn classifier_outputs_probabilities() {
        let rows: Vec<[f64; 1]> = (0..40).map(|i| [i as f64]).collect();
        let y: Vec<f64> = (0..40).map(|i| f64::from(i >= 20)).collect();
        let x = Matrix::from_rows(&rows);
        let cfg = MlpConfig {
            epochs: 200,
            ..Default::default()
        };
        let m = train_mlp_classifier(&x, &y, &cfg).unwrap();
        let p = m.predict_proba(&x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p[0] < 0.5 && p[39] > 0.5);
    }
}
