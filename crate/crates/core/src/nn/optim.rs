//! Parameter updates: plain gradient descent and Adam.

use std::fmt;
use std::str::FromStr;

use ndarray::Zip;

use super::mlp::{Gradients, MlpModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Rows per step when a graph is too large for a single full-batch step.
    pub batch_size: usize,
    /// Graphs with fewer edges than this are stepped full-batch.
    pub full_batch_limit: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 8192,
            full_batch_limit: 50_000,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Row ranges a graph with `rows` edges is split into per step.
    pub fn batches(&self, rows: usize) -> Vec<std::ops::Range<usize>> {
        if rows < self.full_batch_limit {
            return vec![0..rows];
        }
        let bs = self.batch_size.max(1);
        (0..rows.div_ceil(bs))
            .map(|b| b * bs..((b + 1) * bs).min(rows))
            .collect()
    }
}

fn check_gradients(model: &MlpModel, grads: &Gradients) -> Result<()> {
    if !grads.matches(model) {
        return Err(Error::InvalidArgument(
            "gradient shapes do not match model parameters".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// `θ ← θ − lr · g`.
pub fn sgd_step(model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<()> {
    check_gradients(model, grads)?;
    let (ws, bs) = model.params_mut();
    for (w, g) in ws.iter_mut().zip(&grads.weights) {
        w.scaled_add(-lr, g);
    }
    for (b, g) in bs.iter_mut().zip(&grads.biases) {
        b.scaled_add(-lr, g);
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    Ok(())
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(model: &MlpModel) -> Self {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<()> {
        check_gradients(model, grads)?;
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (ws, bs) = model.params_mut();
        for k in 0..ws.len() {
            Zip::from(&mut ws[k])
                .and(&mut self.m.weights[k])
                .and(&mut self.v.weights[k])
                .and(&grads.weights[k])
                .for_each(|p, m, v, &g| adam_update(p, m, v, g, lr, b1, b2, c1, c2, eps));
            Zip::from(&mut bs[k])
                .and(&mut self.m.biases[k])
                .and(&mut self.v.biases[k])
                .and(&grads.biases[k])
                .for_each(|p, m, v, &g| adam_update(p, m, v, g, lr, b1, b2, c1, c2, eps));
        }
        if !model.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut f64,
    m: &mut f64,
    v: &mut f64,
    g: f64,
    lr: f64,
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    eps: f64,
) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= lr * m_hat / (v_hat.sqrt() + eps);
}

/// Optimizer state bound to one model.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn for_model(kind: OptimizerKind, model: &MlpModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(model)),
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd => sgd_step(model, grads, lr),
            Optimizer::Adam(adam) => adam.step(model, grads, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;

    #[test]
    fn sgd_single_scalar_step() {
        let mut m =
            MlpModel::from_parts(vec![array![[1.0]]], vec![array![0.0]], Activation::Relu).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.weights[0][[0, 0]] = 1.0;
        sgd_step(&mut m, &g, 0.1).unwrap();
        assert!((m.weights()[0][[0, 0]] - 0.9).abs() < 1e-15);
        assert_eq!(m.biases()[0][0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let orig = MlpModel::new(&[3, 4, 2], 5).unwrap();
        let g = Gradients::zeros_like(&orig);
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut m = orig.clone();
            let mut opt = Optimizer::for_model(kind, &m);
            for _ in 0..3 {
                opt.step(&mut m, &g, 0.01).unwrap();
            }
            assert_eq!(m, orig, "{kind}");
        }
    }

    #[test]
    fn zero_learning_rate_after_backward() {
        let orig = MlpModel::new(&[3, 4, 2], 5).unwrap();
        let x = array![[0.1, 0.2, -0.4], [1.0, -1.0, 0.5]];
        let g = orig.backward(x.view(), &[0, 1]).unwrap();
        let mut m = orig.clone();
        let mut adam = Adam::new(&m);
        adam.step(&mut m, &g, 0.0).unwrap();
        sgd_step(&mut m, &g, 0.0).unwrap();
        assert_eq!(m, orig);
    }

    #[test]
    fn nan_gradient_is_an_error() {
        let mut m = MlpModel::new(&[2, 2], 1).unwrap();
        let mut g = Gradients::zeros_like(&m);
        g.biases[0][1] = f64::NAN;
        let before = m.clone();
        assert!(matches!(sgd_step(&mut m, &g, 0.1), Err(Error::NonFinite(_))));
        assert!(matches!(Adam::new(&m).step(&mut m, &g, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn batches_split_large_graphs() {
        let cfg = TrainConfig {
            batch_size: 4,
            full_batch_limit: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.batches(9), vec![0..9]);
        assert_eq!(cfg.batches(10), vec![0..4, 4..8, 8..10]);
    }
}
