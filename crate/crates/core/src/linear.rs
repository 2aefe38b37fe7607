//! Logistic model over hashed sparse features, with the soft-label
//! cross-entropy objective both native scorers train against.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureHasher, SparseVec};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-(y ln p + (1-y) ln(1-p))` evaluated from the logit without overflow.
fn cross_entropy_from_logit(z: f64, y: f64) -> f64 {
    // ln(1 + e^z) - y z
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub bits: u32,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Gradient of the objective: dense over weights plus the bias component.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Gradient {
    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|g| g * g).sum::<f64>() + self.bias * self.bias
    }
}

impl LogisticModel {
    pub fn zeros(bits: u32) -> Self {
        LogisticModel {
            bits,
            weights: vec![0.0; FeatureHasher::dim(bits)],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &SparseVec) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn prob(&self, x: &SparseVec) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean soft cross-entropy plus `l2/2 * |w|^2` (bias unregularized).
    pub fn objective(&self, xs: &[SparseVec], ys: &[f64], l2: f64) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let ce: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| cross_entropy_from_logit(self.logit(x), y))
            .sum::<f64>()
            / xs.len() as f64;
        ce + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn objective_and_gradient(&self, xs: &[SparseVec], ys: &[f64], l2: f64) -> (f64, Gradient) {
        let mut g = Gradient {
            weights: self.weights.iter().map(|w| l2 * w).collect(),
            bias: 0.0,
        };
        if xs.is_empty() {
            return (self.objective(xs, ys, l2), g);
        }
        let n = xs.len() as f64;
        let mut ce = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.logit(x);
            ce += cross_entropy_from_logit(z, y);
            let err = (sigmoid(z) - y) / n;
            for &(i, v) in x.iter() {
                g.weights[i as usize] += err * v;
            }
            g.bias += err;
        }
        let reg = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        (ce / n + reg, g)
    }

    /// One minibatch SGD step. L2 shrinkage is applied to touched weights only.
    pub fn sgd_step(&mut self, batch: &[(&SparseVec, f64)], lr: f64, l2: f64) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let mut grad: HashMap<u32, f64> = HashMap::new();
        let mut gb = 0.0;
        for &(x, y) in batch {
            let err = (self.prob(x) - y) / n;
            for &(i, v) in x.iter() {
                *grad.entry(i).or_insert(0.0) += err * v;
            }
            gb += err;
        }
        let mut touched: Vec<_> = grad.into_iter().collect();
        touched.sort_by_key(|(i, _)| *i);
        for (i, g) in touched {
            let w = &mut self.weights[i as usize];
            *w -= lr * (g + l2 * *w);
        }
        self.bias -= lr * gb;
    }

    /// Moves against `g` scaled coordinate-wise by `scale`.
    fn apply(&mut self, g: &Gradient, scale: &Gradient, step: f64) {
        for ((w, gw), sw) in self.weights.iter_mut().zip(&g.weights).zip(&scale.weights) {
            *w -= step * gw * sw;
        }
        self.bias -= step * g.bias * scale.bias;
    }

    /// Inverse of a diagonal curvature bound: `x_j^2 / 4` averaged over the
    /// data plus `l2`, so each coordinate moves on its own scale and rare
    /// features converge as fast as frequent ones.
    fn diagonal_preconditioner(&self, xs: &[SparseVec], l2: f64) -> Gradient {
        let n = xs.len().max(1) as f64;
        let mut d = vec![l2; self.weights.len()];
        for x in xs {
            for &(i, v) in x.iter() {
                d[i as usize] += 0.25 * v * v / n;
            }
        }
        Gradient {
            weights: d.into_iter().map(|c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect(),
            bias: 4.0,
        }
    }

    /// Full-batch descent along the diagonally preconditioned gradient with
    /// Armijo backtracking. The returned objective trace is non-increasing
    /// by construction.
    pub fn fit_full_batch(&mut self, xs: &[SparseVec], ys: &[f64], cfg: &GdConfig) -> Vec<f64> {
        let mut trace = Vec::with_capacity(cfg.max_steps + 1);
        let scale = self.diagonal_preconditioner(xs, cfg.l2);
        let (mut f, mut g) = self.objective_and_gradient(xs, ys, cfg.l2);
        trace.push(f);
        let mut step = cfg.initial_step;
        for _ in 0..cfg.max_steps {
            if g.norm_sq().sqrt() < cfg.tolerance {
                break;
            }
            // Directional derivative along the scaled direction, negated.
            let slope = g.weights.iter().zip(&scale.weights).map(|(g, s)| g * g * s).sum::<f64>() + g.bias * g.bias * scale.bias;
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = self.clone();
                trial.apply(&g, &scale, step);
                let ft = trial.objective(xs, ys, cfg.l2);
                if ft <= f - 1e-4 * step * slope {
                    *self = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            let (nf, ng) = self.objective_and_gradient(xs, ys, cfg.l2);
            f = nf;
            g = ng;
            trace.push(f);
            step = (step * 2.0).min(cfg.max_step);
        }
        trace
    }

    pub fn to_dump(&self, schema: &str, extra: serde_json::Value) -> ModelDump {
        ModelDump {
            schema: schema.to_string(),
            bits: self.bits,
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
            extra,
        }
    }

    pub fn from_dump(dump: &ModelDump, expected_schema: &str) -> Result<Self> {
        if dump.schema != expected_schema {
            return Err(Error::Validation(format!(
                "model schema `{}` where `{expected_schema}` was expected",
                dump.schema
            )));
        }
        let mut m = LogisticModel::zeros(dump.bits);
        for &(i, w) in &dump.weights {
            let slot = m
                .weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::Validation(format!("weight index {i} out of range")))?;
            *slot = w;
        }
        m.bias = dump.bias;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub max_steps: usize,
    pub l2: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub tolerance: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            max_steps: 150,
            l2: 1e-4,
            initial_step: 1.0,
            max_step: 8.0,
            tolerance: 1e-7,
        }
    }
}

/// JSON parameter dump; only nonzero weights are stored.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDump {
    pub schema: String,
    pub bits: u32,
    pub bias: f64,
    pub weights: Vec<(u32, f64)>,
    #[serde(default)]
    pub extra: serde_json::Value,
}
