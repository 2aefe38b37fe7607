//! Native relation scorer: logistic regression over hashed template n-grams
//! and slot-geometry features, trained with balanced minibatch SGD and early
//! stopping on a held-out split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RelationScorer, ScorerKind, Template};
use crate::error::{Error, Result};
use crate::features::{FeatureHasher, SparseVec};
use crate::linear::{sigmoid, LogisticModel, ModelDump};
use crate::supervision::{balanced_batches, LabeledExample};

pub const RELATION_SCHEMA: &str = "docrel.relation-scorer.v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFeaturizer {
    pub bits: u32,
    pub max_n: usize,
}

impl Default for TemplateFeaturizer {
    fn default() -> Self {
        TemplateFeaturizer { bits: 18, max_n: 3 }
    }
}

fn gap_bucket(gap: usize) -> &'static str {
    match gap {
        0 => "0",
        1 => "1",
        2..=3 => "2-3",
        4..=7 => "4-7",
        8..=15 => "8-15",
        _ => "16+",
    }
}

impl TemplateFeaturizer {
    pub fn featurize(&self, t: &Template) -> SparseVec {
        let toks: Vec<String> = t.tokens().iter().map(|s| s.to_lowercase()).collect();
        let mut h = FeatureHasher::new(self.bits);
        for n in 1..=self.max_n {
            for w in toks.windows(n) {
                h.add(&format!("g{n}:{}", w.join(" ")), 1.0);
            }
        }
        let slots = t.slots();
        for &(r, i) in &slots {
            if i > 0 {
                h.add(&format!("l:{}:{}", r.0, toks[i - 1]), 1.0);
            }
            if let Some(next) = toks.get(i + 1) {
                h.add(&format!("r:{}:{}", r.0, next), 1.0);
            }
        }
        for &(ra, ia) in &slots {
            for &(rb, ib) in &slots {
                if ra >= rb {
                    continue;
                }
                let (lo, hi) = if ia < ib { (ia, ib) } else { (ib, ia) };
                let gap = hi - lo - 1;
                let order = if ia < ib { "fwd" } else { "rev" };
                h.add(&format!("ord:{}{}:{order}", ra.0, rb.0), 1.0);
                h.add(&format!("gap:{}{}:{}", ra.0, rb.0, gap_bucket(gap)), 1.0);
                if gap <= 10 {
                    for tok in &toks[lo + 1..hi] {
                        h.add(&format!("btw:{}{}:{tok}", ra.0, rb.0), 1.0);
                    }
                }
            }
        }
        h.finish_normalized()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NativeRelationScorer {
    pub featurizer: TemplateFeaturizer,
    pub model: LogisticModel,
    /// Set when training saw no usable signal; every template gets this value.
    pub constant: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RelationExtra {
    featurizer: TemplateFeaturizer,
    constant: Option<f64>,
}

impl NativeRelationScorer {
    pub fn zeros(featurizer: TemplateFeaturizer) -> Self {
        NativeRelationScorer {
            featurizer,
            model: LogisticModel::zeros(featurizer.bits),
            constant: None,
        }
    }

    pub fn prob(&self, t: &Template) -> f64 {
        match self.constant {
            Some(p) => p,
            None => self.model.prob(&self.featurizer.featurize(t)),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let extra = serde_json::to_value(RelationExtra {
            featurizer: self.featurizer,
            constant: self.constant,
        })?;
        Ok(serde_json::to_string(&self.model.to_dump(RELATION_SCHEMA, extra))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: ModelDump = serde_json::from_str(s)?;
        let model = LogisticModel::from_dump(&dump, RELATION_SCHEMA)?;
        let extra: RelationExtra = serde_json::from_value(dump.extra)?;
        if extra.featurizer.bits != model.bits {
            return Err(Error::Validation("featurizer width disagrees with model".into()));
        }
        Ok(NativeRelationScorer {
            featurizer: extra.featurizer,
            model,
            constant: extra.constant,
        })
    }
}

impl RelationScorer for NativeRelationScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::NativeFeature
    }

    fn score(&self, template: &Template) -> Result<f64> {
        Ok(self.prob(template))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub bits: u32,
    pub max_n: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub min_steps_per_epoch: usize,
    pub patience: usize,
    pub dev_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            bits: 18,
            max_n: 3,
            batch_size: 32,
            learning_rate: 0.5,
            l2: 1e-5,
            max_epochs: 30,
            min_steps_per_epoch: 20,
            patience: 3,
            dev_fraction: 0.1,
            threshold: 0.5,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub warning: Option<String>,
}

fn mean_loss(model: &LogisticModel, xs: &[SparseVec], ys: &[f64]) -> f64 {
    model.objective(xs, ys, 0.0)
}

fn f1_at(model: &LogisticModel, xs: &[SparseVec], ys: &[f64], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (x, &y) in xs.iter().zip(ys) {
        let pred = sigmoid(model.logit(x)) >= threshold;
        let gold = y >= 0.5;
        match (pred, gold) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Trains the native detector. Returns the checkpoint with the best dev F1
/// (ties broken by lower dev loss).
pub fn train_relation_detector(
    examples: &[LabeledExample],
    cfg: &DetectorConfig,
) -> Result<(NativeRelationScorer, TrainReport)> {
    let featurizer = TemplateFeaturizer {
        bits: cfg.bits,
        max_n: cfg.max_n,
    };
    let xs: Vec<SparseVec> = examples.iter().map(|e| featurizer.featurize(&e.template)).collect();
    let ys: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let mut report = TrainReport::default();

    if xs.windows(2).all(|w| w[0] == w[1]) {
        let p = if ys.is_empty() {
            0.5
        } else {
            ys.iter().sum::<f64>() / ys.len() as f64
        };
        let msg = format!("all {} examples share one feature vector; using constant scorer p={p:.4}", xs.len());
        log::warn!("{msg}");
        report.warning = Some(msg);
        let mut scorer = NativeRelationScorer::zeros(featurizer);
        scorer.constant = Some(p);
        return Ok((scorer, report));
    }

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_dev = ((examples.len() as f64) * cfg.dev_fraction).ceil() as usize;
    let (train_idx, dev_idx): (Vec<usize>, Vec<usize>) = if examples.len() < 20 || n_dev == 0 {
        (order.clone(), order)
    } else {
        let dev = order[..n_dev].to_vec();
        let train = order[n_dev..].to_vec();
        let both = train.iter().any(|&i| ys[i] >= 0.5) && train.iter().any(|&i| ys[i] < 0.5);
        if both {
            (train, dev)
        } else {
            (order.clone(), order)
        }
    };

    let train_examples: Vec<LabeledExample> = train_idx.iter().map(|&i| examples[i].clone()).collect();
    let train_x: Vec<SparseVec> = train_idx.iter().map(|&i| xs[i].clone()).collect();
    let train_y: Vec<f64> = train_idx.iter().map(|&i| ys[i]).collect();
    let dev_x: Vec<SparseVec> = dev_idx.iter().map(|&i| xs[i].clone()).collect();
    let dev_y: Vec<f64> = dev_idx.iter().map(|&i| ys[i]).collect();

    let mut batches = balanced_batches(&train_examples, cfg.batch_size, cfg.seed)?;
    let mut model = LogisticModel::zeros(cfg.bits);
    let mut best = (model.clone(), f64::NEG_INFINITY, f64::INFINITY);
    let mut since_best = 0;
    let steps = train_x.len().div_ceil(cfg.batch_size).max(cfg.min_steps_per_epoch);

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate / (1.0 + 0.1 * epoch as f64);
        for _ in 0..steps {
            let idx = batches.next_batch();
            let batch: Vec<(&SparseVec, f64)> = idx.iter().map(|&i| (&train_x[i], train_y[i])).collect();
            model.sgd_step(&batch, lr, cfg.l2);
        }
        let stats = EpochStats {
            epoch,
            train_loss: mean_loss(&model, &train_x, &train_y),
            dev_loss: mean_loss(&model, &dev_x, &dev_y),
            dev_f1: f1_at(&model, &dev_x, &dev_y, cfg.threshold),
        };
        let better = stats.dev_f1 > best.1 || (stats.dev_f1 == best.1 && stats.dev_loss < best.2);
        if better {
            best = (model.clone(), stats.dev_f1, stats.dev_loss);
            report.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        report.epochs.push(stats);
        if since_best >= cfg.patience {
            break;
        }
    }

    Ok((
        NativeRelationScorer {
            featurizer,
            model: best.0,
            constant: None,
        },
        report,
    ))
}
