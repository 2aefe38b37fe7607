//! Learning under indirect supervision: factor graphs over link variables,
//! marginal inference, the parameter update, and the self-training loop.

mod factor;
mod self_train;

use crate::error::{Error, Result};
use crate::features::SparseVec;
use crate::linear::{GdConfig, LogisticModel};

pub use factor::{e_step, exact_marginals, mean_field, mean_field_update, BpConfig, Factor, FactorGraph, Marginals};
pub use self_train::{
    initial_links, propose_links, self_train_resolution, IterationStats, PairMarginals, SelfTrainConfig, SelfTrainOutput,
};

/// Fits `model` to soft targets `q` by minimizing expected cross-entropy
/// plus L2. Returns the objective trace, which never increases.
pub fn m_step(q: &[f64], xs: &[SparseVec], model: &mut LogisticModel, gd: &GdConfig) -> Result<Vec<f64>> {
    if q.len() != xs.len() {
        return Err(Error::Validation(format!("{} targets for {} feature vectors", q.len(), xs.len())));
    }
    if let Some(bad) = q.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("target {bad} outside [0, 1]")));
    }
    if xs.is_empty() {
        log::warn!("m-step skipped: no training pairs");
        return Ok(Vec::new());
    }
    Ok(model.fit_full_batch(xs, q, gd))
}
