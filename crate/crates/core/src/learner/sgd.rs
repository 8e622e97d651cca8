use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{gradient_into, predict_all, ModelConfig};
use super::params::ParameterVector;
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Learning rate 0 is accepted and leaves parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Plain mini-batch SGD on the mean squared error.
///
/// Each epoch visits `data` in an order drawn from the stream keyed by
/// `(tcfg.seed, epoch)`; the last batch of an epoch may be short.
pub fn sgd_train<T: Scalar>(
    params: &ParameterVector<T>,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &[Example],
) -> Result<ParameterVector<T>> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    tcfg.validate()?;
    let mut params = params.clone();
    let mut grad = vec![T::zero(); params.len()];
    let mut batch = Vec::with_capacity(tcfg.batch_size);
    let lr = T::lit(tcfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..tcfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(
            tcfg.seed,
            "learner/epoch",
            &[epoch as u64],
        ));
        for chunk in order.chunks(tcfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            gradient_into(&params, cfg, &batch, &mut grad)?;
            for (w, &g) in params.values_mut().iter_mut().zip(&grad) {
                *w = *w - lr * g;
            }
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(params)
}

/// `(1/N) * sum (y_hat - y)^2`, accumulated in `f64`.
pub fn evaluate_mse<T: Scalar>(
    params: &ParameterVector<T>,
    cfg: &ModelConfig,
    data: &[Example],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let preds = predict_all(params, cfg, data)?;
    let sse: f64 = preds
        .iter()
        .zip(data)
        .map(|(p, e)| {
            let r = p.to_f64_lossless() - e.label;
            r * r
        })
        .sum();
    Ok(sse / data.len() as f64)
}
