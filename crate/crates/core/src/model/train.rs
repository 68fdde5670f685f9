//! Minibatch SGD for centralized training.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::network::{Layer, Model};
use super::params::sgd_step;
use super::tensor::Tensor;
use super::{Dataset, ModelError};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `None` trains full-batch.
    pub batch: Option<usize>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.1,
            batch: None,
        }
    }
}

/// Trains in place and returns the mean batch loss of each epoch.
///
/// Rows are reshuffled every epoch unless the whole set is one batch.
pub fn train_sgd(
    model: &mut Model,
    data: &Dataset,
    cfg: &SgdConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n = data.len();
    let b = cfg.batch.unwrap_or(n).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if b < n {
            order.shuffle(rng);
        }
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(b) {
            let part = data.subset(chunk);
            let (loss, g) = model.loss_and_grad(&part.x, &part.y)?;
            model.set_params(&sgd_step(&model.params(), &g, cfg.lr)?)?;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(losses)
}

impl Model {
    /// Same architecture and loss with freshly drawn weights, using the
    /// initialization of [`Model::mlp`].
    pub fn reinitialized(&self, rng: &mut Rng) -> Result<Model, ModelError> {
        let layers = self
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Dense { w, .. } => {
                    let (fan_in, fan_out) = (w.rows(), w.cols());
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let wv = (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-bound..=bound))
                        .collect();
                    let bv = (0..fan_out)
                        .map(|_| rng.gen_range(-bound..=bound))
                        .collect();
                    Ok(Layer::dense(
                        Tensor::new(vec![fan_in, fan_out], wv)?,
                        Tensor::new(vec![fan_out], bv)?,
                    ))
                }
                other => Ok(other.clone()),
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Model::new(layers, self.loss_kind())
    }
}
