use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::tensor::Tensor;
use super::NnError;
use crate::labeling::{Label, LabeledSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Anything that can be fed to the trainer.
pub trait Example {
    fn window(&self) -> &[f64];
    fn label(&self) -> Label;
}

impl Example for LabeledSample {
    fn window(&self) -> &[f64] {
        LabeledSample::window(self)
    }

    fn label(&self) -> Label {
        self.label
    }
}

impl Example for (Vec<f64>, Label) {
    fn window(&self) -> &[f64] {
        &self.0
    }

    fn label(&self) -> Label {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam over shuffled samples. Shuffles and dropout masks come
/// from one stream seeded by `cfg.seed`, so a run is reproducible bit for bit.
pub fn train<E: Example>(model: Model, samples: &[E], cfg: &TrainConfig) -> Result<TrainedModel, NnError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NnError::NoSamples);
    }
    let (t, w) = (model.spec().input_time, model.spec().input_width);
    if let Some(bad) = samples.iter().find(|s| s.window().len() != t * w) {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            reason: format!(
                "sample window of {} values, expected {}",
                bad.window().len(),
                t * w
            ),
        });
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.parameters(), cfg);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut data = Vec::with_capacity(idx.len() * t * w);
            let mut labels = Vec::with_capacity(idx.len());
            for &i in idx {
                data.extend_from_slice(samples[i].window());
                labels.push(samples[i].label());
            }
            let x = Tensor::new(vec![idx.len(), t, w], data);
            let dropout_seed = rng.gen::<u64>();
            let (loss, grads) = model
                .loss_and_gradients(&x, &labels, Some(dropout_seed))
                .map_err(|e| NnError::Training {
                    epoch,
                    batch,
                    source: Box::new(e),
                })?;
            adam.step(model.parameters_mut(), &grads);
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok(TrainedModel { model, epoch_losses })
}
