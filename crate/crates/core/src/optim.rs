//! Binary cross-entropy, RMSprop and the mini-batch training loop.
//!
//! Training minimizes the mean cross-entropy over the learning set. Each
//! epoch shuffles the samples with a seed-derived permutation and walks
//! batches of `batch_size` (the trailing short batch is kept); the batch
//! gradient is the arithmetic mean of per-sample BPTT gradients, so the
//! learning rate does not depend on the batch size. Per-sample gradients may
//! be computed in parallel but are reduced in sample order, which keeps the
//! whole procedure a deterministic function of `(architecture, set order,
//! config)`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleSet;
use crate::error::{Error, Result};
use crate::rnn::{self, Architecture, GradientSet, NetworkParameters, DEFAULT_PROB_CLAMP};

/// RMSprop and loop hyperparameters. `decay` is the gradient decay factor
/// (called rho or gamma depending on the source; both name this quantity).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub alpha: f64,
    pub decay: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub prob_clamp: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            alpha: 1e-3,
            decay: 0.9,
            batch_size: 256,
            n_epochs: 20,
            seed: 1,
            epsilon: 1e-8,
            prob_clamp: DEFAULT_PROB_CLAMP,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("decay must lie strictly between 0 and 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(Error::config("prob_clamp must lie in (0, 0.5)"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Binary cross-entropy `-(y ln p + (1-y) ln(1-p))` with the default
/// probability clamp guarding the logarithms.
pub fn bce(label: f64, p: f64) -> f64 {
    bce_with_clamp(label, p, DEFAULT_PROB_CLAMP)
}

pub fn bce_with_clamp(label: f64, p: f64, prob_clamp: f64) -> f64 {
    let p = p.clamp(prob_clamp, 1.0 - prob_clamp);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean cross-entropy of the network over a sample set.
pub fn empirical_loss(params: &NetworkParameters, set: &SampleSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::UndefinedMean);
    }
    let losses: Vec<Result<f64>> = set
        .samples
        .par_iter()
        .map(|s| Ok(bce(s.label as f64, rnn::forward(params, &s.trajectory)?)))
        .collect();
    let mut sum = 0.0;
    for loss in losses {
        sum += loss?;
    }
    Ok(sum / set.len() as f64)
}

/// Running mean of squared gradients, one accumulator per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    sq_avg: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(arch: &Architecture) -> Self {
        OptimizerState {
            sq_avg: vec![0.0; arch.parameter_count()],
            step: 0,
        }
    }

    pub fn sq_avg(&self) -> &[f64] {
        &self.sq_avg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One RMSprop update:
/// `s <- decay*s + (1-decay)*g^2`, `w <- w - alpha*g/(sqrt(s) + epsilon)`.
pub fn rmsprop_step(
    state: &mut OptimizerState,
    params: &mut NetworkParameters,
    grads: &GradientSet,
    config: &TrainerConfig,
) -> Result<()> {
    if grads.data().len() != params.data().len() || state.sq_avg.len() != params.data().len() {
        return Err(Error::config("optimizer shape mismatch"));
    }
    if let Some((_, name)) = grads.first_non_finite() {
        return Err(Error::numeric(format!("gradient tensor {name}")));
    }
    let one_minus = 1.0 - config.decay;
    for ((w, s), &g) in params
        .data_mut()
        .iter_mut()
        .zip(state.sq_avg.iter_mut())
        .zip(grads.data())
    {
        *s = config.decay * *s + one_minus * g * g;
        *w -= config.alpha * g / (s.sqrt() + config.epsilon);
    }
    state.step += 1;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub parameters: NetworkParameters,
    pub epochs: Vec<EpochLog>,
}

/// Trains a freshly initialized network on the learning set.
pub fn train(arch: &Architecture, set: &SampleSet, config: &TrainerConfig) -> Result<TrainOutcome> {
    train_with(arch, set, config, |_| {})
}

/// [`train`] with a per-epoch callback for progress logging.
pub fn train_with(
    arch: &Architecture,
    set: &SampleSet,
    config: &TrainerConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty set".into()));
    }
    for sample in &set.samples {
        if sample.trajectory.is_empty() {
            return Err(Error::InvalidInput(format!(
                "player {:?} at {} has an empty trajectory",
                sample.player_id, sample.t_prime
            )));
        }
        if sample.trajectory.days[0].values.len() != arch.input_dim {
            return Err(Error::config(format!(
                "sample feature count {} does not match network input {}",
                sample.trajectory.days[0].values.len(),
                arch.input_dim
            )));
        }
    }

    let mut params = rnn::init_parameters(arch, config.seed);
    let mut state = OptimizerState::new(arch);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epochs = Vec::with_capacity(config.n_epochs);

    for epoch in 0..config.n_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let located = |e: Error| locate(e, epoch, batch_index);
            let results: Vec<Result<(f64, GradientSet)>> = batch
                .par_iter()
                .map(|&i| {
                    let sample = &set.samples[i];
                    rnn::backward_with_clamp(
                        &params,
                        &sample.trajectory,
                        sample.label as f64,
                        config.prob_clamp,
                    )
                })
                .collect();
            let mut grad = GradientSet::zeros(arch);
            let scale = 1.0 / batch.len() as f64;
            for result in results {
                let (loss, g) = result.map_err(located)?;
                loss_sum += loss;
                grad.add_scaled(&g, scale);
            }
            rmsprop_step(&mut state, &mut params, &grad, config).map_err(located)?;
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / set.len() as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        epochs.push(log);
    }

    Ok(TrainOutcome {
        parameters: params,
        epochs,
    })
}

fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric { location } => Error::Numeric {
            location: format!("epoch {epoch}, batch {batch}: {location}"),
        },
        other => other,
    }
}
