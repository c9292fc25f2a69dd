//! Minibatch training with Adam.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;

use super::loss::{l2_penalty, nll_loss};
use super::network::NetworkWeights;
use super::real::Real;
use crate::{seed, Error, Image};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Learning rate per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Linear interpolation from `start` at the first epoch to `end` at the last.
    Linear { start: f64, end: f64 },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant(v) => v,
            LrSchedule::Linear { start, end } => {
                if epochs <= 1 {
                    start
                } else {
                    start + (end - start) * epoch as f64 / (epochs - 1) as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub adam: AdamConfig,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Seed used to initialize the weights; recorded here for provenance.
    pub init_seed: u64,
    pub dropout_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lr: LrSchedule::Linear { start: 5e-3, end: 5e-5 },
            batch_size: 40,
            epochs: 500,
            shuffle_seed: 0,
            init_seed: 0,
            dropout_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let rates = match self.lr {
            LrSchedule::Constant(v) => [v, v],
            LrSchedule::Linear { start, end } => [start, end],
        };
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("learning rates must be positive, got {:?}", self.lr)));
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam constants {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's minibatches (dropout active).
    pub train_loss: f64,
    /// Mean total loss on the validation set (dropout off); `None` without a validation set.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,lr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{},{},", r.epoch, r.train_loss);
            if let Some(v) = r.val_loss {
                let _ = write!(out, "{v}");
            }
            let _ = writeln!(out, ",{}", r.lr);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub weights: NetworkWeights<T>,
    pub history: History,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TrainError<T: Real> {
    #[error(transparent)]
    Invalid(#[from] Error),
    /// The loss became non-finite; `weights` holds the last finite state.
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged {
        epoch: usize,
        step: usize,
        weights: Box<NetworkWeights<T>>,
        history: History,
    },
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new<U: Real>(w: &NetworkWeights<U>) -> Self {
        let zeros = || w.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, cfg: &AdamConfig, lr: f64, w: &mut NetworkWeights<T>, grads: &[Vec<T>]) {
        self.t += 1;
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let one = T::one();
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let step = T::from_f64(lr * c2.sqrt() / c1);
        let eps = T::from_f64(cfg.epsilon * c2.sqrt());
        for (((t, g), m), v) in w.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &gi), mi), vi) in t.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *p -= step * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

/// Mean total loss (NLL + L2) over a set with dropout off.
pub fn evaluate_loss<T: Real>(w: &NetworkWeights<T>, inputs: &[Image], targets: &[Image]) -> Result<f64, Error> {
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        total += nll_loss(w.config(), &w.predict_maps(x, false, 0)?, y)?;
    }
    Ok(total / inputs.len() as f64 + w.config().l2_factor * l2_penalty(w.tensors()))
}

fn check_pairs(inputs: &[Image], targets: &[Image], side: usize, what: &str) -> Result<(), Error> {
    if inputs.len() != targets.len() {
        return Err(Error::Data(format!(
            "{what}: {} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    for img in inputs.iter().chain(targets) {
        if img.height() != side || img.width() != side {
            return Err(Error::Data(format!("{what}: image side differs from network side {side}")));
        }
    }
    Ok(())
}

/// Trains `initial` on `(train_inputs, train_targets)` by minibatch Adam on the
/// total loss, with dropout active and a fresh mask per image and step.
pub fn train<T: Real>(
    initial: NetworkWeights<T>,
    train_inputs: &[Image],
    train_targets: &[Image],
    val_inputs: &[Image],
    val_targets: &[Image],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome<T>, TrainError<T>> {
    cfg.validate()?;
    let side = initial.side();
    check_pairs(train_inputs, train_targets, side, "training set")?;
    check_pairs(val_inputs, val_targets, side, "validation set")?;
    if train_inputs.is_empty() {
        return Err(Error::Data("empty training set".into()).into());
    }
    if cfg.batch_size > train_inputs.len() {
        return Err(Error::Data(format!(
            "batch size {} exceeds the {} training images",
            cfg.batch_size,
            train_inputs.len()
        ))
        .into());
    }

    let l2 = initial.config().l2_factor;
    let mut weights = initial;
    let mut history = History::default();
    let mut adam = Adam::<T>::new(&weights);
    let mut grads = weights.zero_gradients();
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr.at(epoch, cfg.epochs);
        order.shuffle(&mut seed::rng(seed::derive_indexed(cfg.shuffle_seed, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = T::zero()));
            let scale = T::from_f64(1.0 / batch.len() as f64);
            let step_seed = seed::derive_indexed(cfg.dropout_seed, step as u64);
            let mut nll = 0.0;
            for (slot, &i) in batch.iter().enumerate() {
                let mask_seed = seed::derive_indexed(step_seed, slot as u64);
                let loss = weights.accumulate_gradients(
                    &train_inputs[i],
                    &train_targets[i],
                    true,
                    mask_seed,
                    scale,
                    &mut grads,
                );
                nll += match loss {
                    Ok(v) => v,
                    Err(Error::Numeric(_)) => {
                        return Err(TrainError::Diverged { epoch, step, weights: Box::new(weights), history });
                    }
                    Err(e) => return Err(e.into()),
                };
            }
            let loss = nll / batch.len() as f64 + l2 * l2_penalty(weights.tensors());
            let grads_finite = grads.iter().flatten().all(|g| g.is_finite());
            if !loss.is_finite() || !grads_finite {
                return Err(TrainError::Diverged { epoch, step, weights: Box::new(weights), history });
            }
            if l2 > 0.0 {
                let two_l2 = T::from_f64(2.0 * l2);
                for (g, t) in grads.iter_mut().zip(weights.tensors()) {
                    g.iter_mut().zip(&t.data).for_each(|(gi, wi)| *gi += two_l2 * *wi);
                }
            }
            let previous = weights.clone();
            adam.step(&cfg.adam, lr, &mut weights, &grads);
            if weights.tensors().iter().flat_map(|t| &t.data).any(|v| !v.is_finite()) {
                return Err(TrainError::Diverged { epoch, step, weights: Box::new(previous), history });
            }
            log::trace!("step {step}: loss {loss:.6}");
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let val_loss = if val_inputs.is_empty() {
            None
        } else {
            match evaluate_loss(&weights, val_inputs, val_targets) {
                Ok(v) => Some(v),
                Err(Error::Numeric(_)) => {
                    return Err(TrainError::Diverged { epoch, step, weights: Box::new(weights), history });
                }
                Err(e) => return Err(e.into()),
            }
        };
        let record = EpochRecord { epoch, train_loss: epoch_loss / batches as f64, val_loss, lr };
        log::debug!("epoch {epoch}: train {:.6} val {:?} lr {lr:e}", record.train_loss, val_loss);
        history.epochs.push(record);
    }
    Ok(TrainOutcome { weights, history })
}
