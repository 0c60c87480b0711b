use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelParams;
use crate::tensor::{Scalar, Tensor, TensorError};
use crate::training::loss::logcosh_loss;
use crate::training::rmsprop::{OptimizerError, RmspropState, DEFAULT_EPSILON, DEFAULT_RHO};

/// Number of partial sums a batch gradient is reduced through. Fixed so the
/// reduction tree, and therefore every bit of the result, does not depend on
/// how many worker threads run.
const REDUCTION_CHUNKS: usize = 16;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: String, epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] TensorError),
    #[error("epoch callback failed: {0}")]
    Callback(String),
}

/// Learning-rate schedule, early stopping and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub lr_init: f64,
    pub lr_floor: f64,
    /// Divisor applied to the learning rate on a validation plateau.
    pub decay_factor: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            lr_init: 1e-4,
            lr_floor: 1e-8,
            decay_factor: 10.0,
            plateau_patience: 3,
            stop_patience: 6,
            batch_size: 512,
            max_epochs: 100,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init && self.lr_init.is_finite()) {
            return bad("need 0 < lr_floor <= lr_init");
        }
        if !(self.decay_factor > 1.0 && self.decay_factor.is_finite()) {
            return bad("decay_factor must be > 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.plateau_patience == 0 || self.stop_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("need 0 <= rho < 1 and epsilon > 0");
        }
        Ok(())
    }
}

/// Loop bookkeeping that survives a checkpoint/resume cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    /// Lowest validation loss so far; `None` before the first epoch.
    pub best_val: Option<f64>,
    pub best_epoch: usize,
    pub plateau_wait: usize,
    pub stop_wait: usize,
}

impl TrainState {
    pub fn new(schedule: &TrainSchedule) -> Self {
        TrainState {
            epoch: 0,
            lr: schedule.lr_init,
            best_val: None,
            best_epoch: 0,
            plateau_wait: 0,
            stop_wait: 0,
        }
    }

    /// Updates patience counters after an epoch. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, schedule: &TrainSchedule) -> (bool, bool) {
        self.epoch = epoch;
        if self.best_val.is_none_or(|best| val_loss < best) {
            self.best_val = Some(val_loss);
            self.best_epoch = epoch;
            self.plateau_wait = 0;
            self.stop_wait = 0;
            return (true, false);
        }
        self.plateau_wait += 1;
        self.stop_wait += 1;
        if self.plateau_wait >= schedule.plateau_patience {
            self.lr = (self.lr / schedule.decay_factor).max(schedule.lr_floor);
            self.plateau_wait = 0;
        }
        (false, self.stop_wait >= schedule.stop_patience)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_secs: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "epoch {} lr {:.3e} train_loss {:.6e} val_loss {:.6e} time {:.2}s",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.wall_secs
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

/// Paired noisy inputs and clean targets, each `L×1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f32> {
    inputs: Vec<Tensor<T>>,
    targets: Vec<Tensor<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Vec<Tensor<T>>, targets: Vec<Tensor<T>>) -> Result<Self, TrainError> {
        if inputs.len() != targets.len() {
            return Err(TrainError::Config(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let shape = first.shape().to_vec();
            if inputs.iter().chain(&targets).any(|t| t.shape() != shape.as_slice()) {
                return Err(TrainError::Config("segments differ in length".into()));
            }
        }
        Ok(Dataset { inputs, targets })
    }

    /// Builds a dataset from equal-length sample vectors.
    pub fn from_samples(noisy: &[Vec<f32>], clean: &[Vec<f32>]) -> Result<Self, TrainError> {
        let to_t = |v: &Vec<f32>| Tensor::<T>::column(&v.iter().map(|&x| T::from_f64(x as f64)).collect::<Vec<_>>());
        Self::new(noisy.iter().map(to_t).collect(), clean.iter().map(to_t).collect())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Tensor<T>] {
        &self.targets
    }

    /// Seeded split into `(train, holdout)` with `ceil(fraction·n)` holdout
    /// examples (at least one if `fraction > 0`, and never all of them).
    pub fn split_holdout(self, fraction: f64, seed: u64) -> Result<(Self, Self), TrainError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(TrainError::Config(format!(
                "validation fraction {fraction} outside [0, 1)"
            )));
        }
        let n = self.len();
        let k = ((fraction * n as f64).ceil() as usize).min(n.saturating_sub(1));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut holdout: Vec<usize> = order[..k].to_vec();
        let mut keep: Vec<usize> = order[k..].to_vec();
        holdout.sort_unstable();
        keep.sort_unstable();
        let pick = |idx: &[usize]| Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
        };
        Ok((pick(&keep), pick(&holdout)))
    }
}

/// Mean loss over a dataset, reduced in index order.
pub fn evaluate_loss<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<f64, TensorError> {
    let losses: Vec<f64> = data
        .inputs
        .par_iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let out = params.forward(x)?;
            Ok(logcosh_loss(&out, &Tensor::column(y.data()))?.to_f64())
        })
        .collect::<Result<_, TensorError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Summed loss and summed gradients over `idx`.
fn batch_gradient<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    idx: &[usize],
) -> Result<(f64, ModelParams<T>), TensorError> {
    let chunk = idx.len().div_ceil(REDUCTION_CHUNKS).max(1);
    let partials: Vec<(f64, ModelParams<T>)> = idx
        .par_chunks(chunk)
        .map(|part| {
            let mut loss = 0.0;
            let mut acc: Option<ModelParams<T>> = None;
            for &i in part {
                let (l, g) = params.loss_and_grad(&data.inputs[i], &data.targets[i])?;
                loss += l.to_f64();
                match acc.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
            Ok((loss, acc.expect("chunks are non-empty")))
        })
        .collect::<Result<_, TensorError>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("batch is non-empty");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// What the epoch callback gets to see.
pub struct EpochReport<'a, T> {
    pub record: &'a EpochRecord,
    pub improved: bool,
    pub params: &'a ModelParams<T>,
    pub best: &'a ModelParams<T>,
    pub optimizer: &'a RmspropState<T>,
    pub state: &'a TrainState,
}

pub struct FitOutcome<T> {
    pub history: History,
    /// Parameters with the lowest validation loss.
    pub best: ModelParams<T>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Parameters after the last epoch.
    pub last: ModelParams<T>,
    pub optimizer: RmspropState<T>,
    pub state: TrainState,
}

/// Mini-batch RMSprop training loop with plateau learning-rate decay and
/// early stopping on the validation loss.
pub struct Trainer<T = f32> {
    params: ModelParams<T>,
    best: ModelParams<T>,
    optimizer: RmspropState<T>,
    state: TrainState,
    schedule: TrainSchedule,
    seed: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: ModelParams<T>, schedule: TrainSchedule, seed: u64) -> Result<Self, TrainError> {
        schedule.validate()?;
        let optimizer = RmspropState::new(&params, schedule.rho, schedule.epsilon);
        Ok(Trainer {
            best: params.clone(),
            state: TrainState::new(&schedule),
            params,
            optimizer,
            schedule,
            seed,
        })
    }

    /// Continues from saved parameters, optimizer state and counters. Epoch
    /// numbering carries on from `state.epoch`.
    pub fn resume(
        params: ModelParams<T>,
        best: Option<ModelParams<T>>,
        optimizer: RmspropState<T>,
        state: TrainState,
        schedule: TrainSchedule,
        seed: u64,
    ) -> Result<Self, TrainError> {
        schedule.validate()?;
        let mut state = state;
        state.lr = state.lr.clamp(schedule.lr_floor, schedule.lr_init);
        Ok(Trainer {
            best: best.unwrap_or_else(|| params.clone()),
            params,
            optimizer,
            state,
            schedule,
            seed,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn fit<F>(mut self, train: &Dataset<T>, val: &Dataset<T>, mut on_epoch: F) -> Result<FitOutcome<T>, TrainError>
    where
        F: FnMut(&EpochReport<'_, T>) -> Result<(), String>,
    {
        if train.is_empty() || val.is_empty() {
            return Err(TrainError::Config(
                "training and validation sets must be non-empty".into(),
            ));
        }
        let mut history = History::default();
        let first = self.state.epoch + 1;
        for epoch in first..=self.schedule.max_epochs {
            let started = Instant::now();
            let lr = self.state.lr;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);

            let mut loss_sum = 0.0;
            for (b, idx) in order.chunks(self.schedule.batch_size).enumerate() {
                let (loss, mut grads) = batch_gradient(&self.params, train, idx)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite {
                        what: "training loss".into(),
                        epoch,
                        batch: b,
                    });
                }
                grads.scale_in_place(T::from_f64(1.0 / idx.len() as f64));
                self.optimizer.step(&mut self.params, &grads, lr).map_err(|e| match e {
                    OptimizerError::NonFiniteGradient { name } => TrainError::NonFinite {
                        what: format!("gradient of {name}"),
                        epoch,
                        batch: b,
                    },
                    other => TrainError::Config(other.to_string()),
                })?;
                loss_sum += loss;
            }
            let train_loss = loss_sum / train.len() as f64;
            let val_loss = evaluate_loss(&self.params, val)?;
            if !val_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    what: "validation loss".into(),
                    epoch,
                    batch: 0,
                });
            }
            let (improved, stop) = self.state.observe(epoch, val_loss, &self.schedule);
            if improved {
                self.best = self.params.clone();
            }
            let record = EpochRecord {
                epoch,
                lr,
                train_loss,
                val_loss,
                wall_secs: started.elapsed().as_secs_f64(),
            };
            on_epoch(&EpochReport {
                record: &record,
                improved,
                params: &self.params,
                best: &self.best,
                optimizer: &self.optimizer,
                state: &self.state,
            })
            .map_err(TrainError::Callback)?;
            history.records.push(record);
            if stop {
                break;
            }
        }
        Ok(FitOutcome {
            history,
            best_epoch: self.state.best_epoch,
            best_val: self.state.best_val.unwrap_or(f64::INFINITY),
            best: self.best,
            last: self.params,
            optimizer: self.optimizer,
            state: self.state,
        })
    }
}

/// Trains a fresh [`Trainer`] without a per-epoch callback.
pub fn fit<T: Scalar>(
    params: ModelParams<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<FitOutcome<T>, TrainError> {
    Trainer::new(params, schedule.clone(), seed)?.fit(train, val, |_| Ok(()))
}
