//! Loss, optimizer, initializers, learning-rate schedule and the epoch loop.

pub mod fit;
pub mod init;
pub mod loss;
pub mod rmsprop;

pub use fit::{
    evaluate_loss, fit, Dataset, EpochRecord, EpochReport, FitOutcome, History, TrainError, TrainSchedule, TrainState,
    Trainer,
};
pub use init::{orthogonal_init, xavier_normal};
pub use loss::{logcosh, logcosh_loss, logcosh_loss_grad};
pub use rmsprop::{rmsprop_step, OptimizerError, RmspropState};
