//! Zero-shot incremental learning.
//!
//! A single learner network is trained over a stream of classification
//! tasks. Before each new task, past classes are recalled by inverting the
//! learner itself: output vectors are sampled from a Dirichlet prior shaped
//! by class similarity, filtered against a running confusion matrix, and
//! turned into synthetic images by gradient descent on the input. Those
//! images and the learner's current logits on them form a transfer set that
//! is distilled while the new classes are learned.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod metrics;
pub mod optim;
pub mod recovery;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use experiment::{run_experiment, run_sweep, ExperimentConfig};
pub use learner::{Learner, LearnerConfig};
pub use metrics::AccuracyMatrix;
pub use recovery::{RecoveryConfig, TransferSet};
pub use tasks::{LabeledDataset, TaskSequence};
pub use tensor::Tensor;
pub use trainer::{Method, Setting, TrainConfig};
