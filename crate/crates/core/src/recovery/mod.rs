//! Memory recovery: synthesizing a transfer set of past classes from the
//! learner's parameters alone.
//!
//! 1. For every learned class, sample output vectors from a Dirichlet prior
//!    whose concentration is the class-similarity vector scaled by β.
//! 2. Keep a vector only if its argmax is the class and it lies within η of
//!    the class's confusion-matrix row.
//! 3. Starting from uniform noise, optimize an image until the learner's
//!    temperature softmax reproduces the vector.
//! 4. Augment the image.

mod augment;
mod dirichlet;
mod export;
mod inversion;
mod targets;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use augment::{augment, AugmentPlan};
pub use dirichlet::sample_output_vector;
pub use export::{export_transfer_set, read_tensor_file, write_manifest, write_tensor_file};
pub use inversion::{synthesize_sample, TransferSample};
pub use targets::{
    generate_target_outputs, passes_constraint, per_class_counts, TargetOutput, TargetStats,
};

use crate::error::{Error, Result};
use crate::learner::{ConfusionMatrix, Learner};
use crate::tasks::ImageShape;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaShare {
    pub beta: f64,
    /// Fraction of the transfer set drawn with this β.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub max_steps: usize,
    pub lr: f64,
    /// Early-stop window in steps.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            max_steps: 1500,
            lr: 0.01,
            patience: 50,
            min_improvement: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    /// Total number of synthesized samples `K`.
    pub transfer_size: usize,
    /// Constraint threshold `η`.
    pub eta: f64,
    /// Softmax temperature used during inversion.
    pub tau: f64,
    pub beta_schedule: Vec<BetaShare>,
    pub inversion: InversionConfig,
    /// Candidate draws per target before falling back.
    pub max_resample: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            transfer_size: 6000,
            eta: 0.7,
            tau: 20.0,
            beta_schedule: vec![
                BetaShare {
                    beta: 1.0,
                    share: 0.5,
                },
                BetaShare {
                    beta: 0.1,
                    share: 0.5,
                },
            ],
            inversion: InversionConfig::default(),
            max_resample: 200,
            augment: true,
            seed: 0,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.eta) {
            return Err(Error::invalid(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !positive(self.tau) {
            return Err(Error::invalid(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.beta_schedule.is_empty()
            || self
                .beta_schedule
                .iter()
                .any(|b| !positive(b.beta) || !(b.share >= 0.0))
        {
            return Err(Error::invalid(
                "beta schedule needs positive betas and non-negative shares",
            ));
        }
        let total: f64 = self.beta_schedule.iter().map(|b| b.share).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("beta shares sum to {total}, not 1")));
        }
        if self.max_resample == 0 {
            return Err(Error::invalid("max_resample must be at least 1"));
        }
        if self.inversion.max_steps == 0 || !positive(self.inversion.lr) {
            return Err(Error::invalid(
                "inversion needs at least one step and a positive learning rate",
            ));
        }
        Ok(())
    }
}

/// Synthesized samples standing in for the learned classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSet {
    pub image_shape: ImageShape,
    pub samples: Vec<TransferSample>,
    pub stats: TargetStats,
    /// Samples dropped because their inversion diverged.
    pub aborted: usize,
}

impl TransferSet {
    pub fn empty(image_shape: ImageShape) -> Self {
        TransferSet {
            image_shape,
            samples: Vec::new(),
            stats: TargetStats::default(),
            aborted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Label counts keyed by class.
    pub fn histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut h = std::collections::BTreeMap::new();
        for s in &self.samples {
            *h.entry(s.label).or_insert(0) += 1;
        }
        h
    }
}

/// Per-sample random stream: stream 0 feeds target generation, stream
/// `i + 1` feeds sample `i`.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs the full recovery pipeline for `cfg.transfer_size` samples.
///
/// Samples are synthesized in parallel, each from its own random stream, and
/// assembled in target order, so the result depends only on the inputs.
/// Diverged samples are dropped; more than 10% dropped fails the call.
pub fn recover_transfer_set(
    learner: &Learner,
    cm: &ConfusionMatrix,
    cfg: &RecoveryConfig,
) -> Result<TransferSet> {
    cfg.validate()?;
    let shape = learner.config().input_shape;
    if cfg.transfer_size == 0 {
        return Ok(TransferSet::empty(shape));
    }
    let (targets, stats) = generate_target_outputs(learner, cm, cfg, &mut stream(cfg.seed, 0))?;
    let results: Vec<Result<TransferSample>> = targets
        .par_iter()
        .enumerate()
        .map(|(i, target)| {
            let mut rng = stream(cfg.seed, i as u64 + 1);
            let mut sample = synthesize_sample(learner, target, cfg, &mut rng)?;
            if cfg.augment {
                sample.image = augment(&sample.image, shape, &mut rng);
            }
            Ok(sample)
        })
        .collect();

    let mut samples = Vec::with_capacity(results.len());
    let mut aborted = 0;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e @ Error::NonFinite(_)) => {
                log::warn!("recovery sample aborted: {e}");
                aborted += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    if aborted * 10 > targets.len() {
        return Err(last_err.expect("aborted samples carry an error"));
    }
    Ok(TransferSet {
        image_shape: shape,
        samples,
        stats,
        aborted,
    })
}
