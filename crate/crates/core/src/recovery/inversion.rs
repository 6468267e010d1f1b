use rand::Rng;

use super::{RecoveryConfig, TargetOutput};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::learner::{Learner, INPUT_LEAF};
use crate::optim::Adam;
use crate::tensor::Tensor;

/// A recovered image and how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSample {
    /// Pixels in `[0, 1]`, laid out as the learner's input shape.
    pub image: Vec<f64>,
    pub label: usize,
    pub target: TargetOutput,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// Logits of the pre-update learner, filled in by the trainer.
    pub logits: Option<Vec<f64>>,
}

/// Inversion loss `CE(softmax(logits(x) / τ), V*)` and its input gradient.
pub(crate) fn inversion_loss(
    learner: &Learner,
    x: &[f64],
    target: &Tensor,
    cfg: &RecoveryConfig,
    scope: crate::learner::OutputScope,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let [c, h, w] = learner.config().input_shape;
    let mut g = Graph::new();
    let p = learner.bind(&mut g)?;
    let input = g.leaf(INPUT_LEAF, Tensor::new(vec![1, c, h, w], x.to_vec())?)?;
    let feats = learner.features(&mut g, &p, input)?;
    let logits = learner.scope_logits(&mut g, &p, feats, scope)?;
    let probs = g.softmax(logits, cfg.tau)?;
    let t = g.constant(target.clone())?;
    let loss = g.cross_entropy(probs, t)?;
    let value = g.value(loss).item().expect("scalar loss");
    let grad = if with_grad {
        let grads = g.backward(loss, &[INPUT_LEAF])?;
        Some(grads.get(INPUT_LEAF).expect("requested").data().to_vec())
    } else {
        None
    };
    Ok((value, grad))
}

/// Optimizes a uniform-noise image until the learner's temperature softmax
/// reproduces `target.vector`.
///
/// Adam runs on the pixels only; pixels are clamped to `[0, 1]` after each
/// step. Optimization ends at the step cap or once the best loss has
/// improved by less than `min_improvement` over the last `patience` steps.
/// The best iterate is returned, so the final loss never exceeds the initial
/// one. The learner is only read.
pub fn synthesize_sample<R: Rng + ?Sized>(
    learner: &Learner,
    target: &TargetOutput,
    cfg: &RecoveryConfig,
    rng: &mut R,
) -> Result<TransferSample> {
    let width = learner.scope_classes(target.scope)?.len();
    if target.vector.len() != width {
        return Err(Error::invalid(format!(
            "target of width {} for a scope of width {width}",
            target.vector.len()
        )));
    }
    let inv = &cfg.inversion;
    let n: usize = learner.config().input_shape.iter().product();
    let target_t = Tensor::new(vec![1, width], target.vector.clone())?;
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut adam = Adam::new(inv.lr, n);

    let mut best_x = x.clone();
    let mut best = f64::INFINITY;
    let mut initial = f64::NAN;
    let mut history = Vec::with_capacity(inv.max_steps.min(4096));
    let mut iterations = 0;
    for step in 0..inv.max_steps {
        let (loss, grad) = inversion_loss(learner, &x, &target_t, cfg, target.scope, true)
            .map_err(|e| {
                Error::NonFinite(format!(
                    "inversion of class {} at step {step}: {e}",
                    target.class_id
                ))
            })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "inversion loss of class {} at step {step}",
                target.class_id
            )));
        }
        iterations = step + 1;
        if step == 0 {
            initial = loss;
        }
        if loss < best {
            best = loss;
            best_x.copy_from_slice(&x);
        }
        history.push(best);
        if step >= inv.patience && history[step - inv.patience] - best < inv.min_improvement {
            break;
        }
        adam.step(&mut x, &grad.expect("gradient requested"));
        x.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
    }
    Ok(TransferSample {
        image: best_x,
        label: target.class_id,
        target: target.clone(),
        initial_loss: initial,
        final_loss: best,
        iterations,
        logits: None,
    })
}
