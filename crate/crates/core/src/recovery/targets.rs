use rand::Rng;

use super::dirichlet::sample_output_vector;
use super::RecoveryConfig;
use crate::error::{Error, Result};
use crate::learner::{argmax, ConfusionMatrix, Learner, OutputScope};

/// `‖v − γ‖² < η`.
pub fn passes_constraint(v: &[f64], gamma: &[f64], eta: f64) -> Result<bool> {
    Ok(squared_distance(v, gamma)? < eta)
}

pub(crate) fn squared_distance(v: &[f64], gamma: &[f64]) -> Result<f64> {
    if v.len() != gamma.len() {
        return Err(Error::invalid(format!(
            "constraint: vector of length {} vs reference of length {}",
            v.len(),
            gamma.len()
        )));
    }
    Ok(v.iter().zip(gamma).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// A sampled output vector the recovered image should reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetOutput {
    pub class_id: usize,
    /// Output columns the vector is expressed over.
    pub scope: OutputScope,
    pub vector: Vec<f64>,
    pub beta: f64,
    /// Squared distance to the class's confusion-matrix row.
    pub distance: f64,
    /// Set when the resample budget ran out and the closest candidate was kept.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetStats {
    pub accepted: usize,
    pub rejected: usize,
    pub fallbacks: usize,
}

/// Samples per class: `floor(K / k)`, with the remainder handed one each to
/// the lowest class ids.
pub fn per_class_counts(transfer_size: usize, classes: &[usize]) -> Vec<(usize, usize)> {
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    let k = sorted.len();
    if k == 0 {
        return Vec::new();
    }
    let (base, extra) = (transfer_size / k, transfer_size % k);
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, base + usize::from(i < extra)))
        .collect()
}

/// Assigns schedule entries to a sequence of targets so that after `n`
/// assignments every entry's count is within one of `share · n`.
#[derive(Debug, Clone)]
pub(crate) struct BetaAllocator {
    shares: Vec<f64>,
    counts: Vec<usize>,
    issued: usize,
}

impl BetaAllocator {
    pub fn new(shares: Vec<f64>) -> Self {
        let counts = vec![0; shares.len()];
        BetaAllocator {
            shares,
            counts,
            issued: 0,
        }
    }

    pub fn next(&mut self) -> usize {
        self.issued += 1;
        let n = self.issued as f64;
        let pick = (0..self.shares.len())
            .max_by(|&a, &b| {
                let da = self.shares[a] * n - self.counts[a] as f64;
                let db = self.shares[b] * n - self.counts[b] as f64;
                da.partial_cmp(&db).expect("finite").then(b.cmp(&a))
            })
            .expect("non-empty schedule");
        self.counts[pick] += 1;
        pick
    }
}

/// Samples `K` target output vectors spread over the learned classes.
///
/// Each candidate comes from `Dir(β · α_c)` and is kept only when its
/// argmax is the class itself and it lies within `η` of the class's
/// confusion-matrix row. After `max_resample` rejections the closest
/// candidate with the right argmax is kept instead (or a smoothed one-hot if
/// none had it), and the target is flagged as a fallback.
pub fn generate_target_outputs<R: Rng + ?Sized>(
    learner: &Learner,
    cm: &ConfusionMatrix,
    cfg: &RecoveryConfig,
    rng: &mut R,
) -> Result<(Vec<TargetOutput>, TargetStats)> {
    cfg.validate()?;
    if learner.classes_seen().is_empty() {
        return Err(Error::InvalidState(
            "recovery needs at least one learned class".into(),
        ));
    }
    let mut allocator = BetaAllocator::new(cfg.beta_schedule.iter().map(|b| b.share).collect());
    let mut stats = TargetStats::default();
    let mut targets = Vec::with_capacity(cfg.transfer_size);

    for (class, count) in per_class_counts(cfg.transfer_size, learner.classes_seen()) {
        if count == 0 {
            continue;
        }
        let scope = learner.scope_of(class)?;
        let block = learner.scope_classes(scope)?;
        let pos = block
            .iter()
            .position(|&c| c == class)
            .expect("class in its scope");
        let alpha = learner.class_similarity_alpha(class)?;
        let gamma = cm.restricted_row(class, &block)?;

        for _ in 0..count {
            let beta = cfg.beta_schedule[allocator.next()].beta;
            let mut best: Option<(f64, Vec<f64>)> = None;
            let mut accepted = None;
            for _ in 0..cfg.max_resample.max(1) {
                let v = sample_output_vector(&alpha, beta, rng)?;
                let d = squared_distance(&v, &gamma)?;
                let right_class = argmax(&v) == pos;
                if right_class && d < cfg.eta {
                    accepted = Some((d, v));
                    break;
                }
                stats.rejected += 1;
                if right_class && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, v));
                }
            }
            let fallback = accepted.is_none();
            let (distance, vector) = match accepted.or(best) {
                Some(found) => found,
                None => {
                    let v = smoothed_one_hot(block.len(), pos);
                    (squared_distance(&v, &gamma)?, v)
                }
            };
            if fallback {
                stats.fallbacks += 1;
                log::warn!(
                    "class {class}: no candidate passed the constraint after {} draws",
                    cfg.max_resample
                );
            } else {
                stats.accepted += 1;
            }
            targets.push(TargetOutput {
                class_id: class,
                scope,
                vector,
                beta,
                distance,
                fallback,
            });
        }
    }
    Ok((targets, stats))
}

fn smoothed_one_hot(k: usize, pos: usize) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let eps = 0.01;
    let mut v = vec![eps / (k - 1) as f64; k];
    v[pos] = 1.0 - eps;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_examples() {
        assert!(passes_constraint(&[0.2, 0.8], &[0.2, 0.8], 1e-12).unwrap());
        assert!(!passes_constraint(&[1.0, 0.0], &[0.0, 1.0], 0.7).unwrap());
        assert!(passes_constraint(&[1.0, 0.0], &[0.0, 1.0], 2.0 + 1e-12).unwrap());
        // Strict inequality.
        assert!(!passes_constraint(&[1.0, 0.0], &[0.0, 1.0], 2.0).unwrap());
        assert!(passes_constraint(&[1.0], &[0.0, 1.0], 0.7).is_err());
    }

    #[test]
    fn per_class_counts_floor_and_remainder() {
        assert_eq!(per_class_counts(6000, &[0, 1]), vec![(0, 3000), (1, 3000)]);
        assert_eq!(
            per_class_counts(7, &[4, 1, 2]),
            vec![(1, 3), (2, 2), (4, 2)]
        );
        assert_eq!(
            per_class_counts(6000, &(0..10).collect::<Vec<_>>())[9],
            (9, 600)
        );
        assert!(per_class_counts(5, &[]).is_empty());
    }

    #[test]
    fn beta_allocator_keeps_halves_balanced() {
        let mut a = BetaAllocator::new(vec![0.5, 0.5]);
        let picks: Vec<usize> = (0..11).map(|_| a.next()).collect();
        let ones = picks.iter().filter(|&&p| p == 0).count();
        assert!(ones == 5 || ones == 6);
        assert_eq!(&picks[..4], &[0, 1, 0, 1]);
    }
}
