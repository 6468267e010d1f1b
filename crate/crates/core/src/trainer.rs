//! Incremental training: recover a transfer set, record the pre-update
//! logits on it, then optimize cross-entropy on the new classes plus a
//! Euclidean logit-distillation term on the recovered samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradientMap, Graph};
use crate::error::{Error, Result};
use crate::learner::{
    rebuild_confusion_matrix, ConfusionMatrix, Heads, Layer, Learner, LearnerConfig, OutputScope,
};
use crate::metrics::AccuracyMatrix;
use crate::recovery::{recover_transfer_set, RecoveryConfig, TransferSet};
use crate::tasks::{LabeledDataset, Task, TaskSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// One shared head, no task id at test time.
    ClassIl,
    /// One head per task, task id given at test time.
    TaskIl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Recovered transfer set with logit distillation.
    ZsIl,
    /// Plain fine-tuning on each task.
    Naive,
    /// All tasks at once; the upper-bound reference.
    Joint,
    /// ZS-IL plus a small memory of real exemplars, also distilled.
    FsIl,
}

/// Which classes the cross-entropy softmax runs over for new-task data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeScope {
    /// Only the classes of the task being learned.
    NewClasses,
    /// Every class seen so far, including the new ones.
    SeenClasses,
}

impl fmt::Display for CeScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CeScope::NewClasses => "new",
            CeScope::SeenClasses => "seen",
        })
    }
}

impl FromStr for CeScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "new" => Ok(CeScope::NewClasses),
            "seen" => Ok(CeScope::SeenClasses),
            _ => Err(Error::invalid(format!("unknown cross-entropy scope {s:?}"))),
        }
    }
}

/// What one epoch covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSpan {
    /// `ceil(L / b₂)` steps: one pass over the new data.
    NewData,
    /// `ceil((K + L) / (b₁ + b₂))` steps: one pass over new and replayed data together.
    Combined,
}

impl fmt::Display for EpochSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpochSpan::NewData => "new",
            EpochSpan::Combined => "combined",
        })
    }
}

impl FromStr for EpochSpan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "new" => Ok(EpochSpan::NewData),
            "combined" => Ok(EpochSpan::Combined),
            _ => Err(Error::invalid(format!("unknown epoch span {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Distillation weight for the transfer set.
    pub lambda: f64,
    /// FS-IL weight for the transfer set.
    pub lambda1: f64,
    /// FS-IL weight for the exemplar memory.
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_new: usize,
    pub batch_replay: usize,
    pub lr: f64,
    pub memory_per_class: usize,
    /// `None` picks the method's own: new classes for ZS-IL and FS-IL, all
    /// seen classes for naive fine-tuning and joint training.
    pub ce_scope: Option<CeScope>,
    pub epoch_span: EpochSpan,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.3,
            lambda1: 0.3,
            lambda2: 0.3,
            epochs: 50,
            batch_new: 32,
            batch_replay: 32,
            lr: 0.1,
            memory_per_class: 50,
            ce_scope: None,
            epoch_span: EpochSpan::Combined,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.lambda) || !nonneg(self.lambda1) || !nonneg(self.lambda2) {
            return Err(Error::invalid("distillation weights must be non-negative"));
        }
        if self.batch_new == 0 || self.batch_replay == 0 {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Labeled examples of the classes being learned.
#[derive(Debug, Clone)]
pub struct NewBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub scope: OutputScope,
    /// Classes the softmax runs over; a subset of the scope's columns.
    pub classes: Vec<usize>,
}

/// Replayed images with the logits recorded before the update.
#[derive(Debug, Clone)]
pub struct ReplayBatch {
    pub images: Tensor,
    /// `[n, w]`; `w` is the seen-class width at recording time.
    pub logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    /// One distillation value per replay term, unweighted.
    pub kd: Vec<f64>,
    pub grads: GradientMap,
}

/// `Σ_g (n_g / n) · CE_g + Σ_i λ_i · KD_i` and its parameter gradients.
///
/// Each cross-entropy group scores its labels against a softmax over the
/// batch's `classes`. Groups are averaged by size so that a batch split across
/// task heads weighs every example equally. Each distillation term is the
/// squared Euclidean distance between the current seen-class logits
/// (truncated to the recorded width) and the stored ones.
pub fn composite_loss(
    learner: &Learner,
    new: &[NewBatch],
    replay: &[(&ReplayBatch, f64)],
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let p = learner.bind(&mut g)?;
    let mut total = None;
    let mut ce_total = 0.0;
    let n_new: usize = new.iter().map(|b| b.labels.len()).sum();

    for batch in new.iter().filter(|b| !b.labels.is_empty()) {
        let columns = learner.scope_classes(batch.scope)?;
        let classes = &batch.classes;
        let width = classes.len();
        let picks = classes
            .iter()
            .map(|c| {
                columns.iter().position(|s| s == c).ok_or_else(|| {
                    Error::invalid(format!("class {c} is not scored by {:?}", batch.scope))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut onehot = vec![0.0; batch.labels.len() * width];
        for (r, y) in batch.labels.iter().enumerate() {
            let col = classes
                .iter()
                .position(|c| c == y)
                .ok_or_else(|| Error::invalid(format!("label {y} outside the scored classes")))?;
            onehot[r * width + col] = 1.0;
        }
        let x = g.constant(batch.images.clone())?;
        let feats = learner.features(&mut g, &p, x)?;
        let mut logits = learner.scope_logits(&mut g, &p, feats, batch.scope)?;
        if picks.len() != columns.len() || picks.iter().enumerate().any(|(i, &c)| i != c) {
            logits = g.select_columns(logits, &picks)?;
        }
        let probs = g.softmax(logits, 1.0)?;
        let target = g.constant(Tensor::new(vec![batch.labels.len(), width], onehot)?)?;
        let ce = g.cross_entropy(probs, target)?;
        let ce = g.scale(ce, batch.labels.len() as f64 / n_new as f64)?;
        ce_total += g.value(ce).data()[0];
        total = Some(match total {
            None => ce,
            Some(t) => g.add(t, ce)?,
        });
    }
    let ce_node = total;

    let mut kd_values = Vec::with_capacity(replay.len());
    let mut kd_nodes = Vec::new();
    for &(batch, weight) in replay {
        let (rows, width) = batch.logits.rows_cols();
        if rows == 0 || batch.images.is_empty() {
            kd_values.push(0.0);
            continue;
        }
        let x = g.constant(batch.images.clone())?;
        let feats = learner.features(&mut g, &p, x)?;
        let mut logits = learner.scope_logits(&mut g, &p, feats, OutputScope::Seen)?;
        let seen = g.value(logits).shape()[1];
        if width > seen {
            return Err(Error::invalid(format!(
                "stored logits of width {width} exceed {seen} seen classes"
            )));
        }
        if width < seen {
            logits = g.select_columns(logits, &(0..width).collect::<Vec<_>>())?;
        }
        let stored = g.constant(batch.logits.clone())?;
        let kd = g.squared_l2(logits, stored)?;
        kd_values.push(g.value(kd).data()[0]);
        kd_nodes.push((kd, weight));
    }

    let mut total = ce_node;
    for (kd, weight) in kd_nodes {
        let term = g.scale(kd, weight)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    let loss = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)?)?,
    };
    let names = learner.param_names();
    let grads = g.backward(loss, &names)?;
    Ok(LossBreakdown {
        total: g.value(loss).data()[0],
        ce: ce_total,
        kd: kd_values,
        grads,
    })
}

/// `ℓ_CE(new) + λ · ℓ_KD(replay)`. Either batch may be absent, which zeroes its term.
pub fn total_loss(
    learner: &Learner,
    batch_new: Option<&NewBatch>,
    batch_replay: Option<&ReplayBatch>,
    lambda: f64,
) -> Result<LossBreakdown> {
    let new: Vec<NewBatch> = batch_new.into_iter().cloned().collect();
    let replay: Vec<(&ReplayBatch, f64)> = batch_replay.map(|b| (b, lambda)).into_iter().collect();
    composite_loss(learner, &new, &replay)
}

/// Fills every sample's `logits` with the learner's seen-class logits.
pub fn record_logits(learner: &Learner, set: &mut TransferSet) -> Result<()> {
    if set.is_empty() {
        return Ok(());
    }
    let items: Vec<&[f64]> = set.samples.iter().map(|s| s.image.as_slice()).collect();
    let logits = learner.seen_logits(&Tensor::stack(&items, &set.image_shape)?)?;
    for (i, s) in set.samples.iter_mut().enumerate() {
        s.logits = Some(logits.row(i).to_vec());
    }
    Ok(())
}

/// A real exemplar store with a per-class cap, filled by reservoir sampling.
#[derive(Debug, Clone, Default)]
pub struct FewShotMemory {
    capacity: usize,
    items: BTreeMap<usize, Vec<Arc<[f64]>>>,
}

impl FewShotMemory {
    pub fn new(capacity_per_class: usize) -> Self {
        FewShotMemory {
            capacity: capacity_per_class,
            items: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.items.get(&class).map_or(0, Vec::len)
    }

    /// Reservoir-samples up to `capacity` exemplars of each class in `data`.
    pub fn insert<R: Rng + ?Sized>(&mut self, data: &LabeledDataset, rng: &mut R) {
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..data.len() {
            let y = data.label(i);
            let n = seen.entry(y).or_insert(0);
            *n += 1;
            let slot = self.items.entry(y).or_default();
            if slot.len() < self.capacity {
                slot.push(data.image(i).into());
            } else {
                let j = rng.random_range(0..*n);
                if j < self.capacity {
                    slot[j] = data.image(i).into();
                }
            }
        }
    }

    pub(crate) fn images(&self) -> Vec<Arc<[f64]>> {
        self.items.values().flatten().cloned().collect()
    }
}

/// Source of a replayed item in the combined dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Transfer,
    Memory,
}

struct ReplayItem {
    image: Arc<[f64]>,
    logits: Vec<f64>,
    source: Source,
}

/// Hands out indices in reshuffled passes, wrapping around forever.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(len: usize) -> Self {
        Cycler {
            order: (0..len).collect(),
            pos: 0,
        }
    }

    /// Up to `n` indices, never more than one full pass.
    fn take<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<usize> {
        let n = n.min(self.order.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == 0 {
                self.order.shuffle(rng);
            }
            out.push(self.order[self.pos]);
            self.pos = (self.pos + 1) % self.order.len();
        }
        out
    }
}

fn replay_batch(items: &[&ReplayItem], shape: [usize; 3]) -> Result<Option<ReplayBatch>> {
    let Some(first) = items.first() else {
        return Ok(None);
    };
    let width = first.logits.len();
    let images: Vec<&[f64]> = items.iter().map(|it| &*it.image).collect();
    let logits = items
        .iter()
        .flat_map(|it| it.logits.iter().copied())
        .collect();
    Ok(Some(ReplayBatch {
        images: Tensor::stack(&images, &shape)?,
        logits: Tensor::new(vec![items.len(), width], logits)?,
    }))
}

fn record_items(
    learner: &Learner,
    images: Vec<Arc<[f64]>>,
    source: Source,
) -> Result<Vec<ReplayItem>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&[f64]> = images.iter().map(|i| &**i).collect();
    let logits = learner.seen_logits(&Tensor::stack(&refs, &learner.config().input_shape)?)?;
    Ok(images
        .into_iter()
        .enumerate()
        .map(|(i, image)| ReplayItem {
            image,
            logits: logits.row(i).to_vec(),
            source,
        })
        .collect())
}

/// What happened while learning one task.
#[derive(Debug, Clone)]
pub struct TaskReport {
    pub transfer: TransferSet,
    /// Parameter checksum before recovery started.
    pub checksum_at_recovery: u64,
    /// Parameter checksum right before the first optimization step.
    pub checksum_at_first_step: Option<u64>,
    pub steps: usize,
    pub last_loss: Option<f64>,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn identity_confusion(learner: &Learner) -> ConfusionMatrix {
    let k = learner.classes_seen().len();
    let counts = (0..k)
        .map(|i| (0..k).map(|j| u64::from(i == j)).collect())
        .collect();
    ConfusionMatrix::from_counts(learner.classes_seen().to_vec(), counts).expect("square")
}

fn train_task_inner(
    learner: &mut Learner,
    task: &Task,
    cfg: &TrainConfig,
    rcfg: &RecoveryConfig,
    memory: Option<&mut FewShotMemory>,
    ce_scope: CeScope,
) -> Result<TaskReport> {
    cfg.validate()?;
    if let Some(c) = task
        .classes
        .iter()
        .find(|c| learner.classes_seen().contains(c))
    {
        return Err(Error::invalid(format!("class {c} was already learned")));
    }
    let task_index = learner.task_classes().len() as u64;
    let shape = learner.config().input_shape;
    let checksum_at_recovery = learner.checksum();

    let mut transfer = TransferSet::empty(shape);
    let mut replay_items = Vec::new();
    if !learner.classes_seen().is_empty() {
        if rcfg.transfer_size > 0 {
            let cm = learner
                .confusion()
                .cloned()
                .unwrap_or_else(|| identity_confusion(learner));
            let rcfg = RecoveryConfig {
                seed: mix_seed(rcfg.seed, task_index),
                ..rcfg.clone()
            };
            transfer = recover_transfer_set(learner, &cm, &rcfg)?;
            record_logits(learner, &mut transfer)?;
            replay_items.extend(transfer.samples.iter().map(|s| ReplayItem {
                image: s.image.as_slice().into(),
                logits: s.logits.clone().expect("recorded"),
                source: Source::Transfer,
            }));
        }
        if let Some(mem) = memory.as_deref() {
            replay_items.extend(record_items(learner, mem.images(), Source::Memory)?);
        }
    }
    let (w_transfer, w_memory) = if memory.is_some() {
        (cfg.lambda1, cfg.lambda2)
    } else {
        (cfg.lambda, 0.0)
    };

    learner.begin_task(&task.classes)?;
    let scope = if learner.is_multi_head() {
        OutputScope::Head(learner.task_classes().len() - 1)
    } else {
        OutputScope::Seen
    };
    let ce_classes = match (scope, ce_scope) {
        (OutputScope::Seen, CeScope::SeenClasses) => learner.classes_seen().to_vec(),
        _ => learner
            .scope_classes(scope)?
            .into_iter()
            .filter(|c| task.classes.contains(c))
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, task_index));
    let mut new_cycle = Cycler::new(task.train.len());
    let mut replay_cycle = Cycler::new(replay_items.len());
    let steps_per_epoch = match cfg.epoch_span {
        EpochSpan::NewData => task.train.len().div_ceil(cfg.batch_new),
        EpochSpan::Combined => {
            (task.train.len() + replay_items.len()).div_ceil(cfg.batch_new + cfg.batch_replay)
        }
    };
    let mut steps = 0;
    let mut last_loss = None;
    let mut checksum_at_first_step = None;
    for _ in 0..cfg.epochs * steps_per_epoch {
        let picked = new_cycle.take(cfg.batch_new, &mut rng);
        let new = NewBatch {
            images: task.train.batch(&picked)?,
            labels: picked.iter().map(|&i| task.train.label(i)).collect(),
            scope,
            classes: ce_classes.clone(),
        };
        let drawn: Vec<&ReplayItem> = replay_cycle
            .take(cfg.batch_replay, &mut rng)
            .into_iter()
            .map(|i| &replay_items[i])
            .collect();
        let (from_s, from_m): (Vec<_>, Vec<_>) = drawn
            .into_iter()
            .partition(|it| it.source == Source::Transfer);
        let replay_s = replay_batch(&from_s, shape)?;
        let replay_m = replay_batch(&from_m, shape)?;
        let mut replay = Vec::new();
        if let Some(b) = &replay_s {
            replay.push((b, w_transfer));
        }
        if let Some(b) = &replay_m {
            replay.push((b, w_memory));
        }
        let loss = composite_loss(learner, std::slice::from_ref(&new), &replay)?;
        if checksum_at_first_step.is_none() {
            checksum_at_first_step = Some(learner.checksum());
        }
        learner.sgd_step(&loss.grads, cfg.lr)?;
        last_loss = Some(loss.total);
        steps += 1;
    }

    let fresh = rebuild_confusion_matrix(learner, &task.train)?;
    let cm = match learner.confusion() {
        Some(prev) => fresh.with_frozen_rows(prev),
        None => fresh,
    };
    learner.set_confusion(Some(cm));
    if let Some(mem) = memory {
        mem.insert(&task.train, &mut rng);
    }
    Ok(TaskReport {
        transfer,
        checksum_at_recovery,
        checksum_at_first_step,
        steps,
        last_loss,
    })
}

/// Learns one task. When classes have already been learned, a transfer set
/// is recovered and distilled with weight `cfg.lambda`; the first task uses
/// cross-entropy alone. Every step draws `batch_new` new examples and
/// `batch_replay` replayed ones, each from its own reshuffled cycle.
pub fn train_task(
    learner: &mut Learner,
    task: &Task,
    cfg: &TrainConfig,
    rcfg: &RecoveryConfig,
) -> Result<TaskReport> {
    train_task_inner(
        learner,
        task,
        cfg,
        rcfg,
        None,
        cfg.ce_scope.unwrap_or(CeScope::NewClasses),
    )
}

/// Plain fine-tuning on one task: no recovery and no distillation.
pub fn train_task_naive(
    learner: &mut Learner,
    task: &Task,
    cfg: &TrainConfig,
) -> Result<TaskReport> {
    let rcfg = RecoveryConfig {
        transfer_size: 0,
        ..RecoveryConfig::default()
    };
    train_task_inner(
        learner,
        task,
        cfg,
        &rcfg,
        None,
        cfg.ce_scope.unwrap_or(CeScope::SeenClasses),
    )
}

/// [`train_task`] with an exemplar memory distilled alongside the transfer
/// set. Replay batches are drawn from the union of both; the transfer part
/// is weighted by `λ₁` and the memory part by `λ₂`. New classes are added
/// to the memory afterwards.
pub fn train_task_fewshot(
    learner: &mut Learner,
    task: &Task,
    memory: &mut FewShotMemory,
    cfg: &TrainConfig,
    rcfg: &RecoveryConfig,
) -> Result<TaskReport> {
    train_task_inner(
        learner,
        task,
        cfg,
        rcfg,
        Some(memory),
        cfg.ce_scope.unwrap_or(CeScope::NewClasses),
    )
}

/// Trains on every task at once: Class-IL with one softmax over all
/// classes, Task-IL with each example scored in its own head.
pub fn train_joint(learner: &mut Learner, stream: &TaskSequence, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    for t in stream.tasks() {
        learner.begin_task(&t.classes)?;
    }
    let merged = stream.merged()?;
    let scopes: Vec<OutputScope> = merged
        .train
        .labels()
        .iter()
        .map(|&y| learner.scope_of(y))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX));
    let mut order: Vec<usize> = (0..merged.train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_new) {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in chunk {
                let key = match scopes[i] {
                    OutputScope::Head(h) => h,
                    OutputScope::Seen => 0,
                };
                groups.entry(key).or_default().push(i);
            }
            let batches = groups
                .values()
                .map(|idx| {
                    let scope = scopes[idx[0]];
                    Ok(NewBatch {
                        images: merged.train.batch(idx)?,
                        labels: idx.iter().map(|&i| merged.train.label(i)).collect(),
                        scope,
                        classes: learner.scope_classes(scope)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = composite_loss(learner, &batches, &[])?;
            learner.sgd_step(&loss.grads, cfg.lr)?;
        }
    }
    let cm = rebuild_confusion_matrix(learner, &merged.train)?;
    learner.set_confusion(Some(cm));
    Ok(())
}

/// Test accuracy in percent on one task's data. Task-IL predictions use the
/// task's own head.
pub fn task_accuracy(learner: &Learner, task_index: usize, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidState(format!(
            "task {task_index} has no test data"
        )));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let head = learner.is_multi_head().then_some(task_index);
    let preds = learner.predict_classes(&data.batch(&idx)?, head)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Learner sized for `stream`: one head over all classes (Class-IL) or one
/// head per task (Task-IL).
pub fn learner_for(
    stream: &TaskSequence,
    setting: Setting,
    backbone: Vec<Layer>,
    seed: u64,
) -> Result<Learner> {
    let input_shape = stream
        .image_shape()
        .ok_or_else(|| Error::invalid("empty task stream"))?;
    let heads = match setting {
        Setting::ClassIl => {
            let max = stream
                .tasks()
                .iter()
                .flat_map(|t| t.classes.iter())
                .max()
                .copied()
                .unwrap_or(0);
            Heads::Single(stream.total_classes().max(max + 1))
        }
        Setting::TaskIl => Heads::Multi(stream.classes_per_task()),
    };
    Learner::build(LearnerConfig {
        input_shape,
        backbone,
        heads,
        seed,
    })
}

pub struct SequenceOutcome {
    pub matrix: AccuracyMatrix,
    pub learner: Learner,
    pub reports: Vec<TaskReport>,
}

/// Runs `method` over the stream, evaluating `a[k][j]` for `j <= k` after
/// every task. `on_task` sees the learner and report after each task.
pub fn run_sequence(
    stream: &TaskSequence,
    mut learner: Learner,
    method: Method,
    cfg: &TrainConfig,
    rcfg: &RecoveryConfig,
    mut on_task: impl FnMut(usize, &Learner, &TaskReport) -> Result<()>,
) -> Result<SequenceOutcome> {
    let n = stream.len();
    let mut matrix = AccuracyMatrix::new(n);
    let mut reports = Vec::new();
    if method == Method::Joint {
        train_joint(&mut learner, stream, cfg)?;
        let row = stream
            .tasks()
            .iter()
            .enumerate()
            .map(|(j, t)| task_accuracy(&learner, j, &t.test))
            .collect::<Result<Vec<_>>>()?;
        matrix.push_row(row)?;
        let report = TaskReport {
            transfer: TransferSet::empty(learner.config().input_shape),
            checksum_at_recovery: learner.checksum(),
            checksum_at_first_step: None,
            steps: 0,
            last_loss: None,
        };
        on_task(0, &learner, &report)?;
        reports.push(report);
        return Ok(SequenceOutcome {
            matrix,
            learner,
            reports,
        });
    }

    let mut memory = (method == Method::FsIl).then(|| FewShotMemory::new(cfg.memory_per_class));
    for (k, task) in stream.tasks().iter().enumerate() {
        let report = match (method, memory.as_mut()) {
            (Method::Naive, _) => train_task_naive(&mut learner, task, cfg)?,
            (_, Some(mem)) => train_task_fewshot(&mut learner, task, mem, cfg, rcfg)?,
            _ => train_task(&mut learner, task, cfg, rcfg)?,
        };
        let row = stream.tasks()[..=k]
            .iter()
            .enumerate()
            .map(|(j, t)| task_accuracy(&learner, j, &t.test))
            .collect::<Result<Vec<_>>>()?;
        matrix.push_row(row)?;
        on_task(k, &learner, &report)?;
        reports.push(report);
    }
    Ok(SequenceOutcome {
        matrix,
        learner,
        reports,
    })
}
