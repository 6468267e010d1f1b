//! Labeled datasets, task streams, CIFAR-10 ingestion and a synthetic
//! desk-scale stream generator.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel, height, width.
pub type ImageShape = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images with global class labels. Pixels are in `[0, 1]`.
///
/// Images are reference counted so that task splits share storage with the
/// source dataset.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    image_shape: ImageShape,
    images: Vec<Arc<[f64]>>,
    labels: Vec<usize>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(
        image_shape: ImageShape,
        images: Vec<Arc<[f64]>>,
        labels: Vec<usize>,
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let per: usize = image_shape.iter().product();
        if per == 0 {
            return Err(Error::invalid("image shape has a zero dimension"));
        }
        for img in &images {
            if img.len() != per {
                return Err(Error::invalid(format!(
                    "image of {} values does not match shape {image_shape:?}",
                    img.len()
                )));
            }
            if img.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid("pixel outside [0, 1]"));
            }
        }
        Ok(LabeledDataset {
            image_shape,
            images,
            labels,
            split,
        })
    }

    pub fn empty(image_shape: ImageShape, split: Split) -> Self {
        LabeledDataset {
            image_shape,
            images: Vec::new(),
            labels: Vec::new(),
            split,
        }
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image_shape
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Stacks the selected images into a `[n, c, h, w]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<&[f64]> = indices.iter().map(|&i| &*self.images[i]).collect();
        Tensor::stack(&items, &self.image_shape)
    }

    /// Subset whose labels belong to `classes`.
    pub fn filter_classes(&self, classes: &[usize]) -> LabeledDataset {
        let keep: BTreeSet<usize> = classes.iter().copied().collect();
        let mut out = LabeledDataset::empty(self.image_shape, self.split);
        for (img, &y) in self.images.iter().zip(&self.labels) {
            if keep.contains(&y) {
                out.images.push(Arc::clone(img));
                out.labels.push(y);
            }
        }
        out
    }

    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of no datasets"))?;
        let mut out = LabeledDataset::empty(first.image_shape, first.split);
        for p in parts {
            if p.image_shape != first.image_shape {
                return Err(Error::invalid("concat: image shapes differ"));
            }
            out.images.extend(p.images.iter().cloned());
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    /// Per-class example counts keyed by class id.
    pub fn histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut h = std::collections::BTreeMap::new();
        for &y in &self.labels {
            *h.entry(y).or_insert(0) += 1;
        }
        h
    }
}

/// One task of a stream: its class set and train/test data.
#[derive(Debug, Clone)]
pub struct Task {
    pub classes: Vec<usize>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Ordered tasks with pairwise disjoint class sets.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    tasks: Vec<Task>,
}

impl TaskSequence {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let shape = tasks.first().map(|t| t.train.image_shape());
        for (i, task) in tasks.iter().enumerate() {
            if task.classes.is_empty() {
                return Err(Error::invalid(format!("task {i} has no classes")));
            }
            for &c in &task.classes {
                if !seen.insert(c) {
                    return Err(Error::invalid(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
            for split in [&task.train, &task.test] {
                if Some(split.image_shape()) != shape {
                    return Err(Error::invalid("tasks disagree on image shape"));
                }
                if let Some(y) = split.labels().iter().find(|y| !task.classes.contains(y)) {
                    return Err(Error::invalid(format!(
                        "task {i} holds label {y} outside its classes"
                    )));
                }
            }
        }
        Ok(TaskSequence { tasks })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.tasks.first().map(|t| t.train.image_shape())
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.classes.len()).sum()
    }

    pub fn classes_per_task(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.classes.len()).collect()
    }

    /// All tasks merged into one (used by the joint-training reference).
    pub fn merged(&self) -> Result<Task> {
        let trains: Vec<_> = self.tasks.iter().map(|t| &t.train).collect();
        let tests: Vec<_> = self.tasks.iter().map(|t| &t.test).collect();
        let mut classes: Vec<usize> = self
            .tasks
            .iter()
            .flat_map(|t| t.classes.iter().copied())
            .collect();
        classes.sort_unstable();
        Ok(Task {
            classes,
            train: LabeledDataset::concat(&trains)?,
            test: LabeledDataset::concat(&tests)?,
        })
    }
}

pub const CIFAR10_SHAPE: ImageShape = [3, 32, 32];
const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;
const CIFAR10_RECORDS_PER_BATCH: usize = 10_000;
const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const CIFAR10_TEST_FILE: &str = "test_batch.bin";

/// True when every CIFAR-10 binary batch exists under `dir`.
pub fn cifar10_present(dir: &Path) -> bool {
    CIFAR10_TRAIN_FILES
        .iter()
        .chain(std::iter::once(&CIFAR10_TEST_FILE))
        .all(|f| dir.join(f).is_file())
}

/// Reads the CIFAR-10 binary distribution (`data_batch_{1..5}.bin`, `test_batch.bin`).
///
/// Each record is one label byte followed by 3072 channel-major pixel bytes.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut train = LabeledDataset::empty(CIFAR10_SHAPE, Split::Train);
    for name in CIFAR10_TRAIN_FILES {
        read_cifar_batch(&dir.join(name), CIFAR10_RECORDS_PER_BATCH, &mut train)?;
    }
    let mut test = LabeledDataset::empty(CIFAR10_SHAPE, Split::Test);
    read_cifar_batch(
        &dir.join(CIFAR10_TEST_FILE),
        CIFAR10_RECORDS_PER_BATCH,
        &mut test,
    )?;
    Ok((train, test))
}

pub(crate) fn read_cifar_batch(
    path: &Path,
    expected: usize,
    into: &mut LabeledDataset,
) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % CIFAR10_RECORD != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of {CIFAR10_RECORD}-byte records",
            path.display(),
            bytes.len()
        )));
    }
    let records = bytes.len() / CIFAR10_RECORD;
    if records != expected {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("truncated batch: {records} of {expected} records"),
            ),
        ));
    }
    for rec in bytes.chunks_exact(CIFAR10_RECORD) {
        let label = rec[0] as usize;
        if label > 9 {
            return Err(Error::Format(format!(
                "{}: label byte {label} > 9",
                path.display()
            )));
        }
        let pixels: Arc<[f64]> = rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect();
        into.images.push(pixels);
        into.labels.push(label);
    }
    Ok(())
}

/// Partitions the classes of a train/test pair into random tasks of
/// `classes_per_task` classes each.
pub fn split_tasks(
    train: &LabeledDataset,
    test: &LabeledDataset,
    classes_per_task: usize,
    seed: u64,
) -> Result<TaskSequence> {
    let mut classes = train.classes();
    if classes_per_task == 0
        || classes.is_empty()
        || !classes.len().is_multiple_of(classes_per_task)
    {
        return Err(Error::invalid(format!(
            "{} classes cannot be split into tasks of {classes_per_task}",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let tasks = classes
        .chunks(classes_per_task)
        .map(|chunk| {
            let mut cs = chunk.to_vec();
            cs.sort_unstable();
            Task {
                train: train.filter_classes(&cs),
                test: test.filter_classes(&cs),
                classes: cs,
            }
        })
        .collect();
    TaskSequence::new(tasks)
}

/// Parameters of the synthetic blob stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub image_shape: ImageShape,
    /// Scales the distance between class templates.
    pub separation: f64,
    /// Per-pixel standard deviation around the template.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            tasks: 5,
            classes_per_task: 2,
            samples_per_class: 100,
            image_shape: [1, 8, 8],
            separation: 1.0,
            noise: 0.15,
        }
    }
}

/// Builds a stream of Gaussian blobs around per-class sign templates.
///
/// Class `c`'s template is `0.5 + 0.25 · separation · s_c` with `s_c` a random
/// ±1 pattern. Samples add isotropic noise and are clamped to `[0, 1]`. Each
/// class is split 80/20 into train/test. Classes are numbered consecutively
/// task by task.
pub fn make_synthetic_stream(spec: &SyntheticSpec, seed: u64) -> Result<TaskSequence> {
    if !(spec.separation > 0.0 && spec.separation.is_finite()) {
        return Err(Error::invalid(format!(
            "separation must be positive, got {}",
            spec.separation
        )));
    }
    if spec.tasks == 0 || spec.classes_per_task == 0 || spec.samples_per_class == 0 {
        return Err(Error::invalid("synthetic stream counts must be at least 1"));
    }
    if spec.image_shape.contains(&0) || !(spec.noise >= 0.0) {
        return Err(Error::invalid(
            "synthetic stream needs a positive image shape and noise >= 0",
        ));
    }
    let per: usize = spec.image_shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let n_train = (spec.samples_per_class * 4)
        .div_ceil(5)
        .min(spec.samples_per_class);

    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let classes: Vec<usize> = (0..spec.classes_per_task)
            .map(|j| t * spec.classes_per_task + j)
            .collect();
        let mut train = LabeledDataset::empty(spec.image_shape, Split::Train);
        let mut test = LabeledDataset::empty(spec.image_shape, Split::Test);
        for &c in &classes {
            let template: Vec<f64> = (0..per)
                .map(|_| {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (0.5 + 0.25 * spec.separation * sign).clamp(0.0, 1.0)
                })
                .collect();
            for i in 0..spec.samples_per_class {
                let img: Arc<[f64]> = template
                    .iter()
                    .map(|&m| {
                        let z = if spec.noise > 0.0 {
                            normal.sample(&mut rng)
                        } else {
                            0.0
                        };
                        (m + z).clamp(0.0, 1.0)
                    })
                    .collect();
                let dst = if i < n_train { &mut train } else { &mut test };
                dst.images.push(img);
                dst.labels.push(c);
            }
        }
        tasks.push(Task {
            classes,
            train,
            test,
        });
    }
    TaskSequence::new(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            samples_per_class: 10,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn synthetic_stream_has_disjoint_classes() {
        let s = make_synthetic_stream(&tiny_spec(), 3).unwrap();
        assert_eq!(s.len(), 5);
        let all: BTreeSet<usize> = s.tasks().iter().flat_map(|t| t.classes.clone()).collect();
        assert_eq!(all.len(), 10);
        for t in s.tasks() {
            assert_eq!(t.train.len(), 16);
            assert_eq!(t.test.len(), 4);
        }
    }

    #[test]
    fn synthetic_stream_is_deterministic() {
        let a = make_synthetic_stream(&tiny_spec(), 11).unwrap();
        let b = make_synthetic_stream(&tiny_spec(), 11).unwrap();
        for (x, y) in a.tasks().iter().zip(b.tasks()) {
            for i in 0..x.train.len() {
                assert_eq!(x.train.image(i), y.train.image(i));
            }
        }
        let c = make_synthetic_stream(&tiny_spec(), 12).unwrap();
        assert_ne!(a.tasks()[0].train.image(0), c.tasks()[0].train.image(0));
    }

    #[test]
    fn synthetic_stream_rejects_bad_separation() {
        let spec = SyntheticSpec {
            separation: 0.0,
            ..tiny_spec()
        };
        assert!(matches!(
            make_synthetic_stream(&spec, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn split_tasks_partitions_and_conserves() {
        let s = make_synthetic_stream(&tiny_spec(), 5).unwrap();
        let merged = s.merged().unwrap();
        let seq = split_tasks(&merged.train, &merged.test, 5, 9).unwrap();
        assert_eq!(seq.len(), 2);
        let total: usize = seq
            .tasks()
            .iter()
            .map(|t| t.train.len() + t.test.len())
            .sum();
        assert_eq!(total, merged.train.len() + merged.test.len());
        assert!(split_tasks(&merged.train, &merged.test, 3, 9).is_err());
    }

    #[test]
    fn task_sequence_rejects_overlap() {
        let s = make_synthetic_stream(&tiny_spec(), 5).unwrap();
        let mut tasks = s.tasks().to_vec();
        tasks[1].classes.push(0);
        assert!(TaskSequence::new(tasks).is_err());
    }

    #[test]
    fn cifar_batch_reader_checks_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let mut bytes = Vec::new();
        for r in 0..3u8 {
            bytes.push(r);
            bytes.extend(std::iter::repeat_n(255u8 - r, 3072));
        }
        fs::write(&path, &bytes).unwrap();
        let mut ds = LabeledDataset::empty(CIFAR10_SHAPE, Split::Train);
        read_cifar_batch(&path, 3, &mut ds).unwrap();
        assert_eq!(ds.labels(), &[0, 1, 2]);
        assert_eq!(ds.image(0)[0], 1.0);
        assert!((ds.image(2)[3071] - 253.0 / 255.0).abs() < 1e-15);

        let mut ds = LabeledDataset::empty(CIFAR10_SHAPE, Split::Train);
        assert!(matches!(
            read_cifar_batch(&path, 4, &mut ds),
            Err(Error::Io { .. })
        ));
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            read_cifar_batch(&path, 3, &mut ds),
            Err(Error::Format(_))
        ));
        let missing = dir.path().join("nope.bin");
        let err = read_cifar_batch(&missing, 3, &mut ds).unwrap_err();
        assert!(err.to_string().contains("nope.bin"));
    }
}
