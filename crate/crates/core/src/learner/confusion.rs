use super::Learner;
use crate::error::{Error, Result};
use crate::tasks::LabeledDataset;

/// Row-normalized confusion matrix over the learner's seen classes.
///
/// `counts[i][j]` is the number of examples of `classes[i]` predicted as
/// `classes[j]`. Rows without any example normalize to the diagonal one-hot
/// so every class always has a usable reference row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    classes: Vec<usize>,
    counts: Vec<Vec<u64>>,
    normalized: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<usize>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid(format!("confusion counts must be {k}x{k}")));
        }
        let normalized = counts
            .iter()
            .enumerate()
            .map(|(i, row)| normalize_row(i, row))
            .collect();
        Ok(ConfusionMatrix {
            classes,
            counts,
            normalized,
        })
    }

    pub(crate) fn from_raw(
        classes: Vec<usize>,
        counts: Vec<Vec<u64>>,
        normalized: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let k = classes.len();
        if counts.len() != k || normalized.len() != k || normalized.iter().any(|r| r.len() != k) {
            return Err(Error::Format("confusion matrix dimensions disagree".into()));
        }
        Ok(ConfusionMatrix {
            classes,
            counts,
            normalized,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn normalized(&self) -> &[Vec<f64>] {
        &self.normalized
    }

    pub fn index_of(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    /// Normalized row of `class` over all classes.
    pub fn row(&self, class: usize) -> Option<&[f64]> {
        self.index_of(class).map(|i| self.normalized[i].as_slice())
    }

    /// Normalized row of `class` restricted to `block` and renormalized.
    pub fn restricted_row(&self, class: usize, block: &[usize]) -> Result<Vec<f64>> {
        let i = self
            .index_of(class)
            .ok_or_else(|| Error::NotFound(format!("class {class} not in confusion matrix")))?;
        let pos = block
            .iter()
            .position(|&c| c == class)
            .ok_or_else(|| Error::invalid(format!("class {class} not in block {block:?}")))?;
        let mut row: Vec<f64> = block
            .iter()
            .map(|&c| self.index_of(c).map_or(0.0, |j| self.normalized[i][j]))
            .collect();
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            row = one_hot(block.len(), pos);
        }
        Ok(row)
    }

    /// Keeps the rows of `previous` for classes that had no examples in this
    /// rebuild, widened with zeros for classes added since.
    pub fn with_frozen_rows(mut self, previous: &ConfusionMatrix) -> ConfusionMatrix {
        for i in 0..self.k() {
            if self.counts[i].iter().any(|&c| c > 0) {
                continue;
            }
            let Some(pi) = previous.index_of(self.classes[i]) else {
                continue;
            };
            for (j, &c) in self.classes.iter().enumerate() {
                let pj = previous.index_of(c);
                self.counts[i][j] = pj.map_or(0, |pj| previous.counts[pi][pj]);
                self.normalized[i][j] = pj.map_or(0.0, |pj| previous.normalized[pi][pj]);
            }
        }
        self
    }
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

fn normalize_row(i: usize, row: &[u64]) -> Vec<f64> {
    let total: u64 = row.iter().sum();
    if total == 0 {
        return one_hot(row.len(), i);
    }
    row.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Counts predictions of `learner` on `data` over its seen classes.
///
/// Class-IL predictions take the argmax over every seen class; Task-IL
/// predictions stay inside the head of each example's task, which makes the
/// matrix block diagonal.
pub fn rebuild_confusion_matrix(
    learner: &Learner,
    data: &LabeledDataset,
) -> Result<ConfusionMatrix> {
    let classes = learner.classes_seen().to_vec();
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    let index = |c: usize| {
        classes
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| Error::invalid(format!("label {c} is not a seen class")))
    };
    let mut groups: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    if learner.is_multi_head() {
        for t in 0..learner.task_classes().len() {
            groups.push((Some(t), Vec::new()));
        }
        for (i, &y) in data.labels().iter().enumerate() {
            index(y)?;
            let t = learner.task_of(y).expect("seen class has a task");
            groups[t].1.push(i);
        }
    } else {
        for &y in data.labels() {
            index(y)?;
        }
        groups.push((None, (0..data.len()).collect()));
    }
    for (task, idx) in groups {
        if idx.is_empty() {
            continue;
        }
        let preds = learner.predict_classes(&data.batch(&idx)?, task)?;
        for (&i, p) in idx.iter().zip(preds) {
            counts[index(data.label(i))?][index(p)?] += 1;
        }
    }
    ConfusionMatrix::from_counts(classes, counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rows_become_diagonal() {
        let cm = ConfusionMatrix::from_counts(vec![3, 5], vec![vec![0, 0], vec![2, 6]]).unwrap();
        assert_eq!(cm.normalized()[0], vec![1.0, 0.0]);
        assert_eq!(cm.normalized()[1], vec![0.25, 0.75]);
        assert_eq!(cm.row(5).unwrap(), &[0.25, 0.75]);
    }

    #[test]
    fn frozen_rows_survive_growth() {
        let old = ConfusionMatrix::from_counts(vec![0, 1], vec![vec![3, 1], vec![0, 4]]).unwrap();
        let new = ConfusionMatrix::from_counts(
            vec![0, 1, 2, 3],
            vec![vec![0; 4], vec![0; 4], vec![0, 0, 5, 0], vec![0, 1, 0, 4]],
        )
        .unwrap()
        .with_frozen_rows(&old);
        assert_eq!(new.normalized()[0], vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(new.normalized()[1], vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(new.normalized()[3], vec![0.0, 0.2, 0.0, 0.8]);
    }

    #[test]
    fn restricted_row_renormalizes() {
        let cm = ConfusionMatrix::from_counts(
            vec![0, 1, 2],
            vec![vec![2, 1, 1], vec![0, 1, 0], vec![0, 0, 1]],
        )
        .unwrap();
        assert_eq!(
            cm.restricted_row(0, &[0, 1]).unwrap(),
            vec![2.0 / 3.0, 1.0 / 3.0]
        );
        assert_eq!(cm.restricted_row(2, &[1, 2]).unwrap(), vec![0.0, 1.0]);
        assert!(cm.restricted_row(0, &[1, 2]).is_err());
    }
}
