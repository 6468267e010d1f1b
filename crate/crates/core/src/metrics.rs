//! Accuracy bookkeeping across a task stream.

use std::io::Write;

use crate::error::{Error, Result};

/// `a[k][j]`: test accuracy (percent) on task `j` after training task `k`.
///
/// Rows are appended as tasks complete; row `k` (0-based) normally holds
/// `k + 1` entries. A joint-training reference is a single row spanning all
/// tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    n_tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(n_tasks: usize) -> Self {
        AccuracyMatrix {
            n_tasks,
            rows: Vec::new(),
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.is_empty() || row.len() > self.n_tasks {
            return Err(Error::invalid(format!(
                "accuracy row of {} entries for {} tasks",
                row.len(),
                self.n_tasks
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(Error::invalid(format!("accuracy {v} outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, k: usize, j: usize) -> Option<f64> {
        self.rows.get(k).and_then(|r| r.get(j)).copied()
    }

    /// `A_k`, the mean of row `k` (1-based, as in "after the k-th task").
    pub fn average_accuracy(&self, k: usize) -> Result<f64> {
        let row = k
            .checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .ok_or_else(|| Error::InvalidState(format!("row {k} has not been recorded")))?;
        if row.len() < k {
            return Err(Error::InvalidState(format!(
                "row {k} has {} of {k} entries",
                row.len()
            )));
        }
        Ok(row.iter().sum::<f64>() / row.len() as f64)
    }

    /// `A_k` for every recorded row.
    pub fn average_series(&self) -> Result<Vec<f64>> {
        (1..=self.rows.len())
            .map(|k| self.average_accuracy(k))
            .collect()
    }

    /// Mean of the last row.
    pub fn final_average(&self) -> Result<f64> {
        self.average_accuracy(self.rows.len())
    }

    /// CSV with header `task_1..task_N` and one line per recorded row;
    /// missing entries are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((1..=self.n_tasks).map(|j| format!("task_{j}")))?;
        for row in &self.rows {
            w.write_record(
                (0..self.n_tasks).map(|j| row.get(j).map(|v| v.to_string()).unwrap_or_default()),
            )?;
        }
        w.flush().map_err(|e| Error::io("<accuracy csv>", e))
    }
}
