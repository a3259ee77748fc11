use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::panel::{PanelDataset, Subset};

/// A batch of look-back windows and their next-day targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[B, T, F]`
    pub inputs: Tensor,
    pub targets: Vec<f64>,
    /// Panel row of each target.
    pub origins: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Target rows of `subset` that have a full `T`-row history. History may
/// reach back into earlier subsets.
pub fn window_targets(panel: &PanelDataset, t: usize, subset: Subset) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let range = panel.split.range(subset);
    let first = range.start.max(t);
    if first >= range.end {
        return Err(Error::Config(format!(
            "{subset:?} subset ({} rows from row {}) cannot hold a window of length {t}",
            range.len(),
            range.start
        )));
    }
    Ok((first..range.end).collect())
}

/// Builds a batch from explicit target rows: row `j` uses inputs `[j−T, j−1]`.
pub fn batch_for(panel: &PanelDataset, t: usize, origins: &[usize]) -> Result<WindowBatch> {
    if origins.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let f = panel.n_covariates();
    let mut data = Vec::with_capacity(origins.len() * t * f);
    for &j in origins {
        if j < t || j >= panel.len() {
            return Err(Error::Config(format!("row {j} has no full window of length {t}")));
        }
        for r in j - t..j {
            data.extend_from_slice(panel.covariate_row(r));
        }
    }
    Ok(WindowBatch {
        inputs: Tensor::new(vec![origins.len(), t, f], data)?,
        targets: origins.iter().map(|&j| panel.target[j]).collect(),
        origins: origins.to_vec(),
    })
}

/// All windows of `subset` in chronological order, chunked into batches of
/// at most `batch_size` (the last one may be smaller).
pub fn make_windows(panel: &PanelDataset, t: usize, subset: Subset, batch_size: usize) -> Result<Vec<WindowBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    window_targets(panel, t, subset)?
        .chunks(batch_size)
        .map(|c| batch_for(panel, t, c))
        .collect()
}
