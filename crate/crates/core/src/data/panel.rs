use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chronological train / validation / test boundaries over `n` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n: usize,
    pub train_end: usize,
    pub val_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl SplitSpec {
    pub fn range(&self, subset: Subset) -> Range<usize> {
        match subset {
            Subset::Train => 0..self.train_end,
            Subset::Validation => self.train_end..self.val_end,
            Subset::Test => self.val_end..self.n,
        }
    }

    pub fn len(&self, subset: Subset) -> usize {
        self.range(subset).len()
    }
}

/// Splits `n` rows into the first `⌊0.8n⌋`, the next up to `⌊0.9n⌋`, and the rest.
pub fn chronological_split(n: usize) -> Result<SplitSpec> {
    chronological_split_with(n, 0.8, 0.1)
}

pub fn chronological_split_with(n: usize, train: f64, val: f64) -> Result<SplitSpec> {
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 rows to split, got {n}")));
    }
    if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
        return Err(Error::Config(format!("invalid split ratios ({train}, {val})")));
    }
    let train_end = (train * n as f64).floor() as usize;
    let val_end = ((train + val) * n as f64).floor() as usize;
    if !(0 < train_end && train_end < val_end && val_end < n) {
        return Err(Error::Config(format!("split of {n} rows leaves an empty subset")));
    }
    Ok(SplitSpec { n, train_end, val_end })
}

/// Per-column affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub target_mean: f64,
    pub target_std: f64,
    pub covariate_mean: Vec<f64>,
    pub covariate_std: Vec<f64>,
}

impl Standardizer {
    pub fn invert_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    pub fn apply_target(&self, x: f64) -> f64 {
        (x - self.target_mean) / self.target_std
    }
}

/// Daily panel: target returns `r` (length N) and covariates `X` (N×F,
/// row-major), with split boundaries and optional standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub dates: Vec<NaiveDate>,
    pub target_name: String,
    pub target: Vec<f64>,
    pub covariate_names: Vec<String>,
    covariates: Vec<f64>,
    pub split: SplitSpec,
    pub standardizer: Option<Standardizer>,
}

impl PanelDataset {
    /// Assembles a panel from aligned rows and applies the default 80/10/10 split.
    pub fn new(
        dates: Vec<NaiveDate>,
        target_name: impl Into<String>,
        target: Vec<f64>,
        covariate_names: Vec<String>,
        covariate_rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = dates.len();
        let f = covariate_names.len();
        if f == 0 {
            return Err(Error::Data("panel needs at least one covariate".into()));
        }
        if target.len() != n || covariate_rows.len() != n {
            return Err(Error::Data(format!(
                "panel length mismatch: {n} dates, {} targets, {} covariate rows",
                target.len(),
                covariate_rows.len()
            )));
        }
        if let Some(i) = covariate_rows.iter().position(|r| r.len() != f) {
            return Err(Error::Data(format!("covariate row {i} has {} columns, expected {f}", covariate_rows[i].len())));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("panel dates must be strictly increasing".into()));
        }
        let covariates: Vec<f64> = covariate_rows.concat();
        if target.iter().chain(&covariates).any(|v| !v.is_finite()) {
            return Err(Error::Data("panel contains non-finite values".into()));
        }
        Ok(Self {
            split: chronological_split(n)?,
            dates,
            target_name: target_name.into(),
            target,
            covariate_names,
            covariates,
            standardizer: None,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_row(&self, t: usize) -> &[f64] {
        let f = self.n_covariates();
        &self.covariates[t * f..(t + 1) * f]
    }

    pub fn covariate(&self, t: usize, i: usize) -> f64 {
        self.covariates[t * self.n_covariates() + i]
    }

    pub fn with_split(mut self, split: SplitSpec) -> Result<Self> {
        if split.n != self.len() || !(0 < split.train_end && split.train_end < split.val_end && split.val_end < split.n) {
            return Err(Error::Config(format!("split {split:?} does not fit a panel of {} rows", self.len())));
        }
        self.split = split;
        Ok(self)
    }

    /// Target returns back in the original (percent) units.
    pub fn raw_target(&self, t: usize) -> f64 {
        match &self.standardizer {
            Some(s) => s.invert_target(self.target[t]),
            None => self.target[t],
        }
    }

    /// Undo standardization, if any.
    pub fn unstandardized(&self) -> PanelDataset {
        let Some(s) = &self.standardizer else { return self.clone() };
        let f = self.n_covariates();
        let mut out = self.clone();
        out.target.iter_mut().for_each(|v| *v = s.invert_target(*v));
        for (k, v) in out.covariates.iter_mut().enumerate() {
            let i = k % f;
            *v = *v * s.covariate_std[i] + s.covariate_mean[i];
        }
        out.standardizer = None;
        out
    }

    /// Writes `date,target,<covariate names…>` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string(), "target".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![self.dates[t].to_string(), self.target[t].to_string()];
            rec.extend(self.covariate_row(t).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes every column with the mean and (population) standard
/// deviation of the training rows; validation and test rows reuse them.
pub fn fit_apply_standardizer(panel: &PanelDataset) -> Result<PanelDataset> {
    let base = panel.unstandardized();
    let train = base.split.range(Subset::Train);
    let degenerate = |name: &str, mean: f64, std: f64| std <= 1e-12 * mean.abs().max(1.0) || !std.is_finite() || name.is_empty();
    let (target_mean, target_std) = mean_std(train.clone().map(|t| base.target[t]));
    if degenerate(&base.target_name, target_mean, target_std) {
        return Err(Error::Data(format!(
            "target {} has zero variance over the training rows",
            base.target_name
        )));
    }
    let f = base.n_covariates();
    let mut covariate_mean = Vec::with_capacity(f);
    let mut covariate_std = Vec::with_capacity(f);
    for i in 0..f {
        let (m, s) = mean_std(train.clone().map(|t| base.covariate(t, i)));
        if degenerate(&base.covariate_names[i], m, s) {
            return Err(Error::Data(format!(
                "covariate {} has zero variance over the training rows",
                base.covariate_names[i]
            )));
        }
        covariate_mean.push(m);
        covariate_std.push(s);
    }
    let s = Standardizer {
        target_mean,
        target_std,
        covariate_mean,
        covariate_std,
    };
    let mut out = base;
    out.target.iter_mut().for_each(|v| *v = s.apply_target(*v));
    for (k, v) in out.covariates.iter_mut().enumerate() {
        let i = k % f;
        *v = (*v - s.covariate_mean[i]) / s.covariate_std[i];
    }
    out.standardizer = Some(s);
    Ok(out)
}
