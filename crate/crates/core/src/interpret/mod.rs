//! Variable importance from the selector weights.
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{batch_for, window_targets, PanelDataset, Subset};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Model};

/// How a window's `T` rows of weights collapse to one row per date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Column-wise maximum, renormalized to sum to one.
    Max,
}

/// One row of variable weights per forecast date.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub aggregation: Aggregation,
}

fn omega_dims(trace: &ForwardTrace) -> Result<(usize, usize, usize)> {
    match *trace.omega.shape() {
        [b, t, f] => Ok((b, t, f)),
        ref s => Err(Error::dim("importance", format!("weights must be [B, T, F], got {s:?}"))),
    }
}

/// Per-window rows, in trace order.
fn window_rows(traces: &[ForwardTrace], n_vars: usize, agg: Aggregation) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for tr in traces {
        let (b, t, f) = omega_dims(tr)?;
        if f != n_vars {
            return Err(Error::dim("importance", format!("{f} weights per step but {n_vars} names")));
        }
        let w = tr.omega.data();
        for i in 0..b {
            let steps = &w[i * t * f..(i + 1) * t * f];
            let mut row = vec![0.0; f];
            match agg {
                Aggregation::Mean => {
                    for s in steps.chunks(f) {
                        row.iter_mut().zip(s).for_each(|(r, v)| *r += v / t as f64);
                    }
                }
                Aggregation::Max => {
                    row.fill(f64::NEG_INFINITY);
                    for s in steps.chunks(f) {
                        row.iter_mut().zip(s).for_each(|(r, v)| *r = r.max(*v));
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|r| *r /= total);
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Time-varying importance, one row per window across `traces`, matched to
/// `dates` in order.
pub fn timevarying_importance(
    traces: &[ForwardTrace],
    dates: &[NaiveDate],
    names: &[String],
    agg: Aggregation,
) -> Result<ImportanceMatrix> {
    let weights = window_rows(traces, names.len(), agg)?;
    if weights.len() != dates.len() {
        return Err(Error::Alignment(format!("{} windows but {} dates", weights.len(), dates.len())));
    }
    Ok(ImportanceMatrix {
        dates: dates.to_vec(),
        names: names.to_vec(),
        weights,
        aggregation: agg,
    })
}

/// Mean weight over every time step of every window, in percent.
pub fn global_importance(traces: &[ForwardTrace], names: &[String]) -> Result<Vec<(String, f64)>> {
    let rows = window_rows(traces, names.len(), Aggregation::Mean)?;
    if rows.is_empty() {
        return Err(Error::Data("no forward passes to aggregate".into()));
    }
    Ok(percent_of_mean(&rows, names))
}

fn percent_of_mean(rows: &[Vec<f64>], names: &[String]) -> Vec<(String, f64)> {
    let n = rows.len() as f64;
    names
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), 100.0 * rows.iter().map(|r| r[j]).sum::<f64>() / n))
        .collect()
}

impl ImportanceMatrix {
    /// Date-weighted mean of the rows, in percent.
    pub fn global(&self) -> Result<Vec<(String, f64)>> {
        if self.weights.is_empty() {
            return Err(Error::Data("importance matrix has no rows".into()));
        }
        Ok(percent_of_mean(&self.weights, &self.names))
    }

    /// Writes `date,<var1>,…,<varF>`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("date").chain(self.names.iter().map(String::as_str)))?;
        for (d, row) in self.dates.iter().zip(&self.weights) {
            w.write_record(std::iter::once(d.to_string()).chain(row.iter().map(f64::to_string)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes `name,percent`.
pub fn write_global<W: std::io::Write>(global: &[(String, f64)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "percent"])?;
    for (name, pct) in global {
        w.write_record([name.clone(), pct.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the model over every window of `subset` and keeps the weights.
pub fn explain_subset(
    model: &Model,
    panel: &PanelDataset,
    subset: Subset,
    batch_size: usize,
    agg: Aggregation,
) -> Result<ImportanceMatrix> {
    let origins = window_targets(panel, model.config.window, subset)?;
    let mut traces = Vec::new();
    for chunk in origins.chunks(batch_size.max(1)) {
        traces.push(model.predict(&batch_for(panel, model.config.window, chunk)?.inputs)?);
    }
    let dates: Vec<NaiveDate> = origins.iter().map(|&j| panel.dates[j]).collect();
    timevarying_importance(&traces, &dates, &panel.covariate_names, agg)
}
