use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::panel::PanelDataset;
use super::series::{forward_fill_align, Frequency, RawSeries, Transform};
use crate::error::{Error, Result};

/// What a series measures; drives the default transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Price,
    Index,
    Rate,
    Macro,
    Return,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub name: String,
    pub path: PathBuf,
    pub frequency: Frequency,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<SeriesKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
}

impl SeriesEntry {
    /// Explicit transform, else log-returns for prices and indices and levels
    /// for everything else.
    pub fn effective_transform(&self) -> Transform {
        self.transform.unwrap_or(match self.kind.unwrap_or(SeriesKind::Price) {
            SeriesKind::Price | SeriesKind::Index => Transform::LogReturn,
            SeriesKind::Rate | SeriesKind::Macro | SeriesKind::Return => Transform::Level,
        })
    }
}

/// Lists the target series and its covariates. Paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub target: SeriesEntry,
    pub covariates: Vec<SeriesEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads a `date,value` CSV.
pub fn read_series_csv(path: &Path, name: &str, frequency: Frequency) -> Result<RawSeries> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() < 2 || headers[0].trim() != "date" || headers[1].trim() != "value" {
        return Err(Error::parse(path, format!("expected header `date,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = line + 2;
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d")
            .map_err(|e| Error::parse(path, format!("line {row}: bad date `{}`: {e}", &rec[0])))?;
        let value: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, format!("line {row}: bad value `{}`: {e}", &rec[1])))?;
        dates.push(date);
        values.push(value);
    }
    if dates.is_empty() {
        return Err(Error::Data(format!("{}: no observations", path.display())));
    }
    RawSeries::new(name, dates, values, frequency)
}

pub fn write_series_csv(path: &Path, series: &RawSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["date", "value"]).map_err(|e| csv_error(path, e))?;
    for (d, v) in series.dates.iter().zip(&series.values) {
        w.write_record([d.to_string(), v.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::parse(path, e.to_string())
    }
}

/// Loads every series named in the manifest and assembles the panel.
pub fn load_panel(manifest_path: &Path) -> Result<PanelDataset> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let read = |e: &SeriesEntry| read_series_csv(&base.join(&e.path), &e.name, e.frequency);
    let target = read(&manifest.target)?;
    let covariates = manifest
        .covariates
        .iter()
        .map(|e| Ok((read(e)?, e.effective_transform())))
        .collect::<Result<Vec<_>>>()?;
    build_panel(&target, manifest.target.effective_transform(), &covariates)
}

/// Builds the daily panel. The calendar is the set of dates shared by the
/// target and every daily covariate, trimmed to start once every
/// transformed covariate has an observation; lower-frequency series are
/// forward-filled onto it.
pub fn build_panel(target: &RawSeries, target_transform: Transform, covariates: &[(RawSeries, Transform)]) -> Result<PanelDataset> {
    if target.frequency != Frequency::Daily {
        return Err(Error::Data(format!("target {} must be a daily series", target.name)));
    }
    if covariates.is_empty() {
        return Err(Error::Data("manifest lists no covariates".into()));
    }
    let mut calendar: Vec<NaiveDate> = target.dates.clone();
    for (s, _) in covariates.iter().filter(|(s, _)| s.frequency == Frequency::Daily) {
        calendar.retain(|d| s.dates.binary_search(d).is_ok());
    }
    // daily series are restricted to the calendar before differencing so
    // returns span consecutive trading days
    let restrict = |s: &RawSeries| match s.frequency {
        Frequency::Daily => s.restrict_to(&calendar),
        _ => s.clone(),
    };
    let target_r = restrict(target).apply(target_transform)?;
    let covs = covariates
        .iter()
        .map(|(s, tr)| restrict(s).apply(*tr))
        .collect::<Result<Vec<_>>>()?;
    let start = covs
        .iter()
        .chain(std::iter::once(&target_r))
        .map(|s| s.dates[0])
        .max()
        .expect("at least one series");
    let dates: Vec<NaiveDate> = target_r.dates.iter().copied().filter(|d| *d >= start).collect();
    let offset = target_r.dates.len() - dates.len();
    let rows = forward_fill_align(&covs, &dates)?;
    PanelDataset::new(
        dates,
        target.name.clone(),
        target_r.values[offset..].to_vec(),
        covs.iter().map(|s| s.name.clone()).collect(),
        rows,
    )
}
