use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::{build_panel, write_series_csv, Manifest, SeriesEntry, SeriesKind};
use super::panel::PanelDataset;
use super::series::{Frequency, RawSeries, Transform};
use crate::error::{Error, Result};

/// Synthetic panel with a planted linear signal:
/// `r_{t+1} = Σ c_i x_{i,t} + φ r_t + σ ε_{t+1}` with `x_{i,t}, ε ~ N(0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of return observations.
    pub n: usize,
    pub n_covariates: usize,
    /// Coefficients on the first covariates; missing ones are zero.
    pub signal_coefs: Vec<f64>,
    pub noise_std: f64,
    /// Coefficient on the target's own previous return. When nonzero the
    /// target's lagged returns are also listed as a covariate.
    #[serde(default)]
    pub ar_coef: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            n_covariates: 5,
            signal_coefs: vec![0.8],
            noise_std: 0.1,
            ar_coef: 0.0,
            seed: 7,
        }
    }
}

/// Generated returns and the price series that produce them.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub target_prices: RawSeries,
    pub covariate_prices: Vec<RawSeries>,
    pub target_returns: Vec<f64>,
    pub covariate_returns: Vec<Vec<f64>>,
}

pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn prices(name: String, dates: &[NaiveDate], returns: &[f64]) -> Result<RawSeries> {
    let mut level = 100.0f64.ln();
    let mut values = vec![100.0];
    for r in returns {
        level += r / 100.0;
        values.push(level.exp());
    }
    RawSeries::new(name, dates.to_vec(), values, Frequency::Daily)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n < 10 || spec.n_covariates == 0 {
        return Err(Error::Config("synthetic panel needs n >= 10 and at least one covariate".into()));
    }
    if spec.signal_coefs.len() > spec.n_covariates {
        return Err(Error::Config(format!(
            "{} signal coefficients for {} covariates",
            spec.signal_coefs.len(),
            spec.n_covariates
        )));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) || spec.ar_coef.abs() >= 1.0 {
        return Err(Error::Config("noise_std must be >= 0 and |ar_coef| < 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.n_covariates;
    // x[0] is an unobserved lag that drives the first return
    let x: Vec<Vec<f64>> = (0..=spec.n)
        .map(|_| (0..f).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut r = Vec::with_capacity(spec.n);
    let mut prev: f64 = StandardNormal.sample(&mut rng);
    for t in 1..=spec.n {
        let eps: f64 = StandardNormal.sample(&mut rng);
        let signal: f64 = spec.signal_coefs.iter().zip(&x[t - 1]).map(|(c, v)| c * v).sum();
        prev = signal + spec.ar_coef * prev + spec.noise_std * eps;
        r.push(prev);
    }
    let x = &x[1..];
    let dates = business_days(NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date"), spec.n + 1);
    let covariate_returns: Vec<Vec<f64>> = (0..f).map(|i| x.iter().map(|row| row[i]).collect()).collect();
    Ok(SynthData {
        target_prices: prices("target".into(), &dates, &r)?,
        covariate_prices: covariate_returns
            .iter()
            .enumerate()
            .map(|(i, xs)| prices(format!("x{}", i + 1), &dates, xs))
            .collect::<Result<_>>()?,
        target_returns: r,
        covariate_returns,
    })
}

impl SynthData {
    fn covariate_entries(&self, with_target_lag: bool) -> Vec<(RawSeries, Transform)> {
        let mut out: Vec<_> = self.covariate_prices.iter().map(|s| (s.clone(), Transform::LogReturn)).collect();
        if with_target_lag {
            let mut own = self.target_prices.clone();
            own.name = "target_lag".into();
            out.push((own, Transform::LogReturn));
        }
        out
    }

    pub fn to_panel(&self, spec: &SynthSpec) -> Result<PanelDataset> {
        build_panel(&self.target_prices, Transform::LogReturn, &self.covariate_entries(spec.ar_coef != 0.0))
    }

    /// Writes one `date,value` price CSV per series plus `manifest.json`.
    pub fn write_dir(&self, spec: &SynthSpec, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entry = |s: &RawSeries, file: &str| SeriesEntry {
            name: s.name.clone(),
            path: file.into(),
            frequency: Frequency::Daily,
            kind: Some(SeriesKind::Price),
            transform: None,
        };
        write_series_csv(&dir.join("target.csv"), &self.target_prices)?;
        let mut covariates = Vec::new();
        for s in &self.covariate_prices {
            let file = format!("{}.csv", s.name);
            write_series_csv(&dir.join(&file), s)?;
            covariates.push(entry(s, &file));
        }
        if spec.ar_coef != 0.0 {
            let mut e = entry(&self.target_prices, "target.csv");
            e.name = "target_lag".into();
            covariates.push(e);
        }
        let manifest = Manifest {
            target: entry(&self.target_prices, "target.csv"),
            covariates,
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::load_panel;

    #[test]
    fn panel_recovers_generated_returns() {
        let spec = SynthSpec { n: 50, n_covariates: 3, signal_coefs: vec![0.5, -0.2], noise_std: 0.3, ar_coef: 0.0, seed: 3 };
        let data = generate(&spec).unwrap();
        let p = data.to_panel(&spec).unwrap();
        assert_eq!(p.len(), 50);
        for t in 0..p.len() {
            assert!((p.target[t] - data.target_returns[t]).abs() < 1e-9);
            for i in 0..3 {
                assert!((p.covariate(t, i) - data.covariate_returns[i][t]).abs() < 1e-9);
            }
        }
        // the planted relation links row t-1 covariates to row t target
        for t in 1..p.len() {
            let signal = 0.5 * p.covariate(t - 1, 0) - 0.2 * p.covariate(t - 1, 1);
            assert!((p.target[t] - signal).abs() < 0.3 * 5.0);
        }
    }

    #[test]
    fn same_seed_same_files() {
        let spec = SynthSpec { n: 30, ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&spec).unwrap().write_dir(&spec, a.path()).unwrap();
        generate(&spec).unwrap().write_dir(&spec, b.path()).unwrap();
        for f in ["target.csv", "x1.csv", "x5.csv", "manifest.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let p = load_panel(&a.path().join("manifest.json")).unwrap();
        assert_eq!(p.len(), 30);
        assert_eq!(p.n_covariates(), 5);
    }

    #[test]
    fn ar_signal_adds_target_lag_column() {
        let spec = SynthSpec { n: 40, n_covariates: 2, signal_coefs: vec![], noise_std: 1.0, ar_coef: 0.5, seed: 1 };
        let data = generate(&spec).unwrap();
        let p = data.to_panel(&spec).unwrap();
        assert_eq!(p.covariate_names.last().unwrap(), "target_lag");
        for t in 0..p.len() {
            assert!((p.covariate(t, 2) - p.target[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(d.iter().map(|x| x.day()).collect::<Vec<_>>(), vec![5, 8, 9]);
    }
}
