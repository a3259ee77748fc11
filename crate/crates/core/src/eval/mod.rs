//! Out-of-sample forecast comparison against the no-change benchmark.
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::PanelDataset;
use crate::error::{Error, Result};

/// Realized returns and forecasts over an evaluation period, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet {
    pub dates: Vec<NaiveDate>,
    pub realized: Vec<f64>,
    pub model: Vec<f64>,
    /// No-change benchmark forecast, identically zero for returns.
    pub benchmark: Vec<f64>,
    /// Realized return of the previous day, the random walk's sign signal.
    pub previous: Vec<f64>,
    pub label: String,
    pub window: usize,
}

impl ForecastSet {
    pub fn new(
        dates: Vec<NaiveDate>,
        realized: Vec<f64>,
        model: Vec<f64>,
        previous: Vec<f64>,
        label: impl Into<String>,
        window: usize,
    ) -> Result<Self> {
        let n = realized.len();
        if dates.len() != n || model.len() != n || previous.len() != n {
            return Err(Error::dim(
                "forecast_set",
                format!(
                    "{} dates, {n} realized, {} forecasts, {} lagged returns",
                    dates.len(),
                    model.len(),
                    previous.len()
                ),
            ));
        }
        if realized.iter().chain(&model).chain(&previous).any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "forecast_set",
                detail: "non-finite value".into(),
            });
        }
        Ok(Self {
            dates,
            benchmark: vec![0.0; n],
            realized,
            model,
            previous,
            label: label.into(),
            window,
        })
    }

    /// Maps standardized predictions at panel rows `origins` back to percent.
    pub fn from_predictions(
        panel: &PanelDataset,
        origins: &[usize],
        standardized: &[f64],
        label: impl Into<String>,
        window: usize,
    ) -> Result<Self> {
        if origins.len() != standardized.len() {
            return Err(Error::dim("forecast_set", "origins and predictions differ in length"));
        }
        if origins.iter().any(|&j| j == 0 || j >= panel.len()) {
            return Err(Error::Contract("forecast origins need a previous day inside the panel".into()));
        }
        let model = standardized
            .iter()
            .map(|&z| panel.standardizer.as_ref().map_or(z, |s| s.invert_target(z)))
            .collect();
        Self::new(
            origins.iter().map(|&j| panel.dates[j]).collect(),
            origins.iter().map(|&j| panel.raw_target(j)).collect(),
            model,
            origins.iter().map(|&j| panel.raw_target(j - 1)).collect(),
            label,
            window,
        )
    }

    pub fn len(&self) -> usize {
        self.realized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realized.is_empty()
    }

    /// Random-walk sign signal `sign(r_{t−1})` as a forecast series.
    pub fn rw_direction(&self) -> Vec<f64> {
        self.previous.iter().map(|v| sign(*v)).collect()
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-sided HAC t-test outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub bandwidth: usize,
    pub n: usize,
    pub one_sided: bool,
}

/// `(1/n)·Σ(y−ŷ)²`.
pub fn msfe(realized: &[f64], forecast: &[f64]) -> Result<f64> {
    if realized.is_empty() || realized.len() != forecast.len() {
        return Err(Error::dim("msfe", format!("{} realized vs {} forecasts", realized.len(), forecast.len())));
    }
    Ok(realized.iter().zip(forecast).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / realized.len() as f64)
}

/// `100 · MSFE(model) / MSFE(benchmark)`.
pub fn msfe_ratio(realized: &[f64], model: &[f64], benchmark: &[f64]) -> Result<f64> {
    let b = msfe(realized, benchmark)?;
    if b == 0.0 {
        return Err(Error::Degenerate("benchmark MSFE is zero".into()));
    }
    Ok(100.0 * (msfe(realized, model)? / b))
}

/// Bartlett bandwidth `⌊4(n/100)^{2/9}⌋`.
pub fn default_bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Newey–West long-run variance with Bartlett weights, autocovariances
/// about the sample mean with divisor `n`, floored at zero.
pub fn newey_west_lrv(x: &[f64], bandwidth: usize) -> Result<f64> {
    let n = x.len();
    if bandwidth >= n {
        return Err(Error::Config(format!("bandwidth {bandwidth} needs more than {n} observations")));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma = |j: usize| d[j..].iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut lrv = gamma(0);
    for j in 1..=bandwidth {
        lrv += 2.0 * (1.0 - j as f64 / (bandwidth + 1) as f64) * gamma(j);
    }
    Ok(lrv.max(0.0))
}

fn upper_tail(t: f64) -> f64 {
    let normal = Normal::standard();
    normal.sf(t).clamp(0.0, 1.0)
}

/// One-sided test that the mean of `d` exceeds zero. Identically zero
/// input gives `t = 0, p = 0.5`; zero variance with a nonzero mean gives
/// `t = ±∞` with `p` 0 or 1.
pub fn hac_mean_test(d: &[f64], bandwidth: Option<usize>) -> Result<TestResult> {
    let n = d.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 observations for a HAC test, got {n}")));
    }
    let l = bandwidth.unwrap_or_else(|| default_bandwidth(n));
    let done = |statistic: f64, p_value: f64| TestResult {
        statistic,
        p_value,
        bandwidth: l,
        n,
        one_sided: true,
    };
    if d.iter().all(|v| *v == 0.0) {
        return Ok(done(0.0, 0.5));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let lrv = newey_west_lrv(d, l)?;
    if lrv <= 0.0 {
        return Ok(match mean.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => done(f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => done(f64::NEG_INFINITY, 1.0),
            _ => done(0.0, 0.5),
        });
    }
    let t = mean / (lrv / n as f64).sqrt();
    Ok(done(t, upper_tail(t)))
}

/// Clark–West adjusted loss differential
/// `f = (y−ŷ_b)² − [(y−ŷ_m)² − (ŷ_b−ŷ_m)²]`.
pub fn clark_west_differential(realized: &[f64], model: &[f64], benchmark: &[f64]) -> Result<Vec<f64>> {
    if realized.len() != model.len() || realized.len() != benchmark.len() {
        return Err(Error::dim("clark_west", "series differ in length"));
    }
    Ok(realized
        .iter()
        .zip(model)
        .zip(benchmark)
        .map(|((y, m), b)| (y - b).powi(2) - ((y - m).powi(2) - (b - m).powi(2)))
        .collect())
}

pub fn clark_west_test(realized: &[f64], model: &[f64], benchmark: &[f64], bandwidth: Option<usize>) -> Result<TestResult> {
    hac_mean_test(&clark_west_differential(realized, model, benchmark)?, bandwidth)
}

/// `a(t) = 1` when `ŷ_t·y_t ≥ 0`.
pub fn hit_indicators(realized: &[f64], forecast: &[f64]) -> Vec<f64> {
    realized
        .iter()
        .zip(forecast)
        .map(|(y, f)| if y * f >= 0.0 { 1.0 } else { 0.0 })
        .collect()
}

pub fn directional_accuracy(realized: &[f64], forecast: &[f64]) -> Result<f64> {
    if realized.is_empty() || realized.len() != forecast.len() {
        return Err(Error::dim("directional_accuracy", "empty or unequal series"));
    }
    Ok(hit_indicators(realized, forecast).iter().sum::<f64>() / realized.len() as f64)
}

pub fn blaskowitz_herwartz_test(a_model: &[f64], a_benchmark: &[f64], bandwidth: Option<usize>) -> Result<TestResult> {
    if a_model.len() != a_benchmark.len() {
        return Err(Error::dim("blaskowitz_herwartz", "indicator series differ in length"));
    }
    let d: Vec<f64> = a_model.iter().zip(a_benchmark).map(|(m, b)| m - b).collect();
    hac_mean_test(&d, bandwidth)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pair: String,
    pub model: String,
    pub window: usize,
    pub msfe_ratio: f64,
    pub cw_t: f64,
    pub cw_p: f64,
    pub da: f64,
    pub bh_t: f64,
    pub bh_p: f64,
}

/// Scores a forecast set: MSFE ratio and Clark–West against the zero
/// forecast, directional accuracy and Blaskowitz–Herwartz against the
/// random walk's sign-persistence signal.
pub fn evaluate(fs: &ForecastSet, pair: &str, bandwidth: Option<usize>) -> Result<EvalRow> {
    let cw = clark_west_test(&fs.realized, &fs.model, &fs.benchmark, bandwidth)?;
    let a_model = hit_indicators(&fs.realized, &fs.model);
    let a_rw = hit_indicators(&fs.realized, &fs.rw_direction());
    let bh = blaskowitz_herwartz_test(&a_model, &a_rw, bandwidth)?;
    Ok(EvalRow {
        pair: pair.to_string(),
        model: fs.label.clone(),
        window: fs.window,
        msfe_ratio: msfe_ratio(&fs.realized, &fs.model, &fs.benchmark)?,
        cw_t: cw.statistic,
        cw_p: cw.p_value,
        da: directional_accuracy(&fs.realized, &fs.model)?,
        bh_t: bh.statistic,
        bh_p: bh.p_value,
    })
}

/// The benchmark's own row: ratio 100, null test statistics, and the
/// random walk's directional accuracy.
pub fn random_walk_row(fs: &ForecastSet, pair: &str) -> Result<EvalRow> {
    Ok(EvalRow {
        pair: pair.to_string(),
        model: "rw".into(),
        window: fs.window,
        msfe_ratio: msfe_ratio(&fs.realized, &fs.benchmark, &fs.benchmark)?,
        cw_t: 0.0,
        cw_p: 0.5,
        da: directional_accuracy(&fs.realized, &fs.rw_direction())?,
        bh_t: 0.0,
        bh_p: 0.5,
    })
}

pub fn write_results<W: std::io::Write>(rows: &[EvalRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["pair", "model", "window", "msfe_ratio", "cw_t", "cw_p", "da", "bh_t", "bh_p"])?;
    }
    w.flush()?;
    Ok(())
}
