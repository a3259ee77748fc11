use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::hit_indicators;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Volatility {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Bear,
    Bull,
}

/// One of the five reporting buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Vol(Volatility),
    Trend(Trend),
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Vol(Volatility::High),
        Regime::Vol(Volatility::Medium),
        Regime::Vol(Volatility::Low),
        Regime::Trend(Trend::Bear),
        Regime::Trend(Trend::Bull),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Vol(Volatility::High) => "high",
            Regime::Vol(Volatility::Medium) => "medium",
            Regime::Vol(Volatility::Low) => "low",
            Regime::Trend(Trend::Bear) => "bear",
            Regime::Trend(Trend::Bull) => "bull",
        }
    }
}

/// Where the tercile cut points come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Percentiles of the rolling std over the whole evaluation period.
    #[default]
    Full,
    /// Percentiles of the rolling std observed up to and including each day.
    Expanding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimePartition {
    pub rolling_std: Vec<Option<f64>>,
    pub rolling_sum: Vec<Option<f64>>,
    /// `(33rd, 66th)` percentile cut points applied on each day.
    pub thresholds: Vec<Option<(f64, f64)>>,
    pub volatility: Vec<Option<Volatility>>,
    pub trend: Vec<Option<Trend>>,
}

impl RegimePartition {
    pub fn len(&self) -> usize {
        self.volatility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volatility.is_empty()
    }

    pub fn contains(&self, t: usize, regime: Regime) -> bool {
        match regime {
            Regime::Vol(v) => self.volatility[t] == Some(v),
            Regime::Trend(s) => self.trend[t] == Some(s),
        }
    }
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 1].
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn cuts(values: &mut Vec<f64>) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    (percentile(values, 0.33), percentile(values, 0.66))
}

/// Labels each day by the sample std and the sum of the trailing window of
/// returns ending that day. Days before a full window are unlabeled. A
/// nonpositive sum counts as bear.
pub fn regime_partition(returns: &[f64], vol_window: usize, trend_window: usize, mode: ThresholdMode) -> Result<RegimePartition> {
    let n = returns.len();
    if vol_window < 2 || trend_window < 1 {
        return Err(Error::Config("regime windows must be at least 2 (volatility) and 1 (trend)".into()));
    }
    if n <= vol_window.max(trend_window) {
        return Err(Error::Data(format!(
            "{n} returns are too few for {vol_window}/{trend_window}-day regime windows"
        )));
    }
    let rolling_std: Vec<Option<f64>> = (0..n)
        .map(|t| {
            (t + 1 >= vol_window).then(|| {
                let w = &returns[t + 1 - vol_window..=t];
                let m = w.iter().sum::<f64>() / vol_window as f64;
                (w.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (vol_window - 1) as f64).sqrt()
            })
        })
        .collect();
    let rolling_sum: Vec<Option<f64>> = (0..n)
        .map(|t| (t + 1 >= trend_window).then(|| returns[t + 1 - trend_window..=t].iter().sum()))
        .collect();

    let thresholds: Vec<Option<(f64, f64)>> = match mode {
        ThresholdMode::Full => {
            let mut all: Vec<f64> = rolling_std.iter().flatten().copied().collect();
            let c = cuts(&mut all);
            rolling_std.iter().map(|s| s.map(|_| c)).collect()
        }
        ThresholdMode::Expanding => {
            let mut seen = Vec::new();
            rolling_std
                .iter()
                .map(|s| {
                    s.map(|v| {
                        seen.push(v);
                        cuts(&mut seen.clone())
                    })
                })
                .collect()
        }
    };
    let volatility = rolling_std
        .iter()
        .zip(&thresholds)
        .map(|(s, c)| match (s, c) {
            (Some(s), Some((lo, hi))) => Some(if *s <= *lo {
                Volatility::Low
            } else if *s <= *hi {
                Volatility::Medium
            } else {
                Volatility::High
            }),
            _ => None,
        })
        .collect();
    let trend = rolling_sum
        .iter()
        .map(|s| s.map(|s| if s > 0.0 { Trend::Bull } else { Trend::Bear }))
        .collect();
    Ok(RegimePartition {
        rolling_std,
        rolling_sum,
        thresholds,
        volatility,
        trend,
    })
}

/// Directional accuracy of one forecaster inside one bucket. `da` is `None`
/// for an empty bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeDaRow {
    pub regime: Regime,
    pub model: String,
    pub n: usize,
    pub da: Option<f64>,
}

/// DA per bucket for each `(label, forecasts)` pair.
pub fn stratified_da(realized: &[f64], forecasts: &[(String, Vec<f64>)], partition: &RegimePartition) -> Result<Vec<RegimeDaRow>> {
    if partition.len() != realized.len() || forecasts.iter().any(|(_, f)| f.len() != realized.len()) {
        return Err(Error::Alignment("forecasts, realized returns and regime labels cover different days".into()));
    }
    let mut rows = Vec::new();
    for regime in Regime::ALL {
        let days: Vec<usize> = (0..realized.len()).filter(|&t| partition.contains(t, regime)).collect();
        for (label, f) in forecasts {
            let y: Vec<f64> = days.iter().map(|&t| realized[t]).collect();
            let p: Vec<f64> = days.iter().map(|&t| f[t]).collect();
            let hits = hit_indicators(&y, &p);
            rows.push(RegimeDaRow {
                regime,
                model: label.clone(),
                n: days.len(),
                da: (!days.is_empty()).then(|| hits.iter().sum::<f64>() / days.len() as f64),
            });
        }
    }
    Ok(rows)
}

/// Writes `regime,model,n,da`; an absent DA is an empty field.
pub fn write_regime_da<W: std::io::Write>(rows: &[RegimeDaRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["regime", "model", "n", "da"])?;
    for r in rows {
        w.write_record([
            r.regime.label().to_string(),
            r.model.clone(),
            r.n.to_string(),
            r.da.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
