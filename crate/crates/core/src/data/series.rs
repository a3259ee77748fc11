use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Monthly,
    Quarterly,
}

/// How a raw series enters the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Level,
    LogReturn,
    Difference,
}

/// A dated observation series at its native frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub frequency: Frequency,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<f64>, frequency: Frequency) -> Result<Self> {
        let name = name.into();
        if dates.len() != values.len() {
            return Err(Error::Data(format!(
                "series {name}: {} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "series {name}: dates not strictly increasing at {}",
                w[1]
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("series {name}: non-finite value at {}", dates[i])));
        }
        Ok(Self {
            name,
            dates,
            values,
            frequency,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps only observations whose date is in the sorted `keep` list.
    pub fn restrict_to(&self, keep: &[NaiveDate]) -> RawSeries {
        let (dates, values) = self
            .dates
            .iter()
            .zip(&self.values)
            .filter(|(d, _)| keep.binary_search(d).is_ok())
            .map(|(d, v)| (*d, *v))
            .unzip();
        RawSeries {
            name: self.name.clone(),
            dates,
            values,
            frequency: self.frequency,
        }
    }

    pub fn apply(&self, transform: Transform) -> Result<RawSeries> {
        match transform {
            Transform::Level => Ok(self.clone()),
            Transform::LogReturn => compute_log_returns(self),
            Transform::Difference => difference(self),
        }
    }
}

/// Continuously compounded returns in percent: `100·(ln S_t − ln S_{t−1})`.
pub fn compute_log_returns(prices: &RawSeries) -> Result<RawSeries> {
    if prices.len() < 2 {
        return Err(Error::Data(format!(
            "series {}: need at least 2 prices for returns",
            prices.name
        )));
    }
    if let Some(i) = prices.values.iter().position(|&p| p <= 0.0) {
        return Err(Error::Domain(format!(
            "series {}: non-positive price {} on {}",
            prices.name, prices.values[i], prices.dates[i]
        )));
    }
    let values = prices
        .values
        .windows(2)
        .map(|w| 100.0 * (w[1].ln() - w[0].ln()))
        .collect();
    RawSeries::new(prices.name.clone(), prices.dates[1..].to_vec(), values, prices.frequency)
}

pub fn difference(series: &RawSeries) -> Result<RawSeries> {
    if series.len() < 2 {
        return Err(Error::Data(format!(
            "series {}: need at least 2 observations to difference",
            series.name
        )));
    }
    let values = series.values.windows(2).map(|w| w[1] - w[0]).collect();
    RawSeries::new(series.name.clone(), series.dates[1..].to_vec(), values, series.frequency)
}

/// Aligns each series onto `trading_dates` by carrying the most recent
/// observation at or before each date forward. Returns one row per
/// trading date, one column per series.
pub fn forward_fill_align(series: &[RawSeries], trading_dates: &[NaiveDate]) -> Result<Vec<Vec<f64>>> {
    let mut rows = vec![Vec::with_capacity(series.len()); trading_dates.len()];
    for s in series {
        let mut cursor = 0usize;
        for (row, date) in rows.iter_mut().zip(trading_dates) {
            while cursor < s.len() && s.dates[cursor] <= *date {
                cursor += 1;
            }
            if cursor == 0 {
                return Err(Error::Alignment(format!(
                    "trading date {date} precedes the first observation of {} ({})",
                    s.name,
                    s.dates.first().map_or_else(|| "none".to_string(), ToString::to_string)
                )));
            }
            row.push(s.values[cursor - 1]);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn daily(values: &[f64]) -> RawSeries {
        let dates = (0..values.len()).map(|i| d(2020, 1, 1 + i as u32)).collect();
        RawSeries::new("s", dates, values.to_vec(), Frequency::Daily).unwrap()
    }

    #[test]
    fn log_returns_in_percent() {
        assert_eq!(compute_log_returns(&daily(&[100.0, 100.0])).unwrap().values, vec![0.0]);
        let r = compute_log_returns(&daily(&[100.0, 100.0 * 0.01f64.exp()])).unwrap();
        assert!((r.values[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.dates, vec![d(2020, 1, 2)]);
    }

    #[test]
    fn log_returns_reject_nonpositive_price() {
        let err = compute_log_returns(&daily(&[100.0, 0.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(err.to_string().contains("2020-01-02"), "{err}");
    }

    #[test]
    fn rejects_unsorted_dates_and_nan() {
        assert!(RawSeries::new("x", vec![d(2020, 1, 2), d(2020, 1, 1)], vec![1.0, 2.0], Frequency::Daily).is_err());
        assert!(RawSeries::new("x", vec![d(2020, 1, 1)], vec![f64::NAN], Frequency::Daily).is_err());
    }

    #[test]
    fn monthly_step_function() {
        let cpi = RawSeries::new("cpi", vec![d(2020, 1, 1), d(2020, 2, 1)], vec![2.0, 2.1], Frequency::Monthly).unwrap();
        let rows = forward_fill_align(&[cpi], &[d(2020, 1, 15), d(2020, 2, 2)]).unwrap();
        assert_eq!(rows, vec![vec![2.0], vec![2.1]]);
    }

    #[test]
    fn daily_series_on_own_dates_is_identity() {
        let s = daily(&[1.0, 2.0, 3.0]);
        let rows = forward_fill_align(std::slice::from_ref(&s), &s.dates).unwrap();
        assert_eq!(rows.concat(), s.values);
    }

    #[test]
    fn quarterly_value_spans_the_quarter() {
        // Weekday calendar from the Q1 release up to (excluding) the Q2 release.
        let gdp = RawSeries::new("gdp", vec![d(2021, 1, 1), d(2021, 4, 1)], vec![1.5, 1.7], Frequency::Quarterly).unwrap();
        let mut cal = Vec::new();
        let mut day = d(2021, 1, 1);
        while day < d(2021, 4, 1) {
            if chrono::Datelike::weekday(&day).number_from_monday() <= 5 {
                cal.push(day);
            }
            day = day.succ_opt().unwrap();
        }
        // Jan 21 + Feb 20 + Mar 23 weekdays
        assert_eq!(cal.len(), 64);
        let rows = forward_fill_align(&[gdp], &cal).unwrap();
        assert!(rows.iter().all(|r| r[0] == 1.5));
    }

    #[test]
    fn date_before_first_observation_fails() {
        let s = RawSeries::new("late", vec![d(2020, 3, 1)], vec![1.0], Frequency::Monthly).unwrap();
        assert!(matches!(forward_fill_align(&[s], &[d(2020, 2, 1)]), Err(Error::Alignment(_))));
    }

    #[test]
    fn never_uses_future_values() {
        let s = RawSeries::new("m", vec![d(2020, 1, 1), d(2020, 1, 10), d(2020, 1, 20)], vec![1.0, 2.0, 3.0], Frequency::Monthly).unwrap();
        let cal: Vec<_> = (1..=25).map(|i| d(2020, 1, i)).collect();
        let rows = forward_fill_align(std::slice::from_ref(&s), &cal).unwrap();
        for (date, row) in cal.iter().zip(&rows) {
            let last = s.dates.iter().rposition(|x| x <= date).unwrap();
            assert_eq!(row[0], s.values[last]);
        }
    }
}
