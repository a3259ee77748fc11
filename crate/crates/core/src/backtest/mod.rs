//! Long–short trading simulation on daily return forecasts.
mod regime;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use regime::{regime_partition, stratified_da, write_regime_da, Regime, RegimeDaRow, RegimePartition, ThresholdMode, Trend, Volatility};

use crate::error::{Error, Result};
use crate::eval::sign;

pub const TRADING_DAYS: f64 = 252.0;

/// Position in {−1, 0, +1}.
pub type Signal = i8;

fn signum(v: f64) -> Signal {
    sign(v) as Signal
}

pub fn signal_from_forecast(forecast: &[f64]) -> Vec<Signal> {
    forecast.iter().map(|v| signum(*v)).collect()
}

/// `sign(r_t)`, the best any signal series can do.
pub fn perfect_foresight(returns: &[f64]) -> Vec<Signal> {
    signal_from_forecast(returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSignals {
    pub rw: Vec<Signal>,
    pub bh: Vec<Signal>,
    pub ma: Vec<Signal>,
}

/// Random walk `sign(r_{t−1})` (0 on the first day), buy and hold, and the
/// 20/50-day moving-average crossover on the compounded price path.
///
/// The crossover for day `t` uses prices through day `t−1`, the same
/// information the random walk sees. It is 0 until both averages exist and
/// on exact ties.
pub fn benchmark_signals(returns: &[f64]) -> BenchmarkSignals {
    let n = returns.len();
    let mut rw = vec![0; n];
    for t in 1..n {
        rw[t] = signum(returns[t - 1]);
    }
    let mut price = Vec::with_capacity(n);
    let mut level = 100.0;
    for r in returns {
        level *= 1.0 + r / 100.0;
        price.push(level);
    }
    let ma = |end: usize, len: usize| price[end - len..end].iter().sum::<f64>() / len as f64;
    let ma_signal = (0..n)
        .map(|t| {
            if t < 50 {
                return 0;
            }
            let (fast, slow) = (ma(t, 20), ma(t, 50));
            if fast > slow {
                1
            } else if fast < slow {
                -1
            } else {
                0
            }
        })
        .collect();
    BenchmarkSignals {
        rw,
        bh: vec![1; n],
        ma: ma_signal,
    }
}

pub fn strategy_returns(signals: &[Signal], returns: &[f64]) -> Result<Vec<f64>> {
    if signals.len() != returns.len() {
        return Err(Error::dim(
            "strategy_returns",
            format!("{} signals vs {} returns", signals.len(), returns.len()),
        ));
    }
    Ok(signals.iter().zip(returns).map(|(s, r)| f64::from(*s) * r).collect())
}

/// Per-trade costs in basis points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionSpec {
    pub cost_bps: f64,
    pub slippage_bps: f64,
}

impl Default for FrictionSpec {
    fn default() -> Self {
        Self {
            cost_bps: 5.0,
            slippage_bps: 2.0,
        }
    }
}

impl FrictionSpec {
    pub fn none() -> Self {
        Self {
            cost_bps: 0.0,
            slippage_bps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost_bps >= 0.0 && self.slippage_bps >= 0.0) || !self.per_trade_pct().is_finite() {
            return Err(Error::Config(format!(
                "friction costs must be finite and nonnegative, got {} + {} bps",
                self.cost_bps, self.slippage_bps
            )));
        }
        Ok(())
    }

    /// Deduction per position change, in percentage points.
    pub fn per_trade_pct(&self) -> f64 {
        (self.cost_bps + self.slippage_bps) / 100.0
    }
}

/// Days on which the position differs from the previous day, starting flat.
pub fn position_changes(signals: &[Signal]) -> Vec<bool> {
    let mut prev = 0;
    signals
        .iter()
        .map(|&s| {
            let changed = s != prev;
            prev = s;
            changed
        })
        .collect()
}

/// Per-day deductions: one fixed charge on each position change, whatever
/// the size of the jump.
pub fn friction_deductions(signals: &[Signal], spec: &FrictionSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let c = spec.per_trade_pct();
    Ok(position_changes(signals).into_iter().map(|ch| if ch { c } else { 0.0 }).collect())
}

pub fn apply_frictions(signals: &[Signal], gross: &[f64], spec: &FrictionSpec) -> Result<Vec<f64>> {
    if signals.len() != gross.len() {
        return Err(Error::dim("apply_frictions", "signals and returns differ in length"));
    }
    let d = friction_deductions(signals, spec)?;
    Ok(gross.iter().zip(d).map(|(g, d)| g - d).collect())
}

/// Compounded path `100·(∏(1+R/100) − 1)` after each day.
pub fn cumulative_path(daily: &[f64]) -> Result<Vec<f64>> {
    let mut wealth = 1.0;
    let mut path = Vec::with_capacity(daily.len());
    for (t, r) in daily.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::Numeric {
                op: "cumulative_return",
                detail: format!("day {t} return is {r}"),
            });
        }
        if *r <= -100.0 {
            return Err(Error::Domain(format!("day {t} return {r}% wipes out the position")));
        }
        wealth *= 1.0 + r / 100.0;
        path.push(100.0 * (wealth - 1.0));
    }
    Ok(path)
}

pub fn cumulative_return(daily: &[f64]) -> Result<f64> {
    Ok(cumulative_path(daily)?.last().copied().unwrap_or(0.0))
}

/// Largest fall of the wealth path from a running peak, in percent of the
/// peak. Starting wealth 1 counts as a peak.
pub fn max_drawdown(daily: &[f64]) -> Result<f64> {
    let mut peak = 1.0f64;
    let mut worst = 0.0f64;
    for c in cumulative_path(daily)? {
        let w = 1.0 + c / 100.0;
        peak = peak.max(w);
        worst = worst.max(100.0 * (peak - w) / peak);
    }
    Ok(worst)
}

/// Ratio used for Sharpe and Sortino when the denominator vanishes:
/// `±∞` for a nonzero mean, NaN for a zero mean.
fn ratio_or_sentinel(mean: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        mean / scale * TRADING_DAYS.sqrt()
    } else if mean > 0.0 {
        f64::INFINITY
    } else if mean < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::NAN
    }
}

/// `(mean/sd)·√252` with the n−1 standard deviation and zero risk-free rate.
pub fn sharpe_ratio(daily: &[f64]) -> f64 {
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    if daily.iter().all(|r| *r == daily[0]) {
        return ratio_or_sentinel(mean, 0.0);
    }
    let var = daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    ratio_or_sentinel(mean, var.sqrt())
}

/// `(mean/dd)·√252` with downside deviation `√(Σ min(R,0)²/n)`.
pub fn sortino_ratio(daily: &[f64]) -> f64 {
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    let dd = (daily.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n).sqrt();
    ratio_or_sentinel(mean, dd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub max_drawdown: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub cumulative: f64,
    pub trades: usize,
}

/// Summary statistics of a daily percent return series. `trades` is left
/// at zero; [`run_strategy`] fills it in.
pub fn performance_metrics(daily: &[f64]) -> Result<BacktestReport> {
    if daily.len() < 2 {
        return Err(Error::Data(format!("need at least 2 daily returns, got {}", daily.len())));
    }
    Ok(BacktestReport {
        mean: daily.iter().sum::<f64>() / daily.len() as f64,
        min: daily.iter().copied().fold(f64::INFINITY, f64::min),
        max: daily.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_drawdown: max_drawdown(daily)?,
        sharpe: sharpe_ratio(daily),
        sortino: sortino_ratio(daily),
        cumulative: cumulative_return(daily)?,
        trades: 0,
    })
}

/// Day-by-day record of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyLedger {
    pub name: String,
    pub dates: Vec<NaiveDate>,
    pub signals: Vec<Signal>,
    pub gross: Vec<f64>,
    pub deductions: Vec<f64>,
    pub net: Vec<f64>,
    /// Compounded net return to date, percent.
    pub cum: Vec<f64>,
}

impl StrategyLedger {
    pub fn trades(&self) -> usize {
        position_changes(&self.signals).into_iter().filter(|c| *c).count()
    }

    pub fn gross_report(&self) -> Result<BacktestReport> {
        Ok(BacktestReport {
            trades: self.trades(),
            ..performance_metrics(&self.gross)?
        })
    }

    pub fn net_report(&self) -> Result<BacktestReport> {
        Ok(BacktestReport {
            trades: self.trades(),
            ..performance_metrics(&self.net)?
        })
    }

    /// Writes `date,signal,gross,net,cum`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "signal", "gross", "net", "cum"])?;
        for t in 0..self.dates.len() {
            w.write_record([
                self.dates[t].to_string(),
                self.signals[t].to_string(),
                self.gross[t].to_string(),
                self.net[t].to_string(),
                self.cum[t].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_strategy(
    name: impl Into<String>,
    dates: &[NaiveDate],
    signals: &[Signal],
    returns: &[f64],
    spec: &FrictionSpec,
) -> Result<StrategyLedger> {
    if dates.len() != returns.len() {
        return Err(Error::dim("run_strategy", "dates and returns differ in length"));
    }
    if signals.iter().any(|s| s.abs() > 1) {
        return Err(Error::Contract("signals must lie in {-1, 0, 1}".into()));
    }
    let gross = strategy_returns(signals, returns)?;
    let deductions = friction_deductions(signals, spec)?;
    let net: Vec<f64> = gross.iter().zip(&deductions).map(|(g, d)| g - d).collect();
    Ok(StrategyLedger {
        name: name.into(),
        dates: dates.to_vec(),
        signals: signals.to_vec(),
        cum: cumulative_path(&net)?,
        gross,
        deductions,
        net,
    })
}

/// One line of the strategy comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pair: String,
    pub strategy: String,
    pub window: usize,
    pub frictions: bool,
    pub report: BacktestReport,
}

pub const REPORT_HEADER: [&str; 12] = [
    "pair",
    "strategy",
    "window",
    "frictions",
    "Mean Return(%)",
    "Minimum Return(%)",
    "Maximum Return(%)",
    "Max Drawdown(%)",
    "Sharpe Ratio",
    "Sortino Ratio",
    "Cumulative Return(%)",
    "trades",
];

pub fn write_reports<W: std::io::Write>(rows: &[ReportRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.pair.clone(),
            row.strategy.clone(),
            row.window.to_string(),
            row.frictions.to_string(),
            r.mean.to_string(),
            r.min.to_string(),
            r.max.to_string(),
            r.max_drawdown.to_string(),
            r.sharpe.to_string(),
            r.sortino.to_string(),
            r.cumulative.to_string(),
            r.trades.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
