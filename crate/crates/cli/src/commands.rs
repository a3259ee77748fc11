use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use exformer_core::backtest::{
    benchmark_signals, regime_partition, run_strategy, signal_from_forecast, stratified_da, write_regime_da, write_reports,
    ReportRow, Signal,
};
use exformer_core::data::synth::{generate, SynthSpec};
use exformer_core::data::{chronological_split_with, fit_apply_standardizer, load_panel, window_targets, PanelDataset, Subset};
use exformer_core::eval::{evaluate, random_walk_row, write_results, EvalRow, ForecastSet};
use exformer_core::interpret::{explain_subset, write_global, Aggregation};
use exformer_core::model::{load_checkpoint, save_checkpoint, Model, Variant};
use exformer_core::train::{predict_subset, train_with, TrainReport};
use exformer_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Replaces the model's forecasts with a known series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Inject {
    /// The realized returns themselves.
    Perfect,
    /// Identically zero.
    Zero,
}

const MODEL_LABEL: &str = "exformer";

/// A loaded config with its standardized panel.
pub struct Prepared {
    pub cfg: RunConfig,
    pub panel: PanelDataset,
    pub out: PathBuf,
}

pub fn prepare(cfg: RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    if let Some(w) = cfg.window_warning() {
        eprintln!("warning: {w}");
    }
    let raw = load_panel(&cfg.data.manifest)?;
    let split = chronological_split_with(raw.len(), cfg.data.train_frac, cfg.data.val_frac)?;
    let panel = fit_apply_standardizer(&raw.with_split(split)?)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    Ok(Prepared { cfg, panel, out })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> csv::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    f(&mut w).map_err(|e| io(std::io::Error::other(e)))?;
    w.flush().map_err(io)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Records how an output directory was produced. No timings or host
/// details, so reruns are byte-identical.
fn write_run_manifest(p: &Prepared, command: &str, extra: Value) -> Result<()> {
    let mut v = json!({
        "command": command,
        "seed": p.cfg.seed,
        "model_seed": p.cfg.model_seed(),
        "train_seed": p.cfg.train_seed(),
        "pair": p.cfg.pair,
        "rows": p.panel.len(),
        "split": { "train_end": p.panel.split.train_end, "val_end": p.panel.split.val_end },
        "config": p.cfg,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    write_json(&p.out.join(format!("run_{command}.json")), &v)
}

pub fn checkpoint_path(p: &Prepared, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| p.out.join("checkpoint.json"), Path::to_path_buf)
}

/// Loads a checkpoint and checks it fits the configured data and window.
pub fn load_model(p: &Prepared, path: &Path) -> Result<Model> {
    let (config, params) = load_checkpoint(path)?;
    if config.n_features != p.panel.n_covariates() || config.window != p.cfg.model.window {
        return Err(Error::Dimension {
            op: "checkpoint",
            detail: format!(
                "{} was trained with {} covariates and window {}, the run has {} and {}",
                path.display(),
                config.n_features,
                config.window,
                p.panel.n_covariates(),
                p.cfg.model.window
            ),
        });
    }
    Model::from_parts(config, params)
}

fn fit(p: &Prepared, variant: Variant) -> Result<(Model, TrainReport)> {
    let init = Model::new(p.cfg.model_config(p.panel.n_covariates(), variant)?)?;
    let tag = variant.label();
    train_with(&init, &p.panel, &p.cfg.train_config(), |e| {
        eprintln!("[{tag}] epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_mse, e.val_mse);
    })
}

pub fn cmd_train(p: &Prepared) -> Result<String> {
    let (model, report) = fit(p, p.cfg.model.variant)?;
    let ckpt = p.out.join("checkpoint.json");
    save_checkpoint(&ckpt, &model.config, &model.params)?;
    write_with(&p.out.join("train_log.csv"), |w| report.write_log(w))?;
    write_run_manifest(
        p,
        "train",
        json!({
            "variant": p.cfg.model.variant,
            "parameters": model.trainable_param_count(),
            "epochs": report.epochs.len(),
            "best_epoch": report.best_epoch,
            "best_val_mse": report.best_val_mse,
            "stopped_early": report.stopped_early,
        }),
    )?;
    let secs: f64 = report.seconds_per_epoch.iter().sum::<f64>() / report.seconds_per_epoch.len().max(1) as f64;
    Ok(format!(
        "trained {} parameters for {} epochs ({secs:.2} s/epoch); best epoch {} with validation MSE {:.6}; checkpoint {}",
        model.trainable_param_count(),
        report.epochs.len(),
        report.best_epoch,
        report.best_val_mse,
        ckpt.display()
    ))
}

/// Test-window forecasts in percent, with their panel rows.
pub fn test_forecasts(p: &Prepared, model: Option<&Model>, inject: Option<Inject>) -> Result<(Vec<usize>, ForecastSet)> {
    let window = p.cfg.model.window;
    let batch = p.cfg.train.batch_size;
    match (inject, model) {
        (Some(kind), _) => {
            let origins = window_targets(&p.panel, window, Subset::Test)?;
            let realized: Vec<f64> = origins.iter().map(|&j| p.panel.raw_target(j)).collect();
            let (label, model) = match kind {
                Inject::Perfect => ("perfect", realized.clone()),
                Inject::Zero => ("zero", vec![0.0; realized.len()]),
            };
            let fs = ForecastSet::new(
                origins.iter().map(|&j| p.panel.dates[j]).collect(),
                realized,
                model,
                origins.iter().map(|&j| p.panel.raw_target(j - 1)).collect(),
                label,
                window,
            )?;
            Ok((origins, fs))
        }
        (None, Some(m)) => {
            let (origins, preds) = predict_subset(m, &p.panel, Subset::Test, batch)?;
            let fs = ForecastSet::from_predictions(&p.panel, &origins, &preds, MODEL_LABEL, window)?;
            Ok((origins, fs))
        }
        (None, None) => Err(Error::Contract("forecasts need a model or an injection mode".into())),
    }
}

fn model_for(p: &Prepared, checkpoint: Option<&Path>, inject: Option<Inject>) -> Result<Option<Model>> {
    match inject {
        Some(_) => Ok(None),
        None => load_model(p, &checkpoint_path(p, checkpoint)).map(Some),
    }
}

pub fn cmd_evaluate(p: &Prepared, checkpoint: Option<&Path>, inject: Option<Inject>) -> Result<String> {
    let model = model_for(p, checkpoint, inject)?;
    let (_, fs) = test_forecasts(p, model.as_ref(), inject)?;
    let row = evaluate(&fs, &p.cfg.pair, None)?;
    let rw = random_walk_row(&fs, &p.cfg.pair)?;
    write_with(&p.out.join("results.csv"), |w| write_results(&[row.clone(), rw.clone()], w))?;
    write_with(&p.out.join("forecasts.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["date", "realized", "forecast", "rw_signal"])?;
        for (t, d) in fs.dates.iter().enumerate() {
            c.write_record([d.to_string(), fs.realized[t].to_string(), fs.model[t].to_string(), fs.rw_direction()[t].to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_run_manifest(p, "evaluate", json!({ "forecasts": fs.label, "test_days": fs.len() }))?;
    Ok(format!(
        "{} on {} test days: MSFE ratio {:.3}, CW t {:.3} (p {:.4}), DA {:.3} vs RW {:.3}, BH t {:.3} (p {:.4})",
        fs.label, fs.len(), row.msfe_ratio, row.cw_t, row.cw_p, row.da, rw.da, row.bh_t, row.bh_p
    ))
}

pub fn cmd_backtest(p: &Prepared, checkpoint: Option<&Path>, inject: Option<Inject>) -> Result<String> {
    let model = model_for(p, checkpoint, inject)?;
    let (origins, fs) = test_forecasts(p, model.as_ref(), inject)?;
    // benchmarks see the whole history, so they are live from the first test day
    let history: Vec<f64> = (0..p.panel.len()).map(|j| p.panel.raw_target(j)).collect();
    let bench = benchmark_signals(&history);
    let slice = |s: &[Signal]| origins.iter().map(|&j| s[j]).collect::<Vec<Signal>>();

    let mut strategies: Vec<(String, Vec<Signal>)> = vec![(fs.label.clone(), signal_from_forecast(&fs.model))];
    for b in &p.cfg.backtest.benchmarks {
        let s = match b.as_str() {
            "rw" => &bench.rw,
            "bh" => &bench.bh,
            _ => &bench.ma,
        };
        strategies.push((b.clone(), slice(s)));
    }

    let spec = p.cfg.friction();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, signals) in &strategies {
        let ledger = run_strategy(name.clone(), &fs.dates, signals, &fs.realized, &spec)?;
        write_with(&p.out.join(format!("ledger_{name}.csv")), |w| ledger.write_csv(w))?;
        let (gross, net) = (ledger.gross_report()?, ledger.net_report()?);
        summary.push(format!("{name}: {:.3}% gross, {:.3}% net, {} trades", gross.cumulative, net.cumulative, net.trades));
        for (frictions, report) in [(false, gross), (true, net)] {
            rows.push(ReportRow {
                pair: p.cfg.pair.clone(),
                strategy: name.clone(),
                window: fs.window,
                frictions,
                report,
            });
        }
    }
    write_with(&p.out.join("backtest_report.csv"), |w| write_reports(&rows, w))?;

    let bt = &p.cfg.backtest;
    let partition = regime_partition(&fs.realized, bt.vol_window, bt.trend_window, bt.thresholds)?;
    let forecasts: Vec<(String, Vec<f64>)> = std::iter::once((fs.label.clone(), fs.model.clone()))
        .chain(strategies[1..].iter().map(|(n, s)| (n.clone(), s.iter().map(|v| f64::from(*v)).collect())))
        .collect();
    let da = stratified_da(&fs.realized, &forecasts, &partition)?;
    write_with(&p.out.join("regime_da.csv"), |w| write_regime_da(&da, w))?;
    let cuts = partition.thresholds.iter().flatten().last().copied();
    write_run_manifest(
        p,
        "backtest",
        json!({
            "forecasts": fs.label,
            "test_days": fs.len(),
            "friction": spec,
            "volatility_cuts": cuts.map(|(a, b)| [a, b]),
        }),
    )?;
    Ok(summary.join("\n"))
}

#[derive(Debug, Clone, Serialize)]
struct AblationRow {
    variant: String,
    parameters: usize,
    best_epoch: usize,
    msfe_ratio: f64,
    cw_t: f64,
    cw_p: f64,
    da: f64,
    bh_t: f64,
    bh_p: f64,
}

impl AblationRow {
    fn from_eval(variant: &str, parameters: usize, best_epoch: usize, r: &EvalRow) -> Self {
        Self {
            variant: variant.into(),
            parameters,
            best_epoch,
            msfe_ratio: r.msfe_ratio,
            cw_t: r.cw_t,
            cw_p: r.cw_p,
            da: r.da,
            bh_t: r.bh_t,
            bh_p: r.bh_p,
        }
    }
}

pub fn cmd_ablate(p: &Prepared) -> Result<String> {
    let mut rows = Vec::new();
    let mut rw = None;
    for &v in &p.cfg.ablate.variants {
        let (model, report) = fit(p, v)?;
        let (_, fs) = test_forecasts(p, Some(&model), None)?;
        let eval = evaluate(&fs, &p.cfg.pair, None)?;
        rows.push(AblationRow::from_eval(v.label(), model.trainable_param_count(), report.best_epoch, &eval));
        let m = explain_subset(&model, &p.panel, Subset::Test, p.cfg.train.batch_size, p.cfg.explain.aggregation)?;
        let global = m.global()?;
        write_with(&p.out.join(format!("importance_{}.csv", v.label())), |w| write_global(&global, w))?;
        rw.get_or_insert(random_walk_row(&fs, &p.cfg.pair)?);
    }
    if let Some(r) = &rw {
        rows.push(AblationRow::from_eval("rw", 0, 0, r));
    }
    write_with(&p.out.join("ablation.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in &rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_run_manifest(p, "ablate", json!({ "variants": p.cfg.ablate.variants }))?;
    Ok(rows
        .iter()
        .map(|r| format!("{:<20} {:>8} params  DA {:.3}  BH t {:.3}", r.variant, r.parameters, r.da, r.bh_t))
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn cmd_explain(p: &Prepared, checkpoint: Option<&Path>, aggregation: Option<Aggregation>) -> Result<String> {
    let model = load_model(p, &checkpoint_path(p, checkpoint))?;
    let agg = aggregation.unwrap_or(p.cfg.explain.aggregation);
    let m = explain_subset(&model, &p.panel, Subset::Test, p.cfg.train.batch_size, agg)?;
    let global = m.global()?;
    write_with(&p.out.join("importance_matrix.csv"), |w| m.write_csv(w))?;
    write_with(&p.out.join("global_importance.csv"), |w| write_global(&global, w))?;
    write_run_manifest(p, "explain", json!({ "aggregation": agg, "dates": m.dates.len() }))?;
    let mut ranked = global;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked.iter().map(|(n, v)| format!("{n:<16} {v:>7.3}%")).collect::<Vec<_>>().join("\n"))
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<String> {
    let data = generate(spec)?;
    let manifest = data.write_dir(spec, out)?;
    write_json(&out.join("synth_spec.json"), &serde_json::to_value(spec).expect("spec serializes"))?;
    Ok(format!(
        "wrote {} returns for the target and {} covariates to {}",
        spec.n,
        manifest.covariates.len(),
        out.display()
    ))
}
