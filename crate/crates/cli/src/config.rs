//! TOML run configuration.
use std::fs;
use std::path::{Path, PathBuf};

use exformer_core::backtest::{FrictionSpec, ThresholdMode};
use exformer_core::interpret::Aggregation;
use exformer_core::model::{ModelConfig, QkConv, Variant};
use exformer_core::train::TrainConfig;
use exformer_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Look-back lengths the shipped configs were tuned for.
pub const TUNED_WINDOWS: [usize; 5] = [5, 10, 15, 20, 30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_pair")]
    pub pair: String,
    /// Root seed. Model initialization uses it directly, batch shuffling and
    /// dropout use `seed + 1`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default)]
    pub backtest: BacktestSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

fn default_pair() -> String {
    "SYN".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Series manifest, relative to the config file.
    pub manifest: PathBuf,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
}

fn default_train_frac() -> f64 {
    0.8
}
fn default_val_frac() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub window: usize,
    pub heads: usize,
    pub factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(default = "default_kernels")]
    pub kernels: [usize; 3],
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub qk_conv: QkConv,
    #[serde(default)]
    pub ffn_dropout: bool,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_kernels() -> [usize; 3] {
    [3, 5, 7]
}
fn default_se_reduction() -> usize {
    4
}
fn default_variant() -> Variant {
    Variant::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

fn default_batch() -> usize {
    64
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    20
}
fn default_min_delta() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    #[serde(default = "default_cost")]
    pub cost_bps: f64,
    #[serde(default = "default_slippage")]
    pub slippage_bps: f64,
    #[serde(default = "default_regime_window")]
    pub vol_window: usize,
    #[serde(default = "default_regime_window")]
    pub trend_window: usize,
    #[serde(default)]
    pub thresholds: ThresholdMode,
    /// Benchmark strategies to run next to the model: any of rw, bh, ma.
    #[serde(default = "default_benchmarks")]
    pub benchmarks: Vec<String>,
}

fn default_cost() -> f64 {
    5.0
}
fn default_slippage() -> f64 {
    2.0
}
fn default_regime_window() -> usize {
    20
}
fn default_benchmarks() -> Vec<String> {
    vec!["rw".into(), "bh".into(), "ma".into()]
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            cost_bps: default_cost(),
            slippage_bps: default_slippage(),
            vol_window: default_regime_window(),
            trend_window: default_regime_window(),
            thresholds: ThresholdMode::Full,
            benchmarks: default_benchmarks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { variants: all_variants() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSection {
    #[serde(default)]
    pub aggregation: Aggregation,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub friction_bps: Option<f64>,
    pub slippage_bps: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))
    }

    /// Reads a config file; relative data paths resolve against its folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.data.manifest.is_relative() {
            cfg.data.manifest = base.join(&cfg.data.manifest);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.window {
            self.model.window = w;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
        if let Some(c) = o.friction_bps {
            self.backtest.cost_bps = c;
        }
        if let Some(s) = o.slippage_bps {
            self.backtest.slippage_bps = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        self.friction().validate()?;
        self.train_config().validate()?;
        for b in &self.backtest.benchmarks {
            if !["rw", "bh", "ma"].contains(&b.as_str()) {
                return Err(Error::Config(format!("unknown benchmark strategy {b:?}")));
            }
        }
        if self.ablate.variants.is_empty() {
            return Err(Error::Config("ablation needs at least one variant".into()));
        }
        Ok(())
    }

    /// Warning text for look-back lengths outside the tuned set.
    pub fn window_warning(&self) -> Option<String> {
        (!TUNED_WINDOWS.contains(&self.model.window)).then(|| {
            format!(
                "window {} is outside the tuned set {:?}; hyperparameters may not transfer",
                self.model.window, TUNED_WINDOWS
            )
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn model_seed(&self) -> u64 {
        self.seed
    }

    pub fn train_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn model_config(&self, n_features: usize, variant: Variant) -> Result<ModelConfig> {
        let m = &self.model;
        let mut c = ModelConfig::new(n_features, m.window, m.heads, m.factor);
        c.embed_dim = m.embed_dim;
        c.kernels = m.kernels;
        c.se_reduction = m.se_reduction;
        c.dropout = m.dropout;
        c.qk_conv = m.qk_conv;
        c.ffn_dropout = m.ffn_dropout;
        c.seed = self.model_seed();
        let c = c.with_variant(variant);
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let mut tc = TrainConfig::new(t.learning_rate);
        tc.batch_size = t.batch_size;
        tc.max_epochs = t.max_epochs;
        tc.patience = t.patience;
        tc.min_delta = t.min_delta;
        tc.grad_clip = t.grad_clip;
        tc.seed = self.train_seed();
        tc
    }

    pub fn friction(&self) -> FrictionSpec {
        FrictionSpec {
            cost_bps: self.backtest.cost_bps,
            slippage_bps: self.backtest.slippage_bps,
        }
    }
}
