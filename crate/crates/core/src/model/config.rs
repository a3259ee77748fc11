use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the query/key convolutions mix channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QkConv {
    /// Each head's `factor`-wide block is convolved on its own.
    #[default]
    Grouped,
    /// Every output channel sees every input channel.
    Full,
}

/// The full model and the four single-component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoMsc,
    NoSe,
    NoDvs,
    StandardAttention,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoMsc,
        Variant::NoSe,
        Variant::NoDvs,
        Variant::StandardAttention,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMsc => "no-msc",
            Variant::NoSe => "no-se",
            Variant::NoDvs => "no-dvs",
            Variant::StandardAttention => "standard-attention",
        }
    }
}

fn default_kernels() -> [usize; 3] {
    [3, 5, 7]
}
fn default_se_reduction() -> usize {
    4
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of covariates `F`.
    pub n_features: usize,
    /// Look-back window `T`.
    pub window: usize,
    pub heads: usize,
    /// Per-head width; the model width is `heads × factor`.
    pub factor: usize,
    /// Per-variable embedding width; defaults to `factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(default = "default_kernels")]
    pub kernels: [usize; 3],
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "yes")]
    pub use_msc: bool,
    #[serde(default = "yes")]
    pub use_se: bool,
    #[serde(default = "yes")]
    pub use_dvs: bool,
    #[serde(default = "yes")]
    pub trend_attention: bool,
    #[serde(default)]
    pub qk_conv: QkConv,
    /// Dropout between the two feed-forward layers of the decoder.
    #[serde(default)]
    pub ffn_dropout: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(n_features: usize, window: usize, heads: usize, factor: usize) -> Self {
        Self {
            n_features,
            window,
            heads,
            factor,
            embed_dim: None,
            kernels: default_kernels(),
            se_reduction: default_se_reduction(),
            dropout: 0.0,
            use_msc: true,
            use_se: true,
            use_dvs: true,
            trend_attention: true,
            qk_conv: QkConv::Grouped,
            ffn_dropout: false,
            seed: 0,
        }
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.factor
    }

    pub fn d_embed(&self) -> usize {
        self.embed_dim.unwrap_or(self.factor)
    }

    pub fn d_ff(&self) -> usize {
        2 * self.d_model()
    }

    pub fn se_hidden(&self) -> usize {
        self.d_model() / self.se_reduction
    }

    pub fn with_variant(&self, v: Variant) -> Self {
        let mut c = self.clone();
        c.use_msc = true;
        c.use_se = true;
        c.use_dvs = true;
        c.trend_attention = true;
        match v {
            Variant::Full => {}
            Variant::NoMsc => c.use_msc = false,
            Variant::NoSe => c.use_se = false,
            Variant::NoDvs => c.use_dvs = false,
            Variant::StandardAttention => c.trend_attention = false,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_features == 0 || self.window == 0 || self.heads == 0 || self.factor == 0 || self.d_embed() == 0 {
            return bad(format!(
                "F, T, heads, factor and embed_dim must be positive (F={}, T={}, heads={}, factor={}, embed_dim={})",
                self.n_features,
                self.window,
                self.heads,
                self.factor,
                self.d_embed()
            ));
        }
        let [k1, k2, k3] = self.kernels;
        if !(2 <= k1 && k1 < k2 && k2 < k3 && k3 <= 9) {
            return bad(format!("kernel sizes {:?} must satisfy 2 <= k1 < k2 < k3 <= 9", self.kernels));
        }
        if self.se_reduction == 0 || self.se_hidden() < 1 {
            return bad(format!(
                "SE reduction {} leaves no hidden units for width {}",
                self.se_reduction,
                self.d_model()
            ));
        }
        if !(0.0..=0.5).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 0.5]", self.dropout));
        }
        Ok(())
    }
}
