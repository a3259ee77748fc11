use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, QkConv};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named weight arrays in a fixed enumeration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }
}

/// Whether a weight array is read by the forward pass of `config`.
pub fn is_active(config: &ModelConfig, name: &str) -> bool {
    !(name.starts_with("dvs.score_") && !config.use_dvs)
}

struct Init {
    rng: ChaCha8Rng,
    store: ParameterStore,
}

impl Init {
    fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data).expect("shape matches"));
    }

    fn bias(&mut self, name: &str, shape: &[usize]) {
        self.store.insert(name, Tensor::zeros(shape));
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.weight(&format!("{prefix}_w"), &[d_in, d_out], d_in);
        self.bias(&format!("{prefix}_b"), &[d_out]);
    }
}

/// Draws every array of `config` from `U(±√(1/fan_in))` with zero biases.
/// Scoring weights are always created so checkpoints of ablations share
/// a layout with the full model.
pub fn init_params(config: &ModelConfig) -> Result<ParameterStore> {
    config.validate()?;
    let (f, de, d) = (config.n_features, config.d_embed(), config.d_model());
    let mut it = Init {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        store: ParameterStore::new(),
    };
    // each variable embeds a scalar, so the fan-in is 1
    it.weight("dvs.embed_w", &[f, de], 1);
    it.bias("dvs.embed_b", &[f, de]);
    it.linear("dvs.score", de, 1);

    if config.use_msc {
        for (j, &k) in config.kernels.iter().enumerate() {
            it.weight(&format!("msc.conv{j}.w"), &[d, f * de, k], f * de * k);
            it.bias(&format!("msc.conv{j}.b"), &[d]);
        }
        it.linear("msc.proj", 3 * d, d);
    } else {
        it.linear("msc.linear", f * de, d);
    }

    if config.use_se {
        let h = config.se_hidden();
        it.weight("se.w1", &[d, h], d);
        it.weight("se.w2", &[h, d], h);
    }

    if config.trend_attention {
        let cin = match config.qk_conv {
            QkConv::Grouped => config.factor,
            QkConv::Full => d,
        };
        for (j, &k) in config.kernels.iter().enumerate() {
            for qk in ["q", "k"] {
                it.weight(&format!("attn.{qk}{j}.w"), &[d, cin, k], cin * k);
                it.bias(&format!("attn.{qk}{j}.b"), &[d]);
            }
        }
        it.linear("attn.v", d, d);
        it.linear("attn.fuse", 3 * d, d);
    } else {
        for p in ["q", "k", "v", "out"] {
            it.linear(&format!("attn.{p}"), d, d);
        }
    }

    let dff = config.d_ff();
    it.linear("ffn.l1", d, dff);
    it.linear("ffn.l2", dff, d);

    for g in ["z", "r", "h"] {
        it.weight(&format!("gru.w_{g}"), &[d, d], d);
        it.weight(&format!("gru.u_{g}"), &[d, d], d);
        it.bias(&format!("gru.b_{g}"), &[d]);
    }

    it.linear("head", d, 1);
    Ok(it.store)
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    params: Vec<ParamRecord>,
}

pub fn checkpoint_to_string(config: &ModelConfig, params: &ParameterStore) -> String {
    let ck = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        params: params
            .iter()
            .map(|(n, t)| ParamRecord {
                name: n.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&ck).expect("checkpoint serializes")
}

pub fn checkpoint_from_str(text: &str, origin: &Path) -> Result<(ModelConfig, ParameterStore)> {
    let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(Error::parse(origin, format!("unsupported checkpoint version {}", ck.format_version)));
    }
    ck.config.validate()?;
    let expected = init_params(&ck.config)?;
    let mut store = ParameterStore::new();
    for rec in ck.params {
        let t = Tensor::new(rec.shape, rec.values).map_err(|e| Error::parse(origin, format!("{}: {e}", rec.name)))?;
        match expected.get(&rec.name) {
            Some(e) if e.shape() == t.shape() => store.insert(rec.name, t),
            _ => {
                return Err(Error::parse(
                    origin,
                    format!("parameter {} {:?} does not fit the stored config", rec.name, t.shape()),
                ))
            }
        }
    }
    if store.len() != expected.len() || !store.names().eq(expected.names()) {
        return Err(Error::parse(origin, "checkpoint parameter list does not match its config"));
    }
    Ok((ck.config, store))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ParameterStore) -> Result<()> {
    fs::write(path, checkpoint_to_string(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParameterStore)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}
