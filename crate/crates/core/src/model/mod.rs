//! The forecasting network and its ablations.
mod config;
pub mod layers;
mod params;

use rand::Rng;

pub use config::{ModelConfig, QkConv, Variant};
pub use layers::Bound;
pub use params::{
    checkpoint_from_str, checkpoint_to_string, init_params, is_active, load_checkpoint, save_checkpoint, ParameterStore,
    CHECKPOINT_VERSION,
};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[B]`
    pub prediction: Var,
    /// `[B, T, F]`
    pub omega: Var,
}

/// Plain-value result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub predictions: Vec<f64>,
    /// Variable weights `[B, T, F]`.
    pub omega: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let expected = init_params(&config)?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                other => {
                    return Err(Error::dim(
                        "model",
                        format!("parameter {name}: expected {:?}, got {:?}", t.shape(), other.map(Tensor::shape)),
                    ))
                }
            }
        }
        if params.len() != expected.len() {
            return Err(Error::dim("model", "unexpected extra parameters"));
        }
        Ok(Self { config, params })
    }

    /// Places every weight array on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let mut b = Bound::default();
        for (name, t) in self.params.iter() {
            b.insert(name, g.param(t.clone()));
        }
        b
    }

    /// Full forward pass on `x[B, T, F]`. `rng = None` runs in evaluation
    /// mode (dropout off).
    pub fn forward<R: Rng + ?Sized>(&self, g: &mut Graph, p: &Bound, x: Var, mut rng: Option<&mut R>) -> Result<ForwardVars> {
        let c = &self.config;
        let s = g.shape(x);
        if s.len() != 3 || s[1] != c.window || s[2] != c.n_features {
            return Err(Error::dim(
                "model",
                format!("input {s:?}, expected [B, {}, {}]", c.window, c.n_features),
            ));
        }
        let (e, omega) = layers::dvs_forward(g, p, c, x)?;
        let h = layers::msc_forward(g, p, c, e, rng.as_deref_mut())?;
        let h = layers::se_forward(g, p, c, h)?;
        let a = if c.trend_attention {
            layers::trend_attention_forward(g, p, c, h, rng.as_deref_mut())?
        } else {
            layers::standard_attention_forward(g, p, c, h, rng.as_deref_mut())?
        };
        let prediction = layers::decoder_forward(g, p, c, a.output, rng)?;
        Ok(ForwardVars { prediction, omega })
    }

    /// Evaluation-mode forward pass on a fresh graph.
    pub fn predict(&self, inputs: &Tensor) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let p = self.bind_constants(&mut g);
        let x = g.constant(inputs.clone());
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, &p, x, None)?;
        let predictions = g.value(out.prediction).data().to_vec();
        if predictions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                op: "model",
                detail: "non-finite prediction".into(),
            });
        }
        Ok(ForwardTrace {
            predictions,
            omega: g.value(out.omega).clone(),
        })
    }

    fn bind_constants(&self, g: &mut Graph) -> Bound {
        let mut b = Bound::default();
        for (name, t) in self.params.iter() {
            b.insert(name, g.constant(t.clone()));
        }
        b
    }

    /// Number of scalars the forward pass actually reads.
    pub fn trainable_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| is_active(&self.config, n))
            .map(|(_, t)| t.len())
            .sum()
    }
}
