//! Seeded smooth decoder-only transformer.
//!
//! Pre-norm residual blocks with single-head causal attention and a
//! two-matrix MLP. Two projections per layer accept LoRA adapters: the
//! attention output projection `W_O` and the MLP down projection `W_down`.

mod forward;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{random_matrix, Matrix, SeededRng, Vector};

pub use forward::{forward, jvp_from_site, logit, propagate_from_site, ActivationTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
    GeluTanh,
    /// Linear-chain fixture only.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[serde(rename = "rmsnorm")]
    RmsNorm,
    /// Linear-chain fixture only.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub seq_capacity: usize,
    pub activation: Activation,
    pub norm: NormKind,
    pub init_scale: f64,
    #[serde(with = "seed_repr")]
    pub seed: u64,
}

/// Seeds above `i64::MAX` are written as decimal strings, since TOML
/// integers are signed 64-bit.
pub(crate) mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}

impl ModelConfig {
    /// Four layers, width 32, MLP width 64, vocabulary 50, tanh-GELU, seed 7.
    pub fn reference() -> Self {
        Self {
            n_layers: 4,
            d_model: 32,
            d_ff: 64,
            vocab: 50,
            seq_capacity: 16,
            activation: Activation::GeluTanh,
            norm: NormKind::RmsNorm,
            init_scale: 1.0,
            seed: 7,
        }
    }

    /// Same dimensions as `self` with identity activation and no
    /// normalisation. On single-token inputs every site-to-readout map of
    /// this model is linear.
    pub fn linear_chain(mut self) -> Self {
        self.activation = Activation::Identity;
        self.norm = NormKind::Identity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("seq_capacity", self.seq_capacity),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale", "must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    AttnOut,
    MlpDown,
}

impl Slot {
    pub const ALL: [Slot; 2] = [Slot::AttnOut, Slot::MlpDown];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::AttnOut => "attn_out",
            Slot::MlpDown => "mlp_down",
        }
    }
}

impl FromStr for Slot {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attn_out" => Ok(Slot::AttnOut),
            "mlp_down" => Ok(Slot::MlpDown),
            other => Err(Error::Input(format!("unknown slot `{other}`"))),
        }
    }
}

/// A LoRA-attachable linear map: layer index plus projection slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId {
    pub layer: usize,
    pub slot: Slot,
}

impl SiteId {
    pub fn new(layer: usize, slot: Slot) -> Self {
        Self { layer, slot }
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.layer, self.slot.as_str())
    }
}

impl FromStr for SiteId {
    type Err = Error;
    /// Parses `L<layer>.<slot>`, e.g. `L2.mlp_down`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Input(format!("malformed site `{s}`, expected L<layer>.<slot>"));
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let (layer, slot) = rest.split_once('.').ok_or_else(bad)?;
        Ok(SiteId::new(layer.parse().map_err(|_| bad())?, slot.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub w_up: Matrix,
    pub w_down: Matrix,
}

impl LayerWeights {
    pub fn site_weight(&self, slot: Slot) -> &Matrix {
        match slot {
            Slot::AttnOut => &self.w_o,
            Slot::MlpDown => &self.w_down,
        }
    }

    fn site_weight_mut(&mut self, slot: Slot) -> &mut Matrix {
        match slot {
            Slot::AttnOut => &mut self.w_o,
            Slot::MlpDown => &mut self.w_down,
        }
    }
}

/// Frozen base weights. Construction validates every shape; the weights
/// cannot be changed afterwards (see [`TransformerModel::with_site_weights`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: ModelConfig,
    embedding: Matrix,
    layers: Vec<LayerWeights>,
    final_gain: Vector,
    unembedding: Matrix,
    digest: [u8; 32],
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            "model weights",
            format!("{name} {}", m.shape_str()),
            format!("{rows}x{cols}"),
        ));
    }
    Ok(())
}

impl TransformerModel {
    pub fn from_parts(
        config: ModelConfig,
        embedding: Matrix,
        layers: Vec<LayerWeights>,
        final_gain: Vector,
        unembedding: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab);
        if layers.len() != config.n_layers {
            return Err(Error::dim(
                "model weights",
                format!("{} layers", layers.len()),
                format!("{} layers", config.n_layers),
            ));
        }
        expect_shape("embedding", &embedding, v, d)?;
        expect_shape("unembedding", &unembedding, v, d)?;
        if final_gain.dim() != d {
            return Err(Error::dim(
                "model weights",
                format!("final_gain {}", final_gain.dim()),
                d.to_string(),
            ));
        }
        for lw in &layers {
            expect_shape("w_q", &lw.w_q, d, d)?;
            expect_shape("w_k", &lw.w_k, d, d)?;
            expect_shape("w_v", &lw.w_v, d, d)?;
            expect_shape("w_o", &lw.w_o, d, d)?;
            expect_shape("w_up", &lw.w_up, f, d)?;
            expect_shape("w_down", &lw.w_down, d, f)?;
        }
        let mut model = Self {
            config,
            embedding,
            layers,
            final_gain,
            unembedding,
            digest: [0; 32],
        };
        model.digest = model.compute_digest();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerWeights {
        &self.layers[l]
    }

    pub fn final_gain(&self) -> &Vector {
        &self.final_gain
    }

    pub fn unembedding(&self) -> &Matrix {
        &self.unembedding
    }

    /// Row `y` of the unembedding.
    pub fn unembedding_row(&self, y: usize) -> Result<Vector> {
        self.check_token(y)?;
        Vector::new(self.unembedding.row(y).to_vec())
    }

    pub(crate) fn check_token(&self, y: usize) -> Result<()> {
        if y >= self.config.vocab {
            return Err(Error::Input(format!(
                "token id {y} out of range for vocab {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    /// Every site the model exposes, in layer-then-slot order.
    pub fn sites(&self) -> Vec<SiteId> {
        (0..self.config.n_layers)
            .flat_map(|l| Slot::ALL.into_iter().map(move |s| SiteId::new(l, s)))
            .collect()
    }

    pub fn check_site(&self, site: SiteId) -> Result<()> {
        if site.layer >= self.config.n_layers {
            return Err(Error::Site {
                site: site.to_string(),
                reason: format!("model has {} layers", self.config.n_layers),
            });
        }
        Ok(())
    }

    /// `(d_out, d_in)` of the weight at `site`.
    pub fn site_shape(&self, site: SiteId) -> Result<(usize, usize)> {
        self.check_site(site)?;
        Ok(self.layers[site.layer].site_weight(site.slot).shape())
    }

    pub fn site_weight(&self, site: SiteId) -> Result<&Matrix> {
        self.check_site(site)?;
        Ok(self.layers[site.layer].site_weight(site.slot))
    }

    /// A new model with the given site weights replaced; `self` is untouched.
    pub fn with_site_weights(&self, replacements: Vec<(SiteId, Matrix)>) -> Result<Self> {
        let mut next = self.clone();
        for (site, w) in replacements {
            let want = self.site_shape(site)?;
            if w.shape() != want {
                return Err(Error::Site {
                    site: site.to_string(),
                    reason: format!("weight shape {} != {}x{}", w.shape_str(), want.0, want.1),
                });
            }
            *next.layers[site.layer].site_weight_mut(site.slot) = w;
        }
        next.digest = next.compute_digest();
        Ok(next)
    }

    /// SHA-256 over the configuration and the bit patterns of every weight.
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn compute_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.config).as_bytes());
        let mut feed = |xs: &[f64]| {
            for x in xs {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        feed(self.embedding.data());
        for lw in &self.layers {
            for m in [&lw.w_q, &lw.w_k, &lw.w_v, &lw.w_o, &lw.w_up, &lw.w_down] {
                feed(m.data());
            }
        }
        feed(self.final_gain.as_slice());
        feed(self.unembedding.data());
        h.finalize().into()
    }
}

/// Draws every weight from one seeded stream, in this order: embedding, then
/// per layer `W_Q, W_K, W_V, W_O, W_up, W_down`, then the final-norm gain,
/// then the unembedding.
///
/// Projections are scaled by `init_scale / sqrt(fan_in)`; the final gain is
/// `1 + 0.1 * N(0, 1)` per coordinate.
pub fn build_model(config: &ModelConfig) -> Result<TransformerModel> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab);
    let s = config.init_scale;
    let by_fan_in = |fan_in: usize| s / (fan_in as f64).sqrt();

    let embedding = random_matrix(&mut rng, v, d, s);
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            w_q: random_matrix(&mut rng, d, d, by_fan_in(d)),
            w_k: random_matrix(&mut rng, d, d, by_fan_in(d)),
            w_v: random_matrix(&mut rng, d, d, by_fan_in(d)),
            w_o: random_matrix(&mut rng, d, d, by_fan_in(d)),
            w_up: random_matrix(&mut rng, f, d, by_fan_in(d)),
            w_down: random_matrix(&mut rng, d, f, by_fan_in(f)),
        })
        .collect();
    let gain: Vec<f64> = (0..d).map(|_| 1.0 + 0.1 * rng.next_gaussian()).collect();
    let unembedding = random_matrix(&mut rng, v, d, by_fan_in(d));
    TransformerModel::from_parts(config.clone(), embedding, layers, Vector::new(gain)?, unembedding)
}
