//! Experiment configuration: one TOML file fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::validate_grid;
use crate::error::{Error, Result};
use crate::linalg::SeededRng;
use crate::lora::{random_lora, LoraSet};
use crate::model::ModelConfig;
use crate::model::{SiteId, Slot, TransformerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub layer: usize,
    pub slot: Slot,
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    pub scale: f64,
}

/// A single token id or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Targets {
    One(usize),
    Many(Vec<usize>),
}

impl Default for Targets {
    fn default() -> Self {
        Targets::Many(Vec::new())
    }
}

impl Targets {
    pub fn ids(&self) -> Vec<usize> {
        match self {
            Targets::One(y) => vec![*y],
            Targets::Many(ys) => ys.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub formats: Vec<ReportFormat>,
}

fn default_epsilon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub adapters: Vec<AdapterSpec>,
    pub tokens: Vec<usize>,
    #[serde(default)]
    pub y: Targets,
    #[serde(default)]
    pub y_doc: Option<usize>,
    #[serde(default)]
    pub y_pre: Option<usize>,
    /// Global LoRA scale for `analyze` and `margin`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub eps_grid: Vec<f64>,
    /// Where and how to write; not echoed into reports.
    #[serde(default, skip_serializing)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.message().trim().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every field against the model dimensions.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let m = &self.model;
        if self.tokens.is_empty() || self.tokens.len() > m.seq_capacity {
            return Err(Error::config(
                "tokens",
                format!("length {} outside 1..={}", self.tokens.len(), m.seq_capacity),
            ));
        }
        if let Some(t) = self.tokens.iter().find(|&&t| t >= m.vocab) {
            return Err(Error::config("tokens", format!("id {t} >= vocab {}", m.vocab)));
        }
        for (i, y) in self.y.ids().into_iter().enumerate() {
            if y >= m.vocab {
                return Err(Error::config(format!("y[{i}]"), format!("id {y} >= vocab {}", m.vocab)));
            }
        }
        for (name, y) in [("y_doc", self.y_doc), ("y_pre", self.y_pre)] {
            if let Some(y) = y.filter(|&y| y >= m.vocab) {
                return Err(Error::config(name, format!("id {y} >= vocab {}", m.vocab)));
            }
        }
        if !self.epsilon.is_finite() {
            return Err(Error::config("epsilon", "must be finite"));
        }
        let mut seen = Vec::new();
        for (i, a) in self.adapters.iter().enumerate() {
            let field = |f: &str| format!("adapters[{i}].{f}");
            if a.layer >= m.n_layers {
                return Err(Error::config(
                    field("layer"),
                    format!("{} >= n_layers {}", a.layer, m.n_layers),
                ));
            }
            if a.rank == 0 {
                return Err(Error::config(field("rank"), "must be at least 1"));
            }
            if !(a.scale > 0.0 && a.scale.is_finite()) {
                return Err(Error::config(field("scale"), "must be positive and finite"));
            }
            if !a.alpha.is_finite() {
                return Err(Error::config(field("alpha"), "must be finite"));
            }
            let site = SiteId::new(a.layer, a.slot);
            if seen.contains(&site) {
                return Err(Error::config(field("slot"), format!("second adapter on {site}")));
            }
            seen.push(site);
        }
        Ok(())
    }

    pub fn require_targets(&self) -> Result<Vec<usize>> {
        let ys = self.y.ids();
        if ys.is_empty() {
            return Err(Error::config("y", "missing; at least one target token is required"));
        }
        Ok(ys)
    }

    pub fn require_margin_pair(&self) -> Result<(usize, usize)> {
        let doc = self.y_doc.ok_or_else(|| Error::config("y_doc", "missing"))?;
        let pre = self.y_pre.ok_or_else(|| Error::config("y_pre", "missing"))?;
        if doc == pre {
            return Err(Error::config("y_pre", format!("must differ from y_doc (both {doc})")));
        }
        Ok((doc, pre))
    }

    pub fn require_grid(&self) -> Result<&[f64]> {
        validate_grid(&self.eps_grid).map_err(|e| Error::config("eps_grid", e.to_string()))?;
        Ok(&self.eps_grid)
    }

    /// Adapters drawn from their own seeds, at global scale 1.
    pub fn build_adapters(&self, model: &TransformerModel) -> Result<LoraSet> {
        let adapters = self
            .adapters
            .iter()
            .map(|a| {
                let mut rng = SeededRng::new(a.seed);
                random_lora(&mut rng, model, SiteId::new(a.layer, a.slot), a.rank, a.alpha, a.scale)
            })
            .collect::<Result<Vec<_>>>()?;
        LoraSet::from_adapters(adapters)
    }
}
