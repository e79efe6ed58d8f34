//! Text serialization of models and adapter sets.
//!
//! Both formats are TOML documents whose weight arrays hold row-major
//! hex-float strings, so a file reloads to bit-identical weights.

pub mod hexfloat;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::lora::{LoraAdapter, LoraSet};
use crate::model::{LayerWeights, ModelConfig, SiteId, Slot, TransformerModel};
use hexfloat::{from_hex_vec, to_hex_vec, HexF64};

pub const MODEL_FORMAT: &str = "lorashift-model";
pub const ADAPTER_FORMAT: &str = "lorashift-adapters";
pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<HexF64>,
}

impl From<&Matrix> for MatrixRecord {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: to_hex_vec(m.data()),
        }
    }
}

impl MatrixRecord {
    fn into_matrix(self) -> Result<Matrix> {
        Matrix::new(self.rows, self.cols, from_hex_vec(&self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    w_q: MatrixRecord,
    w_k: MatrixRecord,
    w_v: MatrixRecord,
    w_o: MatrixRecord,
    w_up: MatrixRecord,
    w_down: MatrixRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    digest: String,
    config: ModelConfig,
    embedding: MatrixRecord,
    final_gain: Vec<HexF64>,
    unembedding: MatrixRecord,
    layers: Vec<LayerRecord>,
}

fn check_header(format: &str, version: u32, want: &str) -> Result<()> {
    if format != want {
        return Err(Error::Parse(format!("expected format `{want}`, found `{format}`")));
    }
    if version != FILE_VERSION {
        return Err(Error::Parse(format!("unsupported {want} version {version}")));
    }
    Ok(())
}

pub fn model_to_string(model: &TransformerModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: FILE_VERSION,
        digest: model.digest_hex(),
        config: model.config().clone(),
        embedding: model.embedding().into(),
        final_gain: to_hex_vec(model.final_gain().as_slice()),
        unembedding: model.unembedding().into(),
        layers: model
            .layers()
            .iter()
            .map(|lw| LayerRecord {
                w_q: (&lw.w_q).into(),
                w_k: (&lw.w_k).into(),
                w_v: (&lw.w_v).into(),
                w_o: (&lw.w_o).into(),
                w_up: (&lw.w_up).into(),
                w_down: (&lw.w_down).into(),
            })
            .collect(),
    };
    toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses a model file and verifies its recorded digest.
pub fn model_from_str(text: &str) -> Result<TransformerModel> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    check_header(&file.format, file.version, MODEL_FORMAT)?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| {
            Ok(LayerWeights {
                w_q: l.w_q.into_matrix()?,
                w_k: l.w_k.into_matrix()?,
                w_v: l.w_v.into_matrix()?,
                w_o: l.w_o.into_matrix()?,
                w_up: l.w_up.into_matrix()?,
                w_down: l.w_down.into_matrix()?,
            })
        })
        .collect::<Result<_>>()?;
    let model = TransformerModel::from_parts(
        file.config,
        file.embedding.into_matrix()?,
        layers,
        Vector::new(from_hex_vec(&file.final_gain))?,
        file.unembedding.into_matrix()?,
    )?;
    if model.digest_hex() != file.digest {
        return Err(Error::Parse(format!(
            "model digest mismatch: file says {}, weights hash to {}",
            file.digest,
            model.digest_hex()
        )));
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<TransformerModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterRecord {
    layer: usize,
    slot: Slot,
    rank: usize,
    alpha: HexF64,
    b: MatrixRecord,
    a: MatrixRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterSetFile {
    format: String,
    version: u32,
    epsilon: HexF64,
    #[serde(default)]
    adapters: Vec<AdapterRecord>,
}

pub fn adapters_to_string(set: &LoraSet) -> Result<String> {
    let file = AdapterSetFile {
        format: ADAPTER_FORMAT.into(),
        version: FILE_VERSION,
        epsilon: HexF64(set.epsilon()),
        adapters: set
            .adapters()
            .map(|a| AdapterRecord {
                layer: a.site().layer,
                slot: a.site().slot,
                rank: a.rank(),
                alpha: HexF64(a.alpha()),
                b: a.b().into(),
                a: a.a().into(),
            })
            .collect(),
    };
    toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn adapters_from_str(text: &str) -> Result<LoraSet> {
    let file: AdapterSetFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    check_header(&file.format, file.version, ADAPTER_FORMAT)?;
    let adapters = file
        .adapters
        .into_iter()
        .map(|r| {
            let a = LoraAdapter::new(
                SiteId::new(r.layer, r.slot),
                r.b.into_matrix()?,
                r.a.into_matrix()?,
                r.alpha.0,
            )?;
            if a.rank() != r.rank {
                return Err(Error::Parse(format!(
                    "adapter at {} declares rank {} but has {}",
                    a.site(),
                    r.rank,
                    a.rank()
                )));
            }
            Ok(a)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoraSet::from_adapters(adapters)?.with_scale(file.epsilon.0))
}

pub fn load_adapters(path: &Path) -> Result<LoraSet> {
    adapters_from_str(&std::fs::read_to_string(path)?)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}
