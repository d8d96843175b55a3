//! Versioned weight archive: one safetensors file whose metadata carries the
//! model config, so a checkpoint alone is enough to rebuild the network.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::config::ModelConfig;
use crate::nn::OasisModel;
use crate::{Error, Result};

pub const FORMAT: &str = "oasis-checkpoint";
pub const VERSION: &str = "1";

const KEY_FORMAT: &str = "format";
const KEY_VERSION: &str = "version";
const KEY_MODEL: &str = "model_config";

/// Saves all parameters of `model`. `extra` entries are stored as metadata
/// next to the format tag and config.
pub fn save(model: &OasisModel, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
    let vars = model.params().vars();
    let mut buffers = Vec::with_capacity(vars.len());
    for (name, var) in &vars {
        let t = var.as_tensor().flatten_all()?;
        let (dtype, bytes) = match t.dtype() {
            DType::F32 => (Dtype::F32, t.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
            DType::F64 => (Dtype::F64, t.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
            other => return Err(Error::Input(format!("cannot store {other:?} parameter {name}"))),
        };
        buffers.push((name.clone(), dtype, var.dims().to_vec(), bytes));
    }
    let views = buffers
        .iter()
        .map(|(name, dtype, shape, bytes): &(String, Dtype, Vec<usize>, Vec<u8>)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta: HashMap<String, String> = extra.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    meta.insert(KEY_FORMAT.into(), FORMAT.into());
    meta.insert(KEY_VERSION.into(), VERSION.into());
    meta.insert(
        KEY_MODEL.into(),
        serde_json::to_string(model.config()).map_err(|e| Error::Config(e.to_string()))?,
    );
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    safetensors::serialize_to_file(views, Some(meta), path).map_err(|e| Error::format(path, e.to_string()))
}

/// Parsed archive contents.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format(path, m);
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
    let metadata: BTreeMap<String, String> = header
        .metadata()
        .as_ref()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
        .unwrap_or_default();
    if metadata.get(KEY_FORMAT).map(String::as_str) != Some(FORMAT) {
        return Err(bad("not an oasis checkpoint".into()));
    }
    if metadata.get(KEY_VERSION).map(String::as_str) != Some(VERSION) {
        return Err(bad(format!(
            "unsupported checkpoint version {:?}",
            metadata.get(KEY_VERSION)
        )));
    }
    let config: ModelConfig = serde_json::from_str(metadata.get(KEY_MODEL).ok_or_else(|| bad("missing model config".into()))?)
        .map_err(|e| bad(format!("bad model config: {e}")))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        let dtype = match view.dtype() {
            Dtype::F32 => DType::F32,
            Dtype::F64 => DType::F64,
            other => return Err(bad(format!("tensor {name} has unsupported dtype {other:?}"))),
        };
        let t = Tensor::from_raw_buffer(view.data(), dtype, view.shape(), &Device::Cpu)?;
        tensors.insert(name, t);
    }
    Ok(Checkpoint {
        config,
        metadata,
        tensors,
    })
}

/// Rebuilds the model stored at `path`.
pub fn load(path: &Path, device: &Device) -> Result<(OasisModel, BTreeMap<String, String>)> {
    let ck = read(path)?;
    let dtype = ck.tensors.values().next().map(Tensor::dtype).unwrap_or(DType::F32);
    let model = OasisModel::with_dtype(&ck.config, 0, device, dtype)?;
    model.params().load(&ck.tensors).map_err(|e| match e {
        Error::Input(m) => Error::format(path, m),
        other => other,
    })?;
    Ok((model, ck.metadata))
}
