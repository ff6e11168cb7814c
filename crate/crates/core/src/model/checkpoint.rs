//! Checkpoints: parameters in a TGRD file plus a `.manifest` sidecar
//! holding the architecture and any caller metadata.

use std::path::{Path, PathBuf};

use super::{Model, ModelConfig};
use crate::data::manifest::Manifest;
use crate::data::tgrd::{read_grid_file, write_grid_file, GridTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes `model` to `path` and its manifest (merged with `extra`) beside it.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path, extra: &Manifest) -> Result<()> {
    let entries: Vec<(String, GridTensor)> =
        model.params.iter().map(|(_, p)| (p.name.clone(), GridTensor::from(p.value.clone()))).collect();
    write_grid_file(path, &entries)?;
    let mut m = extra.clone();
    model.config.to_manifest(&mut m);
    m.set("dtype", if T::DTYPE_TAG == 0 { "f32" } else { "f64" });
    m.set("param_count", model.params.scalar_count());
    m.write(manifest_path(path))
}

/// Rebuilds the model described by the sidecar manifest and restores every
/// parameter; returns the model and the full manifest.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, Manifest)> {
    let manifest = Manifest::read(manifest_path(path))?;
    let config = ModelConfig::from_manifest(&manifest)?;
    let mut model = Model::new(config, 0)?;
    let entries = read_grid_file(path)?;
    if entries.len() != model.params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, model has {} parameters",
            entries.len(),
            model.params.len()
        )));
    }
    for (name, t) in &entries {
        let id = model.params.find(name).ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        let p = model.params.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(Error::Format(format!("{name}: shape {:?}, expected {:?}", t.shape(), p.value.shape())));
        }
        p.value = t.to_tensor();
    }
    Ok((model, manifest))
}
