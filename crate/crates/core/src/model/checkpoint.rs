use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{IoContext, Result};
use crate::numerics::ParamStore;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_DIR: &str = "params";

/// Writes `manifest.txt` and one tensor file per parameter under `params/`.
pub fn save_checkpoint(dir: &Path, model: &Model, store: &ParamStore) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let manifest = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, model.config().to_manifest()).at(&manifest)?;
    store.save_dir(&dir.join(PARAMS_DIR))
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, ParamStore)> {
    let manifest = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest).at(&manifest)?;
    let config = ModelConfig::from_manifest(&text)?;
    let mut store = ParamStore::new();
    let model = Model::new(config, &mut store, 0)?;
    store.load_dir(&dir.join(PARAMS_DIR))?;
    Ok((model, store))
}
