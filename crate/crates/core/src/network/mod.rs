//! The U-shaped network: configuration, parameters, forward pass, and cost accounting.

mod config;
mod model;
mod store;

pub use config::{fnv1a, parse_bool, parse_kv_text, parse_list, parse_num, MptConfig};
pub use model::{
    build_model, flops_estimate, init_tensor, mpt_eval, mpt_forward, param_count, param_specs, sub_block_macs,
    trunc_normal, zero_head, FlopReport, INIT_STD,
};
pub use store::{ParameterStore, Params, StoreMeta};

use std::path::Path;

use crate::error::{MptError, Result};
use crate::tensor::Element;

/// Writes parameters and metadata to an MPTT store file.
pub fn save_checkpoint<T: Element>(store: &ParameterStore<T>, path: &Path) -> Result<()> {
    crate::data::write_store(path, store)
}

/// Reads a checkpoint and the model configuration recorded in it.
pub fn load_checkpoint<T: Element>(path: &Path) -> Result<(ParameterStore<T>, MptConfig)> {
    let store: ParameterStore<T> = crate::data::read_store(path)?;
    let mut cfg = MptConfig::desk();
    for (k, v) in parse_kv_text(&store.meta.config_text)? {
        if !cfg.apply(&k, &v)? {
            return Err(MptError::Format(format!("checkpoint config has unknown key {}", k)));
        }
    }
    cfg.validate()?;
    if cfg.hash() != store.meta.config_hash {
        return Err(MptError::Format("checkpoint config hash mismatch".into()));
    }
    let expected = param_specs(&cfg)?;
    if expected.len() != store.len()
        || expected
            .iter()
            .zip(store.iter())
            .any(|(s, (name, t))| s.name != name || s.shape != t.shape())
    {
        return Err(MptError::Format("checkpoint parameters do not match its config".into()));
    }
    Ok((store, cfg))
}
