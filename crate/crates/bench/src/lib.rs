//! Deterministic inputs shared by the benchmarks.

use mpt_core::blocks::{init_params, sub_block_params, BlockSpec, Variants};
use mpt_core::data::Rng;
use mpt_core::network::{build_model, MptConfig, ParameterStore};
use mpt_core::windows::ScaleSpec;
use mpt_core::Tensor;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(-1.0, 1.0) as f32)
}

/// One sub-block with its parameters at the given pyramid ratio.
pub fn block(dim: usize, heads: usize, m: usize, ratio: usize) -> (BlockSpec, ParameterStore<f32>) {
    let spec = BlockSpec::new(dim, heads, m, ScaleSpec::from_ratio(ratio).unwrap(), 0, 2.6, Variants::default()).unwrap();
    let store = init_params(&sub_block_params(&spec, "b"), &mut Rng::new(1));
    (spec, store)
}

pub fn desk_model() -> (MptConfig, ParameterStore<f32>) {
    let cfg = MptConfig::desk();
    let store = build_model(&cfg, 0).unwrap();
    (cfg, store)
}
