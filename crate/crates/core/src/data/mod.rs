//! Randomness, image and tensor files, and synthetic training pairs.

mod dataset;
mod io;
mod rng;
mod synth;

pub use dataset::{
    is_validation, sample_name, synth_dataset, write_synth_dataset, Dataset, Sample, SynthOptions, BLUR_DIR, MASK_DIR,
    SHARP_DIR, VAL_MODULUS,
};
pub use io::{
    decode_image, decode_store, decode_tensor, encode_image, encode_store, encode_tensor, load_image, read_store,
    read_tensor, save_image, write_store, write_tensor, MPTT_MAGIC, MPTT_VERSION,
};
pub use rng::{splitmix64, Rng};
pub use synth::{
    apply_augment, augment_crop, draw_augment, mask_region_blur, synth_mask, synth_pair, synth_scene, AugmentDraw,
    Scene, MIN_SYNTH_SIZE, SCALE_RANGE,
};
