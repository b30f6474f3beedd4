//! Images, datasets, synthetic haze and checkpoints.

mod checkpoint;
mod dataset;
mod haze;
mod image;

pub use self::image::{load_image, quantize, save_image};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, save_checkpoint, MAGIC, VERSION,
};
pub use dataset::{
    load_pairs, make_dataset, synthetic_pairs, write_pairs, Dataset, ImagePair, Provenance, Source, Split,
    SyntheticSpec,
};
pub use haze::{depth_map, synthesize_haze, synthetic_clean, DepthKind, HazeParams, HazePreset, AIRLIGHT_RANGE};
