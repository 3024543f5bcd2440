//! Hyperspectral cubes and masks, their binary formats, the synthetic
//! phantom generator, augmentation and on-disk datasets.

mod augment;
mod cube;
mod dataset;
mod format;
mod phantom;

pub use augment::{augment, AugmentConfig, Transform};
pub use cube::{HsiCube, Mask};
pub use dataset::{generate_dataset, Dataset, Sample, Split};
pub use format::{
    decode_cube, decode_mask, encode_cube, encode_mask, read_cube, read_mask, write_cube, write_mask, CUBE_MAGIC,
    MASK_MAGIC,
};
pub use phantom::{generate_phantom, PhantomConfig};
