//! Volumes, the VOL1 file format, intensity normalization and synthetic
//! phantoms.

mod normalize;
pub mod phantom;
mod vol1;
mod volume;

pub use normalize::{normalize, normalize_with_report};
pub use phantom::{generate_dataset, generate_phantom, PhantomSpec, NUM_CLASSES};
pub use vol1::{
    decode_volume, encode_volume, read_dataset, read_volume, write_dataset, write_volume, EXTENSION, HEADER_LEN,
};
pub use volume::Volume;
