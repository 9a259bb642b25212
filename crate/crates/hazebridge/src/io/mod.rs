//! File formats: the raw tensor container, portable pixmaps, and model
//! checkpoints. Formats are documented in `docs/formats.md`; every decoder
//! here is safe on untrusted input (bounded allocations, checked lengths)
//! and fuzzed under `fuzz/`.

pub mod checkpoint;
pub mod container;
pub mod ppm;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use container::{decode_tensor, encode_tensor, read_tensor, write_tensor};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
