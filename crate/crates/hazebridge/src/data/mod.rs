//! Synthetic desk-scale datasets: procedural clean images, smooth depth
//! fields, physically-motivated haze, split management, patch cropping, and
//! a 2-d point-cloud toy domain for fast distributional tests.

mod haze;
mod manifest;
mod synth;
mod toy;

pub use haze::{haze_apply, invert_beta, HazeField};
pub use manifest::{parse_manifest, DatasetManifest, ItemRecord, Split, SynthParams};
pub use synth::{assign_splits, crop_patches, crop_positions, generate_corpus, synth_item};
pub use toy::{toy2d_domains, ToyAffine};

use std::path::Path;

use crate::error::Result;
use crate::io::ppm;
use crate::tensor::Tensor;

/// Pluggable latent encoder. The bridge runs in whatever space the encoder
/// produces; the default identity keeps everything in pixel space, and a
/// learned autoencoder can be slotted in without touching the process code.
pub trait LatentEncoder: Send + Sync {
    fn encode(&self, image: &Tensor<f32>) -> Result<Tensor<f32>>;
    fn decode(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// The identity encoder: latents are pixels.
pub struct IdentityEncoder;

impl LatentEncoder for IdentityEncoder {
    fn encode(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(image.detach())
    }

    fn decode(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(latent.detach())
    }
}

/// An in-memory dataset loaded from a manifest directory.
pub struct Dataset {
    /// `(clean, hazy)` training pairs.
    pub paired: Vec<(Tensor<f32>, Tensor<f32>)>,
    /// Clean images whose hazy counterparts are withheld from training.
    pub unpaired_clean: Vec<Tensor<f32>>,
    /// Held-out `(clean, hazy)` pairs for evaluation.
    pub test: Vec<(Tensor<f32>, Tensor<f32>)>,
}

/// Load every split of a generated corpus into memory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = DatasetManifest::read(dir.join("manifest.toml"))?;
    let mut paired = Vec::new();
    let mut unpaired_clean = Vec::new();
    let mut test = Vec::new();
    for item in &manifest.items {
        let clean = ppm::read_ppm(dir.join(&item.clean))?;
        match item.split {
            Split::Paired => {
                let hazy = ppm::read_ppm(dir.join(&item.hazy))?;
                paired.push((clean, hazy));
            }
            Split::Unpaired => unpaired_clean.push(clean),
            Split::Test => {
                let hazy = ppm::read_ppm(dir.join(&item.hazy))?;
                test.push((clean, hazy));
            }
        }
    }
    Ok(Dataset {
        paired,
        unpaired_clean,
        test,
    })
}
