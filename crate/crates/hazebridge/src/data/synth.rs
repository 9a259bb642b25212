//! Procedural corpus generation: clean images built from random gradients,
//! rectangles and disks; smooth per-image depth fields; hazy counterparts.
//! Generation is a pure function of `(params, seed)` with one derived
//! random stream per item.

use std::fs;
use std::path::Path;

use crate::data::haze::{haze_apply, HazeField};
use crate::data::manifest::{DatasetManifest, ItemRecord, Split, SynthParams};
use crate::error::{Error, Result};
use crate::io::ppm;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Smooth nonnegative depth field: three random planar-plus-radial
/// components, normalized to `[0, 3]`.
fn depth_field(size: usize, rng: &mut RngStream) -> Tensor<f32> {
    let mut d = vec![0.0f64; size * size];
    for _ in 0..3 {
        let gx = rng.uniform_range(-1.0, 1.0);
        let gy = rng.uniform_range(-1.0, 1.0);
        let cx = rng.uniform_range(0.0, size as f64);
        let cy = rng.uniform_range(0.0, size as f64);
        let radius = rng.uniform_range(0.3, 1.0) * size as f64;
        let amp = rng.uniform_range(0.3, 1.0);
        for r in 0..size {
            for c in 0..size {
                let plane = gx * c as f64 / size as f64 + gy * r as f64 / size as f64;
                let dx = (c as f64 - cx) / radius;
                let dy = (r as f64 - cy) / radius;
                let bump = amp * (-(dx * dx + dy * dy)).exp();
                d[r * size + c] += plane + bump;
            }
        }
    }
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let data: Vec<f32> = d.iter().map(|&v| (3.0 * (v - lo) / span) as f32).collect();
    Tensor::from_vec(&[size, size], data).unwrap()
}

fn random_color(rng: &mut RngStream) -> [f64; 3] {
    [
        rng.uniform_range(0.0, 1.0),
        rng.uniform_range(0.0, 1.0),
        rng.uniform_range(0.0, 1.0),
    ]
}

/// Clean image: a random linear gradient background with a few rectangles
/// and disks on top.
fn clean_image(size: usize, rng: &mut RngStream) -> Tensor<f32> {
    let ca = random_color(rng);
    let cb = random_color(rng);
    let dirx = rng.uniform_range(-1.0, 1.0);
    let diry = rng.uniform_range(-1.0, 1.0);
    let norm = (dirx * dirx + diry * diry).sqrt().max(1e-6);
    let plane = size * size;
    let mut img = vec![0.0f32; 3 * plane];
    for r in 0..size {
        for c in 0..size {
            let u = ((c as f64 / size as f64 - 0.5) * dirx / norm
                + (r as f64 / size as f64 - 0.5) * diry / norm)
                + 0.5;
            let u = u.clamp(0.0, 1.0);
            for ch in 0..3 {
                img[ch * plane + r * size + c] = (ca[ch] * (1.0 - u) + cb[ch] * u) as f32;
            }
        }
    }
    let shapes = rng.uniform_usize(2, 5);
    for _ in 0..shapes {
        let color = random_color(rng);
        let is_disk = rng.uniform_f64() < 0.5;
        let cx = rng.uniform_range(0.1, 0.9) * size as f64;
        let cy = rng.uniform_range(0.1, 0.9) * size as f64;
        let extent = rng.uniform_range(0.08, 0.3) * size as f64;
        for r in 0..size {
            for c in 0..size {
                let inside = if is_disk {
                    let dx = c as f64 - cx;
                    let dy = r as f64 - cy;
                    dx * dx + dy * dy <= extent * extent
                } else {
                    (c as f64 - cx).abs() <= extent && (r as f64 - cy).abs() <= extent * 0.7
                };
                if inside {
                    for ch in 0..3 {
                        img[ch * plane + r * size + c] = color[ch] as f32;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[3, size, size], img).unwrap()
}

/// One generated item: clean image, haze field, hazy image.
pub fn synth_item(
    params: &SynthParams,
    rng: &mut RngStream,
) -> Result<(Tensor<f32>, HazeField, Tensor<f32>)> {
    let clean = clean_image(params.size, rng);
    let depth = depth_field(params.size, rng);
    let beta = rng.uniform_range(params.beta_lo, params.beta_hi);
    let a = rng.uniform_range(params.atmosphere_lo, params.atmosphere_hi);
    let field = HazeField::new(beta, a, depth)?;
    let hazy = haze_apply(&clean, &field)?;
    Ok((clean, field, hazy))
}

/// Deterministically assign splits: shuffled by the stream, `test_count`
/// items go to the test split and the remainder is divided between paired
/// and unpaired according to `ratio` (paired : unpaired).
pub fn assign_splits(
    manifest: &mut DatasetManifest,
    ratio: (u32, u32),
    test_count: usize,
    rng: &mut RngStream,
) -> Result<()> {
    let n = manifest.items.len();
    if test_count >= n {
        return Err(Error::InvalidDataset(format!(
            "test split ({test_count}) must leave training items (total {n})"
        )));
    }
    if ratio.0 == 0 && ratio.1 == 0 {
        return Err(Error::InvalidDataset("split ratio cannot be 0:0".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates driven by the stream.
    for i in (1..n).rev() {
        let j = rng.uniform_usize(0, i);
        order.swap(i, j);
    }
    let train = n - test_count;
    let paired = (train as u64 * ratio.0 as u64 / (ratio.0 + ratio.1) as u64) as usize;
    for (pos, &idx) in order.iter().enumerate() {
        manifest.items[idx].split = if pos < test_count {
            Split::Test
        } else if pos < test_count + paired {
            Split::Paired
        } else {
            Split::Unpaired
        };
    }
    Ok(())
}

/// Generate a corpus on disk: `clean/` and `hazy/` pixmaps plus
/// `manifest.toml`. Returns the manifest.
pub fn generate_corpus(
    dir: impl AsRef<Path>,
    params: SynthParams,
    ratio: (u32, u32),
    test_count: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if params.count < 4 {
        return Err(Error::InvalidDataset(
            "corpus needs at least 4 items".into(),
        ));
    }
    let dir = dir.as_ref();
    for sub in ["clean", "hazy"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let root = RngStream::new(seed, 0x5EED);
    let mut manifest = DatasetManifest::new(seed, params);
    for id in 0..params.count {
        let mut item_rng = root.derive(id as u64);
        let (clean, field, hazy) = synth_item(&params, &mut item_rng)?;
        let clean_path = format!("clean/item{id:04}.ppm");
        let hazy_path = format!("hazy/item{id:04}.ppm");
        ppm::write_ppm(dir.join(&clean_path), &clean)?;
        ppm::write_ppm(dir.join(&hazy_path), &hazy)?;
        manifest.items.push(ItemRecord {
            id,
            clean: clean_path,
            hazy: hazy_path,
            beta: field.beta(),
            atmosphere: field.atmosphere(),
            split: Split::Paired,
        });
    }
    let mut split_rng = root.derive(0xFFFF_0001);
    assign_splits(&mut manifest, ratio, test_count, &mut split_rng)?;
    manifest.validate()?;
    manifest.write(dir.join("manifest.toml"))?;
    Ok(manifest)
}

/// Number of aligned patch positions in an `h x w` image.
pub fn crop_positions(h: usize, w: usize, patch: usize) -> Result<usize> {
    if patch == 0 || patch > h || patch > w {
        return Err(Error::PatchTooLarge {
            patch,
            height: h,
            width: w,
        });
    }
    Ok((h - patch + 1) * (w - patch + 1))
}

/// Uniformly random aligned crop of a `[c, h, w]` image.
pub fn crop_patches(img: &Tensor<f32>, patch: usize, rng: &mut RngStream) -> Result<Tensor<f32>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "crop_patches",
                shape: img.shape().to_vec(),
                reason: "expected [c, h, w]",
            })
        }
    };
    crop_positions(h, w, patch)?;
    let r0 = rng.uniform_usize(0, h - patch);
    let c0 = rng.uniform_usize(0, w - patch);
    let mut out = vec![0.0f32; c * patch * patch];
    for ch in 0..c {
        for r in 0..patch {
            let src = (ch * h + r0 + r) * w + c0;
            let dst = (ch * patch + r) * patch;
            out[dst..dst + patch].copy_from_slice(&img.data()[src..src + patch]);
        }
    }
    Tensor::from_vec(&[c, patch, patch], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use tempfile::tempdir;

    #[test]
    fn corpus_generates_and_validates() {
        let dir = tempdir().unwrap();
        let params = SynthParams {
            count: 8,
            size: 32,
            ..Default::default()
        };
        let manifest = generate_corpus(dir.path(), params, (1, 1), 2, 99).unwrap();
        assert_eq!(manifest.items.len(), 8);
        let (paired, unpaired, test) = manifest.split_counts();
        assert_eq!(test, 2);
        assert_eq!(paired, 3);
        assert_eq!(unpaired, 3);
        let ds = crate::data::load_dataset(dir.path()).unwrap();
        assert_eq!(ds.paired.len(), 3);
        assert_eq!(ds.unpaired_clean.len(), 3);
        assert_eq!(ds.test.len(), 2);
    }

    #[test]
    fn generation_is_deterministic() {
        let da = tempdir().unwrap();
        let db = tempdir().unwrap();
        let params = SynthParams {
            count: 4,
            size: 16,
            ..Default::default()
        };
        generate_corpus(da.path(), params, (1, 1), 1, 5).unwrap();
        generate_corpus(db.path(), params, (1, 1), 1, 5).unwrap();
        for sub in ["clean/item0000.ppm", "hazy/item0003.ppm", "manifest.toml"] {
            let a = std::fs::read(da.path().join(sub)).unwrap();
            let b = std::fs::read(db.path().join(sub)).unwrap();
            assert_eq!(a, b, "{sub} differs");
        }
    }

    #[test]
    fn haze_is_substantial_but_not_destructive() {
        let params = SynthParams {
            count: 16,
            size: 32,
            ..Default::default()
        };
        let root = RngStream::new(123, 0x5EED);
        let mut total = 0.0;
        for id in 0..params.count {
            let mut rng = root.derive(id as u64);
            let (clean, _, hazy) = synth_item(&params, &mut rng).unwrap();
            total += psnr(&hazy, &clean, 1.0).unwrap();
        }
        let mean = total / params.count as f64;
        assert!(
            (8.0..=25.0).contains(&mean),
            "mean hazy-vs-clean psnr {mean} dB"
        );
    }

    #[test]
    fn crop_position_count_formula() {
        assert_eq!(crop_positions(480, 640, 256).unwrap(), 86_625);
        assert_eq!(crop_positions(32, 32, 32).unwrap(), 1);
        assert!(crop_positions(16, 16, 17).is_err());
    }

    #[test]
    fn identity_crop_when_patch_is_image() {
        let mut rng = RngStream::new(3, 0);
        let img: Tensor<f32> = Tensor::gaussian(&[3, 8, 8], &mut rng).unwrap();
        let crop = crop_patches(&img, 8, &mut rng).unwrap();
        assert_eq!(crop.data(), img.data());
    }

    #[test]
    fn crops_are_uniform_over_positions() {
        let mut rng = RngStream::new(17, 0);
        let h = 8;
        let patch = 4;
        // encode position in a marker image: value = row * 100 + col
        let plane: Vec<f32> = (0..h * h).map(|i| (i / h * 100 + i % h) as f32).collect();
        let img = Tensor::from_vec(&[1, h, h], plane).unwrap();
        let positions = (h - patch + 1) * (h - patch + 1);
        let draws = 100_000usize;
        let mut counts = vec![0usize; positions];
        for _ in 0..draws {
            let crop = crop_patches(&img, patch, &mut rng).unwrap();
            let top_left = crop.data()[0] as usize;
            let (r, c) = (top_left / 100, top_left % 100);
            counts[r * (h - patch + 1) + c] += 1;
        }
        let expect = draws as f64 / positions as f64;
        let se = (draws as f64 * (1.0 / positions as f64) * (1.0 - 1.0 / positions as f64)).sqrt();
        for (i, &got) in counts.iter().enumerate() {
            assert!(
                (got as f64 - expect).abs() <= 3.0 * se + 1.0,
                "position {i}: {got} vs {expect} (se {se})"
            );
        }
    }
}
