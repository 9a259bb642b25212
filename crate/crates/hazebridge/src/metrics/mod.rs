//! Full-reference image quality metrics and a distributional distance for
//! point sets. All metric arithmetic is 64-bit regardless of the input
//! element type.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / mse)`.
/// Identical inputs report `f64::INFINITY`.
pub fn psnr<E: Element>(a: &Tensor<E>, b: &Tensor<E>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if !(peak > 0.0) {
        return Err(Error::Config("psnr peak must be positive".into()));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x.to_f64() - y.to_f64();
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Fixed luma weights used to collapse RGB to one channel.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Luma plane of a `[c, h, w]` or `[h, w]` tensor as f64.
fn luma_plane<E: Element>(img: &Tensor<E>) -> Result<(Vec<f64>, usize, usize)> {
    match img.shape() {
        &[h, w] => Ok((img.to_f64_vec(), h, w)),
        &[1, h, w] => Ok((img.to_f64_vec(), h, w)),
        &[3, h, w] => {
            let d = img.data();
            let plane = h * w;
            let mut out = vec![0.0; plane];
            for p in 0..plane {
                out[p] = LUMA[0] * d[p].to_f64()
                    + LUMA[1] * d[plane + p].to_f64()
                    + LUMA[2] * d[2 * plane + p].to_f64();
            }
            Ok((out, h, w))
        }
        _ => Err(Error::InvalidShape {
            op: "ssim",
            shape: img.shape().to_vec(),
            reason: "expected [h, w], [1, h, w] or [3, h, w]",
        }),
    }
}

/// Separable valid-mode Gaussian filtering.
fn gauss_filter(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let taps = gaussian_taps();
    let k = SSIM_WINDOW;
    let ow = w - k + 1;
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * src[r * w + c + i];
            }
            horiz[r * ow + c] = acc;
        }
    }
    let oh = h - k + 1;
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * horiz[(r + i) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean local structural similarity over an 11x11 Gaussian window
/// (sigma 1.5), luma only, with the conventional stabilizers
/// `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
pub fn ssim<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

pub fn ssim_with_peak<E: Element>(a: &Tensor<E>, b: &Tensor<E>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "ssim",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (x, h, w) = luma_plane(a)?;
    let (y, _, _) = luma_plane(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
    let (mu_x, oh, ow) = gauss_filter(&x, h, w);
    let (mu_y, _, _) = gauss_filter(&y, h, w);
    let (exx, _, _) = gauss_filter(&xx, h, w);
    let (eyy, _, _) = gauss_filter(&yy, h, w);
    let (exy, _, _) = gauss_filter(&xy, h, w);
    let mut acc = 0.0;
    for i in 0..oh * ow {
        let var_x = exx[i] - mu_x[i] * mu_x[i];
        let var_y = eyy[i] - mu_y[i] * mu_y[i];
        let cov = exy[i] - mu_x[i] * mu_y[i];
        let num = (2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2);
        let den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2);
        acc += num / den;
    }
    Ok(acc / (oh * ow) as f64)
}

/// Energy distance between two point sets of shape `[n, d]` and `[m, d]`:
/// `2 E|x - y| - E|x - x'| - E|y - y'|` with all-pairs (V-statistic)
/// expectations, which makes the value exactly zero for identical multisets
/// and nonnegative in general.
pub fn energy_distance(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let (n, d) = match a.shape() {
        &[n, d] => (n, d),
        _ => {
            return Err(Error::InvalidShape {
                op: "energy_distance",
                shape: a.shape().to_vec(),
                reason: "expected [n, d] points",
            })
        }
    };
    let (m, d2) = match b.shape() {
        &[m, d2] => (m, d2),
        _ => {
            return Err(Error::InvalidShape {
                op: "energy_distance",
                shape: b.shape().to_vec(),
                reason: "expected [m, d] points",
            })
        }
    };
    if d != d2 {
        return Err(Error::ShapeMismatch {
            op: "energy_distance",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if n == 0 || m == 0 {
        return Err(Error::EmptyPointSet);
    }
    let dist = |p: &[f64], q: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..d {
            let diff = p[i] - q[i];
            acc += diff * diff;
        }
        acc.sqrt()
    };
    let pa = a.data();
    let pb = b.data();
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += dist(&pa[i * d..(i + 1) * d], &pb[j * d..(j + 1) * d]);
        }
    }
    let mut within_a = 0.0;
    for i in 0..n {
        for j in 0..n {
            within_a += dist(&pa[i * d..(i + 1) * d], &pa[j * d..(j + 1) * d]);
        }
    }
    let mut within_b = 0.0;
    for i in 0..m {
        for j in 0..m {
            within_b += dist(&pb[i * d..(i + 1) * d], &pb[j * d..(j + 1) * d]);
        }
    }
    Ok(2.0 * cross / (n * m) as f64
        - within_a / (n * n) as f64
        - within_b / (m * m) as f64)
}

/// Per-item metrics plus aggregates, as written by the evaluation command.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub items: Vec<ItemMetrics>,
    pub energy_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ItemMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        self.items.iter().map(|i| i.psnr).sum::<f64>() / self.items.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.items.iter().map(|i| i.ssim).sum::<f64>() / self.items.len() as f64
    }

    pub fn std_psnr(&self) -> f64 {
        let m = self.mean_psnr();
        (self.items.iter().map(|i| (i.psnr - m) * (i.psnr - m)).sum::<f64>()
            / self.items.len() as f64)
            .sqrt()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = |line: String| -> Result<()> {
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))
        };
        w("item,psnr_db,ssim".into())?;
        for item in &self.items {
            w(format!("{},{:.6},{:.6}", item.name, item.psnr, item.ssim))?;
        }
        w(format!("mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim()))?;
        w(format!("std,{:.6},", self.std_psnr()))?;
        if let Some(ed) = self.energy_distance {
            w(format!("energy_distance,{ed:.6},"))?;
        }
        Ok(())
    }
}
