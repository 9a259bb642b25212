//! Haze synthesis: per-pixel exponential attenuation toward a global
//! atmospheric light, `I(p) = J(p) e^{-beta d(p)} + A (1 - e^{-beta d(p)})`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A synthetic degradation: scattering coefficient, atmospheric light, and
/// a per-pixel depth map.
#[derive(Debug, Clone)]
pub struct HazeField {
    beta: f64,
    atmosphere: f64,
    depth: Tensor<f32>,
}

impl HazeField {
    pub fn new(beta: f64, atmosphere: f64, depth: Tensor<f32>) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidHaze(format!(
                "scattering coefficient must be positive, got {beta}"
            )));
        }
        if !(0.0..=1.0).contains(&atmosphere) {
            return Err(Error::InvalidHaze(format!(
                "atmospheric light must lie in [0, 1], got {atmosphere}"
            )));
        }
        match depth.shape() {
            &[_, _] => {}
            _ => {
                return Err(Error::InvalidShape {
                    op: "haze_field",
                    shape: depth.shape().to_vec(),
                    reason: "depth must be [h, w]",
                })
            }
        }
        if depth.data().iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return Err(Error::InvalidHaze("depth must be nonnegative".into()));
        }
        Ok(Self {
            beta,
            atmosphere,
            depth,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn atmosphere(&self) -> f64 {
        self.atmosphere
    }

    pub fn depth(&self) -> &Tensor<f32> {
        &self.depth
    }

    /// Per-pixel transmission `e^{-beta d(p)}`, always in `(0, 1]`.
    pub fn transmission(&self) -> Vec<f64> {
        self.depth
            .data()
            .iter()
            .map(|&d| (-self.beta * d as f64).exp())
            .collect()
    }
}

/// Apply the scattering model to a clean `[3, h, w]` image in `[0, 1]`.
pub fn haze_apply(clean: &Tensor<f32>, field: &HazeField) -> Result<Tensor<f32>> {
    let (c, h, w) = match clean.shape() {
        &[c, h, w] => (c, h, w),
        _ => {
            return Err(Error::InvalidShape {
                op: "haze_apply",
                shape: clean.shape().to_vec(),
                reason: "expected [c, h, w]",
            })
        }
    };
    if field.depth.shape() != [h, w] {
        return Err(Error::ShapeMismatch {
            op: "haze_apply",
            lhs: clean.shape().to_vec(),
            rhs: field.depth.shape().to_vec(),
        });
    }
    let trans = field.transmission();
    let a = field.atmosphere;
    let plane = h * w;
    let mut out = vec![0.0f32; c * plane];
    for ch in 0..c {
        for p in 0..plane {
            let j = clean.data()[ch * plane + p] as f64;
            out[ch * plane + p] = (j * trans[p] + a * (1.0 - trans[p])) as f32;
        }
    }
    Tensor::from_vec(clean.shape(), out)
}

/// Recover the scattering coefficient from one hazy/clean pixel pair at a
/// known depth and atmospheric light (the model inverted for `beta`).
pub fn invert_beta(hazy: f64, clean: f64, atmosphere: f64, depth: f64) -> Result<f64> {
    if depth <= 0.0 {
        return Err(Error::InvalidHaze("depth must be positive to invert".into()));
    }
    let denom = clean - atmosphere;
    if denom.abs() < 1e-12 {
        return Err(Error::InvalidHaze(
            "clean value equals atmospheric light; transmission unobservable".into(),
        ));
    }
    let trans = (hazy - atmosphere) / denom;
    if trans <= 0.0 {
        return Err(Error::InvalidHaze("nonpositive transmission".into()));
    }
    Ok(-trans.ln() / depth)
}
