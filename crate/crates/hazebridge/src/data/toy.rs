//! 2-d point-cloud toy domain: two moons and an affinely sheared, shifted
//! copy with pointwise correspondence. Each point works as a 2-channel 1x1
//! latent, which makes distributional tests of the process fast.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// The invertible map between the two domains.
#[derive(Debug, Clone, Copy)]
pub struct ToyAffine {
    /// Row-major 2x2 linear part.
    pub linear: [f64; 4],
    pub shift: [f64; 2],
}

impl ToyAffine {
    pub fn standard() -> Self {
        Self {
            linear: [1.0, 0.35, 0.2, 1.0],
            shift: [1.6, -0.7],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.linear[0] * p[0] + self.linear[1] * p[1] + self.shift[0],
            self.linear[2] * p[0] + self.linear[3] * p[1] + self.shift[1],
        ]
    }

    pub fn inverse(&self, q: [f64; 2]) -> [f64; 2] {
        let det = self.linear[0] * self.linear[3] - self.linear[1] * self.linear[2];
        let x = q[0] - self.shift[0];
        let y = q[1] - self.shift[1];
        [
            (self.linear[3] * x - self.linear[1] * y) / det,
            (-self.linear[2] * x + self.linear[0] * y) / det,
        ]
    }
}

/// Paired point sets `(x, y)` of shape `[n, 2]` each, with `y_i` the affine
/// image of `x_i`. Points carry Gaussian jitter of scale 0.05.
pub fn toy2d_domains(n: usize, rng: &mut RngStream) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if n < 100 {
        return Err(Error::InvalidDataset(
            "toy domain needs at least 100 points".into(),
        ));
    }
    let map = ToyAffine::standard();
    let mut xs = Vec::with_capacity(n * 2);
    let mut ys = Vec::with_capacity(n * 2);
    for i in 0..n {
        let theta = rng.uniform_range(0.0, std::f64::consts::PI);
        let base = if i % 2 == 0 {
            [theta.cos(), theta.sin()]
        } else {
            [1.0 - theta.cos(), 0.5 - theta.sin()]
        };
        let p = [
            base[0] + 0.05 * rng.normal::<f64>(),
            base[1] + 0.05 * rng.normal::<f64>(),
        ];
        let q = map.apply(p);
        xs.extend_from_slice(&p);
        ys.extend_from_slice(&q);
    }
    Ok((
        Tensor::from_vec(&[n, 2], xs)?,
        Tensor::from_vec(&[n, 2], ys)?,
    ))
}
