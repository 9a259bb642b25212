//! Finite-difference verification of reverse-mode gradients.
//!
//! The checks perturb inputs through the `f64` instantiation of each
//! operation and compare the central-difference estimate against the
//! gradient produced by the `f32` tape, so the verification covers exactly
//! the path used during training.

use super::{DiffKind, Element, Tensor};
use crate::rng::RngStream;

/// Central-difference step mandated for all gradient oracles.
pub const FD_STEP: f64 = 1e-4;

/// `|a - b| / max(1e-6, |a|, |b|)`; small values compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Central difference of `f` along coordinate `idx`.
pub fn central_diff_at<F>(xs: &[f64], idx: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut plus = xs.to_vec();
    plus[idx] += h;
    let mut minus = xs.to_vec();
    minus[idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Outcome of a finite-difference sweep for one operation.
#[derive(Debug, Clone)]
pub struct OpGradReport {
    pub op: &'static str,
    pub trials: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

fn op_case_shapes(name: &str) -> Vec<Vec<usize>> {
    match name {
        "add" | "sub" | "mul" => vec![vec![4, 4], vec![4, 4]],
        "scale" | "abs" | "silu" | "sum" | "mean" => vec![vec![4, 4]],
        "matmul" => vec![vec![3, 4], vec![4, 5]],
        "add_row" => vec![vec![3, 5], vec![5]],
        "add_channel" => vec![vec![2, 3, 4, 4], vec![2, 3]],
        "conv2d_pad0" | "conv2d_pad1" | "conv2d_replicate" => {
            vec![vec![2, 3, 4, 4], vec![2, 3, 3, 3], vec![2]]
        }
        "diff_conv_central" | "diff_conv_angular" | "diff_conv_horizontal"
        | "diff_conv_vertical" => vec![vec![2, 2, 4, 4], vec![2, 2, 3, 3]],
        "group_norm" => vec![vec![2, 4, 3, 3], vec![4], vec![4]],
        "upsample" | "downsample" => vec![vec![2, 2, 4, 4]],
        "concat" => vec![vec![2, 2, 3, 3], vec![2, 3, 3, 3]],
        "slice" => vec![vec![2, 4, 3, 3]],
        "rdc_full" => vec![
            vec![2, 2, 4, 4],
            vec![2, 2, 3, 3],
            vec![2],
            vec![2, 2, 3, 3],
            vec![2, 2, 3, 3],
            vec![2, 2, 3, 3],
            vec![2, 2, 3, 3],
        ],
        "rdc_partial" => vec![vec![2, 2, 4, 4], vec![2, 2, 3, 3], vec![2], vec![2, 2, 3, 3]],
        other => panic!("unknown op case {other}"),
    }
}

fn apply_op<E: Element>(name: &str, inputs: &[Tensor<E>]) -> Tensor<E> {
    match name {
        "add" => inputs[0].add(&inputs[1]),
        "sub" => inputs[0].sub(&inputs[1]),
        "mul" => inputs[0].mul(&inputs[1]),
        "scale" => inputs[0].scale(E::from_f64(1.7)),
        "abs" => inputs[0].abs(),
        "silu" => inputs[0].silu(),
        "sum" => inputs[0].sum(),
        "mean" => inputs[0].mean(),
        "matmul" => inputs[0].matmul(&inputs[1]),
        "add_row" => inputs[0].add_row(&inputs[1]),
        "add_channel" => inputs[0].add_channel(&inputs[1]),
        "conv2d_pad0" => inputs[0].conv2d(&inputs[1], Some(&inputs[2]), 0),
        "conv2d_pad1" => inputs[0].conv2d(&inputs[1], Some(&inputs[2]), 1),
        "conv2d_replicate" => inputs[0].conv2d_replicate(&inputs[1], Some(&inputs[2])),
        "diff_conv_central" => inputs[0].diff_conv2d(&inputs[1], DiffKind::Central),
        "diff_conv_angular" => inputs[0].diff_conv2d(&inputs[1], DiffKind::Angular),
        "diff_conv_horizontal" => inputs[0].diff_conv2d(&inputs[1], DiffKind::Horizontal),
        "diff_conv_vertical" => inputs[0].diff_conv2d(&inputs[1], DiffKind::Vertical),
        "group_norm" => inputs[0].group_norm(&inputs[1], &inputs[2], 2, 1e-5),
        "upsample" => inputs[0].upsample_nearest2(),
        "downsample" => inputs[0].downsample_nearest2(),
        "concat" => inputs[0].concat_channels(&inputs[1]),
        "slice" => inputs[0].slice_channels(1, 2),
        "rdc_full" => inputs[0].rdc_conv2d(
            &inputs[1],
            &inputs[2],
            Some(&inputs[3]),
            Some(&inputs[4]),
            Some(&inputs[5]),
            Some(&inputs[6]),
        ),
        "rdc_partial" => {
            inputs[0].rdc_conv2d(&inputs[1], &inputs[2], Some(&inputs[3]), None, None, None)
        }
        other => panic!("unknown op case {other}"),
    }
    .expect("op construction failed in gradcheck")
}

/// Draw one random input, nudged away from non-differentiable points.
fn draw_input(name: &str, arg: usize, shape: &[usize], rng: &mut RngStream) -> Vec<f32> {
    let n: usize = shape.iter().product();
    (0..n)
        .map(|_| {
            let v: f32 = rng.normal();
            match (name, arg) {
                // |x| has a kink at zero; keep samples away from it.
                ("abs", 0) => v + 0.3 * v.signum() + if v == 0.0 { 0.3 } else { 0.0 },
                // Keep the affine scale away from zero so gradients are informative.
                ("group_norm", 1) => 1.0 + 0.2 * v,
                _ => v,
            }
        })
        .collect()
}

/// Names of every differentiable operation covered by the sweep.
pub fn op_names() -> Vec<&'static str> {
    vec![
        "add",
        "sub",
        "mul",
        "scale",
        "abs",
        "silu",
        "sum",
        "mean",
        "matmul",
        "add_row",
        "add_channel",
        "conv2d_pad0",
        "conv2d_pad1",
        "conv2d_replicate",
        "diff_conv_central",
        "diff_conv_angular",
        "diff_conv_horizontal",
        "diff_conv_vertical",
        "group_norm",
        "upsample",
        "downsample",
        "concat",
        "slice",
        "rdc_full",
        "rdc_partial",
    ]
}

/// Run `trials` randomized finite-difference sweeps for one op.
///
/// Each trial draws fresh inputs, projects the op output against a fixed
/// random direction to obtain a scalar, and compares the full `f32` tape
/// gradient of every input coordinate with a central difference through the
/// `f64` forward path.
pub fn check_op(name: &'static str, trials: usize, rng: &mut RngStream) -> OpGradReport {
    let shapes = op_case_shapes(name);
    let mut max_rel = 0.0f64;
    let mut coords = 0usize;
    for _ in 0..trials {
        let raw: Vec<Vec<f32>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| draw_input(name, i, s, rng))
            .collect();

        let inputs32: Vec<Tensor<f32>> = shapes
            .iter()
            .zip(&raw)
            .map(|(s, d)| Tensor::from_vec(s, d.clone()).unwrap().with_grad())
            .collect();
        let out32 = apply_op(name, &inputs32);
        let proj: Vec<f64> = (0..out32.numel()).map(|_| rng.normal::<f64>()).collect();
        let proj32 =
            Tensor::<f32>::from_vec(out32.shape(), proj.iter().map(|&v| v as f32).collect())
                .unwrap();
        let loss32 = out32.mul(&proj32).unwrap().sum().unwrap();
        let grads = loss32.backward().unwrap();

        for (arg, input) in inputs32.iter().enumerate() {
            let g = grads
                .get(input)
                .expect("input participates in the graph");
            let flat: Vec<f64> = raw[arg].iter().map(|&v| v as f64).collect();
            let fd: Vec<f64> = (0..flat.len())
                .map(|idx| {
                    central_diff_at(&flat, idx, FD_STEP, |xs| {
                        let mut inputs64: Vec<Tensor<f64>> = shapes
                            .iter()
                            .zip(&raw)
                            .map(|(s, d)| {
                                Tensor::from_vec(s, d.iter().map(|&v| v as f64).collect()).unwrap()
                            })
                            .collect();
                        inputs64[arg] = Tensor::from_vec(&shapes[arg], xs.to_vec()).unwrap();
                        let out = apply_op(name, &inputs64);
                        out.data()
                            .iter()
                            .zip(&proj)
                            .map(|(&o, &p)| o * p)
                            .sum::<f64>()
                    })
                })
                .collect();
            // Coordinates far below the gradient's own scale sit in 32-bit
            // rounding noise; floor the denominator there so the check
            // measures the backward path rather than float cancellation.
            let gmax = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let floor = (1e-3 * gmax).max(1e-6);
            for idx in 0..flat.len() {
                let denom = (g[idx] as f64).abs().max(fd[idx].abs()).max(floor);
                let rel = (g[idx] as f64 - fd[idx]).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                }
                coords += 1;
            }
        }
    }
    OpGradReport {
        op: name,
        trials,
        coords_checked: coords,
        max_rel_err: max_rel,
    }
}

/// Sweep every operation; `trials` randomized inputs per op.
pub fn check_all_ops(trials: usize, seed: u64) -> Vec<OpGradReport> {
    let mut rng = RngStream::new(seed, 0xF0);
    op_names()
        .into_iter()
        .map(|name| check_op(name, trials, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ops_match_finite_differences() {
        for report in check_all_ops(3, 20260809) {
            assert!(
                report.max_rel_err < 1e-3,
                "{}: max relative error {} over {} coords",
                report.op,
                report.max_rel_err,
                report.coords_checked
            );
        }
    }
}
