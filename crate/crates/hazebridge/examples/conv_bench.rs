//! Rough throughput probe for the convolution kernels; used to size the
//! default desk-scale configuration against CPU time budgets.

use std::time::Instant;

use hazebridge::rng::RngStream;
use hazebridge::tensor::{DiffKind, Tensor};

fn gflops(macs: f64, dt: f64) -> f64 {
    2.0 * macs / dt / 1e9
}

fn main() {
    let (batch, ch, hw) = (4usize, 32usize, 32usize);
    let iters = 40;
    let mut rng = RngStream::new(1, 0);
    let x: Tensor<f32> = Tensor::gaussian(&[batch, ch, hw, hw], &mut rng).unwrap();
    let xg = x.with_grad();
    let w: Tensor<f32> = Tensor::gaussian(&[ch, ch, 3, 3], &mut rng)
        .unwrap()
        .with_grad();
    let b: Tensor<f32> = Tensor::zeros(&[ch]).unwrap().with_grad();
    let macs = (batch * ch * ch * hw * hw * 9 * iters) as f64;

    // forward only (no grads tracked)
    let start = Instant::now();
    for _ in 0..iters {
        let _ = x.conv2d(&w.detach(), Some(&b.detach()), 1).unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("conv fwd only:      {:5.1} ms/iter  {:5.1} GFLOPS", dt / iters as f64 * 1e3, gflops(macs, dt));

    // fwd + full backward (x, w, b all tracked)
    let start = Instant::now();
    for _ in 0..iters {
        let y = xg.conv2d(&w, Some(&b), 1).unwrap();
        let _ = y.sum().unwrap().backward().unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("conv fwd+bwd(all):  {:5.1} ms/iter  {:5.1} GFLOPS eff", dt / iters as f64 * 1e3, gflops(3.0 * macs, dt));

    // fwd + backward for weights only (input not tracked)
    let start = Instant::now();
    for _ in 0..iters {
        let y = x.conv2d(&w, Some(&b), 1).unwrap();
        let _ = y.sum().unwrap().backward().unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("conv fwd+bwd(w):    {:5.1} ms/iter", dt / iters as f64 * 1e3);

    // diff conv paths
    let start = Instant::now();
    for _ in 0..iters {
        let _ = x.diff_conv2d(&w.detach(), DiffKind::Horizontal).unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("diff fwd only:      {:5.1} ms/iter", dt / iters as f64 * 1e3);

    let start = Instant::now();
    for _ in 0..iters {
        let y = xg.diff_conv2d(&w, DiffKind::Horizontal).unwrap();
        let _ = y.sum().unwrap().backward().unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("diff fwd+bwd(all):  {:5.1} ms/iter", dt / iters as f64 * 1e3);

    // fused five-branch unit (the network's main block)
    let wb: Vec<Tensor<f32>> = (0..4)
        .map(|_| {
            Tensor::<f32>::gaussian(&[ch, ch, 3, 3], &mut rng)
                .unwrap()
                .with_grad()
        })
        .collect();
    let start = Instant::now();
    for _ in 0..iters {
        let y = xg
            .rdc_conv2d(&w, &b, Some(&wb[0]), Some(&wb[1]), Some(&wb[2]), Some(&wb[3]))
            .unwrap();
        let _ = y.sum().unwrap().backward().unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!(
        "rdc5 fwd+bwd(all):  {:5.1} ms/iter  ({:4.1} GFLOPS eff on 5x plain-conv flops)",
        dt / iters as f64 * 1e3,
        gflops(5.0 * 3.0 * macs, dt)
    );
}
