//! Acceptance suite: every release criterion, one test each, printing one
//! pass line per criterion (run with `--nocapture` to see them). Monte
//! Carlo checks use fixed seeds, so results are reproducible.
//!
//! The long-running end-to-end criteria (9, 10, 11) share one trained
//! pipeline inside a single test to avoid retraining; it still prints an
//! individual line per criterion.

use hazebridge::bridge::{
    ddim_grid, forward_marginal, forward_transition, reverse_step_to, sample, DiffusedState,
    OraclePredictor, SamplerKind, SamplerMode,
};
use hazebridge::data::{synth_item, SynthParams};
use hazebridge::metrics::{energy_distance, psnr, ssim, LUMA};
use hazebridge::model::{network_gradcheck, ModelConfig, PredictorMode, PredictorNet};
use hazebridge::optim::{Adam, AdamConfig};
use hazebridge::schedule::BridgeSchedule;
use hazebridge::tensor::{gradcheck, DiffKind, Tensor};
use hazebridge::train::{
    make_pseudo_pair, stack_items, supervised_single_bridge_step, ExactLabeler, Stage1Trainer,
    Stage2Trainer, TrainConfig,
};
use hazebridge::RngStream;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn criterion_01_schedule_identities() {
    let start = std::time::Instant::now();
    for &t_steps in &[2usize, 4, 50, 1000] {
        for &s in &[0.5, 1.0, 2.0, 4.0] {
            let sched = BridgeSchedule::new(t_steps, s).unwrap();
            // endpoint pinning
            assert_eq!(sched.m(0), 0.0);
            assert_eq!(sched.m(t_steps), 1.0);
            assert_eq!(sched.delta(0), 0.0);
            assert_eq!(sched.delta(t_steps), 0.0);
            for t in 1..=t_steps {
                assert!(sched.m(t) > sched.m(t - 1), "m not strictly increasing");
                if t < t_steps {
                    assert!(sched.delta(t) > 0.0);
                }
                // marginal/transition variance consistency, 1e-12 relative
                let k = sched.one_minus_m(t) / sched.one_minus_m(t - 1);
                let recomposed = sched.delta_cond(t) + sched.delta(t - 1) * k * k;
                let rel = (sched.delta(t) - recomposed).abs() / sched.delta(t).max(1e-30);
                assert!(rel <= 1e-12, "T={t_steps} s={s} t={t}: rel {rel}");
            }
            // exact symmetry and exact maximum s/2 at T/2 (T is even here)
            for t in 0..=t_steps {
                assert_eq!(sched.delta(t), sched.delta(t_steps - t));
            }
            let max = sched.deltas().iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, s / 2.0);
            assert_eq!(sched.delta(t_steps / 2), s / 2.0);
        }
    }
    // hand-derived T=4, s=1 table
    let sched = BridgeSchedule::new(4, 1.0).unwrap();
    assert_eq!(sched.ms(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(sched.deltas(), &[0.0, 0.375, 0.5, 0.375, 0.0]);
    assert!((sched.delta_cond(2) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(sched.delta_cond(3), 0.25);
    let r2 = sched.reverse_coefficients(2).unwrap();
    assert!((r2.a - 0.5).abs() < 1e-15 && (r2.c - 0.5).abs() < 1e-15 && r2.b.abs() < 1e-15);
    assert_eq!(r2.var, 0.25);
    let r3 = sched.reverse_coefficients(3).unwrap();
    assert!((r3.var - 1.0 / 3.0).abs() < 1e-15);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("[PASS] criterion 1: schedule identities (T in {{2,4,50,1000}}, s in {{0.5,1,2,4}}) in {elapsed:?}");
}

#[test]
fn criterion_02_chain_vs_marginal_monte_carlo() {
    let start = std::time::Instant::now();
    let sched = BridgeSchedule::new(4, 1.0).unwrap();
    let n = 100_000usize;
    let mut rng = RngStream::new(20260402, 2);
    let z0: Tensor<f64> = Tensor::full(&[n], 0.0).unwrap();
    let z_end: Tensor<f64> = Tensor::full(&[n], 1.0).unwrap();
    let mut z = z0.detach();
    for t in 1..=4usize {
        z = forward_transition(&z, &z_end, t, &sched, &mut rng).unwrap();
        let (mean, var) = mean_var(z.data());
        let want_mean = sched.m(t);
        let want_var = sched.delta(t);
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (mean - want_mean).abs() <= 3.0 * se_mean,
            "t={t}: mean {mean} vs {want_mean} (3se {})",
            3.0 * se_mean
        );
        assert!(
            (var - want_var).abs() <= 3.0 * se_var,
            "t={t}: var {var} vs {want_var} (3se {})",
            3.0 * se_var
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30);
    println!("[PASS] criterion 2: chain-vs-marginal Monte Carlo ({n} chains) in {elapsed:?}");
}

#[test]
fn criterion_03_posterior_oracle() {
    let start = std::time::Instant::now();
    let sched = BridgeSchedule::new(4, 1.0).unwrap();
    let n = 1_000_000usize;
    let bins = 40usize;
    let mut rng = RngStream::new(20260403, 3);
    let z0v = 0.0f64;
    let z_endv = 1.0f64;
    let z0: Tensor<f64> = Tensor::full(&[n], z0v).unwrap();
    let z_end: Tensor<f64> = Tensor::full(&[n], z_endv).unwrap();
    for t in 2..=3usize {
        let prev = forward_marginal(&z0, &z_end, t - 1, &sched, &mut rng).unwrap();
        let cur = forward_transition(&prev, &z_end, t, &sched, &mut rng).unwrap();
        let r = sched.reverse_coefficients(t).unwrap();
        // quantile bins on z_t
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cur.data()[a].partial_cmp(&cur.data()[b]).unwrap());
        let per = n / bins;
        for b in 0..bins {
            let idx = &order[b * per..(b + 1) * per];
            let zt: Vec<f64> = idx.iter().map(|&i| cur.data()[i]).collect();
            let zprev: Vec<f64> = idx.iter().map(|&i| prev.data()[i]).collect();
            let (zt_mean, zt_var) = mean_var(&zt);
            let (got_mean, got_var) = mean_var(&zprev);
            // The conditional mean is affine in z_t, so evaluating it at the
            // bin's mean is exact; the bin's z_t spread inflates the
            // conditional variance by a^2 * var(z_t | bin).
            let want_mean = r.a * zt_mean + r.b * z_endv + r.c * z0v;
            let want_var = r.var + r.a * r.a * zt_var;
            let m = per as f64;
            let se_mean = (want_var / m).sqrt();
            let se_var = want_var * (2.0 / (m - 1.0)).sqrt();
            assert!(
                (got_mean - want_mean).abs() <= 3.0 * se_mean,
                "t={t} bin {b}: mean {got_mean} vs {want_mean} (3se {})",
                3.0 * se_mean
            );
            assert!(
                (got_var - want_var).abs() <= 3.0 * se_var,
                "t={t} bin {b}: var {got_var} vs {want_var} (3se {})",
                3.0 * se_var
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60);
    println!(
        "[PASS] criterion 3: posterior conditional matches reverse coefficients ({n} draws, {bins} bins) in {elapsed:?}"
    );
}

#[test]
fn criterion_04_time_reversal_sampling() {
    let start = std::time::Instant::now();
    let sched = BridgeSchedule::new(4, 1.0).unwrap();
    let mode = SamplerMode::new(SamplerKind::Posterior, 4);
    let n = 100_000usize;
    let mut rng = RngStream::new(20260404, 4);
    // two-point mixture for the clean state; fixed endpoint
    let (v0, v1, p1) = (-0.5f64, 1.5f64, 0.6f64);
    let z_endv = 1.0f64;
    let mix_mean = (1.0 - p1) * v0 + p1 * v1;
    let mix_var = (1.0 - p1) * (v0 - mix_mean).powi(2) + p1 * (v1 - mix_mean).powi(2);
    let z0_pop: Vec<f64> = (0..n)
        .map(|_| if rng.uniform_f64() < p1 { v1 } else { v0 })
        .collect();
    let z0 = Tensor::from_vec(&[n], z0_pop).unwrap();
    let z_end: Tensor<f64> = Tensor::full(&[n], z_endv).unwrap();
    // reverse chain with the per-chain perfect clean-state oracle
    let grid = ddim_grid(4, 4).unwrap();
    let mut state = DiffusedState {
        z: z_end.detach(),
        t: 4,
        z_end: z_end.detach(),
    };
    for (i, &t) in grid.iter().enumerate() {
        assert_eq!(state.t, t);
        let to = grid.get(i + 1).copied().unwrap_or(0);
        state = reverse_step_to(&state, &z0, to, &sched, SamplerKind::Posterior, &mut rng).unwrap();
        // the population at each grid point must match the forward marginal
        // of the mixture
        let (mean, var) = mean_var(state.z.data());
        let om = sched.one_minus_m(to);
        let want_mean = om * mix_mean + sched.m(to) * z_endv;
        let want_var = om * om * mix_var + sched.delta(to);
        let se_mean = (want_var.max(1e-12) / n as f64).sqrt();
        let se_var = want_var * (2.0 / (n as f64 - 1.0)).sqrt() + 1e-12;
        assert!(
            (mean - want_mean).abs() <= 3.0 * se_mean,
            "to={to}: mean {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() <= 3.0 * se_var,
            "to={to}: var {var} vs {want_var}"
        );
    }
    // final population vs the mixture itself
    let (mean, var) = mean_var(state.z.data());
    let se_mean = (mix_var / n as f64).sqrt();
    let se_var = mix_var * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!((mean - mix_mean).abs() <= 3.0 * se_mean);
    assert!((var - mix_var).abs() <= 3.0 * se_var);
    // the sampling loop produces the same distribution (smoke on the public
    // entry point with a fixed oracle)
    let oracle = OraclePredictor(Tensor::<f64>::full(&[16], 0.3).unwrap());
    let out = sample(
        &oracle,
        &Tensor::full(&[16], z_endv).unwrap(),
        &sched,
        &mode,
        &mut rng,
    )
    .unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    let elapsed = start.elapsed();
    println!(
        "[PASS] criterion 4: time-reversal with perfect oracle matches forward mixture ({n} chains) in {elapsed:?}"
    );
}

#[test]
fn criterion_05_rdc_merge_equivalence_and_nulling() {
    let start = std::time::Instant::now();
    let mut rng = RngStream::new(20260405, 5);
    let ch = 3usize;
    let mut worst = 0.0f32;
    for _ in 0..100 {
        // weights at initialization scale, the regime the tolerance is
        // calibrated for (unit-variance weights inflate outputs ~10x and
        // with them the f32 rounding gap between the two evaluation orders)
        let weights: Vec<Tensor<f32>> = (0..5)
            .map(|_| {
                Tensor::gaussian(&[ch, ch, 3, 3], &mut rng)
                    .unwrap()
                    .scale(0.3)
                    .unwrap()
            })
            .collect();
        let bias: Tensor<f32> = Tensor::gaussian(&[ch], &mut rng).unwrap();
        // merged kernel: vanilla plus each branch's equivalent plain kernel
        let mut merged = weights[0].data().to_vec();
        for (kind, w) in [
            (DiffKind::Central, &weights[1]),
            (DiffKind::Angular, &weights[2]),
            (DiffKind::Horizontal, &weights[3]),
            (DiffKind::Vertical, &weights[4]),
        ] {
            for (m, t) in merged.iter_mut().zip(kind.transform(w.data())) {
                *m += t;
            }
        }
        let merged = Tensor::from_vec(&[ch, ch, 3, 3], merged).unwrap();
        let x: Tensor<f32> = Tensor::gaussian(&[1, ch, 8, 8], &mut rng).unwrap();
        let branch_sum = x
            .rdc_conv2d(
                &weights[0],
                &bias,
                Some(&weights[1]),
                Some(&weights[2]),
                Some(&weights[3]),
                Some(&weights[4]),
            )
            .unwrap();
        for _ in 0..100 {
            let x: Tensor<f32> = Tensor::gaussian(&[1, ch, 8, 8], &mut rng).unwrap();
            let a = x
                .rdc_conv2d(
                    &weights[0],
                    &bias,
                    Some(&weights[1]),
                    Some(&weights[2]),
                    Some(&weights[3]),
                    Some(&weights[4]),
                )
                .unwrap();
            let b = x.conv2d_replicate(&merged, Some(&bias)).unwrap();
            let max = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(u, v)| (u - v).abs())
                .fold(0.0f32, f32::max);
            if max > worst {
                worst = max;
            }
        }
        let _ = branch_sum;
        // constant-input nulling: exact zeros for every difference branch
        for kind in [
            DiffKind::Central,
            DiffKind::Angular,
            DiffKind::Horizontal,
            DiffKind::Vertical,
        ] {
            let w: Tensor<f32> = Tensor::gaussian(&[ch, ch, 3, 3], &mut rng).unwrap();
            let level = rng.uniform_range(-2.0, 2.0) as f32;
            let x = Tensor::full(&[1, ch, 6, 6], level).unwrap();
            let y = x.diff_conv2d(&w, kind).unwrap();
            assert!(
                y.data().iter().all(|&v| v == 0.0),
                "{kind:?} leaked on constant input"
            );
        }
    }
    assert!(worst < 1e-5, "max |branch sum - merged| = {worst}");
    let elapsed = start.elapsed();
    println!(
        "[PASS] criterion 5: merge equivalence (100 blocks x 100 inputs, max dev {worst:.2e}) and exact constant nulling in {elapsed:?}"
    );
}

#[test]
fn criterion_06_gradient_checks() {
    let start = std::time::Instant::now();
    let reports = gradcheck::check_all_ops(20, 20260406);
    for report in &reports {
        assert!(
            report.max_rel_err < 1e-3,
            "{}: relative error {} over {} coords",
            report.op,
            report.max_rel_err,
            report.coords_checked
        );
    }
    let worst_op = reports
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let (worst_net, coords) = network_gradcheck(20, 1, 20260407).unwrap();
    assert!(worst_net < 1e-3, "network relative error {worst_net}");
    let elapsed = start.elapsed();
    println!(
        "[PASS] criterion 6: gradients vs central differences (ops worst {worst_op:.2e}; network worst {worst_net:.2e} over {coords} coords) in {elapsed:?}"
    );
}

#[test]
fn criterion_07_stage1_overfit() {
    let start = std::time::Instant::now();
    let params = SynthParams {
        count: 1,
        size: 32,
        ..Default::default()
    };
    let mut gen = RngStream::new(20260408, 7);
    let (clean, _, hazy) = synth_item(&params, &mut gen).unwrap();
    let pair = vec![(clean.detach(), hazy.detach())];

    let config = TrainConfig {
        t_steps: 50,
        lr: 5e-4,
        batch_size: 1,
        ..Default::default()
    };
    let model = ModelConfig::desk(PredictorMode::Dual);
    let mut init = RngStream::new(7, 0x10);
    let mut trainer = Stage1Trainer::new(&config, model, &mut init).unwrap();
    let mut rng = RngStream::new(7, 0x12);
    let mut best = f64::INFINITY;
    let mut steps = 0usize;
    for i in 0..2000 {
        let loss = trainer.step(&pair, &mut rng).unwrap();
        if loss < best {
            best = loss;
        }
        steps = i + 1;
        if best < 0.015 && i >= 200 {
            break;
        }
    }
    assert!(best < 0.02, "best stage-1 loss {best} after {steps} steps");

    // the memorized pair yields a faithful one-shot pseudo endpoint
    let frozen = PredictorNet::from_parameters(model, trainer.net.store(), true).unwrap();
    let (_, y_hat) = make_pseudo_pair(&pair[0].0, &frozen, config.t_steps).unwrap();
    let l1 = y_hat
        .data()
        .iter()
        .zip(pair[0].1.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / y_hat.numel() as f64;
    assert!(l1 < 0.05, "pseudo endpoint L1 {l1}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "[PASS] criterion 7: single-pair overfit reached L1 {best:.4} in {steps} steps ({elapsed:?}); memorized pseudo endpoint L1 {l1:.4}"
    );
}

#[test]
fn criterion_08_stage2_oracle_equivalence() {
    let start = std::time::Instant::now();
    let config = TrainConfig {
        t_steps: 8,
        lr: 1e-3,
        batch_size: 4,
        ..Default::default()
    };
    let dual = ModelConfig::tiny(PredictorMode::Dual);
    let single = ModelConfig::tiny(PredictorMode::Single);
    let mut gen = RngStream::new(20260409, 8);
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = (0..6)
        .map(|_| {
            let x: Tensor<f32> = Tensor::gaussian(&[2, 8, 8], &mut gen).unwrap();
            let y: Tensor<f32> = Tensor::gaussian(&[2, 8, 8], &mut gen).unwrap();
            (x.scale(0.3).unwrap(), y.scale(0.3).unwrap())
        })
        .collect();

    let mut frng = RngStream::new(8, 2);
    let fnet: PredictorNet<f32> = PredictorNet::new(dual, &mut frng).unwrap();
    let frozen = PredictorNet::from_parameters(dual, fnet.store(), true).unwrap();

    let mut init_a = RngStream::new(11, 0x20);
    let mut trainer = Stage2Trainer::new(&config, single, frozen, &mut init_a).unwrap();
    let labeler = ExactLabeler {
        labels: pairs.iter().map(|(x, y)| (x.detach(), y.detach())).collect(),
    };
    let mut init_b = RngStream::new(11, 0x20);
    let mut sup_net: PredictorNet<f32> = PredictorNet::new(single, &mut init_b).unwrap();
    let mut sup_opt = Adam::new(AdamConfig::with_lr(config.lr), sup_net.store());

    let mut rng_a = RngStream::new(11, 0x21);
    let mut rng_b = RngStream::new(11, 0x21);
    let mut matched = 0usize;
    for _ in 0..40 {
        let xs: Vec<Tensor<f32>> = pairs.iter().map(|(x, _)| x.detach()).collect();
        let a = trainer.step(&xs, &labeler, &mut rng_a).unwrap();
        let b = supervised_single_bridge_step(
            &mut sup_net,
            &mut sup_opt,
            &trainer.sched,
            &pairs,
            &mut rng_b,
        )
        .unwrap();
        assert_eq!(
            (a as f32).to_bits(),
            (b as f32).to_bits(),
            "traces diverged at step {matched}"
        );
        matched += 1;
    }
    // and the resulting weights agree bitwise
    for ((_, wa), (_, wb)) in trainer.net.store().iter().zip(sup_net.store().iter()) {
        assert!(wa
            .data()
            .iter()
            .zip(wb.data())
            .all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    let elapsed = start.elapsed();
    println!(
        "[PASS] criterion 8: stage 2 with injected true endpoints is bit-identical to supervised training ({matched} steps) in {elapsed:?}"
    );
}

struct Evaluated {
    psnr_gain: f64,
    ssim_improved: usize,
    test_count: usize,
    mean_dehazed_psnr: f64,
    mean_hazy_psnr: f64,
}

fn train_and_eval_pipeline(
    s: f64,
    steps: usize,
    seed: u64,
    iters: usize,
) -> (Evaluated, Stage1Trainer, Stage2Trainer, Vec<(Tensor<f32>, Tensor<f32>)>) {
    // corpus: 32 paired + 32 unpaired + 16 held-out test items
    let params = SynthParams {
        count: 80,
        size: 32,
        ..Default::default()
    };
    let root = RngStream::new(20260809, 0x5EED);
    let mut items = Vec::new();
    for id in 0..params.count {
        let mut item_rng = root.derive(id as u64);
        let (clean, _, hazy) = synth_item(&params, &mut item_rng).unwrap();
        items.push((clean, hazy));
    }
    let test: Vec<_> = items[64..].to_vec();
    let paired: Vec<_> = items[..32].to_vec();
    let unpaired_clean: Vec<Tensor<f32>> = items[32..64].iter().map(|(c, _)| c.detach()).collect();

    let config = TrainConfig {
        t_steps: 50,
        s,
        lr: 2e-4,
        batch_size: 4,
        stage1_iters: iters,
        stage2_iters: iters,
        seed,
        ..Default::default()
    };
    let dual = ModelConfig::desk(PredictorMode::Dual);
    let single = ModelConfig::desk(PredictorMode::Single);

    // stage 1
    let mut init1 = RngStream::new(seed, 0x10);
    let mut s1 = Stage1Trainer::new(&config, dual, &mut init1).unwrap();
    let mut batch1 = RngStream::new(seed, 0x11);
    let mut diff1 = RngStream::new(seed, 0x12);
    for _ in 0..config.stage1_iters {
        let batch: Vec<_> = (0..config.batch_size)
            .map(|_| {
                let i = batch1.uniform_usize(0, paired.len() - 1);
                (paired[i].0.detach(), paired[i].1.detach())
            })
            .collect();
        s1.step(&batch, &mut diff1).unwrap();
    }

    // stage 2 against the frozen stage-1 network
    let frozen = PredictorNet::from_parameters(dual, s1.net.store(), true).unwrap();
    let labeler_net = PredictorNet::from_parameters(dual, s1.net.store(), true).unwrap();
    let sched = BridgeSchedule::new(config.t_steps, config.s).unwrap();
    let labeler = hazebridge::train::FrozenLabeler {
        frozen: &labeler_net,
        sched: &sched,
        config: hazebridge::train::PseudoLabelConfig::OneShot,
    };
    let mut init2 = RngStream::new(seed, 0x20);
    let mut s2 = Stage2Trainer::new(&config, single, frozen, &mut init2).unwrap();
    let mut batch2 = RngStream::new(seed, 0x21);
    let mut diff2 = RngStream::new(seed, 0x22);
    for _ in 0..config.stage2_iters {
        let xs: Vec<Tensor<f32>> = (0..config.batch_size)
            .map(|_| {
                let i = batch2.uniform_usize(0, unpaired_clean.len() - 1);
                unpaired_clean[i].detach()
            })
            .collect();
        s2.step(&xs, &labeler, &mut diff2).unwrap();
    }

    let eval = evaluate_sampler(&s2, steps, seed, &test);
    (eval, s1, s2, test)
}

fn evaluate_sampler(
    s2: &Stage2Trainer,
    steps: usize,
    seed: u64,
    test: &[(Tensor<f32>, Tensor<f32>)],
) -> Evaluated {
    let mode = SamplerMode::new(SamplerKind::Posterior, steps);
    let sampler = s2.net.sampler(true).unwrap();
    let mut rng = RngStream::new(seed, 0x5A);
    let mut gain_sum = 0.0;
    let mut hazy_sum = 0.0;
    let mut dehazed_sum = 0.0;
    let mut ssim_improved = 0usize;
    for (clean, hazy) in test {
        let z_end = stack_items(std::slice::from_ref(hazy)).unwrap();
        let z0 = sample(&sampler, &z_end, &s2.sched, &mode, &mut rng).unwrap();
        let dehazed = Tensor::from_vec(clean.shape(), z0.data().to_vec()).unwrap();
        let p_hazy = psnr(hazy, clean, 1.0).unwrap();
        let p_dehazed = psnr(&dehazed, clean, 1.0).unwrap();
        let s_hazy = ssim(hazy, clean).unwrap();
        let s_dehazed = ssim(&dehazed, clean).unwrap();
        gain_sum += p_dehazed - p_hazy;
        hazy_sum += p_hazy;
        dehazed_sum += p_dehazed;
        if s_dehazed > s_hazy {
            ssim_improved += 1;
        }
    }
    let n = test.len() as f64;
    Evaluated {
        psnr_gain: gain_sum / n,
        ssim_improved,
        test_count: test.len(),
        mean_dehazed_psnr: dehazed_sum / n,
        mean_hazy_psnr: hazy_sum / n,
    }
}

#[test]
fn criterion_09_10_11_end_to_end_toy_dehazing_and_ablations() {
    let start = std::time::Instant::now();
    let iters = 5000usize;
    let (eval, s1, s2, test) = train_and_eval_pipeline(1.0, 10, 1, iters);

    // supporting checks folded into the trained pipeline:
    // stage-1 loss trend over the first 500 iterations (least-squares slope)
    let head = &s1.loss_trace[..500];
    let n = head.len() as f64;
    let tbar = (n - 1.0) / 2.0;
    let ybar = head.iter().sum::<f64>() / n;
    let slope = head
        .iter()
        .enumerate()
        .map(|(i, &y)| (i as f64 - tbar) * (y - ybar))
        .sum::<f64>()
        / head
            .iter()
            .enumerate()
            .map(|(i, _)| (i as f64 - tbar) * (i as f64 - tbar))
            .sum::<f64>();
    assert!(slope < 0.0, "stage-1 loss not trending down: slope {slope}");
    assert!(
        (0.1..=1.5).contains(&s1.loss_trace[0]),
        "initial stage-1 loss {} outside the unit-scale band",
        s1.loss_trace[0]
    );

    // pseudo-endpoint quality on held-out items where the true hazy image
    // is known: the one-shot prediction must beat the clean image as a
    // stand-in for the hazy one
    let frozen = PredictorNet::from_parameters(*s1.net.config(), s1.net.store(), true).unwrap();
    let mut better = 0usize;
    for (clean, hazy) in &test {
        let (_, y_hat) = make_pseudo_pair(clean, &frozen, s2.sched.steps()).unwrap();
        let p_pseudo = psnr(&y_hat, hazy, 1.0).unwrap();
        let p_identity = psnr(clean, hazy, 1.0).unwrap();
        if p_pseudo > p_identity {
            better += 1;
        }
    }
    assert!(
        better * 2 > test.len(),
        "pseudo endpoints beat the identity on only {better}/{} held-out items",
        test.len()
    );

    // criterion 9: dehazing gain
    assert!(
        eval.psnr_gain >= 2.0,
        "mean PSNR gain {:.3} dB < 2.0 (hazy {:.2} -> dehazed {:.2})",
        eval.psnr_gain,
        eval.mean_hazy_psnr,
        eval.mean_dehazed_psnr
    );
    assert!(
        eval.ssim_improved * 4 >= eval.test_count * 3,
        "SSIM improved on only {}/{} items",
        eval.ssim_improved,
        eval.test_count
    );
    println!(
        "[PASS] criterion 9: end-to-end toy dehazing gain {:.2} dB (hazy {:.2} dB -> dehazed {:.2} dB), SSIM improved {}/{}",
        eval.psnr_gain, eval.mean_hazy_psnr, eval.mean_dehazed_psnr, eval.ssim_improved, eval.test_count
    );

    // criterion 10: sampling-steps ablation on the same trained model
    let mut psnrs = Vec::new();
    for &steps in &[2usize, 5, 10, 50] {
        let e = evaluate_sampler(&s2, steps, 3, &test);
        psnrs.push((steps, e.mean_dehazed_psnr));
    }
    for pair in psnrs.windows(2) {
        assert!(
            pair[1].1 >= pair[0].1 - 0.3,
            "PSNR dropped beyond the noise band: {:?}",
            psnrs
        );
    }
    assert!(
        psnrs.last().unwrap().1 > psnrs[0].1,
        "50-step PSNR does not exceed 2-step PSNR: {psnrs:?}"
    );
    println!(
        "[PASS] criterion 10: steps ablation non-decreasing within 0.3 dB: {:?}",
        psnrs
            .iter()
            .map(|(s, p)| format!("{s}:{p:.2}"))
            .collect::<Vec<_>>()
    );

    // criterion 11: variance-factor ablation, full retrain at s = 4.0
    let (eval_s4, _, _, _) = train_and_eval_pipeline(4.0, 10, 1, iters);
    assert!(
        eval.mean_dehazed_psnr >= eval_s4.mean_dehazed_psnr,
        "s=1.0 PSNR {:.3} < s=4.0 PSNR {:.3}",
        eval.mean_dehazed_psnr,
        eval_s4.mean_dehazed_psnr
    );
    println!(
        "[PASS] criterion 11: variance-factor ablation s=1.0 ({:.2} dB) >= s=4.0 ({:.2} dB)",
        eval.mean_dehazed_psnr, eval_s4.mean_dehazed_psnr
    );
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 3600,
        "end-to-end pipeline exceeded an hour: {elapsed:?}"
    );
    println!("(criteria 9-11 shared pipeline wall time: {elapsed:?})");
}

// ---- independent metric references for criterion 12 ----

fn psnr_reference(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> f64 {
    // accumulate in reverse order with per-row partials: a deliberately
    // different summation path from the library
    let mut partials = Vec::new();
    for chunk in a.data().chunks(7).zip(b.data().chunks(7)).rev() {
        let mut acc = 0.0f64;
        for (x, y) in chunk.0.iter().zip(chunk.1) {
            let d = *x as f64 - *y as f64;
            acc += d * d;
        }
        partials.push(acc);
    }
    let mse = partials.iter().rev().sum::<f64>() / a.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn ssim_reference(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (c, h, w) = match a.shape() {
        &[c, h, w] => (c, h, w),
        _ => panic!("reference expects [c,h,w]"),
    };
    let plane = h * w;
    let luma = |t: &Tensor<f32>| -> Vec<f64> {
        (0..plane)
            .map(|p| {
                if c == 3 {
                    LUMA[0] * t.data()[p] as f64
                        + LUMA[1] * t.data()[plane + p] as f64
                        + LUMA[2] * t.data()[2 * plane + p] as f64
                } else {
                    t.data()[p] as f64
                }
            })
            .collect()
    };
    let x = luma(a);
    let y = luma(b);
    // direct 2-d window evaluation (no separability)
    let mut taps = [0.0f64; 11];
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *t = (-d * d / (2.0 * 1.5 * 1.5)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut acc = 0.0;
    let mut count = 0usize;
    for r0 in 0..h - 10 {
        for c0 in 0..w - 10 {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = taps[i] * taps[j];
                    let xv = x[(r0 + i) * w + c0 + j];
                    let yv = y[(r0 + i) * w + c0 + j];
                    mx += wgt * xv;
                    my += wgt * yv;
                    mxx += wgt * xv * xv;
                    myy += wgt * yv * yv;
                    mxy += wgt * xv * yv;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn energy_reference(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    // brute force: materialize the full pair-distance tables first
    let n = a.shape()[0];
    let m = b.shape()[0];
    let d = a.shape()[1];
    let dist = |p: &[f64], q: &[f64]| {
        p.iter()
            .zip(q)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    };
    let mut cross = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cross[i * m + j] = dist(&a.data()[i * d..(i + 1) * d], &b.data()[j * d..(j + 1) * d]);
        }
    }
    let mut within_a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            within_a[i * n + j] =
                dist(&a.data()[i * d..(i + 1) * d], &a.data()[j * d..(j + 1) * d]);
        }
    }
    let mut within_b = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            within_b[i * m + j] =
                dist(&b.data()[i * d..(i + 1) * d], &b.data()[j * d..(j + 1) * d]);
        }
    }
    2.0 * cross.iter().sum::<f64>() / (n * m) as f64
        - within_a.iter().sum::<f64>() / (n * n) as f64
        - within_b.iter().sum::<f64>() / (m * m) as f64
}

#[test]
fn criterion_12_metric_oracles() {
    let start = std::time::Instant::now();
    let mut rng = RngStream::new(20260412, 12);
    let mut worst_psnr = 0.0f64;
    let mut worst_ssim = 0.0f64;
    for _ in 0..20 {
        let a: Tensor<f32> = Tensor::gaussian(&[3, 24, 24], &mut rng).unwrap();
        let noise: Tensor<f32> = Tensor::gaussian(&[3, 24, 24], &mut rng).unwrap();
        let b = a.add(&noise.scale(0.1).unwrap()).unwrap();
        let dp = (psnr(&a, &b, 1.0).unwrap() - psnr_reference(&a, &b, 1.0)).abs();
        let ds = (ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs();
        worst_psnr = worst_psnr.max(dp);
        worst_ssim = worst_ssim.max(ds);
    }
    assert!(worst_psnr < 1e-9, "psnr deviation {worst_psnr}");
    assert!(worst_ssim < 1e-6, "ssim deviation {worst_ssim}");

    let x: Tensor<f64> = Tensor::gaussian(&[200, 2], &mut rng).unwrap();
    let shifted: Vec<f64> = Tensor::<f64>::gaussian(&[200, 2], &mut rng)
        .unwrap()
        .data()
        .iter()
        .map(|v| v + 0.7)
        .collect();
    let y = Tensor::from_vec(&[200, 2], shifted).unwrap();
    let de = (energy_distance(&x, &y).unwrap() - energy_reference(&x, &y)).abs();
    assert!(de < 1e-9, "energy distance deviation {de}");
    let elapsed = start.elapsed();
    println!(
        "[PASS] criterion 12: metric oracles (psnr dev {worst_psnr:.1e} dB, ssim dev {worst_ssim:.1e}, energy dev {de:.1e}) in {elapsed:?}"
    );
}
