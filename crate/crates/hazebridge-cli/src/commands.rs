//! Subcommand implementations. Each run writes its resolved configuration
//! snapshot into the output directory before doing any work.

use std::path::Path;

use anyhow::{bail, Context, Result};

use hazebridge::bridge::{sample as bridge_sample, SamplerKind, SamplerMode};
use hazebridge::data;
use hazebridge::io::checkpoint::{load_checkpoint, store_from_entries};
use hazebridge::io::ppm;
use hazebridge::metrics::{psnr, ssim, ItemMetrics, MetricReport};
use hazebridge::model::{PredictorMode, PredictorNet};
use hazebridge::schedule::BridgeSchedule;
use hazebridge::train::{run_stage1, run_stage2, stack_items};
use hazebridge::{RngStream, Tensor};

use crate::config::{write_snapshot, RootConfig};

pub fn synth(config: &RootConfig, out: &Path) -> Result<()> {
    write_snapshot(config, out)?;
    let manifest = data::generate_corpus(
        out,
        config.synth.to_params(),
        (config.train.split_ratio[0], config.train.split_ratio[1]),
        config.synth.test_count,
        config.seed,
    )?;
    let (paired, unpaired, test) = manifest.split_counts();
    println!(
        "generated {} items under {} (paired {paired}, unpaired {unpaired}, test {test})",
        manifest.items.len(),
        out.display()
    );
    Ok(())
}

pub fn train(config: &RootConfig, out: &Path, stage: u8, checkpoint: Option<&Path>) -> Result<()> {
    write_snapshot(config, out)?;
    let train_cfg = config.train_config();
    let dataset = data::load_dataset(&train_cfg.dataset)
        .with_context(|| format!("loading dataset {}", train_cfg.dataset.display()))?;
    match stage {
        1 => {
            let model = config.model.to_model_config(PredictorMode::Dual);
            let path = run_stage1(&train_cfg, model, &dataset, out)?;
            println!("stage 1 complete: {}", path.display());
        }
        2 => {
            let ckpt_path = checkpoint
                .ok_or_else(|| anyhow::anyhow!("stage 2 requires --checkpoint (stage-1 weights)"))?;
            let (manifest, entries) = load_checkpoint(ckpt_path)?;
            if manifest.stage != "stage1" {
                bail!(hazebridge::Error::CheckpointMismatch(format!(
                    "stage 2 needs a stage-1 checkpoint, found `{}`",
                    manifest.stage
                )));
            }
            if manifest.t_steps != train_cfg.t_steps || manifest.s != train_cfg.s {
                bail!(hazebridge::Error::CheckpointMismatch(format!(
                    "checkpoint trained with T={}, s={}; configuration asks T={}, s={}",
                    manifest.t_steps, manifest.s, train_cfg.t_steps, train_cfg.s
                )));
            }
            let store = store_from_entries(entries, false)?;
            let frozen = PredictorNet::from_parameters(manifest.model, &store, true)?;
            let model = config.model.to_model_config(PredictorMode::Single);
            let path = run_stage2(&train_cfg, model, frozen, &dataset, out)?;
            println!("stage 2 complete: {}", path.display());
        }
        other => bail!(hazebridge::Error::Config(format!(
            "unknown training stage {other} (expected 1 or 2)"
        ))),
    }
    Ok(())
}

fn sorted_ppms(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| hazebridge::Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "ppm").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(hazebridge::Error::InvalidDataset(format!(
            "no .ppm files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn sample(
    config: &RootConfig,
    out: &Path,
    input: &Path,
    checkpoint: &Path,
    steps_flag: Option<usize>,
    sampler_flag: Option<String>,
) -> Result<()> {
    write_snapshot(config, out)?;
    let (manifest, entries) = load_checkpoint(checkpoint)?;
    if manifest.model.mode != PredictorMode::Single {
        bail!(hazebridge::Error::CheckpointMismatch(
            "sampling requires a single-bridge (stage-2) checkpoint".into()
        ));
    }
    let store = store_from_entries(entries, false)?;
    let net = PredictorNet::from_parameters(manifest.model, &store, true)?;
    let s = config.sample.s.unwrap_or(manifest.s);
    let sched = BridgeSchedule::new(manifest.t_steps, s)?;
    let steps = steps_flag.unwrap_or(config.sample.steps);
    let kind = SamplerKind::parse(&sampler_flag.unwrap_or_else(|| config.sample.sampler.clone()))?;
    let mode = SamplerMode::new(kind, steps);
    let sampler = net.sampler(config.sample.merged)?;
    let mut rng = RngStream::new(config.seed, 0x5A);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = sorted_ppms(input)?;
    for file in &files {
        let hazy = ppm::read_ppm(file)?;
        let z_end = stack_items(std::slice::from_ref(&hazy))?;
        let z0 = bridge_sample(&sampler, &z_end, &sched, &mode, &mut rng)?;
        let img = Tensor::from_vec(hazy.shape(), z0.data().to_vec())?;
        let name = file.file_name().unwrap();
        ppm::write_ppm(out.join(name), &img)?;
    }
    println!(
        "dehazed {} images with {} sampler at {} steps (T={}, s={s}) into {}",
        files.len(),
        kind.name(),
        steps,
        manifest.t_steps,
        out.display()
    );
    Ok(())
}

pub fn eval(config: &RootConfig, out: &Path, candidate: &Path, reference: &Path) -> Result<()> {
    write_snapshot(config, out)?;
    let cands = sorted_ppms(candidate)?;
    let mut items = Vec::new();
    for cand in &cands {
        let name = cand.file_name().unwrap().to_string_lossy().to_string();
        let ref_path = reference.join(&name);
        if !ref_path.exists() {
            log::warn!("no reference for {name}; skipped");
            continue;
        }
        let a = ppm::read_ppm(cand)?;
        let b = ppm::read_ppm(&ref_path)?;
        items.push(ItemMetrics {
            name,
            psnr: psnr(&a, &b, 1.0)?,
            ssim: ssim(&a, &b)?,
        });
    }
    if items.is_empty() {
        bail!(hazebridge::Error::InvalidDataset(
            "no candidate/reference pairs matched by name".into()
        ));
    }
    let report = MetricReport {
        items,
        energy_distance: None,
    };
    let csv = out.join("report.csv");
    report.write_csv(&csv)?;
    println!(
        "evaluated {} pairs: mean PSNR {:.3} dB, mean SSIM {:.4} -> {}",
        report.items.len(),
        report.mean_psnr(),
        report.mean_ssim(),
        csv.display()
    );
    Ok(())
}

pub fn schedule(config: &RootConfig, out: &Path, t_steps: usize, s: f64) -> Result<()> {
    let sched = BridgeSchedule::new(t_steps, s)?;
    println!("T = {t_steps}, s = {s}");
    println!("{:>4} {:>10} {:>12} {:>12}", "t", "m_t", "delta_t", "d_t|t-1");
    for t in 0..=t_steps {
        let cond = if t >= 1 {
            format!("{:12.8}", sched.delta_cond(t))
        } else {
            format!("{:>12}", "-")
        };
        println!("{t:>4} {:>10.6} {:>12.8} {cond}", sched.m(t), sched.delta(t));
    }
    println!();
    println!(
        "{:>4} {:>10} {:>10} {:>10} {:>12}   (reverse step t -> t-1)",
        "t", "a_t", "b_t", "c_t", "var"
    );
    for t in 1..=t_steps {
        let r = sched.reverse_coefficients(t)?;
        println!(
            "{t:>4} {:>10.6} {:>10.6} {:>10.6} {:>12.8}",
            r.a, r.b, r.c, r.var
        );
    }
    println!();
    println!(
        "{:>4} {:>10} {:>10} {:>10} {:>12}   (printed-form triple)",
        "t", "c_t", "c_end", "c_pred", "var"
    );
    for t in 2..t_steps.max(2) {
        if let Ok(lit) = sched.literal_coefficients(t) {
            println!(
                "{t:>4} {:>10.6} {:>10.6} {:>10.6} {:>12.8}",
                lit.ct, lit.c_end, lit.c_pred, lit.var
            );
        }
    }
    write_snapshot(config, out)?;
    Ok(())
}
