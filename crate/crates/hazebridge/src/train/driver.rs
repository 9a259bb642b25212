//! Run-to-completion training drivers used by the command-line tool:
//! batch selection, loss logging, and periodic checkpoints around the
//! per-step trainers.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::checkpoint::{save_checkpoint, CheckpointManifest};
use crate::model::{ModelConfig, PredictorMode, PredictorNet};
use crate::rng::RngStream;
use crate::schedule::BridgeSchedule;
use crate::tensor::Tensor;
use crate::train::{FrozenLabeler, PseudoLabeler, Stage1Trainer, Stage2Trainer, TrainConfig};

// Stream ids derived from the root seed; one purpose each.
const STREAM_STAGE1_INIT: u64 = 0x10;
const STREAM_STAGE1_BATCH: u64 = 0x11;
const STREAM_STAGE1_DIFFUSE: u64 = 0x12;
const STREAM_STAGE2_INIT: u64 = 0x20;
const STREAM_STAGE2_BATCH: u64 = 0x21;
const STREAM_STAGE2_DIFFUSE: u64 = 0x22;

/// Appends `iteration,stage,loss,lr,wall_time_s` rows.
pub struct LossLogger {
    file: File,
    path: PathBuf,
    start: Instant,
}

impl LossLogger {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "iteration,stage,loss,lr,wall_time_s").map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            file,
            path,
            start: Instant::now(),
        })
    }

    pub fn log(&mut self, iteration: usize, stage: u8, loss: f64, lr: f64) -> Result<()> {
        writeln!(
            self.file,
            "{iteration},{stage},{loss:.8},{lr:.3e},{:.3}",
            self.start.elapsed().as_secs_f64()
        )
        .map_err(|e| Error::io(&self.path, e))
    }
}

fn pick_batch(count: usize, pool: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..count).map(|_| rng.uniform_usize(0, pool - 1)).collect()
}

/// Train stage 1 on the paired split; writes `loss_stage1.csv`, periodic
/// checkpoints, and `ckpt_stage1.hbc`. Returns the final checkpoint path.
pub fn run_stage1(
    config: &TrainConfig,
    model: ModelConfig,
    dataset: &Dataset,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    config.validate()?;
    if model.mode != PredictorMode::Dual {
        return Err(Error::Config("stage 1 requires a dual-bridge model".into()));
    }
    if dataset.paired.is_empty() {
        return Err(Error::InvalidDataset("no paired training items".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut init = RngStream::new(config.seed, STREAM_STAGE1_INIT);
    let mut trainer = Stage1Trainer::new(config, model, &mut init)?;
    trainer.dump_dir = Some(out_dir.join("dumps"));
    let mut batch_rng = RngStream::new(config.seed, STREAM_STAGE1_BATCH);
    let mut diffuse_rng = RngStream::new(config.seed, STREAM_STAGE1_DIFFUSE);
    let mut logger = LossLogger::create(out_dir.join("loss_stage1.csv"))?;
    let manifest = CheckpointManifest {
        format_version: 1,
        stage: "stage1".into(),
        t_steps: config.t_steps,
        s: config.s,
        model,
    };
    for iter in 0..config.stage1_iters {
        let idx = pick_batch(
            config.batch_size.min(dataset.paired.len()),
            dataset.paired.len(),
            &mut batch_rng,
        );
        let batch: Vec<_> = idx
            .iter()
            .map(|&i| {
                (
                    dataset.paired[i].0.detach(),
                    dataset.paired[i].1.detach(),
                )
            })
            .collect();
        let loss = trainer.step(&batch, &mut diffuse_rng)?;
        logger.log(iter, 1, loss, config.lr)?;
        if config.checkpoint_every > 0
            && (iter + 1) % config.checkpoint_every == 0
            && iter + 1 < config.stage1_iters
        {
            save_checkpoint(
                out_dir.join(format!("ckpt_stage1_iter{:06}.hbc", iter + 1)),
                &manifest,
                trainer.net.store(),
            )?;
        }
        if iter % config.log_every.max(1) == 0 {
            log::info!("stage1 iter {iter}: loss {loss:.5}");
        }
    }
    let path = out_dir.join("ckpt_stage1.hbc");
    save_checkpoint(&path, &manifest, trainer.net.store())?;
    Ok(path)
}

/// Train stage 2 on the unpaired clean split against a frozen stage-1
/// network. Returns the final checkpoint path.
pub fn run_stage2(
    config: &TrainConfig,
    model: ModelConfig,
    frozen: PredictorNet<f32>,
    dataset: &Dataset,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    config.validate()?;
    if dataset.unpaired_clean.is_empty() {
        return Err(Error::InvalidDataset("no unpaired clean items".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sched = BridgeSchedule::new(config.t_steps, config.s)?;
    // The frozen net is held by the trainer for lifetime reasons; labeling
    // uses a second handle on the same weights.
    let frozen_for_labels =
        PredictorNet::from_parameters(*frozen.config(), frozen.store(), true)?;
    let mut init = RngStream::new(config.seed, STREAM_STAGE2_INIT);
    let mut trainer = Stage2Trainer::new(config, model, frozen, &mut init)?;
    trainer.dump_dir = Some(out_dir.join("dumps"));
    let labeler = FrozenLabeler {
        frozen: &frozen_for_labels,
        sched: &sched,
        config: config.pseudo_labels.clone(),
    };
    let mut batch_rng = RngStream::new(config.seed, STREAM_STAGE2_BATCH);
    let mut diffuse_rng = RngStream::new(config.seed, STREAM_STAGE2_DIFFUSE);
    let mut logger = LossLogger::create(out_dir.join("loss_stage2.csv"))?;
    let manifest = CheckpointManifest {
        format_version: 1,
        stage: "stage2".into(),
        t_steps: config.t_steps,
        s: config.s,
        model,
    };

    // Optional label cache: endpoints are deterministic under the one-shot
    // generator, so caching only trades memory for compute.
    let cache: Option<Vec<Tensor<f32>>> = if config.cache_pseudo_labels {
        let mut cache_rng = RngStream::new(config.seed, STREAM_STAGE2_DIFFUSE ^ 0xCACE);
        Some(labeler.label(&dataset.unpaired_clean, &mut cache_rng)?)
    } else {
        None
    };

    for iter in 0..config.stage2_iters {
        let idx = pick_batch(
            config.batch_size.min(dataset.unpaired_clean.len()),
            dataset.unpaired_clean.len(),
            &mut batch_rng,
        );
        let xs: Vec<Tensor<f32>> = idx
            .iter()
            .map(|&i| dataset.unpaired_clean[i].detach())
            .collect();
        let loss = if let Some(cache) = &cache {
            let cached = CachedLabeler {
                items: &dataset.unpaired_clean,
                labels: cache,
                idx: &idx,
            };
            trainer.step(&xs, &cached, &mut diffuse_rng)?
        } else {
            trainer.step(&xs, &labeler, &mut diffuse_rng)?
        };
        logger.log(iter, 2, loss, config.lr)?;
        if config.checkpoint_every > 0
            && (iter + 1) % config.checkpoint_every == 0
            && iter + 1 < config.stage2_iters
        {
            save_checkpoint(
                out_dir.join(format!("ckpt_stage2_iter{:06}.hbc", iter + 1)),
                &manifest,
                trainer.net.store(),
            )?;
        }
        if iter % config.log_every.max(1) == 0 {
            log::info!("stage2 iter {iter}: loss {loss:.5}");
        }
    }
    let path = out_dir.join("ckpt_stage2.hbc");
    save_checkpoint(&path, &manifest, trainer.net.store())?;
    Ok(path)
}

struct CachedLabeler<'a> {
    items: &'a [Tensor<f32>],
    labels: &'a [Tensor<f32>],
    idx: &'a [usize],
}

impl<'a> PseudoLabeler for CachedLabeler<'a> {
    fn label(&self, xs: &[Tensor<f32>], _rng: &mut RngStream) -> Result<Vec<Tensor<f32>>> {
        debug_assert_eq!(xs.len(), self.idx.len());
        let _ = self.items;
        Ok(self.idx.iter().map(|&i| self.labels[i].detach()).collect())
    }
}
