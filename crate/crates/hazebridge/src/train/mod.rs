//! Two-stage training.
//!
//! Stage 1 trains one dual-bridge network on paired data: each pair is
//! diffused along both directions (clean-to-hazy and hazy-to-clean) at
//! independent timesteps and the network regresses both clean endpoints
//! under an L1 objective, so a single set of weights estimates the two
//! conditionals of the joint distribution at once. Stage 2 freezes that
//! network, uses its one-shot endpoint prediction to fabricate a hazy
//! counterpart for each unpaired clean image, and trains a fresh
//! single-bridge network on those pseudo-pairs; stage 2 never fine-tunes
//! stage-1 weights.

mod driver;

pub use driver::{run_stage1, run_stage2, LossLogger};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bridge;
use crate::error::{Error, Result};
use crate::io::container;
use crate::model::{ModelConfig, PredictorMode, PredictorNet};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngStream;
use crate::schedule::BridgeSchedule;
use crate::tensor::Tensor;

/// How stage 2 fabricates the hazy endpoint for an unpaired clean image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum PseudoLabelConfig {
    /// One forward pass of the frozen dual network with the two bridges
    /// held at their endpoints. Deterministic.
    OneShot,
    /// Run the reverse sampler of the hazy-to-clean bridge backwards from
    /// the clean image using the frozen dual network as predictor.
    Sampled { sampler: String, steps: usize },
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig::OneShot
    }
}

/// Training hyperparameters; mirrors the `[train]`/`[schedule]` sections of
/// the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub t_steps: usize,
    pub s: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub seed: u64,
    pub pseudo_labels: PseudoLabelConfig,
    pub dataset: PathBuf,
    /// paired : unpaired split of the training items.
    pub split_ratio: [u32; 2],
    pub cache_pseudo_labels: bool,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_steps: 50,
            s: 1.0,
            lr: 5e-5,
            batch_size: 8,
            stage1_iters: 2000,
            stage2_iters: 2000,
            seed: 42,
            pseudo_labels: PseudoLabelConfig::default(),
            dataset: PathBuf::from("data/desk"),
            split_ratio: [1, 1],
            cache_pseudo_labels: false,
            checkpoint_every: 1000,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.split_ratio == [0, 0] {
            return Err(Error::Config("split ratio cannot be 0:0".into()));
        }
        Ok(())
    }
}

/// The alternating optimization realized as a two-stage plan. Each entry
/// records which conditional(s) of the joint distribution its loss term
/// estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage: u8,
    pub iters: usize,
    /// Stage 2 trains against a frozen stage-1 reference.
    pub frozen_reference: bool,
    /// Conditional distributions this stage's loss estimates.
    pub estimates: Vec<String>,
}

/// Expand a config into the stage plan: paired dual-bridge training of both
/// conditionals, then (unless disabled) unpaired training of the
/// hazy-to-clean conditional against frozen pseudo-endpoints. Zero stage-2
/// iterations degenerate to fully supervised dual-bridge training.
pub fn em_schedule(config: &TrainConfig) -> StagePlan {
    let mut stages = vec![StageSpec {
        stage: 1,
        iters: config.stage1_iters,
        frozen_reference: false,
        estimates: vec!["q(y|x)".into(), "p(x|y)".into()],
    }];
    if config.stage2_iters > 0 {
        stages.push(StageSpec {
            stage: 2,
            iters: config.stage2_iters,
            frozen_reference: true,
            estimates: vec!["p(x|y)".into()],
        });
    }
    StagePlan { stages }
}

/// Stack `[c, h, w]` items into one `[n, c, h, w]` batch.
pub fn stack_items(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or(Error::InvalidDataset(
        "cannot stack an empty batch".into(),
    ))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for item in items {
        if item.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                op: "stack_items",
                lhs: first.shape().to_vec(),
                rhs: item.shape().to_vec(),
            });
        }
        data.extend_from_slice(item.data());
    }
    Tensor::from_vec(&shape, data)
}

/// Extract item `i` of a `[n, ...]` batch.
pub fn batch_item(batch: &Tensor<f32>, i: usize) -> Result<Tensor<f32>> {
    let shape = &batch.shape()[1..];
    let numel: usize = shape.iter().product();
    Tensor::from_vec(shape, batch.data()[i * numel..(i + 1) * numel].to_vec())
}

fn dump_batch(dir: &std::path::Path, tag: &str, tensors: &[(&str, &Tensor<f32>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in tensors {
        container::write_tensor(dir.join(format!("{tag}_{name}.hbt")), *t)?;
    }
    Ok(())
}

/// Paired dual-bridge training state.
pub struct Stage1Trainer {
    pub net: PredictorNet<f32>,
    pub opt: Adam<f32>,
    pub sched: BridgeSchedule,
    pub loss_trace: Vec<f64>,
    pub dump_dir: Option<PathBuf>,
}

impl Stage1Trainer {
    pub fn new(config: &TrainConfig, model: ModelConfig, init_rng: &mut RngStream) -> Result<Self> {
        if model.mode != PredictorMode::Dual {
            return Err(Error::Config("stage 1 requires a dual-bridge model".into()));
        }
        let net = PredictorNet::new(model, init_rng)?;
        let opt = Adam::new(AdamConfig::with_lr(config.lr), net.store());
        Ok(Self {
            net,
            opt,
            sched: BridgeSchedule::new(config.t_steps, config.s)?,
            loss_trace: Vec::new(),
            dump_dir: None,
        })
    }

    /// One optimizer step on a batch of `(clean, hazy)` pairs.
    ///
    /// Per item, two timesteps are drawn independently and the pair is
    /// diffused along both bridge directions; the loss is the mean L1 error
    /// of the network's two clean-endpoint predictions.
    pub fn step(
        &mut self,
        batch: &[(Tensor<f32>, Tensor<f32>)],
        rng: &mut RngStream,
    ) -> Result<f64> {
        let t_max = self.sched.steps();
        let mut z_xs = Vec::with_capacity(batch.len());
        let mut z_ys = Vec::with_capacity(batch.len());
        let mut ts_x = Vec::with_capacity(batch.len());
        let mut ts_y = Vec::with_capacity(batch.len());
        for (x, y) in batch {
            let t_x = rng.uniform_usize(1, t_max);
            let t_y = rng.uniform_usize(1, t_max);
            // clean-to-hazy bridge state at t_x, hazy-to-clean at t_y
            z_xs.push(bridge::forward_marginal(x, y, t_x, &self.sched, rng)?);
            z_ys.push(bridge::forward_marginal(y, x, t_y, &self.sched, rng)?);
            ts_x.push(t_x);
            ts_y.push(t_y);
        }
        let z_x = stack_items(&z_xs)?;
        let z_y = stack_items(&z_ys)?;
        let xs = stack_items(&batch.iter().map(|(x, _)| x.detach()).collect::<Vec<_>>())?;
        let ys = stack_items(&batch.iter().map(|(_, y)| y.detach()).collect::<Vec<_>>())?;
        let (x_hat, y_hat) = self.net.predict_pair(&z_x, &z_y, &ts_x, &ts_y)?;
        let loss = x_hat
            .l1_loss(&xs)?
            .add(&y_hat.l1_loss(&ys)?)?
            .scale(0.5)?;
        let loss_value = loss.item()? as f64;
        if !loss_value.is_finite() {
            if let Some(dir) = &self.dump_dir {
                dump_batch(
                    dir,
                    "stage1_nonfinite",
                    &[(&"z_x", &z_x), (&"z_y", &z_y), (&"x", &xs), (&"y", &ys)],
                )?;
            }
            return Err(Error::NonFinite {
                context: format!("stage-1 loss at iteration {}", self.loss_trace.len()),
            });
        }
        let grads = loss.backward()?;
        self.opt.step(self.net.store_mut(), &grads)?;
        self.loss_trace.push(loss_value);
        Ok(loss_value)
    }
}

/// One-shot pseudo-endpoint for a clean image from the frozen dual network:
/// both bridge inputs sit at their pinned endpoints (the clean-to-hazy
/// bridge at step 0 and the hazy-to-clean bridge at step T are both the
/// clean image), so no noise enters and the output is deterministic.
pub fn make_pseudo_pair(
    x: &Tensor<f32>,
    frozen: &PredictorNet<f32>,
    t_steps: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let batch = stack_items(std::slice::from_ref(&x.detach()))?;
    let (_, y_hat) = frozen.predict_pair(&batch, &batch, &[0], &[t_steps])?;
    y_hat.assert_finite("pseudo endpoint")?;
    Ok((x.detach(), batch_item(&y_hat, 0)?))
}

/// Source of hazy endpoints for stage-2 batches.
pub trait PseudoLabeler {
    fn label(&self, xs: &[Tensor<f32>], rng: &mut RngStream) -> Result<Vec<Tensor<f32>>>;
}

/// Labels from the frozen stage-1 network.
pub struct FrozenLabeler<'a> {
    pub frozen: &'a PredictorNet<f32>,
    pub sched: &'a BridgeSchedule,
    pub config: PseudoLabelConfig,
}

impl<'a> PseudoLabeler for FrozenLabeler<'a> {
    fn label(&self, xs: &[Tensor<f32>], rng: &mut RngStream) -> Result<Vec<Tensor<f32>>> {
        match &self.config {
            PseudoLabelConfig::OneShot => {
                let batch = stack_items(xs)?;
                let (_, y_hat) =
                    self.frozen
                        .predict_pair(&batch, &batch, &vec![0; xs.len()], &vec![
                            self.sched.steps();
                            xs.len()
                        ])?;
                y_hat.assert_finite("pseudo endpoint")?;
                (0..xs.len()).map(|i| batch_item(&y_hat, i)).collect()
            }
            PseudoLabelConfig::Sampled { sampler, steps } => {
                let kind = bridge::SamplerKind::parse(sampler)?;
                let mode = bridge::SamplerMode::new(kind, *steps);
                let mut out = Vec::with_capacity(xs.len());
                for x in xs {
                    // The hazy-to-clean bridge is pinned to the clean image
                    // at its far end; running its reverse sampler from the
                    // clean image recovers a hazy sample.
                    let endpoint = stack_items(std::slice::from_ref(x))?;
                    let predictor = DualAsHazyPredictor {
                        frozen: self.frozen,
                        clean: endpoint.detach(),
                    };
                    let y = bridge::sample(&predictor, &endpoint, self.sched, &mode, rng)?;
                    out.push(batch_item(&y, 0)?);
                }
                Ok(out)
            }
        }
    }
}

/// Adapter: the frozen dual network viewed as an endpoint predictor for the
/// hazy-to-clean bridge (whose clean end is held fixed).
struct DualAsHazyPredictor<'a> {
    frozen: &'a PredictorNet<f32>,
    clean: Tensor<f32>,
}

impl<'a> bridge::EndpointPredictor<f32> for DualAsHazyPredictor<'a> {
    fn predict_clean(&self, z: &Tensor<f32>, _z_end: &Tensor<f32>, t: usize) -> Result<Tensor<f32>> {
        let n = z.shape()[0];
        let (_, y_hat) = self
            .frozen
            .predict_pair(&self.clean, z, &vec![0; n], &vec![t; n])?;
        Ok(y_hat.detach())
    }
}

/// Labels looked up from ground truth; a test oracle.
pub struct ExactLabeler {
    pub labels: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl PseudoLabeler for ExactLabeler {
    fn label(&self, xs: &[Tensor<f32>], _rng: &mut RngStream) -> Result<Vec<Tensor<f32>>> {
        xs.iter()
            .map(|x| {
                self.labels
                    .iter()
                    .find(|(k, _)| k.data() == x.data())
                    .map(|(_, y)| y.detach())
                    .ok_or_else(|| Error::InvalidDataset("unknown item in exact labeler".into()))
            })
            .collect()
    }
}

/// Unpaired single-bridge training state. Holds the frozen stage-1
/// reference; its own weights are freshly initialized, never copied.
pub struct Stage2Trainer {
    pub net: PredictorNet<f32>,
    pub frozen: PredictorNet<f32>,
    pub opt: Adam<f32>,
    pub sched: BridgeSchedule,
    pub loss_trace: Vec<f64>,
    pub dump_dir: Option<PathBuf>,
}

impl Stage2Trainer {
    pub fn new(
        config: &TrainConfig,
        model: ModelConfig,
        frozen: PredictorNet<f32>,
        init_rng: &mut RngStream,
    ) -> Result<Self> {
        if model.mode != PredictorMode::Single {
            return Err(Error::Config(
                "stage 2 requires a single-bridge model".into(),
            ));
        }
        if frozen.config().mode != PredictorMode::Dual {
            return Err(Error::Config(
                "stage 2 requires a frozen dual-bridge reference".into(),
            ));
        }
        if frozen.store().is_trainable() {
            return Err(Error::Config("stage-2 reference must be frozen".into()));
        }
        let net = PredictorNet::new(model, init_rng)?;
        let opt = Adam::new(AdamConfig::with_lr(config.lr), net.store());
        Ok(Self {
            net,
            frozen,
            opt,
            sched: BridgeSchedule::new(config.t_steps, config.s)?,
            loss_trace: Vec::new(),
            dump_dir: None,
        })
    }

    /// One optimizer step on a batch of unpaired clean images: fabricate
    /// hazy endpoints, diffuse the clean-to-pseudo-hazy bridge to a random
    /// step per item, and regress the clean image.
    pub fn step(
        &mut self,
        xs: &[Tensor<f32>],
        labeler: &dyn PseudoLabeler,
        rng: &mut RngStream,
    ) -> Result<f64> {
        let ys = labeler.label(xs, rng)?;
        let t_max = self.sched.steps();
        let mut zs = Vec::with_capacity(xs.len());
        let mut ts = Vec::with_capacity(xs.len());
        for (x, y) in xs.iter().zip(&ys) {
            let t = rng.uniform_usize(1, t_max);
            zs.push(bridge::forward_marginal(x, y, t, &self.sched, rng)?);
            ts.push(t);
        }
        let z = stack_items(&zs)?;
        let y = stack_items(&ys)?;
        let x = stack_items(xs)?;
        let pred = self.net.predict_z0(&z, &y, &ts)?;
        let loss = pred.l1_loss(&x)?;
        let loss_value = loss.item()? as f64;
        if !loss_value.is_finite() {
            if let Some(dir) = &self.dump_dir {
                dump_batch(
                    dir,
                    "stage2_nonfinite",
                    &[(&"z", &z), (&"y", &y), (&"x", &x)],
                )?;
            }
            return Err(Error::NonFinite {
                context: format!("stage-2 loss at iteration {}", self.loss_trace.len()),
            });
        }
        let grads = loss.backward()?;
        self.opt.step(self.net.store_mut(), &grads)?;
        self.loss_trace.push(loss_value);
        Ok(loss_value)
    }
}

/// Supervised single-bridge training step on true pairs. Written as an
/// independent driver (not a wrapper over [`Stage2Trainer::step`]) so the
/// stage-2-with-oracle equivalence check compares two genuinely separate
/// code paths. Draws per item: one timestep, then the diffusion noise, in
/// that order.
pub fn supervised_single_bridge_step(
    net: &mut PredictorNet<f32>,
    opt: &mut Adam<f32>,
    sched: &BridgeSchedule,
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    rng: &mut RngStream,
) -> Result<f64> {
    let t_max = sched.steps();
    let mut diffused = Vec::with_capacity(pairs.len());
    let mut steps = Vec::with_capacity(pairs.len());
    for (clean, hazy) in pairs {
        let t = rng.uniform_usize(1, t_max);
        diffused.push(bridge::forward_marginal(clean, hazy, t, sched, rng)?);
        steps.push(t);
    }
    let z_batch = stack_items(&diffused)?;
    let hazy_batch = stack_items(&pairs.iter().map(|(_, y)| y.detach()).collect::<Vec<_>>())?;
    let clean_batch = stack_items(&pairs.iter().map(|(x, _)| x.detach()).collect::<Vec<_>>())?;
    let prediction = net.predict_z0(&z_batch, &hazy_batch, &steps)?;
    let loss = prediction.l1_loss(&clean_batch)?;
    let value = loss.item()? as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "supervised single-bridge loss".into(),
        });
    }
    let grads = loss.backward()?;
    opt.step(net.store_mut(), &grads)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            t_steps: 8,
            lr: 1e-3,
            batch_size: 2,
            ..Default::default()
        }
    }

    fn toy_pairs(n: usize, seed: u64) -> Vec<(Tensor<f32>, Tensor<f32>)> {
        let mut rng = RngStream::new(seed, 77);
        (0..n)
            .map(|_| {
                let x: Tensor<f32> = Tensor::gaussian(&[2, 8, 8], &mut rng).unwrap();
                let y: Tensor<f32> = Tensor::gaussian(&[2, 8, 8], &mut rng).unwrap();
                (x.scale(0.25).unwrap(), y.scale(0.25).unwrap())
            })
            .collect()
    }

    #[test]
    fn plan_structure_and_round_trip() {
        let cfg = tiny_config();
        let plan = em_schedule(&cfg);
        assert_eq!(plan.stages.len(), 2);
        assert_eq!(plan.stages[0].stage, 1);
        assert!(!plan.stages[0].frozen_reference);
        assert_eq!(plan.stages[0].estimates.len(), 2);
        assert!(plan.stages[1].frozen_reference);
        // zero stage-2 iterations degenerate to supervised dual training
        let mut cfg2 = cfg.clone();
        cfg2.stage2_iters = 0;
        assert_eq!(em_schedule(&cfg2).stages.len(), 1);
        // serialization round-trip
        let text = toml::to_string(&plan).unwrap();
        let back: StagePlan = toml::from_str(&text).unwrap();
        assert_eq!(plan, back);
    }

    #[test]
    fn stage1_endpoint_pinning_at_t_max() {
        // With both timesteps at T the diffused states equal the opposite
        // endpoints exactly; verified through the public marginal.
        let cfg = tiny_config();
        let sched = BridgeSchedule::new(cfg.t_steps, cfg.s).unwrap();
        let pairs = toy_pairs(1, 3);
        let mut rng = RngStream::new(1, 1);
        let zx = bridge::forward_marginal(&pairs[0].0, &pairs[0].1, 8, &sched, &mut rng).unwrap();
        let zy = bridge::forward_marginal(&pairs[0].1, &pairs[0].0, 8, &sched, &mut rng).unwrap();
        assert_eq!(zx.data(), pairs[0].1.data());
        assert_eq!(zy.data(), pairs[0].0.data());
    }

    #[test]
    fn stage1_loss_decreases_on_tiny_overfit() {
        let cfg = tiny_config();
        let model = ModelConfig::tiny(PredictorMode::Dual);
        let mut init = RngStream::new(cfg.seed, 0x10);
        let mut trainer = Stage1Trainer::new(&cfg, model, &mut init).unwrap();
        let pairs = toy_pairs(1, 4);
        let mut rng = RngStream::new(cfg.seed, 0x12);
        let mut first = 0.0;
        let mut last = 0.0;
        for i in 0..150 {
            let loss = trainer.step(&pairs, &mut rng).unwrap();
            if i == 0 {
                first = loss;
            }
            last = loss;
        }
        assert!(
            last < 0.6 * first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn pseudo_pair_is_deterministic() {
        let cfg = tiny_config();
        let model = ModelConfig::tiny(PredictorMode::Dual);
        let mut init = RngStream::new(9, 0x10);
        let net: PredictorNet<f32> = PredictorNet::new(model, &mut init).unwrap();
        let frozen = PredictorNet::from_parameters(model, net.store(), true).unwrap();
        let x = toy_pairs(1, 5)[0].0.detach();
        let (_, y1) = make_pseudo_pair(&x, &frozen, cfg.t_steps).unwrap();
        let (_, y2) = make_pseudo_pair(&x, &frozen, cfg.t_steps).unwrap();
        assert!(y1
            .data()
            .iter()
            .zip(y2.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn stage2_with_exact_labels_matches_supervised_bitwise() {
        let cfg = tiny_config();
        let dual = ModelConfig::tiny(PredictorMode::Dual);
        let single = ModelConfig::tiny(PredictorMode::Single);
        let pairs = toy_pairs(4, 6);

        // frozen reference (untrained weights are fine for this check)
        let mut frng = RngStream::new(1, 2);
        let fnet: PredictorNet<f32> = PredictorNet::new(dual, &mut frng).unwrap();
        let frozen = PredictorNet::from_parameters(dual, fnet.store(), true).unwrap();

        let mut init_a = RngStream::new(cfg.seed, 0x20);
        let mut trainer = Stage2Trainer::new(&cfg, single, frozen, &mut init_a).unwrap();
        let labeler = ExactLabeler {
            labels: pairs.iter().map(|(x, y)| (x.detach(), y.detach())).collect(),
        };

        let mut init_b = RngStream::new(cfg.seed, 0x20);
        let mut sup_net: PredictorNet<f32> = PredictorNet::new(single, &mut init_b).unwrap();
        let mut sup_opt = Adam::new(AdamConfig::with_lr(cfg.lr), sup_net.store());

        let mut rng_a = RngStream::new(cfg.seed, 0x21);
        let mut rng_b = RngStream::new(cfg.seed, 0x21);
        for _ in 0..20 {
            let xs: Vec<Tensor<f32>> = pairs.iter().map(|(x, _)| x.detach()).collect();
            let a = trainer.step(&xs, &labeler, &mut rng_a).unwrap();
            let b =
                supervised_single_bridge_step(&mut sup_net, &mut sup_opt, &trainer.sched, &pairs, &mut rng_b)
                    .unwrap();
            assert_eq!(
                (a as f32).to_bits(),
                (b as f32).to_bits(),
                "loss traces diverge"
            );
        }
    }

    #[test]
    fn stage2_keeps_frozen_weights_untouched() {
        let cfg = tiny_config();
        let dual = ModelConfig::tiny(PredictorMode::Dual);
        let single = ModelConfig::tiny(PredictorMode::Single);
        let mut frng = RngStream::new(2, 2);
        let fnet: PredictorNet<f32> = PredictorNet::new(dual, &mut frng).unwrap();
        let frozen = PredictorNet::from_parameters(dual, fnet.store(), true).unwrap();
        let before: Vec<Vec<u32>> = frozen
            .store()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();

        let mut init = RngStream::new(cfg.seed, 0x20);
        let mut trainer = Stage2Trainer::new(&cfg, single, frozen, &mut init).unwrap();
        let pairs = toy_pairs(2, 7);
        let labeler = FrozenLabeler {
            frozen: &PredictorNet::from_parameters(dual, fnet.store(), true).unwrap(),
            sched: &BridgeSchedule::new(cfg.t_steps, cfg.s).unwrap(),
            config: PseudoLabelConfig::OneShot,
        };
        let mut rng = RngStream::new(cfg.seed, 0x21);
        let xs: Vec<Tensor<f32>> = pairs.iter().map(|(x, _)| x.detach()).collect();
        for _ in 0..3 {
            trainer.step(&xs, &labeler, &mut rng).unwrap();
        }
        let after: Vec<Vec<u32>> = trainer
            .frozen
            .store()
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }
}
