//! The endpoint predictor: a small encoder-decoder network with skip
//! connections whose convolution blocks sum a vanilla 3x3 convolution with
//! four difference convolutions (central, angular, horizontal, vertical)
//! under a residual connection. The same backbone serves two signatures:
//! the paired stage trains one network on both bridge directions at once
//! (two diffused inputs, two timesteps, two output groups), while the
//! unpaired stage and inference use the single-bridge form.

mod rdc;

pub use rdc::RdcBlock;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bridge::EndpointPredictor;
use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Element, Tensor};

/// Which input/output signature the network exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// `(z_t, z_T, t) -> z0_hat`
    Single,
    /// `(z_a, z_b, t_a, t_b) -> (a0_hat, b0_hat)`
    Dual,
}

/// Which difference branches of each block are active (all, by default;
/// the switches exist for the branch ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchMask {
    pub central: bool,
    pub angular: bool,
    pub horizontal: bool,
    pub vertical: bool,
}

impl Default for BranchMask {
    fn default() -> Self {
        Self {
            central: true,
            angular: true,
            horizontal: true,
            vertical: true,
        }
    }
}

impl BranchMask {
    pub fn vanilla_only() -> Self {
        Self {
            central: false,
            angular: false,
            horizontal: false,
            vertical: false,
        }
    }
}

/// Network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels of each latent (image) tensor.
    pub latent_channels: usize,
    /// Channel width at the top resolution; level `l` uses `base << l`.
    pub base_channels: usize,
    /// Number of resolutions; spatial extent halves per level.
    pub levels: usize,
    /// Group count for the normalization layers.
    pub groups: usize,
    /// Time embedding dimension as a multiple of `base_channels`.
    pub time_embed_factor: usize,
    pub mode: PredictorMode,
    #[serde(default)]
    pub branches: BranchMask,
}

impl ModelConfig {
    /// Desk-scale default: 2 resolution levels, 8 RDC blocks. The channel
    /// width is sized so the CPU training budgets hold.
    pub fn desk(mode: PredictorMode) -> Self {
        Self {
            latent_channels: 3,
            base_channels: 16,
            levels: 2,
            groups: 8,
            time_embed_factor: 4,
            mode,
            branches: BranchMask::default(),
        }
    }

    /// Tiny configuration used by gradient checks.
    pub fn tiny(mode: PredictorMode) -> Self {
        Self {
            latent_channels: 2,
            base_channels: 8,
            levels: 2,
            groups: 4,
            time_embed_factor: 4,
            mode,
            branches: BranchMask::default(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.base_channels * self.time_embed_factor
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Input spatial extents must be divisible by this.
    pub fn downsampling_factor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Config("model levels must be >= 2".into()));
        }
        if self.latent_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config(
                "model channel counts must be positive".into(),
            ));
        }
        for l in 0..self.levels {
            if self.channels_at(l) % self.groups != 0 {
                return Err(Error::Config(format!(
                    "channel width {} at level {l} not divisible into {} groups",
                    self.channels_at(l),
                    self.groups
                )));
            }
        }
        Ok(())
    }
}

/// Sinusoidal embedding of an integer timestep, evaluated in f64.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = (-(10000.0f64.ln()) * exponent).exp();
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

fn embed_batch<E: Element>(ts: &[usize], dim: usize) -> Result<Tensor<E>> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(time_embedding(t, dim).into_iter().map(E::from_f64));
    }
    Tensor::from_vec(&[ts.len(), dim], data)
}

pub(crate) fn he_init<E: Element>(
    store: &mut ParamStore<E>,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    rng: &mut RngStream,
) -> Result<ParamId>
where
    StandardNormal: Distribution<E>,
{
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.normal::<f64>() * std))
        .collect();
    store.register(name, Tensor::from_vec(shape, data)?)
}

struct Conv2dLayer {
    weight: ParamId,
    bias: ParamId,
    pad: usize,
}

impl Conv2dLayer {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        c_in: usize,
        c_out: usize,
        zero_init: bool,
        rng: &mut RngStream,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<E>,
    {
        let weight = if zero_init {
            store.register(
                format!("{name}.weight"),
                Tensor::zeros(&[c_out, c_in, 3, 3])?,
            )?
        } else {
            he_init(
                store,
                &format!("{name}.weight"),
                &[c_out, c_in, 3, 3],
                c_in * 9,
                1.0,
                rng,
            )?
        };
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[c_out])?)?;
        Ok(Self {
            weight,
            bias,
            pad: 1,
        })
    }

    fn forward<E: Element>(&self, store: &ParamStore<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv2d(&store.get(self.weight), Some(&store.get(self.bias)), self.pad)
    }
}

struct GroupNormLayer {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl GroupNormLayer {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Result<Self> {
        let gamma =
            store.register(format!("{name}.gamma"), Tensor::full(&[channels], E::one())?)?;
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(&[channels])?)?;
        Ok(Self {
            gamma,
            beta,
            groups,
        })
    }

    fn forward<E: Element>(&self, store: &ParamStore<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.group_norm(&store.get(self.gamma), &store.get(self.beta), self.groups, 1e-5)
    }
}

struct LinearLayer {
    weight: ParamId,
    bias: ParamId,
}

impl LinearLayer {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut RngStream,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<E>,
    {
        let weight = he_init(store, &format!("{name}.weight"), &[d_in, d_out], d_in, 1.0, rng)?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[d_out])?)?;
        Ok(Self { weight, bias })
    }

    fn forward<E: Element>(&self, store: &ParamStore<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.matmul(&store.get(self.weight))?.add_row(&store.get(self.bias))
    }
}

/// Two residual difference-convolution units with normalization and a
/// per-block projection of the time embedding between them.
struct TimedBlock {
    norm1: GroupNormLayer,
    rdc1: RdcBlock,
    emb_proj: LinearLayer,
    norm2: GroupNormLayer,
    rdc2: RdcBlock,
}

impl TimedBlock {
    fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        channels: usize,
        cfg: &ModelConfig,
        ordinal: &mut usize,
        rng: &mut RngStream,
    ) -> Result<Self>
    where
        StandardNormal: Distribution<E>,
    {
        Ok(Self {
            norm1: GroupNormLayer::new(store, &format!("{name}.norm1"), channels, cfg.groups)?,
            rdc1: RdcBlock::new(store, &format!("{name}.rdc1"), channels, cfg.branches, ordinal, rng)?,
            emb_proj: LinearLayer::new(
                store,
                &format!("{name}.emb_proj"),
                cfg.embed_dim(),
                channels,
                rng,
            )?,
            norm2: GroupNormLayer::new(store, &format!("{name}.norm2"), channels, cfg.groups)?,
            rdc2: RdcBlock::new(store, &format!("{name}.rdc2"), channels, cfg.branches, ordinal, rng)?,
        })
    }

    fn forward<E: Element>(
        &self,
        store: &ParamStore<E>,
        x: &Tensor<E>,
        emb: &Tensor<E>,
        merged: Option<&MergedCache<E>>,
    ) -> Result<Tensor<E>> {
        let h = self
            .rdc1
            .forward(store, &self.norm1.forward(store, x)?.silu()?, merged)?;
        let h = h.add_channel(&self.emb_proj.forward(store, &emb.silu()?)?)?;
        self.rdc2
            .forward(store, &self.norm2.forward(store, &h)?.silu()?, merged)
    }
}

/// Cache of merged per-block kernels used for fast frozen-weight inference.
pub struct MergedCache<E: Element> {
    pub(crate) entries: Vec<(Tensor<E>, Tensor<E>)>,
}

/// The full encoder-decoder predictor.
pub struct PredictorNet<E: Element = f32> {
    config: ModelConfig,
    store: ParamStore<E>,
    stem: Conv2dLayer,
    time_mlp_a: (LinearLayer, LinearLayer),
    time_mlp_b: Option<(LinearLayer, LinearLayer)>,
    enc: Vec<TimedBlock>,
    downs: Vec<Conv2dLayer>,
    mid: TimedBlock,
    ups: Vec<Conv2dLayer>,
    fuses: Vec<Conv2dLayer>,
    dec: Vec<TimedBlock>,
    head_norm: GroupNormLayer,
    head: Conv2dLayer,
}

struct Layers {
    stem: Conv2dLayer,
    time_mlp_a: (LinearLayer, LinearLayer),
    time_mlp_b: Option<(LinearLayer, LinearLayer)>,
    enc: Vec<TimedBlock>,
    downs: Vec<Conv2dLayer>,
    mid: TimedBlock,
    ups: Vec<Conv2dLayer>,
    fuses: Vec<Conv2dLayer>,
    dec: Vec<TimedBlock>,
    head_norm: GroupNormLayer,
    head: Conv2dLayer,
}

impl<E: Element> PredictorNet<E>
where
    StandardNormal: Distribution<E>,
{
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut store = ParamStore::trainable();
        let layers = Self::build(config, &mut store, rng)?;
        Ok(Self::assemble(config, store, layers))
    }

    /// Same layout, parameters loaded from `source` (matched by name).
    pub fn from_parameters(
        config: ModelConfig,
        source: &ParamStore<E>,
        frozen: bool,
    ) -> Result<Self> {
        let mut rng = RngStream::new(0, 0);
        let mut store = if frozen {
            ParamStore::frozen()
        } else {
            ParamStore::trainable()
        };
        let layers = Self::build(config, &mut store, &mut rng)?;
        let mut net = Self::assemble(config, store, layers);
        if source.len() != net.store.len() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} does not match configuration ({} expected)",
                source.len(),
                net.store.len()
            )));
        }
        for (name, value) in source.iter() {
            net.store.set_by_name(name, value.detach())?;
        }
        Ok(net)
    }

    fn assemble(config: ModelConfig, store: ParamStore<E>, layers: Layers) -> Self {
        Self {
            config,
            store,
            stem: layers.stem,
            time_mlp_a: layers.time_mlp_a,
            time_mlp_b: layers.time_mlp_b,
            enc: layers.enc,
            downs: layers.downs,
            mid: layers.mid,
            ups: layers.ups,
            fuses: layers.fuses,
            dec: layers.dec,
            head_norm: layers.head_norm,
            head: layers.head,
        }
    }

    fn build(config: ModelConfig, store: &mut ParamStore<E>, rng: &mut RngStream) -> Result<Layers> {
        config.validate()?;
        let c_lat = config.latent_channels;
        let in_ch = 2 * c_lat;
        let out_ch = match config.mode {
            PredictorMode::Single => c_lat,
            PredictorMode::Dual => 2 * c_lat,
        };
        let dim = config.embed_dim();
        let mut ordinal = 0usize;
        let stem = Conv2dLayer::new(store, "stem", in_ch, config.channels_at(0), false, rng)?;
        let time_mlp_a = (
            LinearLayer::new(store, "time_a.fc1", dim, dim, rng)?,
            LinearLayer::new(store, "time_a.fc2", dim, dim, rng)?,
        );
        let time_mlp_b = match config.mode {
            PredictorMode::Dual => Some((
                LinearLayer::new(store, "time_b.fc1", dim, dim, rng)?,
                LinearLayer::new(store, "time_b.fc2", dim, dim, rng)?,
            )),
            PredictorMode::Single => None,
        };
        let mut enc = Vec::new();
        let mut downs = Vec::new();
        for l in 0..config.levels {
            enc.push(TimedBlock::new(
                store,
                &format!("enc{l}"),
                config.channels_at(l),
                &config,
                &mut ordinal,
                rng,
            )?);
            if l + 1 < config.levels {
                downs.push(Conv2dLayer::new(
                    store,
                    &format!("down{l}"),
                    config.channels_at(l),
                    config.channels_at(l + 1),
                    false,
                    rng,
                )?);
            }
        }
        let mid = TimedBlock::new(
            store,
            "mid",
            config.channels_at(config.levels - 1),
            &config,
            &mut ordinal,
            rng,
        )?;
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        let mut dec = Vec::new();
        for l in (0..config.levels - 1).rev() {
            ups.push(Conv2dLayer::new(
                store,
                &format!("up{l}"),
                config.channels_at(l + 1),
                config.channels_at(l),
                false,
                rng,
            )?);
            fuses.push(Conv2dLayer::new(
                store,
                &format!("fuse{l}"),
                2 * config.channels_at(l),
                config.channels_at(l),
                false,
                rng,
            )?);
            dec.push(TimedBlock::new(
                store,
                &format!("dec{l}"),
                config.channels_at(l),
                &config,
                &mut ordinal,
                rng,
            )?);
        }
        let head_norm =
            GroupNormLayer::new(store, "head_norm", config.channels_at(0), config.groups)?;
        let head = Conv2dLayer::new(store, "head", config.channels_at(0), out_ch, true, rng)?;
        Ok(Layers {
            stem,
            time_mlp_a,
            time_mlp_b,
            enc,
            downs,
            mid,
            ups,
            fuses,
            dec,
            head_norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<E> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.store
    }

    /// Count of RDC blocks in the backbone (`4 * levels` by construction).
    pub fn rdc_block_count(&self) -> usize {
        2 * (self.enc.len() + 1 + self.dec.len())
    }

    fn time_embed(&self, ts_a: &[usize], ts_b: Option<&[usize]>) -> Result<Tensor<E>> {
        let dim = self.config.embed_dim();
        let raw_a: Tensor<E> = embed_batch(ts_a, dim)?;
        let h = self.time_mlp_a.0.forward(&self.store, &raw_a)?.silu()?;
        let mut emb = self.time_mlp_a.1.forward(&self.store, &h)?;
        if let (Some(ts_b), Some(mlp_b)) = (ts_b, &self.time_mlp_b) {
            let raw_b: Tensor<E> = embed_batch(ts_b, dim)?;
            let hb = mlp_b.0.forward(&self.store, &raw_b)?.silu()?;
            emb = emb.add(&mlp_b.1.forward(&self.store, &hb)?)?;
        }
        Ok(emb)
    }

    fn backbone(
        &self,
        za: &Tensor<E>,
        zb: &Tensor<E>,
        emb: &Tensor<E>,
        merged: Option<&MergedCache<E>>,
    ) -> Result<Tensor<E>> {
        let factor = self.config.downsampling_factor();
        match za.shape() {
            &[_, c, h, w] => {
                if c != self.config.latent_channels {
                    return Err(Error::ShapeMismatch {
                        op: "predictor",
                        lhs: za.shape().to_vec(),
                        rhs: vec![0, self.config.latent_channels, 0, 0],
                    });
                }
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::InvalidShape {
                        op: "predictor",
                        shape: za.shape().to_vec(),
                        reason: "spatial extents must be divisible by the downsampling factor",
                    });
                }
            }
            _ => {
                return Err(Error::InvalidShape {
                    op: "predictor",
                    shape: za.shape().to_vec(),
                    reason: "expected [n, c, h, w]",
                })
            }
        }
        let x = za.concat_channels(zb)?;
        let mut h = self.stem.forward(&self.store, &x)?;
        let mut skips = Vec::new();
        for l in 0..self.config.levels {
            h = self.enc[l].forward(&self.store, &h, emb, merged)?;
            if l + 1 < self.config.levels {
                skips.push(h.clone());
                h = self.downs[l].forward(&self.store, &h.downsample_nearest2()?)?;
            }
        }
        h = self.mid.forward(&self.store, &h, emb, merged)?;
        for (i, l) in (0..self.config.levels - 1).rev().enumerate() {
            h = self.ups[i].forward(&self.store, &h.upsample_nearest2()?)?;
            let skip = skips[l].clone();
            h = self.fuses[i].forward(&self.store, &h.concat_channels(&skip)?)?;
            h = self.dec[i].forward(&self.store, &h, emb, merged)?;
        }
        let h = self.head_norm.forward(&self.store, &h)?.silu()?;
        self.head.forward(&self.store, &h)
    }

    /// Single-bridge prediction of the clean endpoint.
    pub fn predict_z0(
        &self,
        z_t: &Tensor<E>,
        z_end: &Tensor<E>,
        ts: &[usize],
    ) -> Result<Tensor<E>> {
        self.predict_z0_with(z_t, z_end, ts, None)
    }

    pub(crate) fn predict_z0_with(
        &self,
        z_t: &Tensor<E>,
        z_end: &Tensor<E>,
        ts: &[usize],
        merged: Option<&MergedCache<E>>,
    ) -> Result<Tensor<E>> {
        if self.config.mode != PredictorMode::Single {
            return Err(Error::Config(
                "predict_z0 requires a single-bridge network".into(),
            ));
        }
        if ts.len() != z_t.shape()[0] {
            return Err(Error::Config("one timestep per batch item required".into()));
        }
        let emb = self.time_embed(ts, None)?;
        self.backbone(z_t, z_end, &emb, merged)
    }

    /// Dual-bridge prediction of both clean endpoints.
    pub fn predict_pair(
        &self,
        z_ta: &Tensor<E>,
        z_tb: &Tensor<E>,
        ts_a: &[usize],
        ts_b: &[usize],
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        if self.config.mode != PredictorMode::Dual {
            return Err(Error::Config(
                "predict_pair requires a dual-bridge network".into(),
            ));
        }
        if ts_a.len() != z_ta.shape()[0] || ts_b.len() != z_tb.shape()[0] {
            return Err(Error::Config("one timestep per batch item required".into()));
        }
        let emb = self.time_embed(ts_a, Some(ts_b))?;
        let out = self.backbone(z_ta, z_tb, &emb, None)?;
        let c = self.config.latent_channels;
        Ok((out.slice_channels(0, c)?, out.slice_channels(c, c)?))
    }

    /// Precompute merged kernels of every RDC block for frozen inference.
    pub fn merged_cache(&self) -> Result<MergedCache<E>> {
        let mut blocks: Vec<&RdcBlock> = Vec::new();
        for b in &self.enc {
            blocks.push(&b.rdc1);
            blocks.push(&b.rdc2);
        }
        blocks.push(&self.mid.rdc1);
        blocks.push(&self.mid.rdc2);
        for b in &self.dec {
            blocks.push(&b.rdc1);
            blocks.push(&b.rdc2);
        }
        blocks.sort_by_key(|b| b.ordinal());
        let mut entries = Vec::new();
        for b in blocks {
            entries.push(b.merge(&self.store)?);
        }
        Ok(MergedCache { entries })
    }

    /// Sampling adapter; with `merged = true` every block runs its merged
    /// single-kernel form.
    pub fn sampler(&self, merged: bool) -> Result<NetSampler<'_, E>> {
        let cache = if merged {
            Some(self.merged_cache()?)
        } else {
            None
        };
        Ok(NetSampler { net: self, cache })
    }
}

/// Finite-difference verification of the whole network's gradients: the
/// `f32` tape gradient of an L1 regression loss is compared against central
/// differences of the same forward pass evaluated in `f64`, at randomly
/// sampled parameter coordinates. Returns the worst relative error and the
/// number of coordinates checked.
pub fn network_gradcheck(trials: usize, coords_per_param: usize, seed: u64) -> Result<(f64, usize)> {
    use crate::tensor::gradcheck::FD_STEP;

    let cfg = ModelConfig::tiny(PredictorMode::Single);
    let mut rng = RngStream::new(seed, 0xBEEF);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..trials {
        let mut net: PredictorNet<f32> = PredictorNet::new(cfg, &mut rng)?;
        // Zero-initialized output weights would silence most of the
        // network; give the head random weight for the check.
        let head: Tensor<f32> = Tensor::gaussian(&[2, 8, 3, 3], &mut rng)?;
        net.store_mut().set_by_name("head.weight", head)?;
        let z: Tensor<f32> = Tensor::gaussian(&[1, 2, 8, 8], &mut rng)?;
        let y: Tensor<f32> = Tensor::gaussian(&[1, 2, 8, 8], &mut rng)?;
        // Target far below any activation keeps every |.| residual away
        // from its kink, so the finite differences see a smooth loss.
        let target: Tensor<f32> = Tensor::full(&[1, 2, 8, 8], -5.0)?;
        let ts = vec![3usize];

        let loss = net.predict_z0(&z, &y, &ts)?.l1_loss(&target)?;
        let grads = loss.backward()?;

        let shadow_store = net.store().cast::<f64>();
        let mut shadow: PredictorNet<f64> = PredictorNet::from_parameters(cfg, &shadow_store, true)?;
        let z64 = z.cast::<f64>();
        let y64 = y.cast::<f64>();
        let t64 = target.cast::<f64>();
        let names: Vec<String> = net.store().iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let value32 = {
                let mut found = None;
                for (n, t) in net.store().iter() {
                    if n == name {
                        found = Some(t.clone());
                    }
                }
                found.unwrap()
            };
            let Some(g) = grads.get(&value32) else {
                continue;
            };
            let base: Vec<f64> = value32.data().iter().map(|&v| v as f64).collect();
            let gmax = g.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
            let floor = (1e-3 * gmax).max(1e-6);
            for _ in 0..coords_per_param {
                let idx = rng.uniform_usize(0, base.len() - 1);
                let mut eval = |delta: f64| -> Result<f64> {
                    let mut perturbed = base.clone();
                    perturbed[idx] += delta;
                    shadow.store_mut().set_by_name(
                        &name,
                        Tensor::from_vec(value32.shape(), perturbed)?,
                    )?;
                    let out = shadow.predict_z0(&z64, &y64, &ts)?;
                    out.l1_loss(&t64)?.item()
                };
                let fd = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
                shadow
                    .store_mut()
                    .set_by_name(&name, Tensor::from_vec(value32.shape(), base.clone())?)?;
                let ad = g[idx] as f64;
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor);
                if rel > worst {
                    worst = rel;
                }
                checked += 1;
            }
        }
    }
    Ok((worst, checked))
}

/// [`EndpointPredictor`] adapter around a single-bridge network.
pub struct NetSampler<'a, E: Element> {
    net: &'a PredictorNet<E>,
    cache: Option<MergedCache<E>>,
}

impl<'a, E: Element> EndpointPredictor<E> for NetSampler<'a, E>
where
    StandardNormal: Distribution<E>,
{
    fn predict_clean(&self, z: &Tensor<E>, z_end: &Tensor<E>, t: usize) -> Result<Tensor<E>> {
        let ts = vec![t; z.shape()[0]];
        let out = self
            .net
            .predict_z0_with(z, z_end, &ts, self.cache.as_ref())?;
        out.assert_finite("predictor output")?;
        Ok(out.detach())
    }
}
