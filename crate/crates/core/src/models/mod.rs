//! Generator/discriminator architectures, conditioning and the blur input
//! pipeline.

pub mod config;
pub mod dcgan;
pub mod layers;
pub mod params;
pub mod resnet;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, TensorMap};
use crate::tensor::{kernels, GradError, Graph, Tensor, TensorError, Var};

pub use config::{Arch, Conditioning, ModelConfig};
pub use layers::{build_onehot_feature_maps, onehot_rows, soft_label_maps, BatchStat, BnMode, Ctx};
pub use params::{Bound, Init, ParamSet, ParamSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("label {label} out of range for k = {k}")]
    Label { label: usize, k: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

pub const G_PREFIX: &str = "g";
pub const D_PREFIX: &str = "d";

pub fn generator_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    match cfg.arch {
        Arch::Dcgan => dcgan::generator_specs(cfg, G_PREFIX, cfg.channels),
        Arch::Resnet => resnet::generator_specs(cfg, G_PREFIX),
    }
}

pub fn discriminator_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    match cfg.arch {
        Arch::Dcgan => dcgan::discriminator_specs(cfg, D_PREFIX, cfg.channels, 1),
        Arch::Resnet => resnet::critic_specs(cfg, D_PREFIX),
    }
}

/// Generator on the graph: `z [N, latent]` to native-resolution images.
pub fn generator_forward<'g>(ctx: &Ctx<'_, 'g>, cfg: &ModelConfig, z: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
    check_latent(cfg, &z.dims())?;
    check_ctx_labels(ctx, cfg, z.dims()[0], cfg.g_label_inputs() > 0)?;
    match cfg.arch {
        Arch::Dcgan => dcgan::generator_forward(ctx, cfg, G_PREFIX, z),
        Arch::Resnet => resnet::generator_forward(ctx, cfg, G_PREFIX, z),
    }
}

/// Discriminator on already-prepared inputs (see [`discriminator_input`]).
/// Returns per-sample scores `[N]` and, in AC mode, class logits `[N, k]`.
pub fn discriminator_forward<'g>(
    ctx: &Ctx<'_, 'g>,
    cfg: &ModelConfig,
    x: Var<'g, f32>,
) -> Result<(Var<'g, f32>, Option<Var<'g, f32>>), ModelError> {
    let d = x.dims();
    let r = cfg.native_resolution();
    if d.len() != 4 || d[1] != cfg.channels || d[2] != r || d[3] != r {
        return Err(TensorError::Shape(format!("discriminator expects [N, {}, {r}, {r}], got {d:?}", cfg.channels)).into());
    }
    check_ctx_labels(ctx, cfg, d[0], cfg.label_maps() > 0)?;
    let (score, logits) = match cfg.arch {
        Arch::Dcgan => dcgan::discriminator_forward(ctx, cfg, D_PREFIX, x)?,
        Arch::Resnet => resnet::critic_forward(ctx, cfg, D_PREFIX, x)?,
    };
    Ok((score.reshape(&[d[0]])?, logits))
}

/// Maps images at output or native resolution to discriminator inputs:
/// upscale to native if needed, then blur.
pub fn discriminator_input<'g>(cfg: &ModelConfig, x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
    let Some(sigma) = cfg.blur_sigma else {
        return Ok(x);
    };
    let h = x.dims()[2];
    let x = if h == cfg.resolution { x.upsample2()? } else { x };
    Ok(x.gaussian_blur(sigma)?)
}

/// Nearest-neighbour ×2 upscale for inputs at half the target resolution,
/// then a separable Gaussian blur with edge replication.
pub fn blur_pipeline(x: &Tensor<f32>, sigma: f64, target: usize) -> Result<Tensor<f32>, ModelError> {
    if x.rank() != 4 || x.dims()[2] != x.dims()[3] {
        return Err(TensorError::Shape(format!("expected square NCHW images, got {:?}", x.dims())).into());
    }
    if !(sigma >= 0.0) {
        return Err(ModelError::Config(format!("blur sigma {sigma} < 0")));
    }
    let h = x.dims()[2];
    let up = if h == target {
        x.clone()
    } else if 2 * h == target {
        kernels::upsample2(x)?
    } else {
        return Err(ModelError::Config(format!("blur pipeline cannot take {h}×{h} to {target}×{target}")));
    };
    Ok(kernels::gaussian_blur(&up, sigma)?)
}

fn check_latent(cfg: &ModelConfig, d: &[usize]) -> Result<(), ModelError> {
    if d.len() != 2 || d[1] != cfg.latent_dim {
        return Err(TensorError::Shape(format!("latent batch must be [N, {}], got {d:?}", cfg.latent_dim)).into());
    }
    Ok(())
}

fn check_ctx_labels(ctx: &Ctx<'_, '_>, cfg: &ModelConfig, n: usize, needed: bool) -> Result<(), ModelError> {
    if !needed {
        return Ok(());
    }
    match ctx.labels {
        Some(l) if l.dims() == [n, cfg.k] => Ok(()),
        Some(l) => Err(TensorError::Shape(format!("labels must be [{n}, {}], got {:?}", cfg.k, l.dims())).into()),
        None => Err(ModelError::Config("conditional model requires labels".into())),
    }
}

/// Parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub params: ParamSet,
    pub buffers: ParamSet,
}

impl Network {
    pub fn init(specs: &[ParamSpec], rng: &mut ChaCha8Rng) -> Self {
        let buffers = ParamSet::init(&dcgan::bn_buffer_specs(specs), rng);
        Self {
            params: ParamSet::init(specs, rng),
            buffers,
        }
    }

    /// Exponential moving average of observed batch statistics; variances
    /// are stored unbiased.
    pub fn update_running_stats(&mut self, stats: &[BatchStat], momentum: f32) -> Result<(), ModelError> {
        for s in stats {
            let unbias = s.count as f32 / (s.count.max(2) - 1) as f32;
            let rm = self.buffers.get_mut(&format!("{}.mean", s.layer))?;
            for (r, &m) in rm.data_mut().iter_mut().zip(s.mean.data()) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            let rv = self.buffers.get_mut(&format!("{}.var", s.layer))?;
            for (r, &v) in rv.data_mut().iter_mut().zip(s.var.data()) {
                *r = (1.0 - momentum) * *r + momentum * v * unbias;
            }
        }
        Ok(())
    }

    /// Replaces running statistics with the average of the given batches'
    /// statistics.
    pub fn set_stats_from(&mut self, batches: &[Vec<BatchStat>]) -> Result<(), ModelError> {
        let Some(first) = batches.first() else {
            return Ok(());
        };
        let inv = 1.0 / batches.len() as f32;
        for (li, s) in first.iter().enumerate() {
            let mut mean = Tensor::zeros(s.mean.dims());
            let mut var = Tensor::zeros(s.var.dims());
            for b in batches {
                let st = &b[li];
                let unbias = st.count as f32 / (st.count.max(2) - 1) as f32;
                for (a, &m) in mean.data_mut().iter_mut().zip(st.mean.data()) {
                    *a += m * inv;
                }
                for (a, &v) in var.data_mut().iter_mut().zip(st.var.data()) {
                    *a += v * unbias * inv;
                }
            }
            self.buffers.insert(&format!("{}.mean", s.layer), mean);
            self.buffers.insert(&format!("{}.var", s.layer), var);
        }
        Ok(())
    }

    pub fn store_into(&self, dst: &mut TensorMap) {
        self.params.store_into(dst, "");
        self.buffers.store_into(dst, "");
    }

    pub fn load_from(&mut self, src: &TensorMap) -> Result<(), ModelError> {
        self.params.load_from(src, "")?;
        self.buffers.load_from(src, "")
    }
}

/// Sidecar metadata stored next to a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub iteration: u64,
    #[serde(default)]
    pub notes: serde_json::Value,
}

/// A generator/discriminator pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub config: ModelConfig,
    pub g: Network,
    pub d: Network,
}

impl GanModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Network::init(&generator_specs(&config), &mut rng);
        let d = Network::init(&discriminator_specs(&config), &mut rng);
        Ok(Self { config, g, d })
    }

    pub fn generator(&self) -> Generator {
        Generator {
            config: self.config.clone(),
            net: self.g.clone(),
        }
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let mut m = TensorMap::new();
        self.g.store_into(&mut m);
        self.d.store_into(&mut m);
        m
    }

    pub fn from_tensor_map(config: ModelConfig, m: &TensorMap) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        model.g.load_from(m)?;
        model.d.load_from(m)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path, iteration: u64, extra: &TensorMap) -> Result<(), ModelError> {
        let mut m = self.to_tensor_map();
        m.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        let meta = ModelMeta {
            config: self.config.clone(),
            iteration,
            notes: serde_json::Value::Null,
        };
        checkpoint::save(path, &m, &meta)?;
        Ok(())
    }
}

/// Immutable generator snapshot for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub net: Network,
}

impl Generator {
    /// Loads a checkpoint written by [`GanModel::save`] or a generator-only
    /// container; also returns the full tensor map (for stored directions).
    pub fn load(path: &Path) -> Result<(Self, TensorMap, ModelMeta), ModelError> {
        let (m, meta): (TensorMap, ModelMeta) = checkpoint::load(path)?;
        meta.config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::init(&generator_specs(&meta.config), &mut rng);
        net.load_from(&m)?;
        if !net.params.is_finite() || !net.buffers.is_finite() {
            return Err(ModelError::NonFinite("checkpoint".into()));
        }
        Ok((
            Self {
                config: meta.config.clone(),
                net,
            },
            m,
            meta,
        ))
    }

    /// Eval-mode samples at output resolution, `[N, C, res, res]`.
    /// `labels` are soft labels `[N, k]`; ignored by unconditional models.
    pub fn render(&self, z: &Tensor<f32>, labels: Option<&Tensor<f32>>) -> Result<Tensor<f32>, ModelError> {
        check_latent(&self.config, z.dims())?;
        if !z.is_finite() {
            return Err(ModelError::NonFinite("latent input".into()));
        }
        let labels = if self.config.is_conditional() { labels } else { None };
        let g = Graph::new();
        let bound = self.net.params.bind(&g, false);
        let ctx = Ctx::new(&g, &bound, &self.net.buffers, BnMode::Eval, labels);
        let mut out = generator_forward(&ctx, &self.config, g.constant(z.clone()))?;
        if self.config.blur_sigma.is_some() {
            out = out.avgpool2()?;
        }
        let t = (*out.value()).clone();
        if !t.is_finite() {
            return Err(ModelError::NonFinite("generator output".into()));
        }
        Ok(t)
    }

    /// Renders in chunks of `chunk` samples.
    pub fn render_batched(&self, z: &Tensor<f32>, labels: Option<&Tensor<f32>>, chunk: usize) -> Result<Tensor<f32>, ModelError> {
        let n = z.dims()[0];
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let len = chunk.max(1).min(n - start);
            let zc = z.narrow_batch(start, len)?;
            let lc = match labels {
                Some(l) => Some(l.narrow_batch(start, len)?),
                None => None,
            };
            parts.push(self.render(&zc, lc.as_ref())?);
            start += len;
        }
        Ok(Tensor::stack_batch(&parts)?)
    }
}
