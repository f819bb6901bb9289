//! Autoencoder whose encoder is the DCGAN discriminator with a code-sized
//! head and whose decoder is the DCGAN generator, trained with L2 loss on
//! grayscale images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{fit_clusters, ClusterError, ClusterModel, ClusterOptions, FeatureSet, FeatureSource, LabelFile};
use crate::models::{dcgan, Arch, BatchStat, BnMode, Conditioning, Ctx, ModelConfig, ModelError, Network};
use crate::tensor::{adam_step, AdamConfig, AdamState, GradError, Graph, Tensor, TensorError};

const ENC: &str = "enc";
const DEC: &str = "dec";

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    /// Network shape; channels, conditioning and blur are overridden.
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl AeConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self {
            model,
            epochs: 10,
            batch_size: 32,
            lr: 5e-4,
            seed,
        }
    }

    fn network_config(&self) -> Result<ModelConfig, ModelError> {
        let mut c = self.model.clone();
        c.arch = Arch::Dcgan;
        c.channels = 1;
        c.conditioning = Conditioning::None;
        c.blur_sigma = None;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub config: ModelConfig,
    pub encoder: Network,
    pub decoder: Network,
    /// Mean reconstruction loss of each training epoch.
    pub epoch_losses: Vec<f64>,
}

/// Rec. 601 luma of `[N, 3, H, W]`; single-channel input passes through.
pub fn grayscale(images: &Tensor<f32>) -> Result<Tensor<f32>, TensorError> {
    let d = images.dims();
    match d {
        [_, 1, _, _] => Ok(images.clone()),
        [n, 3, h, w] => {
            let plane = h * w;
            let src = images.data();
            Ok(Tensor::from_fn(&[*n, 1, *h, *w], |i| {
                let (img, p) = (i / plane, i % plane);
                let base = img * 3 * plane + p;
                0.299 * src[base] + 0.587 * src[base + plane] + 0.114 * src[base + 2 * plane]
            }))
        }
        _ => Err(TensorError::Shape(format!("expected [N, 1|3, H, W], got {d:?}"))),
    }
}

fn forward_stats(
    cfg: &ModelConfig,
    enc: &Network,
    dec: &Network,
    batch: &Tensor<f32>,
) -> Result<(Vec<BatchStat>, Vec<BatchStat>), ModelError> {
    let g = Graph::new();
    let eb = enc.params.bind(&g, false);
    let db = dec.params.bind(&g, false);
    let ectx = Ctx::new(&g, &eb, &enc.buffers, BnMode::Train, None);
    let dctx = Ctx::new(&g, &db, &dec.buffers, BnMode::Train, None);
    let (code, _) = dcgan::discriminator_forward(&ectx, cfg, ENC, g.constant(batch.clone()))?;
    dcgan::generator_forward(&dctx, cfg, DEC, code)?;
    Ok((ectx.take_stats(), dctx.take_stats()))
}

/// Trains encoder and decoder jointly on mean squared reconstruction error.
pub fn ae_train(images: &Tensor<f32>, cfg: &AeConfig) -> Result<Autoencoder, ClusterError> {
    let mc = cfg.network_config()?;
    let gray = grayscale(images).map_err(ModelError::from)?;
    let r = mc.resolution;
    let n = gray.dims()[0];
    if gray.dims()[2] != r || gray.dims()[3] != r {
        return Err(ClusterError::Invalid(format!("images {:?} do not match resolution {r}", images.dims())));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(ClusterError::Invalid("epochs and batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc = Network::init(&dcgan::discriminator_specs(&mc, ENC, 1, mc.latent_dim), &mut rng);
    let mut dec = Network::init(&dcgan::generator_specs(&mc, DEC, 1), &mut rng);
    let mut enc_opt = AdamState::new(AdamConfig::DCGAN, enc.params.tensors());
    let mut dec_opt = AdamState::new(AdamConfig::DCGAN, dec.params.tensors());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let x = gray.select_batch(chunk).map_err(ModelError::from)?;
            let g = Graph::new();
            let eb = enc.params.bind(&g, true);
            let db = dec.params.bind(&g, true);
            let ectx = Ctx::new(&g, &eb, &enc.buffers, BnMode::Train, None);
            let dctx = Ctx::new(&g, &db, &dec.buffers, BnMode::Train, None);
            let xv = g.constant(x);
            let (code, _) = dcgan::discriminator_forward(&ectx, &mc, ENC, xv)?;
            let recon = dcgan::generator_forward(&dctx, &mc, DEC, code)?;
            let loss = recon.sub(xv).map_err(ModelError::from)?.square().mean();
            let value = loss.item() as f64;
            if !value.is_finite() {
                return Err(ModelError::NonFinite(format!("autoencoder loss at epoch {epoch}")).into());
            }
            let wrt: Vec<_> = eb.vars().iter().chain(db.vars()).copied().collect();
            let grads = match g.gradients(loss, &wrt) {
                Ok(gr) => gr,
                Err(GradError::NonFinite { op, .. }) => {
                    return Err(ModelError::NonFinite(format!("autoencoder gradient (`{op}`) at epoch {epoch}")).into())
                }
                Err(e) => return Err(ModelError::from(e).into()),
            };
            let (ge, gd) = grads.split_at(eb.vars().len());
            adam_step(enc.params.tensors_mut(), ge, &mut enc_opt, cfg.lr).map_err(|e| ModelError::Config(e.to_string()))?;
            adam_step(dec.params.tensors_mut(), gd, &mut dec_opt, cfg.lr).map_err(|e| ModelError::Config(e.to_string()))?;
            total += value;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let mut ae = Autoencoder {
        config: mc,
        encoder: enc,
        decoder: dec,
        epoch_losses,
    };
    ae.recalibrate(&gray, cfg.batch_size)?;
    Ok(ae)
}

impl Autoencoder {
    /// Sets batch-norm buffers to dataset statistics (one pass in batches).
    pub fn recalibrate(&mut self, gray: &Tensor<f32>, batch: usize) -> Result<(), ModelError> {
        let n = gray.dims()[0];
        let (mut es, mut ds) = (Vec::new(), Vec::new());
        for start in (0..n).step_by(batch.max(1)) {
            let x = gray.narrow_batch(start, batch.min(n - start))?;
            let (e, d) = forward_stats(&self.config, &self.encoder, &self.decoder, &x)?;
            es.push(e);
            ds.push(d);
        }
        self.encoder.set_stats_from(&es)?;
        self.decoder.set_stats_from(&ds)
    }

    /// Codes `[N, latent]` for grayscale (or RGB, converted) images.
    pub fn encode(&self, images: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let gray = grayscale(images)?;
        let g = Graph::new();
        let eb = self.encoder.params.bind(&g, false);
        let ctx = Ctx::new(&g, &eb, &self.encoder.buffers, BnMode::Eval, None);
        let (code, _) = dcgan::discriminator_forward(&ctx, &self.config, ENC, g.constant(gray))?;
        Ok((*code.value()).clone())
    }

    /// Eval-mode reconstruction of grayscale images.
    pub fn reconstruct(&self, images: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let code = self.encode(images)?;
        let g = Graph::new();
        let db = self.decoder.params.bind(&g, false);
        let ctx = Ctx::new(&g, &db, &self.decoder.buffers, BnMode::Eval, None);
        let out = dcgan::generator_forward(&ctx, &self.config, DEC, g.constant(code))?;
        Ok((*out.value()).clone())
    }
}

/// Grayscale, encode, PCA, mini-batch k-means, assign.
pub fn ae_cluster_labels(
    images: &Tensor<f32>,
    ae: &Autoencoder,
    opts: &ClusterOptions,
) -> Result<(LabelFile, ClusterModel), ClusterError> {
    let n = images.dims()[0];
    let mut codes = Vec::new();
    for start in (0..n).step_by(256) {
        let chunk = images.narrow_batch(start, 256.min(n - start)).map_err(ModelError::from)?;
        codes.push(ae.encode(&chunk)?);
    }
    let codes = Tensor::stack_batch(&codes).map_err(ModelError::from)?;
    let features = FeatureSet::from_tensor(&codes, FeatureSource::Autoencoder)?;
    let (model, labels) = fit_clusters(&features, opts)?;
    Ok((LabelFile::new(opts.k, labels)?, model))
}
