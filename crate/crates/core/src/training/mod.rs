//! Adversarial training loops for DCGAN and the gradient-penalty WGAN.

pub mod losses;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::TensorMap;
use crate::models::{
    discriminator_forward, discriminator_input, generator_forward, onehot_rows, BnMode, Conditioning, Ctx, GanModel,
    ModelConfig, ModelError,
};
use crate::tensor::{adam_step, lr_linear_decay, AdamConfig, AdamState, GradError, Graph, OptimError, Tensor, Var};

pub use losses::{ac_loss_terms, cross_entropy, dcgan_losses, interpolate_samples, per_sample_norms, wgan_gp_critic_loss};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("training diverged at iteration {iter} ({reason}); last good checkpoint: {last_checkpoint:?}")]
    Diverged {
        iter: u64,
        reason: String,
        last_checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    Dcgan,
    Iwgan,
}

impl std::str::FromStr for GanMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dcgan" => Ok(Self::Dcgan),
            "iwgan" => Ok(Self::Iwgan),
            _ => Err(TrainError::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mode: GanMode,
    pub total_iters: u64,
    pub batch_size: usize,
    pub lr0: f64,
    /// Critic updates per generator update (WGAN).
    pub critic_steps: usize,
    /// Generator updates per discriminator update (DCGAN).
    pub generator_steps: usize,
    pub gp_lambda: f32,
    pub ac_weight: f32,
    pub seed: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub bn_momentum: f32,
    /// Batches used to re-estimate generator batch-norm statistics before
    /// a checkpoint.
    pub bn_recalibration_batches: usize,
}

impl TrainingConfig {
    pub fn dcgan(total_iters: u64, seed: u64) -> Self {
        Self {
            mode: GanMode::Dcgan,
            total_iters,
            batch_size: 64,
            lr0: 4e-4,
            critic_steps: 1,
            generator_steps: 3,
            gp_lambda: 0.0,
            ac_weight: 1.0,
            seed,
            checkpoint_interval: 0,
            bn_momentum: 0.1,
            bn_recalibration_batches: 8,
        }
    }

    pub fn iwgan(total_iters: u64, seed: u64) -> Self {
        Self {
            mode: GanMode::Iwgan,
            lr0: 2e-4,
            critic_steps: 5,
            generator_steps: 1,
            gp_lambda: 10.0,
            ..Self::dcgan(total_iters, seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_iters == 0 || self.batch_size == 0 || self.critic_steps == 0 || self.generator_steps == 0 {
            return Err(TrainError::Config("iteration, batch and step counts must be positive".into()));
        }
        if !(self.gp_lambda >= 0.0) || !(self.lr0 >= 0.0) || !(self.ac_weight >= 0.0) {
            return Err(TrainError::Config("gp_lambda, lr0 and ac_weight must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(TrainError::Config(format!("bn momentum {}", self.bn_momentum)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        match self.mode {
            GanMode::Dcgan => AdamConfig::DCGAN,
            GanMode::Iwgan => AdamConfig::WGAN,
        }
    }

    /// Learning rate at iteration `iter` (0-based); the last iteration runs
    /// at zero.
    pub fn lr_at(&self, iter: u64) -> Result<f64, TrainError> {
        if self.total_iters == 1 {
            return Ok(self.lr0);
        }
        Ok(lr_linear_decay(self.lr0, iter, self.total_iters - 1)?)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gp: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl LogRecord {
    /// The record without its timing field, for reproducibility checks.
    pub fn without_timing(&self) -> LogRecord {
        LogRecord { wall_ms: 0, ..self.clone() }
    }
}

/// Owns the model, optimizer states and the sampling RNG.
pub struct Trainer<'a> {
    pub model: GanModel,
    pub config: TrainingConfig,
    images: &'a Tensor<f32>,
    labels: Option<&'a [usize]>,
    g_opt: AdamState,
    d_opt: AdamState,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iter: u64,
    started: Instant,
}

struct Batch {
    real: Tensor<f32>,
    labels: Option<Vec<usize>>,
    soft: Option<Tensor<f32>>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: GanModel,
        config: TrainingConfig,
        images: &'a Tensor<f32>,
        labels: Option<&'a [usize]>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let mc = &model.config;
        let r = mc.resolution;
        if images.dims() != [images.dims()[0], mc.channels, r, r] {
            return Err(TrainError::Config(format!(
                "images {:?} do not match [N, {}, {r}, {r}]",
                images.dims(),
                mc.channels
            )));
        }
        let n = images.dims()[0];
        if mc.is_conditional() {
            let l = labels.ok_or_else(|| TrainError::Config("conditional model requires labels".into()))?;
            if l.len() != n {
                return Err(TrainError::Config(format!("{} labels for {n} images", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&v| v >= mc.k) {
                return Err(ModelError::Label { label: bad, k: mc.k }.into());
            }
        }
        let labels = if mc.is_conditional() { labels } else { None };
        let adam = config.adam();
        Ok(Self {
            g_opt: AdamState::new(adam, model.g.params.tensors()),
            d_opt: AdamState::new(adam, model.d.params.tensors()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: Vec::new(),
            cursor: 0,
            iter: 0,
            started: Instant::now(),
            model,
            config,
            images,
            labels,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    fn next_indices(&mut self) -> Vec<usize> {
        let n = self.images.dims()[0];
        let mut out = Vec::with_capacity(self.config.batch_size);
        while out.len() < self.config.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn next_batch(&mut self) -> Result<Batch, TrainError> {
        let idx = self.next_indices();
        let real = self.images.select_batch(&idx).map_err(ModelError::from)?;
        let labels = self.labels.map(|l| idx.iter().map(|&i| l[i]).collect::<Vec<_>>());
        let soft = match &labels {
            Some(l) => Some(onehot_rows(l, self.model.config.k)?),
            None => None,
        };
        Ok(Batch { real, labels, soft })
    }

    fn noise(&mut self, n: usize) -> Tensor<f32> {
        let l = self.model.config.latent_dim;
        Tensor::from_fn(&[n, l], |_| self.rng.sample::<f32, _>(StandardNormal))
    }

    fn diverged(&self, reason: impl Into<String>) -> TrainError {
        TrainError::Diverged {
            iter: self.iter,
            reason: reason.into(),
            last_checkpoint: None,
        }
    }

    fn grads(&self, loss: Var<'_, f32>, wrt: &[Var<'_, f32>]) -> Result<Vec<Tensor<f32>>, TrainError> {
        if !loss.value().is_finite() {
            return Err(self.diverged("non-finite loss"));
        }
        match loss.graph().gradients(loss, wrt) {
            Ok(g) => Ok(g),
            Err(GradError::NonFinite { op, .. }) => Err(self.diverged(format!("non-finite value in `{op}`"))),
            Err(e) => Err(ModelError::from(e).into()),
        }
    }

    /// One discriminator/critic update; returns `(loss, penalty)`.
    fn d_step(&mut self, lr: f64) -> Result<(f64, f64), TrainError> {
        let batch = self.next_batch()?;
        let n = batch.real.dims()[0];
        let z = self.noise(n);
        let eps: Vec<f32> = (0..n).map(|_| self.rng.random::<f32>()).collect();
        let cfg = &self.model.config;
        let mode = self.config.mode;
        let graph = Graph::new();
        let gb = self.model.g.params.bind(&graph, false);
        let gctx = Ctx::new(&graph, &gb, &self.model.g.buffers, BnMode::Train, batch.soft.as_ref());
        let fake = generator_forward(&gctx, cfg, graph.constant(z))?;
        let db = self.model.d.params.bind(&graph, true);
        let dctx = Ctx::new(&graph, &db, &self.model.d.buffers, BnMode::Train, batch.soft.as_ref());
        let real_in = discriminator_input(cfg, graph.constant(batch.real))?;
        let fake_in = discriminator_input(cfg, fake)?;
        let (s_real, l_real) = discriminator_forward(&dctx, cfg, real_in)?;
        let (s_fake, l_fake) = discriminator_forward(&dctx, cfg, fake_in)?;
        let mut penalty = 0.0;
        let mut loss = match mode {
            GanMode::Dcgan => dcgan_losses(s_real, s_fake)?.0,
            GanMode::Iwgan => {
                let lambda = self.config.gp_lambda;
                if lambda > 0.0 {
                    let x_hat = interpolate_samples(&graph, &real_in.value(), &fake_in.value(), &eps)?;
                    let (s_hat, _) = discriminator_forward(&dctx, cfg, x_hat)?;
                    let gx = graph.grad(s_hat.sum(), &[x_hat]).map_err(ModelError::from)?[0];
                    let norms = per_sample_norms(gx)?;
                    penalty = norms.value().data().iter().map(|&v| ((v - 1.0) as f64).powi(2)).sum::<f64>()
                        / n as f64
                        * lambda as f64;
                    wgan_gp_critic_loss(s_real, s_fake, norms, lambda)?
                } else {
                    s_fake.mean().sub(s_real.mean()).map_err(ModelError::from)?
                }
            }
        };
        if let (Some(lr_), Some(lf), Some(labels)) = (l_real, l_fake, &batch.labels) {
            let (d_term, _) = ac_loss_terms(lr_, lf, labels, self.config.ac_weight)?;
            loss = loss.add(d_term).map_err(ModelError::from)?;
        }
        let value = loss.item() as f64;
        let grads = self.grads(loss, db.vars())?;
        let stats = dctx.take_stats();
        adam_step(self.model.d.params.tensors_mut(), &grads, &mut self.d_opt, lr)?;
        self.model.d.update_running_stats(&stats, self.config.bn_momentum)?;
        Ok((value, penalty))
    }

    fn g_step(&mut self, lr: f64) -> Result<f64, TrainError> {
        let soft = match self.labels {
            Some(_) => self.next_batch()?.soft,
            None => None,
        };
        let z = self.noise(self.config.batch_size);
        let cfg = &self.model.config;
        let graph = Graph::new();
        let gb = self.model.g.params.bind(&graph, true);
        let gctx = Ctx::new(&graph, &gb, &self.model.g.buffers, BnMode::Train, soft.as_ref());
        let fake = generator_forward(&gctx, cfg, graph.constant(z))?;
        let db = self.model.d.params.bind(&graph, false);
        let dctx = Ctx::new(&graph, &db, &self.model.d.buffers, BnMode::Train, soft.as_ref());
        let (s_fake, l_fake) = discriminator_forward(&dctx, cfg, discriminator_input(cfg, fake)?)?;
        let mut loss = match self.config.mode {
            GanMode::Dcgan => losses::dcgan_generator_loss(s_fake),
            GanMode::Iwgan => s_fake.mean().neg(),
        };
        if let (Some(lf), Some(soft)) = (l_fake, &soft) {
            let term = cross_entropy(lf, soft)?.scale(self.config.ac_weight);
            loss = loss.add(term).map_err(ModelError::from)?;
        }
        let value = loss.item() as f64;
        let grads = self.grads(loss, gb.vars())?;
        let stats = gctx.take_stats();
        adam_step(self.model.g.params.tensors_mut(), &grads, &mut self.g_opt, lr)?;
        self.model.g.update_running_stats(&stats, self.config.bn_momentum)?;
        Ok(value)
    }

    /// Runs one full iteration of the schedule.
    pub fn step(&mut self) -> Result<LogRecord, TrainError> {
        if self.iter >= self.config.total_iters {
            return Err(TrainError::Config("schedule already complete".into()));
        }
        let lr = self.config.lr_at(self.iter)?;
        let (d_updates, g_updates) = match self.config.mode {
            GanMode::Dcgan => (1, self.config.generator_steps),
            GanMode::Iwgan => (self.config.critic_steps, 1),
        };
        let (mut d_loss, mut gp) = (0.0, 0.0);
        for _ in 0..d_updates {
            (d_loss, gp) = self.d_step(lr)?;
        }
        let mut g_loss = 0.0;
        for _ in 0..g_updates {
            g_loss = self.g_step(lr)?;
        }
        let rec = LogRecord {
            iter: self.iter,
            d_loss,
            g_loss,
            gp,
            lr,
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        self.iter += 1;
        Ok(rec)
    }

    /// Re-estimates generator batch-norm statistics from fresh samples with
    /// a dedicated RNG, leaving the training stream untouched.
    pub fn recalibrate_generator(&mut self) -> Result<(), TrainError> {
        let batches = self.config.bn_recalibration_batches;
        if batches == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15 ^ self.iter);
        let cfg = self.model.config.clone();
        let n = self.config.batch_size;
        let mut all = Vec::new();
        for _ in 0..batches {
            let z = Tensor::from_fn(&[n, cfg.latent_dim], |_| rng.sample::<f32, _>(StandardNormal));
            let soft = match self.labels {
                Some(l) => {
                    let picks: Vec<usize> = (0..n).map(|_| l[rng.random_range(0..l.len())]).collect();
                    Some(onehot_rows(&picks, cfg.k)?)
                }
                None => None,
            };
            let graph = Graph::new();
            let gb = self.model.g.params.bind(&graph, false);
            let ctx = Ctx::new(&graph, &gb, &self.model.g.buffers, BnMode::Train, soft.as_ref());
            generator_forward(&ctx, &cfg, graph.constant(z))?;
            all.push(ctx.take_stats());
        }
        self.model.g.set_stats_from(&all)?;
        Ok(())
    }

    fn save(&mut self, path: &Path) -> Result<(), TrainError> {
        self.recalibrate_generator()?;
        self.model.save(path, self.iter, &TensorMap::new())?;
        Ok(())
    }

    /// Runs the remaining schedule. With `out_dir`, writes `log.ndjson`,
    /// periodic `checkpoint-NNNNNN.lgf` files and a final `model.lgf`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Vec<LogRecord>, TrainError> {
        let mut log_file = match out_dir {
            Some(d) => {
                fs::create_dir_all(d)?;
                Some(BufWriter::new(File::create(d.join("log.ndjson"))?))
            }
            None => None,
        };
        let mut last_good: Option<PathBuf> = None;
        let mut log = Vec::new();
        while self.iter < self.config.total_iters {
            let rec = match self.step() {
                Ok(r) => r,
                Err(TrainError::Diverged { iter, reason, .. }) => {
                    if let Some(f) = log_file.as_mut() {
                        f.flush()?;
                    }
                    return Err(TrainError::Diverged {
                        iter,
                        reason,
                        last_checkpoint: last_good,
                    });
                }
                Err(e) => return Err(e),
            };
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &rec).map_err(std::io::Error::from)?;
                f.write_all(b"\n")?;
            }
            log.push(rec);
            let interval = self.config.checkpoint_interval;
            if let Some(d) = out_dir {
                if interval > 0 && self.iter % interval == 0 && self.iter < self.config.total_iters {
                    let p = d.join(format!("checkpoint-{:06}.lgf", self.iter));
                    self.save(&p)?;
                    last_good = Some(p);
                }
            }
        }
        if let Some(f) = log_file.as_mut() {
            f.flush()?;
        }
        match out_dir {
            Some(d) => self.save(&d.join("model.lgf"))?,
            None => self.recalibrate_generator()?,
        }
        Ok(log)
    }
}

/// Outcome of [`train_run`].
pub struct TrainOutcome {
    pub model: GanModel,
    pub log: Vec<LogRecord>,
}

/// Initializes a model from `train.seed` and runs the full schedule.
pub fn train_run(
    images: &Tensor<f32>,
    labels: Option<&[usize]>,
    model_config: &ModelConfig,
    train: &TrainingConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let model = GanModel::new(model_config.clone(), train.seed)?;
    if model_config.conditioning == Conditioning::Ac && train.mode == GanMode::Dcgan && train.ac_weight == 0.0 {
        log::warn!("AC conditioning with zero classifier weight");
    }
    let mut t = Trainer::new(model, train.clone(), images, labels)?;
    let log = t.run(out_dir)?;
    Ok(TrainOutcome { model: t.model, log })
}
