//! Command-line front end for the logoforge toolkit.

use std::error::Error;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use base64::Engine;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use logoforge::checkpoint::{self, TensorMap};
use logoforge::clustering::{ae_cluster_labels, ae_train, rc_cluster_labels, AeConfig, ClusterOptions, LabelFile};
use logoforge::data::{
    complexity_sort, dedup_exact, pack_images, synth_logo_corpus, white_pixel_filter, PackedDataset,
};
use logoforge::eval::{diversity_score, score_images, ClassifierConfig, ConvClassifier, DEFAULT_SPLITS};
use logoforge::latent::{
    direction_from_examples, onehot, sample_z, store_direction, Space, DEFAULT_VICINITY_AMOUNT, DEFAULT_VICINITY_COUNT,
};
use logoforge::models::{Arch, Conditioning, Generator, ModelConfig, ModelMeta};
use logoforge::studio::{serve_blocking, DirectionRef, Request, Route, Studio, ZPayload};
use logoforge::training::{train_run, TrainingConfig};

pub type CliResult<T = ()> = Result<T, Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(name = "logoforge", version, about = "Clustered GAN training and latent-space tools for logo synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a GAN on a packed dataset.
    Train(TrainArgs),
    /// Render random samples.
    Sample(SampleArgs),
    /// Render an interpolation path between two random latents.
    Interpolate(InterpolateArgs),
    /// Render latents under every cluster label.
    Transfer(TransferArgs),
    /// Render random variations around one latent.
    Vicinity(VicinityArgs),
    /// Fit, apply or list named latent directions.
    #[command(subcommand)]
    Direction(DirectionCmd),
    /// Score generated samples.
    Eval(EvalArgs),
    /// Train the convolutional classifier used by `eval --metric score`.
    #[command(subcommand)]
    Classifier(ClassifierCmd),
    /// Dataset preparation.
    #[command(subcommand)]
    Data(DataCmd),
    /// Synthetic cluster labels.
    #[command(subcommand)]
    Cluster(ClusterCmd),
    /// Serve the studio HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Dcgan,
    Iwgan,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CondArg {
    None,
    Lc,
    Ac,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum PresetArg {
    /// Small DCGAN sized to the data resolution.
    Desk,
    /// Full DCGAN with the blur trick (32×32 data).
    Lld,
    /// Residual WGAN (32×32 data).
    Resnet,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dcgan")]
    pub mode: ModeArg,
    #[arg(long = "cond", value_enum, default_value = "none")]
    pub cond: CondArg,
    /// Cluster count; defaults to the label file's.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub iters: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Iterations between intermediate checkpoints (0: final only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub cluster: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub label: Option<usize>,
    /// Plain linear interpolation instead of the variance-matched path.
    #[arg(long)]
    pub linear: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of latents (grid columns).
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VicinityArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VICINITY_AMOUNT)]
    pub amount: f64,
    #[arg(long, default_value_t = DEFAULT_VICINITY_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub label: Option<usize>,
    #[arg(long)]
    pub cross_cluster: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DirectionCmd {
    /// Fit a direction from payload files and store it in the checkpoint.
    Fit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        name: String,
        /// Payload lines (as written by `sample`) showing the attribute.
        #[arg(long)]
        positive: PathBuf,
        /// Payload lines lacking the attribute.
        #[arg(long)]
        negative: PathBuf,
    },
    /// Render a random latent moved along a stored direction.
    Apply {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        amount: f64,
        #[arg(long, default_value = "latent")]
        space: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        label: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// List stored directions.
    List {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Score,
    Diversity,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Classifier written by `classifier train` (score only).
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SPLITS)]
    pub splits: usize,
    /// Sample pairs for diversity; defaults to `n`.
    #[arg(long)]
    pub pairs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ClassifierCmd {
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum DataCmd {
    /// Pack a directory of images.
    Pack {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resize: Option<u32>,
    },
    /// Write each packed image as a PNG file.
    Unpack {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Drop byte-identical duplicates.
    Dedup {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reorder by ascending PNG size.
    Sort {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep images with at least `threshold` white pixels.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: usize,
    },
    /// Generate the synthetic multi-mode corpus and its true labels.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long, default_value_t = 4)]
        modes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ClusterCmd {
    /// Autoencoder features, PCA and k-means.
    Ae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precomputed features, PCA and k-means.
    Rc {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset the features describe, to check the count.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overridden by the LOGOFORGE_CHECKPOINT environment variable.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

/// Parses `args` (including the program name) and runs the command,
/// writing reports to `out`.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> CliResult
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli.command, out)
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Train(a) => train(a, out),
        Command::Sample(a) => sample(a, out),
        Command::Interpolate(a) => interpolate(a, out),
        Command::Transfer(a) => transfer(a, out),
        Command::Vicinity(a) => vicinity(a, out),
        Command::Direction(c) => direction(c, out),
        Command::Eval(a) => eval(a, out),
        Command::Classifier(c) => classifier(c, out),
        Command::Data(c) => data(c, out),
        Command::Cluster(c) => cluster(c, out),
        Command::Serve(a) => serve_blocking(a.checkpoint.as_deref(), a.addr),
    }
}

/// Stage widths for a small DCGAN at `resolution`.
pub fn desk_config(resolution: usize, k: usize, conditioning: Conditioning) -> ModelConfig {
    let stages = (resolution / 4).trailing_zeros() as usize;
    let g_widths: Vec<usize> = (0..stages).map(|i| (64 >> i).max(8)).collect();
    let d_widths = g_widths.iter().rev().copied().collect();
    ModelConfig {
        resolution,
        g_widths,
        d_widths,
        ..ModelConfig::dcgan_desk(k, conditioning)
    }
}

fn model_config(a: &TrainArgs, resolution: usize, channels: usize, k: usize) -> CliResult<ModelConfig> {
    let conditioning = match a.cond {
        CondArg::None => Conditioning::None,
        CondArg::Lc => Conditioning::Lc,
        CondArg::Ac => Conditioning::Ac,
    };
    let mut cfg = match a.preset {
        PresetArg::Desk => desk_config(resolution, k, conditioning),
        PresetArg::Lld => ModelConfig::dcgan_lld(k, conditioning),
        PresetArg::Resnet => ModelConfig::resnet_32(k, conditioning),
    };
    if let Some(d) = a.latent_dim {
        cfg.latent_dim = d;
    }
    cfg.channels = channels;
    if cfg.resolution != resolution {
        return Err(format!("preset {:?} expects {0}×{0} data, got {resolution}×{resolution}", cfg.resolution).into());
    }
    if cfg.arch == Arch::Resnet && matches!(a.mode, ModeArg::Dcgan) {
        log::warn!("residual preset trained with the DCGAN objective");
    }
    Ok(cfg)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let ds = PackedDataset::read(&a.data)?;
    let images = ds.to_tensor()?;
    let labels = a.labels.as_deref().map(LabelFile::read).transpose()?;
    if let Some(l) = &labels {
        if l.labels.len() != ds.count() {
            return Err(format!("{} labels for {} images", l.labels.len(), ds.count()).into());
        }
    }
    let k = a.k.or(labels.as_ref().map(|l| l.k)).unwrap_or(1);
    let cfg = model_config(&a, ds.width, ds.channels, k)?;
    let mut t = match a.mode {
        ModeArg::Dcgan => TrainingConfig::dcgan(a.iters, a.seed),
        ModeArg::Iwgan => TrainingConfig::iwgan(a.iters, a.seed),
    };
    if let Some(b) = a.batch {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.lr0 = lr;
    }
    t.checkpoint_interval = a.checkpoint_every;
    let outcome = train_run(&images, labels.as_ref().map(|l| l.labels.as_slice()), &cfg, &t, Some(&a.out))?;
    let last = outcome.log.last().expect("at least one iteration");
    writeln!(
        out,
        "trained {} iterations: d_loss {:.4}, g_loss {:.4}; wrote {}",
        outcome.log.len(),
        last.d_loss,
        last.g_loss,
        a.out.join("model.lgf").display()
    )?;
    Ok(())
}

fn load_studio(path: &Path) -> CliResult<Studio> {
    Ok(Studio::load(path)?)
}

fn dispatch(studio: &Studio, route: Route, req: &Request) -> CliResult<Value> {
    studio.dispatch(route, req, false).map_err(|e| e.message.into())
}

/// Writes each item's PNG as `<prefix>-NNN.png` and all payloads to
/// `payloads.ndjson`.
pub fn write_items(dir: &Path, prefix: &str, items: &[Value]) -> CliResult<usize> {
    fs::create_dir_all(dir)?;
    let mut log = fs::File::create(dir.join("payloads.ndjson"))?;
    for (i, item) in items.iter().enumerate() {
        let b64 = item["image"].as_str().ok_or("response item without image")?;
        let png = base64::engine::general_purpose::STANDARD.decode(b64)?;
        let name = format!("{prefix}-{i:03}.png");
        fs::write(dir.join(&name), png)?;
        let mut payload = item.clone();
        let obj = payload.as_object_mut().ok_or("response item is not an object")?;
        obj.remove("image");
        obj.insert("file".into(), json!(name));
        serde_json::to_writer(&mut log, &payload)?;
        log.write_all(b"\n")?;
    }
    Ok(items.len())
}

fn items_of(v: &Value) -> Vec<Value> {
    v["items"].as_array().cloned().unwrap_or_default()
}

fn one_latent(studio: &Studio, seed: u64) -> CliResult<Vec<f64>> {
    Ok(sample_z(1, studio.generator().config.latent_dim, Default::default(), seed)?.remove(0).values)
}

fn default_label(studio: &Studio, label: Option<usize>, seed: u64) -> Option<usize> {
    let k = studio.generator().config.k;
    label.or_else(|| Some(ChaCha8Rng::seed_from_u64(seed).random_range(0..k.max(1))))
}

fn sample(a: SampleArgs, out: &mut dyn Write) -> CliResult {
    let studio = load_studio(&a.checkpoint)?;
    let mut items = Vec::new();
    let mut left = a.n;
    let mut chunk = 0u64;
    while left > 0 {
        let count = left.min(logoforge::studio::MAX_COUNT);
        let req = Request {
            count: Some(count),
            seed: Some(a.seed.wrapping_add(chunk)),
            cluster: a.cluster,
            ..Default::default()
        };
        items.extend(items_of(&dispatch(&studio, Route::Generate, &req)?));
        left -= count;
        chunk += 1;
    }
    let n = write_items(&a.out, "sample", &items)?;
    writeln!(out, "wrote {n} samples to {}", a.out.display())?;
    Ok(())
}

fn interpolate(a: InterpolateArgs, out: &mut dyn Write) -> CliResult {
    let studio = load_studio(&a.checkpoint)?;
    let req = Request {
        op: Some(if a.linear { "linear" } else { "matched" }.into()),
        z: Some(ZPayload::One(one_latent(&studio, a.seed)?)),
        z2: Some(ZPayload::One(one_latent(&studio, a.seed.wrapping_add(1))?)),
        label: default_label(&studio, a.label, a.seed),
        steps: Some(a.steps),
        ..Default::default()
    };
    let n = write_items(&a.out, "interp", &items_of(&dispatch(&studio, Route::Interpolate, &req)?))?;
    writeln!(out, "wrote {n} interpolation frames to {}", a.out.display())?;
    Ok(())
}

fn transfer(a: TransferArgs, out: &mut dyn Write) -> CliResult {
    let studio = load_studio(&a.checkpoint)?;
    let zs = sample_z(a.n, studio.generator().config.latent_dim, Default::default(), a.seed)?;
    let mut items = Vec::new();
    for z in zs {
        let req = Request {
            z: Some(ZPayload::One(z.values)),
            label: Some(0),
            ..Default::default()
        };
        items.extend(items_of(&dispatch(&studio, Route::Transfer, &req)?));
    }
    let n = write_items(&a.out, "transfer", &items)?;
    writeln!(out, "wrote {n} images ({} latents × {} clusters) to {}", a.n, n / a.n.max(1), a.out.display())?;
    Ok(())
}

fn vicinity(a: VicinityArgs, out: &mut dyn Write) -> CliResult {
    let studio = load_studio(&a.checkpoint)?;
    let req = Request {
        z: Some(ZPayload::One(one_latent(&studio, a.seed)?)),
        label: default_label(&studio, a.label, a.seed),
        amount: Some(a.amount),
        count: Some(a.count),
        seed: Some(a.seed.wrapping_add(1)),
        cross_cluster: Some(a.cross_cluster),
        ..Default::default()
    };
    let n = write_items(&a.out, "vicinity", &items_of(&dispatch(&studio, Route::Vicinity, &req)?))?;
    writeln!(out, "wrote {n} variations to {}", a.out.display())?;
    Ok(())
}

/// `z` rows and, when every line carries one, label vectors from a payload
/// file.
pub fn read_payloads(path: &Path, k: usize) -> CliResult<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
    let text = fs::read_to_string(path)?;
    let mut zs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?;
        let z: Vec<f64> = serde_json::from_value(v["z"].clone()).map_err(|e| format!("{}:{}: bad z: {e}", path.display(), i + 1))?;
        zs.push(z);
        let label = match (&v["soft_label"], v["label"].as_u64()) {
            (Value::Array(_), _) => Some(serde_json::from_value(v["soft_label"].clone())?),
            (_, Some(l)) if k > 0 => Some(onehot(l as usize, k)?),
            _ => None,
        };
        labels.push(label);
    }
    if zs.is_empty() {
        return Err(format!("{} holds no payloads", path.display()).into());
    }
    let labels = labels.into_iter().collect::<Option<Vec<_>>>();
    Ok((zs, labels))
}

fn direction(c: DirectionCmd, out: &mut dyn Write) -> CliResult {
    match c {
        DirectionCmd::Fit {
            checkpoint,
            name,
            positive,
            negative,
        } => {
            let (g, mut map, meta): (Generator, TensorMap, ModelMeta) = Generator::load(&checkpoint)?;
            let k = if g.config.is_conditional() { g.config.k } else { 0 };
            let (pz, pl) = read_payloads(&positive, k)?;
            let (nz, nl) = read_payloads(&negative, k)?;
            let labels = match (&pl, &nl) {
                (Some(p), Some(n)) => Some((p.as_slice(), n.as_slice())),
                _ => None,
            };
            let dir = direction_from_examples(&name, &pz, &nz, labels)?;
            store_direction(&dir, &mut map)?;
            checkpoint::save(&checkpoint, &map, &meta)?;
            writeln!(
                out,
                "stored direction `{name}` ({} positive, {} negative{})",
                dir.n_positive,
                dir.n_negative,
                if dir.label_offset.is_some() { ", with label offset" } else { "" }
            )?;
        }
        DirectionCmd::Apply {
            checkpoint,
            name,
            amount,
            space,
            seed,
            label,
            out: dir,
        } => {
            let studio = load_studio(&checkpoint)?;
            let space: Space = space.parse()?;
            let req = Request {
                z: Some(ZPayload::One(one_latent(&studio, seed)?)),
                label: default_label(&studio, label, seed),
                amount: Some(amount),
                direction: Some(DirectionRef::Name(name.clone())),
                space: Some(space),
                ..Default::default()
            };
            let before = Request { amount: Some(0.0), ..req.clone() };
            let mut items = items_of(&dispatch(&studio, Route::DirectionApply, &before)?);
            items.extend(items_of(&dispatch(&studio, Route::DirectionApply, &req)?));
            write_items(&dir, "direction", &items)?;
            writeln!(out, "applied `{name}` × {amount}; wrote before/after to {}", dir.display())?;
        }
        DirectionCmd::List { checkpoint } => {
            let studio = load_studio(&checkpoint)?;
            if studio.directions().is_empty() {
                writeln!(out, "no stored directions")?;
            }
            for d in studio.directions() {
                writeln!(
                    out,
                    "{}\tlatent={}\tlabel={}\t+{}/-{}",
                    d.name,
                    d.z_offset.is_some(),
                    d.label_offset.is_some(),
                    d.n_positive,
                    d.n_negative
                )?;
            }
        }
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CliResult {
    let (g, _, _) = Generator::load(&a.checkpoint)?;
    let cfg = &g.config;
    let zs = sample_z(a.n, cfg.latent_dim, Default::default(), a.seed)?;
    let z = logoforge::latent::to_tensor(&zs)?;
    let labels = if cfg.is_conditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5851_f42d_4c95_7f2d);
        let picks: Vec<usize> = (0..a.n).map(|_| rng.random_range(0..cfg.k)).collect();
        Some(logoforge::models::onehot_rows(&picks, cfg.k)?)
    } else {
        None
    };
    let images = g.render_batched(&z, labels.as_ref(), 64)?;
    let report = match a.metric {
        MetricArg::Score => {
            let path = a.classifier.as_deref().ok_or("--metric score needs --classifier (see `classifier train`)")?;
            let clf = ConvClassifier::from_tensor_map(&checkpoint::read_tensors(path)?)?;
            score_images(&clf, &images, a.splits)?
        }
        MetricArg::Diversity => diversity_score(&images, a.pairs.unwrap_or(a.n), a.seed)?,
    };
    writeln!(out, "{report}")?;
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    Ok(())
}

fn classifier(c: ClassifierCmd, out: &mut dyn Write) -> CliResult {
    let ClassifierCmd::Train {
        data,
        labels,
        out: path,
        epochs,
        seed,
    } = c;
    let ds = PackedDataset::read(&data)?;
    let lf = LabelFile::read(&labels)?;
    let cfg = ClassifierConfig {
        epochs,
        seed,
        ..ClassifierConfig::default()
    };
    let clf = ConvClassifier::train(&ds.to_tensor()?, &lf.labels, lf.k, &cfg)?;
    checkpoint::write_tensors(&path, &clf.to_tensor_map())?;
    writeln!(
        out,
        "trained classifier on {} images, final loss {:.4}; wrote {}",
        ds.count(),
        clf.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    )?;
    Ok(())
}

fn data(c: DataCmd, out: &mut dyn Write) -> CliResult {
    match c {
        DataCmd::Pack { dir, out: path, resize } => {
            let (ds, report) = pack_images(&dir, resize)?;
            ds.write(&path)?;
            writeln!(
                out,
                "packed {} images ({} unreadable, {} non-square skipped)",
                report.packed, report.unreadable, report.non_square
            )?;
        }
        DataCmd::Unpack { data, dir } => {
            let ds = PackedDataset::read(&data)?;
            ds.unpack_to_dir(&dir)?;
            writeln!(out, "wrote {} images to {}", ds.count(), dir.display())?;
        }
        DataCmd::Dedup { data, out: path } => {
            let (ds, _, removed) = dedup_exact(&PackedDataset::read(&data)?);
            ds.write(&path)?;
            writeln!(out, "kept {} images, removed {removed} duplicates", ds.count())?;
        }
        DataCmd::Sort { data, out: path } => {
            let ds = PackedDataset::read(&data)?;
            let order = complexity_sort(&ds)?;
            ds.select(&order).write(&path)?;
            writeln!(out, "sorted {} images by compressed size", ds.count())?;
        }
        DataCmd::Filter { data, out: path, threshold } => {
            let ds = PackedDataset::read(&data)?;
            let all: Vec<usize> = (0..ds.count()).collect();
            let kept = white_pixel_filter(&ds, &all, threshold)?;
            ds.select(&kept).write(&path)?;
            writeln!(out, "kept {} of {} images", kept.len(), ds.count())?;
        }
        DataCmd::Synth {
            n,
            resolution,
            modes,
            seed,
            out: path,
            labels_out,
        } => {
            let (ds, labels) = synth_logo_corpus(n, resolution, modes, seed)?;
            ds.write(&path)?;
            if let Some(lp) = labels_out {
                LabelFile::new(modes, labels)?.write(&lp)?;
            }
            writeln!(out, "wrote {n} synthetic images with {modes} modes")?;
        }
    }
    Ok(())
}

fn cluster(c: ClusterCmd, out: &mut dyn Write) -> CliResult {
    let (labels, source) = match c {
        ClusterCmd::Ae {
            data,
            k,
            seed,
            epochs,
            out: path,
        } => {
            let ds = PackedDataset::read(&data)?;
            let x = ds.to_tensor()?;
            let mut cfg = AeConfig::new(desk_config(ds.width, k, Conditioning::None), seed);
            cfg.epochs = epochs;
            let ae = ae_train(&x, &cfg)?;
            let (labels, _) = ae_cluster_labels(&x, &ae, &ClusterOptions::new(k, seed))?;
            labels.write(&path)?;
            (labels, "autoencoder")
        }
        ClusterCmd::Rc {
            features,
            k,
            seed,
            data,
            out: path,
        } => {
            let count = data.as_deref().map(PackedDataset::read).transpose()?.map(|d| d.count());
            let (labels, _) = rc_cluster_labels(&features, count, &ClusterOptions::new(k, seed))?;
            labels.write(&path)?;
            (labels, "external features")
        }
    };
    let mut sizes = vec![0usize; labels.k];
    labels.labels.iter().for_each(|&l| sizes[l] += 1);
    writeln!(out, "clustered {} images from {source} into {} clusters: sizes {sizes:?}", labels.labels.len(), labels.k)?;
    Ok(())
}
