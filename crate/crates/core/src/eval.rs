//! Sample-quality scores: the classifier (Inception-style) score with a
//! pluggable classifier, MS-SSIM and the MS-SSIM diversity score.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::TensorMap;
use crate::data::NearestCentroid;
use crate::models::{BnMode, Ctx, Init, ModelError, ParamSet, ParamSpec};
use crate::tensor::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::training::losses::cross_entropy;

/// Standard five-scale MS-SSIM weights.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of `[-1, 1]` images.
pub const SSIM_RANGE: f64 = 2.0;
pub const DEFAULT_SPLITS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("row {row} is not a probability vector: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("image side {side} too small for {scales} scales")]
    TooSmall { side: usize, scales: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_samples: usize,
    pub n_splits: usize,
}

impl std::fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {:.4} ± {:.4} (n = {}, splits = {})",
            self.metric, self.mean, self.std, self.n_samples, self.n_splits
        )
    }
}

/// Sum with Neumaier compensation.
fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = fsum(xs.iter().copied()) / n;
    let var = fsum(xs.iter().map(|x| (x - m) * (x - m))) / n;
    (m, var.sqrt())
}

pub fn check_probability_rows(pred: &[Vec<f64>]) -> Result<usize, EvalError> {
    let k = pred.first().map(Vec::len).unwrap_or(0);
    if k == 0 {
        return Err(EvalError::Invalid("empty prediction matrix".into()));
    }
    for (row, p) in pred.iter().enumerate() {
        if p.len() != k {
            return Err(EvalError::BadRow {
                row,
                reason: format!("length {} != {k}", p.len()),
            });
        }
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(EvalError::BadRow {
                row,
                reason: "negative or non-finite entry".into(),
            });
        }
        let s = fsum(p.iter().copied());
        if (s - 1.0).abs() > 1e-5 {
            return Err(EvalError::BadRow {
                row,
                reason: format!("sums to {s}"),
            });
        }
    }
    Ok(k)
}

/// Per split, `exp(mean_x KL(p(y|x) || p(y)))`; mean and population std
/// over `n_splits` equal contiguous splits.
pub fn classifier_score(pred: &[Vec<f64>], n_splits: usize) -> Result<ScoreReport, EvalError> {
    let k = check_probability_rows(pred)?;
    let n = pred.len();
    if n_splits == 0 || n < n_splits || n % n_splits != 0 {
        return Err(EvalError::Invalid(format!("{n} samples cannot be split into {n_splits} equal parts")));
    }
    let size = n / n_splits;
    let scores: Vec<f64> = pred
        .chunks(size)
        .map(|part| {
            // exp(mean KL) is the weighted geometric mean of the ratios
            // r = p / p̄ with weights p / n, evaluated relative to a pivot r0.
            let m = part.len() as f64;
            let mass: Vec<f64> = (0..k).map(|j| fsum(part.iter().map(|p| p[j]))).collect();
            let ratio = |pj: f64, j: usize| pj * m / mass[j];
            let r0 = part
                .iter()
                .flat_map(|p| p.iter().enumerate())
                .find(|(_, &pj)| pj > 0.0)
                .map(|(j, &pj)| ratio(pj, j))
                .unwrap_or(1.0);
            let log_rel = fsum(part.iter().flat_map(|p| {
                p.iter()
                    .enumerate()
                    .filter(|(_, &pj)| pj > 0.0)
                    .map(|(j, &pj)| pj / m * (ratio(pj, j) / r0).ln())
            }));
            (r0 * log_rel.exp()).clamp(1.0, k as f64)
        })
        .collect();
    let (mean, std) = mean_std(&scores);
    Ok(ScoreReport {
        metric: "classifier_score".into(),
        mean,
        std,
        n_samples: n,
        n_splits,
    })
}

/// A single-channel image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Plane {
    /// Rec. 601 luma of one `[C, H, W]` image (C = 1 or 3, square).
    pub fn from_chw(chw: &[f32], channels: usize, side: usize) -> Result<Self, EvalError> {
        let plane = side * side;
        if chw.len() != channels * plane {
            return Err(EvalError::Invalid(format!("{} values for {channels}×{side}×{side}", chw.len())));
        }
        let data = match channels {
            1 => chw.iter().map(|&v| v as f64).collect(),
            3 => (0..plane)
                .map(|p| 0.299 * chw[p] as f64 + 0.587 * chw[plane + p] as f64 + 0.114 * chw[2 * plane + p] as f64)
                .collect(),
            c => return Err(EvalError::Invalid(format!("{c} channels"))),
        };
        Ok(Self { side, data })
    }

    /// 2×2 average pooling, dropping an odd trailing row/column.
    pub fn downsample(&self) -> Plane {
        let s = self.side / 2;
        let at = |y: usize, x: usize| self.data[y * self.side + x];
        let data = (0..s * s)
            .map(|i| {
                let (y, x) = (2 * (i / s), 2 * (i % s));
                0.25 * (at(y, x) + at(y, x + 1) + at(y + 1, x) + at(y + 1, x + 1))
            })
            .collect();
        Plane { side: s, data }
    }
}

/// Normalized 1-D Gaussian of `size` taps centred at `(size - 1) / 2`.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering.
fn filter_valid(src: &[f64], side: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let out = side + 1 - w;
    let mut rows = vec![0.0; side * out];
    for y in 0..side {
        for x in 0..out {
            rows[y * out + x] = (0..w).map(|t| taps[t] * src[y * side + x + t]).sum();
        }
    }
    let mut res = vec![0.0; out * out];
    for y in 0..out {
        for x in 0..out {
            res[y * out + x] = (0..w).map(|t| taps[t] * rows[(y + t) * out + x]).sum();
        }
    }
    res
}

/// Mean contrast-structure term and mean full SSIM at one scale. On planes
/// smaller than the window, the window and its sigma shrink proportionally.
pub fn ssim_terms(a: &Plane, b: &Plane) -> (f64, f64) {
    let size = SSIM_WINDOW.min(a.side);
    let taps = gaussian_taps(size, SSIM_SIGMA * size as f64 / SSIM_WINDOW as f64);
    let c1 = (0.01 * SSIM_RANGE).powi(2);
    let c2 = (0.03 * SSIM_RANGE).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(&a.data, a.side, &taps);
    let mu_b = filter_valid(&b.data, a.side, &taps);
    let e_aa = filter_valid(&prod(&|x, _| x * x), a.side, &taps);
    let e_bb = filter_valid(&prod(&|_, y| y * y), a.side, &taps);
    let e_ab = filter_valid(&prod(&|x, y| x * y), a.side, &taps);
    let n = mu_a.len() as f64;
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    (cs_sum / n, ssim_sum / n)
}

/// The first `scales` standard weights rescaled to sum to one.
pub fn msssim_weights(scales: usize) -> Vec<f64> {
    let w = &MSSSIM_WEIGHTS[..scales.min(MSSSIM_WEIGHTS.len())];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Scales used for a given resolution: five from 176 px up, otherwise three.
pub fn default_scales(side: usize) -> usize {
    if side >= SSIM_WINDOW << 4 {
        5
    } else {
        3
    }
}

/// Multi-scale SSIM: contrast-structure at every scale, luminance at the
/// coarsest, combined as a weighted geometric product. Negative per-scale
/// terms are clamped to zero.
pub fn msssim(a: &Plane, b: &Plane, weights: &[f64]) -> Result<f64, EvalError> {
    let scales = weights.len();
    if scales == 0 || a.side != b.side || a.data.len() != b.data.len() {
        return Err(EvalError::Invalid("msssim needs equal-size planes and at least one scale".into()));
    }
    if a.side >> (scales - 1) < 2 {
        return Err(EvalError::TooSmall { side: a.side, scales });
    }
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut value = 1.0;
    for (s, &w) in weights.iter().enumerate() {
        let (cs, ssim) = ssim_terms(&x, &y);
        let term = if s + 1 == scales { ssim } else { cs };
        value *= term.max(0.0).powf(w);
        if s + 1 < scales {
            x = x.downsample();
            y = y.downsample();
        }
    }
    Ok(value)
}

/// MS-SSIM of two `[C, H, W]` images at the default scale count.
pub fn msssim_images(a: &[f32], b: &[f32], channels: usize, side: usize) -> Result<f64, EvalError> {
    let w = msssim_weights(default_scales(side));
    msssim(&Plane::from_chw(a, channels, side)?, &Plane::from_chw(b, channels, side)?, &w)
}

/// Mean MS-SSIM over `n_pairs` uniformly drawn pairs of distinct samples
/// from `images [N, C, H, W]`. Lower means more diverse.
pub fn diversity_score(images: &Tensor<f32>, n_pairs: usize, seed: u64) -> Result<ScoreReport, EvalError> {
    let d = images.dims();
    if d.len() != 4 || d[2] != d[3] {
        return Err(EvalError::Invalid(format!("expected square [N, C, H, W], got {d:?}")));
    }
    let (n, c, side) = (d[0], d[1], d[2]);
    if n < 2 {
        return Err(EvalError::Invalid("diversity needs at least two samples".into()));
    }
    if n_pairs == 0 {
        return Err(EvalError::Invalid("n_pairs must be positive".into()));
    }
    let weights = msssim_weights(default_scales(side));
    let len = c * side * side;
    let planes = (0..n)
        .map(|i| Plane::from_chw(&images.data()[i * len..(i + 1) * len], c, side))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        values.push(msssim(&planes[i], &planes[j], &weights)?);
    }
    let (mean, std) = mean_std(&values);
    Ok(ScoreReport {
        metric: "msssim_diversity".into(),
        mean,
        std,
        n_samples: n,
        n_splits: 1,
    })
}

/// Anything that maps images to class probabilities.
pub trait Classifier {
    fn classes(&self) -> usize;
    fn predict_proba(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>, EvalError>;
}

impl Classifier for NearestCentroid {
    fn classes(&self) -> usize {
        self.centroids.len()
    }

    fn predict_proba(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>, EvalError> {
        let k = self.classes();
        Ok(self
            .predict(images)
            .into_iter()
            .map(|c| (0..k).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub widths: [usize; 2],
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            widths: [16, 32],
        }
    }
}

/// Two strided convolutions and a linear softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvClassifier {
    pub channels: usize,
    pub side: usize,
    pub k: usize,
    pub params: ParamSet,
    pub epoch_losses: Vec<f64>,
}

const CLS_PREFIX: &str = "cls.";

fn classifier_specs(channels: usize, side: usize, k: usize, widths: [usize; 2]) -> Vec<ParamSpec> {
    let [w0, w1] = widths;
    let flat = w1 * (side / 4) * (side / 4);
    vec![
        ParamSpec::new("conv0.w", &[w0, channels, 4, 4], Init::He(channels * 16)),
        ParamSpec::new("conv0.b", &[w0], Init::Zeros),
        ParamSpec::new("conv1.w", &[w1, w0, 4, 4], Init::He(w0 * 16)),
        ParamSpec::new("conv1.b", &[w1], Init::Zeros),
        ParamSpec::new("fc.w", &[flat, k], Init::He(flat)),
        ParamSpec::new("fc.b", &[k], Init::Zeros),
    ]
}

impl ConvClassifier {
    fn logits<'g>(&self, ctx: &Ctx<'_, 'g>, x: &Tensor<f32>) -> Result<crate::tensor::Var<'g, f32>, ModelError> {
        let h = ctx.conv(ctx.graph.constant(x.clone()), "conv0", 2, 1)?.leaky_relu(0.2);
        let h = ctx.conv(h, "conv1", 2, 1)?.leaky_relu(0.2);
        ctx.linear(h.flatten()?, "fc")
    }

    /// Fits on `images [N, C, S, S]` with integer labels (S divisible by 4).
    pub fn train(images: &Tensor<f32>, labels: &[usize], k: usize, cfg: &ClassifierConfig) -> Result<Self, EvalError> {
        let d = images.dims().to_vec();
        if d.len() != 4 || d[2] != d[3] || d[2] % 4 != 0 || d[0] != labels.len() || d[0] == 0 {
            return Err(EvalError::Invalid(format!("images {d:?} with {} labels", labels.len())));
        }
        if k < 2 || labels.iter().any(|&l| l >= k) {
            return Err(EvalError::Invalid(format!("labels must lie in 0..{k} with k >= 2")));
        }
        if cfg.batch_size == 0 {
            return Err(EvalError::Invalid("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = Self {
            channels: d[1],
            side: d[2],
            k,
            params: ParamSet::init(&classifier_specs(d[1], d[2], k, cfg.widths), &mut rng),
            epoch_losses: Vec::new(),
        };
        let mut opt = AdamState::new(AdamConfig::DCGAN, model.params.tensors());
        let empty = ParamSet::new();
        let mut order: Vec<usize> = (0..d[0]).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let (mut total, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let x = images.select_batch(chunk).map_err(ModelError::from)?;
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let targets = crate::models::onehot_rows(&y, k)?;
                let g = Graph::new();
                let bound = model.params.bind(&g, true);
                let ctx = Ctx::new(&g, &bound, &empty, BnMode::Eval, None);
                let loss = cross_entropy(model.logits(&ctx, &x)?, &targets)?;
                let value = loss.item() as f64;
                if !value.is_finite() {
                    return Err(ModelError::NonFinite("classifier loss".into()).into());
                }
                let grads = g.gradients(loss, bound.vars()).map_err(ModelError::from)?;
                adam_step(model.params.tensors_mut(), &grads, &mut opt, cfg.lr).map_err(|e| ModelError::Config(e.to_string()))?;
                total += value;
                batches += 1;
            }
            model.epoch_losses.push(total / batches as f64);
        }
        Ok(model)
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let mut m = TensorMap::new();
        self.params.store_into(&mut m, CLS_PREFIX);
        m
    }

    pub fn from_tensor_map(m: &TensorMap) -> Result<Self, EvalError> {
        let get = |n: &str| m.get(&format!("{CLS_PREFIX}{n}")).ok_or_else(|| ModelError::MissingParam(format!("{CLS_PREFIX}{n}")));
        let c0 = get("conv0.w")?.dims().to_vec();
        let c1 = get("conv1.w")?.dims().to_vec();
        let fc = get("fc.w")?.dims().to_vec();
        if c0.len() != 4 || c1.len() != 4 || fc.len() != 2 {
            return Err(EvalError::Invalid("malformed classifier tensors".into()));
        }
        let cells = fc[0] / c1[0];
        let side = ((cells as f64).sqrt().round() as usize) * 4;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::init(&classifier_specs(c0[1], side, fc[1], [c0[0], c1[0]]), &mut rng);
        params.load_from(m, CLS_PREFIX)?;
        Ok(Self {
            channels: c0[1],
            side,
            k: fc[1],
            params,
            epoch_losses: Vec::new(),
        })
    }
}

impl Classifier for ConvClassifier {
    fn classes(&self) -> usize {
        self.k
    }

    fn predict_proba(&self, images: &Tensor<f32>) -> Result<Vec<Vec<f64>>, EvalError> {
        let d = images.dims();
        if d.len() != 4 || d[1] != self.channels || d[2] != self.side || d[3] != self.side {
            return Err(EvalError::Invalid(format!(
                "classifier expects [N, {}, {s}, {s}], got {d:?}",
                self.channels,
                s = self.side
            )));
        }
        let empty = ParamSet::new();
        let mut out = Vec::with_capacity(d[0]);
        for start in (0..d[0]).step_by(256) {
            let x = images.narrow_batch(start, 256.min(d[0] - start)).map_err(ModelError::from)?;
            let g = Graph::new();
            let bound = self.params.bind(&g, false);
            let ctx = Ctx::new(&g, &bound, &empty, BnMode::Eval, None);
            let lp = self.logits(&ctx, &x)?.log_softmax().map_err(ModelError::from)?;
            let v = lp.value();
            for row in v.data().chunks(self.k) {
                let p: Vec<f64> = row.iter().map(|&l| (l as f64).exp()).collect();
                let s: f64 = p.iter().sum();
                out.push(p.into_iter().map(|x| x / s).collect());
            }
        }
        Ok(out)
    }
}

/// Classifier score of `images` under `classifier`.
pub fn score_images(classifier: &dyn Classifier, images: &Tensor<f32>, n_splits: usize) -> Result<ScoreReport, EvalError> {
    classifier_score(&classifier.predict_proba(images)?, n_splits)
}
