//! Latent-space exploration: sampling, interpolation, class transfer,
//! soft labels, vicinity sampling and direction vectors.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::TensorMap;
use crate::tensor::Tensor;

/// Fraction of the way towards a fresh draw used by vicinity sampling.
pub const DEFAULT_VICINITY_AMOUNT: f64 = 1.0 / 3.0;
pub const DEFAULT_VICINITY_COUNT: usize = 8;

const DIR_PREFIX: &str = "dir.";

#[derive(Debug, Error, PartialEq)]
pub enum LatentError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("prior mismatch: {0} vs {1}")]
    PriorMismatch(Prior, Prior),
    #[error("label {label} out of range for k = {k}")]
    Label { label: usize, k: usize },
    #[error("invalid soft label: {0}")]
    SoftLabel(String),
    #[error("direction `{0}` has no {1} offset")]
    MissingOffset(String, Space),
    #[error("unknown direction `{0}`")]
    UnknownDirection(String),
    #[error("non-finite latent values")]
    NonFinite,
    #[error("malformed stored direction `{0}`")]
    Stored(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    #[default]
    Gaussian,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prior::Gaussian => "gaussian",
            Prior::Uniform => "uniform",
        })
    }
}

impl FromStr for Prior {
    type Err = LatentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" | "normal" => Ok(Prior::Gaussian),
            "uniform" => Ok(Prior::Uniform),
            _ => Err(LatentError::Invalid(format!("unknown prior `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub values: Vec<f64>,
    #[serde(default)]
    pub prior: Prior,
}

impl LatentVector {
    pub fn new(values: Vec<f64>, prior: Prior) -> Result<Self, LatentError> {
        if values.is_empty() {
            return Err(LatentError::Invalid("empty latent vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LatentError::NonFinite);
        }
        Ok(Self { values, prior })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn check_dim(&self, expected: usize) -> Result<(), LatentError> {
        if self.dim() != expected {
            return Err(LatentError::Dim {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, prior: Prior) -> f64 {
    match prior {
        Prior::Gaussian => rng.sample(StandardNormal),
        Prior::Uniform => rng.random_range(-1.0..1.0),
    }
}

fn draw_vector(rng: &mut ChaCha8Rng, dim: usize, prior: Prior) -> LatentVector {
    LatentVector {
        values: (0..dim).map(|_| draw(rng, prior)).collect(),
        prior,
    }
}

/// `n` i.i.d. draws of dimension `dim`.
pub fn sample_z(n: usize, dim: usize, prior: Prior, seed: u64) -> Result<Vec<LatentVector>, LatentError> {
    if n == 0 || dim == 0 {
        return Err(LatentError::Invalid(format!("sample_z needs n, dim >= 1 (got {n}, {dim})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw_vector(&mut rng, dim, prior)).collect())
}

/// Stacks latents into a `[N, dim]` generator input.
pub fn to_tensor(zs: &[LatentVector]) -> Result<Tensor<f32>, LatentError> {
    let Some(first) = zs.first() else {
        return Err(LatentError::Invalid("no latent vectors".into()));
    };
    let dim = first.dim();
    let mut data = Vec::with_capacity(zs.len() * dim);
    for z in zs {
        z.check_dim(dim)?;
        data.extend(z.values.iter().map(|&v| v as f32));
    }
    Tensor::new(&[zs.len(), dim], data).map_err(|e| LatentError::Invalid(e.to_string()))
}

/// Scale applied to the linear interpolant so that, for independent
/// standard-normal endpoints, every point along the path is standard normal.
pub fn matched_scale(t: f64) -> f64 {
    1.0 / ((1.0 - t).powi(2) + t * t).sqrt()
}

pub fn interpolate(z1: &LatentVector, z2: &LatentVector, t: f64, matched: bool) -> Result<LatentVector, LatentError> {
    if z1.prior != z2.prior {
        return Err(LatentError::PriorMismatch(z1.prior, z2.prior));
    }
    z2.check_dim(z1.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(LatentError::Invalid(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(z1.clone());
    }
    if t == 1.0 {
        return Ok(z2.clone());
    }
    let scale = match (matched, z1.prior) {
        (true, Prior::Gaussian) => matched_scale(t),
        (true, Prior::Uniform) => {
            log::warn!("matched interpolation is only defined for the gaussian prior; using plain lerp");
            1.0
        }
        (false, _) => 1.0,
    };
    let values = z1
        .values
        .iter()
        .zip(&z2.values)
        .map(|(a, b)| ((1.0 - t) * a + t * b) * scale)
        .collect();
    Ok(LatentVector {
        values,
        prior: z1.prior,
    })
}

/// `steps` evenly spaced points from `z1` to `z2`, endpoints included.
pub fn interpolate_path(z1: &LatentVector, z2: &LatentVector, steps: usize, matched: bool) -> Result<Vec<LatentVector>, LatentError> {
    if steps < 2 {
        return Err(LatentError::Invalid(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    (0..steps)
        .map(|i| interpolate(z1, z2, i as f64 / (steps - 1) as f64, matched))
        .collect()
}

/// Keeps `z` and swaps the cluster label.
pub fn class_transfer(z: &LatentVector, from_label: usize, to_label: usize, k: usize) -> Result<(LatentVector, usize), LatentError> {
    for label in [from_label, to_label] {
        if label >= k {
            return Err(LatentError::Label { label, k });
        }
    }
    Ok((z.clone(), to_label))
}

/// Rows are labels, columns are latents: `grid[row][col] = (zs[col], labels[row])`.
pub fn transfer_grid(zs: &[LatentVector], labels: &[usize], k: usize) -> Result<Vec<Vec<(LatentVector, usize)>>, LatentError> {
    labels
        .iter()
        .map(|&to| zs.iter().map(|z| class_transfer(z, to, to, k)).collect())
        .collect()
}

pub fn onehot(label: usize, k: usize) -> Result<Vec<f64>, LatentError> {
    if label >= k {
        return Err(LatentError::Label { label, k });
    }
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    Ok(v)
}

pub fn validate_soft_label(v: &[f64], k: usize) -> Result<(), LatentError> {
    if v.len() != k {
        return Err(LatentError::SoftLabel(format!("length {} for k = {k}", v.len())));
    }
    if v.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(LatentError::SoftLabel("weights must be finite and non-negative".into()));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(LatentError::SoftLabel(format!("weights sum to {s}")));
    }
    Ok(())
}

/// Convex combination `(1 - t) a + t b` of two label distributions.
pub fn label_interpolate(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>, LatentError> {
    validate_soft_label(a, a.len())?;
    validate_soft_label(b, a.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(LatentError::Invalid(format!("t = {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(a.to_vec());
    }
    if t == 1.0 {
        return Ok(b.to_vec());
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
}

/// Soft labels as a `[N, k]` generator input.
pub fn labels_to_tensor(labels: &[Vec<f64>]) -> Result<Tensor<f32>, LatentError> {
    let Some(first) = labels.first() else {
        return Err(LatentError::Invalid("no labels".into()));
    };
    let k = first.len();
    let mut data = Vec::with_capacity(labels.len() * k);
    for l in labels {
        validate_soft_label(l, k)?;
        data.extend(l.iter().map(|&w| w as f32));
    }
    Tensor::new(&[labels.len(), k], data).map_err(|e| LatentError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VicinitySample {
    pub z: LatentVector,
    pub label: usize,
}

/// `count` points `z + amount (r - z)` for fresh prior draws `r`. With
/// `cross_cluster` each label is redrawn uniformly over `k`.
pub fn vicinity_sample(
    z: &LatentVector,
    label: usize,
    k: usize,
    count: usize,
    amount: f64,
    cross_cluster: bool,
    seed: u64,
) -> Result<Vec<VicinitySample>, LatentError> {
    if !(0.0..=1.0).contains(&amount) {
        return Err(LatentError::Invalid(format!("amount {amount} outside [0, 1]")));
    }
    if count == 0 {
        return Err(LatentError::Invalid("count must be positive".into()));
    }
    if label >= k {
        return Err(LatentError::Label { label, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let r = draw_vector(&mut rng, z.dim(), z.prior);
        let values = z.values.iter().zip(&r.values).map(|(a, b)| a + amount * (b - a)).collect();
        let label = if cross_cluster { rng.random_range(0..k) } else { label };
        out.push(VicinitySample {
            z: LatentVector { values, prior: z.prior },
            label,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Latent,
    Label,
    Both,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Latent => "latent",
            Space::Label => "label",
            Space::Both => "both",
        })
    }
}

impl FromStr for Space {
    type Err = LatentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "latent" => Ok(Space::Latent),
            "label" => Ok(Space::Label),
            "both" => Ok(Space::Both),
            _ => Err(LatentError::Invalid(format!("unknown space `{s}`"))),
        }
    }
}

/// Named semantic offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVector {
    pub name: String,
    pub z_offset: Option<Vec<f64>>,
    pub label_offset: Option<Vec<f64>>,
    pub n_positive: usize,
    pub n_negative: usize,
}

pub fn validate_direction_name(name: &str) -> Result<(), LatentError> {
    let ok = !name.is_empty() && name.len() <= 64 && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !ok {
        return Err(LatentError::Invalid(format!("direction name `{name}` must be 1-64 chars of [A-Za-z0-9_-]")));
    }
    Ok(())
}

fn mean_of(rows: &[Vec<f64>]) -> Result<Vec<f64>, LatentError> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(LatentError::Dim { expected: d, got: r.len() });
        }
        for (a, v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    Ok(m)
}

fn mean_difference(pos: &[Vec<f64>], neg: &[Vec<f64>]) -> Result<Vec<f64>, LatentError> {
    let (a, b) = (mean_of(pos)?, mean_of(neg)?);
    if a.len() != b.len() {
        return Err(LatentError::Dim {
            expected: a.len(),
            got: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(LatentError::NonFinite);
    }
    Ok(d)
}

/// Mean of the positives minus mean of the negatives, in latent space and,
/// when both label lists are given, in label space.
pub fn direction_from_examples(
    name: &str,
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    labels: Option<(&[Vec<f64>], &[Vec<f64>])>,
) -> Result<DirectionVector, LatentError> {
    validate_direction_name(name)?;
    if positives.is_empty() || negatives.is_empty() {
        return Err(LatentError::Invalid("direction needs non-empty positive and negative sets".into()));
    }
    let z_offset = mean_difference(positives, negatives)?;
    let label_offset = match labels {
        Some((lp, ln)) => {
            if lp.len() != positives.len() || ln.len() != negatives.len() {
                return Err(LatentError::Invalid("one label vector per example required".into()));
            }
            Some(mean_difference(lp, ln)?)
        }
        None => None,
    };
    Ok(DirectionVector {
        name: name.to_string(),
        z_offset: Some(z_offset),
        label_offset,
        n_positive: positives.len(),
        n_negative: negatives.len(),
    })
}

/// Clamps negative weights to zero and rescales to sum 1; an all-zero
/// vector becomes uniform.
pub fn renormalize_label(v: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = v.iter().map(|&w| if w > 0.0 { w } else { 0.0 }).collect();
    let s: f64 = clamped.iter().sum();
    if s > 0.0 {
        clamped.iter().map(|w| w / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

/// Moves `z` and/or `label` by `amount` times the direction's offsets.
/// Untouched parts are returned unchanged.
pub fn apply_direction(
    z: &LatentVector,
    label: Option<&[f64]>,
    dir: &DirectionVector,
    amount: f64,
    space: Space,
) -> Result<(LatentVector, Option<Vec<f64>>), LatentError> {
    if !amount.is_finite() {
        return Err(LatentError::Invalid("amount must be finite".into()));
    }
    let mut z_out = z.clone();
    if matches!(space, Space::Latent | Space::Both) {
        let off = dir
            .z_offset
            .as_ref()
            .ok_or_else(|| LatentError::MissingOffset(dir.name.clone(), Space::Latent))?;
        if off.len() != z.dim() {
            return Err(LatentError::Dim {
                expected: z.dim(),
                got: off.len(),
            });
        }
        z_out.values.iter_mut().zip(off).for_each(|(a, o)| *a += amount * o);
    }
    let mut label_out = label.map(|l| l.to_vec());
    if matches!(space, Space::Label | Space::Both) {
        let off = dir
            .label_offset
            .as_ref()
            .ok_or_else(|| LatentError::MissingOffset(dir.name.clone(), Space::Label))?;
        let l = label.ok_or_else(|| LatentError::SoftLabel("label-space direction needs a label vector".into()))?;
        if off.len() != l.len() {
            return Err(LatentError::SoftLabel(format!("label length {} but offset length {}", l.len(), off.len())));
        }
        let moved: Vec<f64> = l.iter().zip(off).map(|(w, o)| w + amount * o).collect();
        label_out = Some(renormalize_label(&moved));
    }
    Ok((z_out, label_out))
}

/// Stores directions as `dir.<name>.z`, `dir.<name>.label` and
/// `dir.<name>.counts` tensors.
pub fn store_direction(dir: &DirectionVector, map: &mut TensorMap) -> Result<(), LatentError> {
    validate_direction_name(&dir.name)?;
    let base = format!("{DIR_PREFIX}{}.", dir.name);
    map.retain(|k, _| !k.starts_with(&base));
    let as_tensor = |v: &[f64]| Tensor::new(&[v.len()], v.iter().map(|&x| x as f32).collect()).expect("rank-1 shape");
    if let Some(z) = &dir.z_offset {
        map.insert(format!("{base}z"), as_tensor(z));
    }
    if let Some(l) = &dir.label_offset {
        map.insert(format!("{base}label"), as_tensor(l));
    }
    map.insert(format!("{base}counts"), as_tensor(&[dir.n_positive as f64, dir.n_negative as f64]));
    Ok(())
}

/// All directions stored in `map`, in insertion order.
pub fn load_directions(map: &TensorMap) -> Result<Vec<DirectionVector>, LatentError> {
    let mut names: Vec<&str> = Vec::new();
    for key in map.keys() {
        if let Some(rest) = key.strip_prefix(DIR_PREFIX) {
            if let Some((name, _)) = rest.rsplit_once('.') {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
    }
    names.into_iter().map(|n| load_direction(map, n)).collect()
}

pub fn load_direction(map: &TensorMap, name: &str) -> Result<DirectionVector, LatentError> {
    let base = format!("{DIR_PREFIX}{name}.");
    let vec_of = |suffix: &str| map.get(&format!("{base}{suffix}")).map(|t| t.data().iter().map(|&v| v as f64).collect::<Vec<f64>>());
    let z_offset = vec_of("z");
    let label_offset = vec_of("label");
    if z_offset.is_none() && label_offset.is_none() {
        return Err(LatentError::UnknownDirection(name.to_string()));
    }
    let counts = vec_of("counts").unwrap_or_default();
    if counts.len() != 2 || counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(LatentError::Stored(name.to_string()));
    }
    if z_offset.iter().chain(label_offset.iter()).flatten().any(|v| !v.is_finite()) {
        return Err(LatentError::Stored(name.to_string()));
    }
    Ok(DirectionVector {
        name: name.to_string(),
        z_offset,
        label_offset,
        n_positive: counts[0] as usize,
        n_negative: counts[1] as usize,
    })
}
