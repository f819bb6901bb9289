//! Synthetic labels from PCA + mini-batch k-means over autoencoder codes
//! or externally supplied feature vectors.

pub mod autoencoder;
pub mod kmeans;
pub mod pca;

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::checkpoint::{CheckpointError, TensorMap};
use crate::models::ModelError;
use crate::tensor::Tensor;

pub use autoencoder::{ae_cluster_labels, ae_train, grayscale, AeConfig, Autoencoder};
pub use kmeans::{minibatch_kmeans, KMeans};
pub use pca::{pca_fit, Pca};

pub const FEATURE_MAGIC: &[u8; 8] = b"LGFFEAT1";
pub const LABEL_MAGIC: &[u8; 7] = b"LGFLBL1";
pub const DEFAULT_PCA_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {what} file: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error("degenerate data: all feature vectors identical")]
    Degenerate,
    #[error("non-finite feature values")]
    NonFinite,
    #[error("feature count {features} does not match dataset size {dataset}")]
    CountMismatch { features: usize, dataset: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    Autoencoder,
    External,
}

/// `count × dim` row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub source: FeatureSource,
}

impl FeatureSet {
    pub fn new(count: usize, dim: usize, data: Vec<f32>, source: FeatureSource) -> Result<Self, ClusterError> {
        if count * dim != data.len() || dim == 0 {
            return Err(ClusterError::Invalid(format!("{} values for {count}×{dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite);
        }
        Ok(Self { count, dim, data, source })
    }

    /// Rows of a `[N, ...]` tensor.
    pub fn from_tensor(t: &Tensor<f32>, source: FeatureSource) -> Result<Self, ClusterError> {
        let n = t.dims()[0];
        Self::new(n, t.numel() / n, t.data().to_vec(), source)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, ClusterError> {
        let bad = |detail: String| ClusterError::Malformed { what: "feature", detail };
        if buf.len() < 16 || &buf[..8] != FEATURE_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
        let payload = &buf[16..];
        if payload.len() != n * d * 4 {
            return Err(bad(format!("{} payload bytes for {n}×{d}", payload.len())));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(n, d, data, FeatureSource::External)
    }

    pub fn write(&self, path: &Path) -> Result<(), ClusterError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ClusterError> {
        Self::decode(&fs::read(path)?)
    }
}

/// Cluster ids in `[0, k)` for a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub k: usize,
    pub labels: Vec<usize>,
}

impl LabelFile {
    pub fn new(k: usize, labels: Vec<usize>) -> Result<Self, ClusterError> {
        if k == 0 || k > u16::MAX as usize + 1 {
            return Err(ClusterError::Invalid(format!("k = {k}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(ClusterError::Invalid(format!("label {bad} >= k = {k}")));
        }
        Ok(Self { k, labels })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 2 * self.labels.len());
        out.extend_from_slice(LABEL_MAGIC);
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.k as u16).to_le_bytes());
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, ClusterError> {
        let bad = |detail: String| ClusterError::Malformed { what: "label", detail };
        if buf.len() < 13 || &buf[..7] != LABEL_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let n = u32::from_le_bytes(buf[7..11].try_into().unwrap()) as usize;
        let k = u16::from_le_bytes(buf[11..13].try_into().unwrap()) as usize;
        let payload = &buf[13..];
        if payload.len() != 2 * n {
            return Err(bad(format!("{} payload bytes for {n} labels", payload.len())));
        }
        let labels = payload
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as usize)
            .collect();
        Self::new(k, labels).map_err(|e| bad(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), ClusterError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ClusterError> {
        Self::decode(&fs::read(path)?)
    }
}

/// Options for the PCA + k-means stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOptions {
    pub k: usize,
    /// Requested PCA dimensionality; clamped to `min(N, d)`.
    pub pca_dim: usize,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
}

impl ClusterOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            pca_dim: DEFAULT_PCA_DIM,
            batch: 256,
            iters: 2000,
            seed,
        }
    }
}

/// PCA basis plus centroids in the reduced space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub pca: Pca,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
}

impl ClusterModel {
    pub fn assign(&self, row: &[f32]) -> usize {
        kmeans::nearest(&self.centroids, &self.pca.project(row)).0
    }

    pub fn assign_all(&self, features: &FeatureSet) -> Vec<usize> {
        features.rows().map(|r| self.assign(r)).collect()
    }

    pub fn to_tensor_map(&self) -> TensorMap {
        let (d, m) = self.pca.basis.shape();
        let mut t = TensorMap::new();
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        t.insert("cluster.pca_mean".into(), Tensor::new(&[d], f(&self.pca.mean)).unwrap());
        let basis: Vec<f32> = (0..d).flat_map(|r| (0..m).map(move |c| (r, c))).map(|(r, c)| self.pca.basis[(r, c)] as f32).collect();
        t.insert("cluster.pca_basis".into(), Tensor::new(&[d, m], basis).unwrap());
        t.insert("cluster.pca_variances".into(), Tensor::new(&[m], f(&self.pca.variances)).unwrap());
        t.insert("cluster.pca_explained".into(), Tensor::new(&[m], f(&self.pca.explained_ratio)).unwrap());
        let cents: Vec<f32> = self.centroids.iter().flat_map(|c| f(c)).collect();
        t.insert("cluster.centroids".into(), Tensor::new(&[self.k, m], cents).unwrap());
        t
    }

    pub fn from_tensor_map(t: &TensorMap) -> Result<Self, ClusterError> {
        let get = |k: &str| t.get(k).ok_or_else(|| CheckpointError::Missing(k.into()));
        let (mean, basis, var, expl, cents) = (
            get("cluster.pca_mean")?,
            get("cluster.pca_basis")?,
            get("cluster.pca_variances")?,
            get("cluster.pca_explained")?,
            get("cluster.centroids")?,
        );
        let bd = basis.dims();
        let cd = cents.dims();
        if bd.len() != 2 || cd.len() != 2 || cd[1] != bd[1] || mean.numel() != bd[0] {
            return Err(ClusterError::Malformed {
                what: "cluster model",
                detail: format!("basis {bd:?}, centroids {cd:?}"),
            });
        }
        let f = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        Ok(Self {
            pca: Pca {
                mean: f(mean),
                basis: DMatrix::from_row_slice(bd[0], bd[1], &f(basis)),
                variances: f(var),
                explained_ratio: f(expl),
            },
            centroids: f(cents).chunks(cd[1]).map(<[f64]>::to_vec).collect(),
            k: cd[0],
        })
    }
}

/// PCA followed by mini-batch k-means; returns the model and the final
/// assignment of every row.
pub fn fit_clusters(features: &FeatureSet, opts: &ClusterOptions) -> Result<(ClusterModel, Vec<usize>), ClusterError> {
    if features.count < opts.k {
        return Err(ClusterError::Invalid(format!("k = {} exceeds {} samples", opts.k, features.count)));
    }
    let m = opts.pca_dim.min(features.count).min(features.dim).max(1);
    if m < opts.pca_dim {
        log::warn!("pca dimension clamped from {} to {m}", opts.pca_dim);
    }
    let pca = pca_fit(features, m)?;
    let projected = pca.project_all(features);
    let km = minibatch_kmeans(&projected, opts.k, opts.batch, opts.iters, opts.seed)?;
    Ok((
        ClusterModel {
            pca,
            centroids: km.centroids,
            k: opts.k,
        },
        km.labels,
    ))
}

/// Clusters externally extracted features (e.g. classifier pooling
/// outputs) read from `features_path`.
pub fn rc_cluster_labels(
    features_path: &Path,
    dataset_count: Option<usize>,
    opts: &ClusterOptions,
) -> Result<(LabelFile, ClusterModel), ClusterError> {
    let features = FeatureSet::read(features_path)?;
    if let Some(n) = dataset_count {
        if n != features.count {
            return Err(ClusterError::CountMismatch {
                features: features.count,
                dataset: n,
            });
        }
    }
    let (model, labels) = fit_clusters(&features, opts)?;
    Ok((LabelFile::new(opts.k, labels)?, model))
}

/// Fraction of points whose cluster's majority ground-truth class matches
/// their own.
pub fn purity(assigned: &[usize], truth: &[usize]) -> f64 {
    use std::collections::HashMap;
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&a, &t) in assigned.iter().zip(truth) {
        *table.entry(a).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / assigned.len().max(1) as f64
}
