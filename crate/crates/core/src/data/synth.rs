//! Procedural logo-like corpus with known modes, plus a nearest-centroid
//! pixel classifier used as a ground-truth oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, PackedDataset};
use crate::tensor::Tensor;

pub const SHAPES: [&str; 4] = ["disc", "square", "ring", "bar"];

const PALETTES: [([u8; 3], [u8; 3]); 8] = [
    ([245, 245, 245], [200, 30, 40]),
    ([20, 30, 90], [250, 210, 40]),
    ([15, 15, 15], [40, 210, 230]),
    ([190, 190, 190], [30, 140, 50]),
    ([240, 130, 20], [255, 255, 255]),
    ([90, 30, 120], [170, 240, 60]),
    ([20, 120, 120], [250, 150, 190]),
    ([250, 230, 90], [30, 60, 200]),
];

/// Background/foreground colours of a mode; modes past the fixed table get
/// hue-rotated colours.
fn palette(mode: usize) -> ([u8; 3], [u8; 3]) {
    if mode < PALETTES.len() {
        return PALETTES[mode];
    }
    let hue = (mode as f32 * 0.618_034).fract();
    let rgb = |h: f32, v: f32| {
        let f = |n: f32| {
            let k = (n + h * 6.0) % 6.0;
            let c = v * (1.0 - (k.min(4.0 - k).clamp(0.0, 1.0)));
            (c * 255.0) as u8
        };
        [f(5.0), f(3.0), f(1.0)]
    };
    (rgb((hue + 0.5).fract(), 0.3), rgb(hue, 1.0))
}

fn inside(shape: usize, u: f32, v: f32, r: f32) -> bool {
    match shape {
        0 => u * u + v * v <= r * r,
        1 => u.abs().max(v.abs()) <= 0.85 * r,
        2 => {
            let d = (u * u + v * v).sqrt();
            d <= r && d >= 0.55 * r
        }
        _ => u.abs() <= r && v.abs() <= 0.35 * r,
    }
}

/// `n` RGB images of `resolution²` pixels. Image `i` has mode `i % modes`;
/// mode `m` draws shape `m % 4` in palette `m`, with small random jitter of
/// size, position and colour.
pub fn synth_logo_corpus(n: usize, resolution: usize, modes: usize, seed: u64) -> Result<(PackedDataset, Vec<usize>), DataError> {
    if modes < 2 {
        return Err(DataError::Invalid(format!("need at least 2 modes, got {modes}")));
    }
    if resolution < 4 {
        return Err(DataError::Invalid(format!("resolution {resolution} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = PackedDataset::empty(resolution, resolution, 3);
    let mut labels = Vec::with_capacity(n);
    let half = resolution as f32 / 2.0;
    for i in 0..n {
        let mode = i % modes;
        let (bg, fg) = palette(mode);
        let jitter = |c: [u8; 3], rng: &mut ChaCha8Rng| c.map(|v| (v as i32 + rng.random_range(-12..=12)).clamp(0, 255) as u8);
        let (bg, fg) = (jitter(bg, &mut rng), jitter(fg, &mut rng));
        let r = 0.6 * rng.random_range(0.85..1.15f32);
        let cx = half - 0.5 + rng.random_range(-1.0..1.0f32);
        let cy = half - 0.5 + rng.random_range(-1.0..1.0f32);
        for y in 0..resolution {
            for x in 0..resolution {
                let u = (x as f32 - cx) / half;
                let v = (y as f32 - cy) / half;
                let c = if inside(mode % 4, u, v, r) { fg } else { bg };
                ds.pixels.extend_from_slice(&c);
            }
        }
        labels.push(mode);
    }
    Ok((ds, labels))
}

/// Classifies by Euclidean distance to per-class mean pixel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f32>>,
}

impl NearestCentroid {
    /// `images` is any `[N, ...]` tensor.
    pub fn fit(images: &Tensor<f32>, labels: &[usize], k: usize) -> Result<Self, DataError> {
        let n = images.dims()[0];
        if labels.len() != n {
            return Err(DataError::Invalid(format!("{} labels for {n} rows", labels.len())));
        }
        let row = images.numel() / n;
        let mut sums = vec![vec![0f64; row]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(DataError::Invalid(format!("label {l} >= {k}")));
            }
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(&images.data()[i * row..(i + 1) * row]) {
                *s += v as f64;
            }
        }
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(DataError::Invalid(format!("class {c} has no examples")));
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| s.into_iter().map(|v| (v / c as f64) as f32).collect())
            .collect();
        Ok(Self { centroids })
    }

    pub fn predict_row(&self, row: &[f32]) -> usize {
        let mut best = (f32::INFINITY, 0);
        for (c, cent) in self.centroids.iter().enumerate() {
            let d: f32 = cent.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }

    pub fn predict(&self, images: &Tensor<f32>) -> Vec<usize> {
        let n = images.dims()[0];
        let row = images.numel() / n;
        images.data().chunks_exact(row).map(|r| self.predict_row(r)).collect()
    }
}
