//! Dataset packing, cleanup filters and the synthetic logo corpus.

mod synth;

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use synth::{synth_logo_corpus, NearestCentroid, SHAPES};

pub const PACK_MAGIC: &[u8; 8] = b"LLDPACK1";
/// Channel value at or above which a pixel counts as white.
pub const WHITE_CUTOFF: u8 = 250;
pub const PNG_LEVEL: u8 = 6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: not an image pack")]
    BadMagic,
    #[error("truncated pack: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image `{name}` is {w}×{h}, expected {want}×{want} (pass a resize target)")]
    SizeMismatch { name: String, w: u32, h: u32, want: u32 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("png encoding: {0}")]
    Png(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Images stored as interleaved bytes, one `h × w × c` block per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedDataset {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    /// Source names, when known (not persisted in the pack file).
    pub ids: Option<Vec<String>>,
}

impl PackedDataset {
    pub fn empty(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: Vec::new(),
            ids: None,
        }
    }

    pub fn image_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn count(&self) -> usize {
        match self.image_len() {
            0 => 0,
            l => self.pixels.len() / l,
        }
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let l = self.image_len();
        &self.pixels[i * l..(i + 1) * l]
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.width, self.height, self.channels);
        for &i in indices {
            out.pixels.extend_from_slice(self.image(i));
        }
        out.ids = self.ids.as_ref().map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>, DataError> {
        let w = u16::try_from(self.width).map_err(|_| DataError::Invalid("width exceeds u16".into()))?;
        let h = u16::try_from(self.height).map_err(|_| DataError::Invalid("height exceeds u16".into()))?;
        let c = u8::try_from(self.channels).map_err(|_| DataError::Invalid("channels exceed u8".into()))?;
        let mut out = Vec::with_capacity(17 + self.pixels.len());
        out.extend_from_slice(PACK_MAGIC);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&h.to_le_bytes());
        out.push(c);
        out.extend_from_slice(&self.pixels);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DataError> {
        if buf.len() < 17 || &buf[..8] != PACK_MAGIC {
            return Err(DataError::BadMagic);
        }
        let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let w = u16::from_le_bytes(buf[12..14].try_into().unwrap()) as usize;
        let h = u16::from_le_bytes(buf[14..16].try_into().unwrap()) as usize;
        let c = buf[16] as usize;
        let expected = count * w * h * c;
        let payload = &buf[17..];
        if payload.len() != expected {
            return Err(DataError::Truncated {
                expected,
                found: payload.len(),
            });
        }
        Ok(Self {
            width: w,
            height: h,
            channels: c,
            pixels: payload.to_vec(),
            ids: None,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        Self::decode(&fs::read(path)?)
    }

    /// `[N, C, H, W]` floats in `[-1, 1]`.
    pub fn to_tensor(&self) -> Result<Tensor<f32>, DataError> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let n = self.count();
        if n == 0 {
            return Err(DataError::Invalid("empty dataset".into()));
        }
        let plane = w * h;
        let px = &self.pixels;
        Ok(Tensor::from_fn(&[n, c, h, w], |i| {
            let (img, rest) = (i / (c * plane), i % (c * plane));
            let (ch, pos) = (rest / plane, rest % plane);
            px[img * c * plane + pos * c + ch] as f32 / 127.5 - 1.0
        }))
    }

    /// Inverse of [`to_tensor`](Self::to_tensor), rounding and clamping.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self, DataError> {
        let d = t.dims();
        if d.len() != 4 {
            return Err(DataError::Invalid(format!("expected NCHW tensor, got {d:?}")));
        }
        let (n, c, h, w) = (d[0], d[1], d[2], d[3]);
        let plane = h * w;
        let src = t.data();
        let mut pixels = vec![0u8; n * c * plane];
        for img in 0..n {
            for ch in 0..c {
                for pos in 0..plane {
                    let v = src[(img * c + ch) * plane + pos];
                    pixels[img * c * plane + pos * c + ch] = to_byte(v);
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            channels: c,
            pixels,
            ids: None,
        })
    }

    /// Writes every image as `NNNNNN.png` into `dir`.
    pub fn unpack_to_dir(&self, dir: &Path) -> Result<(), DataError> {
        fs::create_dir_all(dir)?;
        for i in 0..self.count() {
            let png = encode_png(self.width, self.height, self.channels, self.image(i))?;
            fs::write(dir.join(format!("{i:06}.png")), png)?;
        }
        Ok(())
    }
}

pub fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Summary of a [`pack_images`] run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackReport {
    pub packed: usize,
    pub unreadable: usize,
    pub non_square: usize,
}

/// Packs every readable image in `dir` (lexicographic filename order) as
/// RGB. Non-square images are discarded; with `resize` the rest are scaled
/// to `resize × resize`, otherwise they must all share one size.
pub fn pack_images(dir: &Path, resize: Option<u32>) -> Result<(PackedDataset, PackReport), DataError> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut report = PackReport::default();
    let mut size = resize;
    let mut ds = PackedDataset::empty(0, 0, 3);
    let mut ids = Vec::new();
    for name in names {
        let img = match image::open(dir.join(&name)) {
            Ok(i) => i.to_rgb8(),
            Err(_) => {
                report.unreadable += 1;
                continue;
            }
        };
        let (w, h) = img.dimensions();
        if w != h {
            report.non_square += 1;
            continue;
        }
        let want = *size.get_or_insert(w);
        let img = if w == want {
            img
        } else if resize.is_some() {
            image::imageops::resize(&img, want, want, image::imageops::FilterType::Triangle)
        } else {
            return Err(DataError::SizeMismatch { name, w, h, want });
        };
        ds.pixels.extend_from_slice(img.as_raw());
        ids.push(name);
        report.packed += 1;
    }
    let s = size.unwrap_or(0) as usize;
    ds.width = s;
    ds.height = s;
    ds.ids = Some(ids);
    Ok((ds, report))
}

/// Keeps the first occurrence of each byte-identical image, in order.
/// Returns the filtered set, the kept source indices and the removed count.
pub fn dedup_exact(ds: &PackedDataset) -> (PackedDataset, Vec<usize>, usize) {
    let mut seen = HashSet::new();
    let kept: Vec<usize> = (0..ds.count()).filter(|&i| seen.insert(ds.image(i))).collect();
    let removed = ds.count() - kept.len();
    (ds.select(&kept), kept, removed)
}

/// Lossless PNG (deflate level 6, adaptive filtering) of one interleaved
/// image with 1, 3 or 4 channels.
pub fn encode_png(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(DataError::Invalid(format!("{c} channels"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_deflate_compression(png::DeflateCompression::Level(PNG_LEVEL));
        enc.set_filter(png::Filter::Adaptive);
        let mut w = enc.write_header().map_err(|e| DataError::Png(e.to_string()))?;
        w.write_image_data(bytes).map_err(|e| DataError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Indices ordered by ascending PNG size, ties by index.
pub fn complexity_sort(ds: &PackedDataset) -> Result<Vec<usize>, DataError> {
    let mut sized = (0..ds.count())
        .map(|i| encode_png(ds.width, ds.height, ds.channels, ds.image(i)).map(|p| (p.len(), i)))
        .collect::<Result<Vec<_>, _>>()?;
    sized.sort();
    Ok(sized.into_iter().map(|(_, i)| i).collect())
}

/// Number of pixels whose channels are all at least [`WHITE_CUTOFF`].
pub fn white_pixel_count(ds: &PackedDataset, i: usize) -> usize {
    ds.image(i)
        .chunks_exact(ds.channels)
        .filter(|px| px.iter().all(|&v| v >= WHITE_CUTOFF))
        .count()
}

/// Entries of `indices` with at least `threshold` white pixels.
pub fn white_pixel_filter(ds: &PackedDataset, indices: &[usize], threshold: usize) -> Result<Vec<usize>, DataError> {
    if threshold > ds.width * ds.height {
        return Err(DataError::Invalid(format!(
            "threshold {threshold} above pixel count {}",
            ds.width * ds.height
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.count()) {
        return Err(DataError::Invalid(format!("index {bad} out of range")));
    }
    Ok(indices
        .iter()
        .copied()
        .filter(|&i| white_pixel_count(ds, i) >= threshold)
        .collect())
}
