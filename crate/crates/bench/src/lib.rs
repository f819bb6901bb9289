//! Shared fixtures for the logoforge benchmarks.

use logoforge::data::synth_logo_corpus;
use logoforge::latent::{sample_z, to_tensor, Prior};
use logoforge::models::{onehot_rows, Conditioning, GanModel, Generator, ModelConfig};
use logoforge::tensor::Tensor;

/// Desk-sized DCGAN configuration with narrow stages.
pub fn desk_config(k: usize, conditioning: Conditioning) -> ModelConfig {
    ModelConfig {
        g_widths: vec![32, 16],
        d_widths: vec![16, 32],
        ..ModelConfig::dcgan_desk(k, conditioning)
    }
}

/// Synthetic 16×16 corpus as a `[n, 3, 16, 16]` tensor plus its modes.
pub fn corpus(n: usize, modes: usize) -> (Tensor<f32>, Vec<usize>) {
    let (ds, labels) = synth_logo_corpus(n, 16, modes, 0).expect("synthetic corpus");
    (ds.to_tensor().expect("tensor"), labels)
}

pub fn untrained_generator(cfg: &ModelConfig) -> Generator {
    GanModel::new(cfg.clone(), 0).expect("model").generator()
}

/// Latent batch and matching one-hot labels (cycling over `k`).
pub fn latent_batch(cfg: &ModelConfig, n: usize) -> (Tensor<f32>, Option<Tensor<f32>>) {
    let z = to_tensor(&sample_z(n, cfg.latent_dim, Prior::Gaussian, 1).expect("latents")).expect("tensor");
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.k).collect();
    let l = cfg.is_conditional().then(|| onehot_rows(&labels, cfg.k).expect("labels"));
    (z, l)
}
