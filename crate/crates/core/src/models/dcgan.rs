//! DCGAN generator and discriminator with optional layer conditioning.
//!
//! Generator: linear to a 4×4 bottleneck, then stride-2 transposed
//! convolutions (4×4 kernels) with batch norm and ReLU, tanh head.
//! Discriminator: stride-2 convolutions with leaky ReLU and batch norm on all
//! but the first stage, then a linear score head (plus a class head in AC
//! mode).

use super::config::{Conditioning, ModelConfig};
use super::layers::{Ctx, LEAKY_SLOPE};
use super::params::{Init, ParamSpec};
use super::ModelError;
use crate::tensor::Var;

const W_STD: f64 = 0.02;

fn bn_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    out.push(ParamSpec::new(format!("{name}.gamma"), &[c], Init::Ones));
    out.push(ParamSpec::new(format!("{name}.beta"), &[c], Init::Zeros));
}

pub(crate) fn bn_buffer_specs(specs: &[ParamSpec]) -> Vec<ParamSpec> {
    specs
        .iter()
        .filter_map(|s| s.name.strip_suffix(".gamma").map(|p| (p, s.dims.clone())))
        .flat_map(|(p, d)| {
            [
                ParamSpec::new(format!("{p}.mean"), &d, Init::Zeros),
                ParamSpec::new(format!("{p}.var"), &d, Init::Ones),
            ]
        })
        .collect()
}

/// Generator parameters. `out_channels` is the image channel count (the
/// autoencoder decoder uses 1).
pub fn generator_specs(cfg: &ModelConfig, prefix: &str, out_channels: usize) -> Vec<ParamSpec> {
    let kc = cfg.label_maps();
    let w = &cfg.g_widths;
    let mut s = Vec::new();
    let fc_in = cfg.latent_dim + cfg.g_label_inputs();
    s.push(ParamSpec::new(format!("{prefix}.fc.w"), &[fc_in, w[0] * 16], Init::Normal(W_STD)));
    s.push(ParamSpec::new(format!("{prefix}.fc.b"), &[w[0] * 16], Init::Zeros));
    bn_specs(&mut s, &format!("{prefix}.bn0"), w[0]);
    for i in 1..w.len() {
        s.push(ParamSpec::new(format!("{prefix}.up{i}.w"), &[w[i - 1] + kc, w[i], 4, 4], Init::Normal(W_STD)));
        s.push(ParamSpec::new(format!("{prefix}.up{i}.b"), &[w[i]], Init::Zeros));
        bn_specs(&mut s, &format!("{prefix}.bn{i}"), w[i]);
    }
    let last = *w.last().unwrap();
    s.push(ParamSpec::new(format!("{prefix}.out.w"), &[last + kc, out_channels, 4, 4], Init::Normal(W_STD)));
    s.push(ParamSpec::new(format!("{prefix}.out.b"), &[out_channels], Init::Zeros));
    s
}

/// `z [N, latent]` to images `[N, C, native, native]` in `[-1, 1]`.
pub fn generator_forward<'g>(
    ctx: &Ctx<'_, 'g>,
    cfg: &ModelConfig,
    prefix: &str,
    z: Var<'g, f32>,
) -> Result<Var<'g, f32>, ModelError> {
    let w = &cfg.g_widths;
    let lc = cfg.label_maps() > 0;
    let n = z.dims()[0];
    let input = if cfg.g_label_inputs() > 0 { ctx.with_label_vec(z)? } else { z };
    let mut h = ctx
        .linear(input, &format!("{prefix}.fc"))?
        .reshape(&[n, w[0], 4, 4])?;
    h = ctx.batch_norm(h, &format!("{prefix}.bn0"))?.relu();
    for i in 1..w.len() {
        let x = if lc { ctx.with_maps(h)? } else { h };
        h = ctx.conv_t(x, &format!("{prefix}.up{i}"), 2, 1)?;
        h = ctx.batch_norm(h, &format!("{prefix}.bn{i}"))?.relu();
    }
    let x = if lc { ctx.with_maps(h)? } else { h };
    Ok(ctx.conv_t(x, &format!("{prefix}.out"), 2, 1)?.tanh())
}

/// Discriminator parameters; `head` is the score width (1 for the GAN,
/// the code width for the autoencoder's encoder).
pub fn discriminator_specs(cfg: &ModelConfig, prefix: &str, in_channels: usize, head: usize) -> Vec<ParamSpec> {
    let kc = cfg.label_maps();
    let w = &cfg.d_widths;
    let mut s = Vec::new();
    let mut prev = in_channels;
    for (i, &c) in w.iter().enumerate() {
        s.push(ParamSpec::new(format!("{prefix}.conv{i}.w"), &[c, prev + kc, 4, 4], Init::Normal(W_STD)));
        s.push(ParamSpec::new(format!("{prefix}.conv{i}.b"), &[c], Init::Zeros));
        if i > 0 {
            bn_specs(&mut s, &format!("{prefix}.bn{i}"), c);
        }
        prev = c;
    }
    let flat = prev * 16;
    s.push(ParamSpec::new(format!("{prefix}.fc.w"), &[flat + kc, head], Init::Normal(W_STD)));
    s.push(ParamSpec::new(format!("{prefix}.fc.b"), &[head], Init::Zeros));
    if cfg.conditioning == Conditioning::Ac {
        s.push(ParamSpec::new(format!("{prefix}.ac.w"), &[flat, cfg.k], Init::Normal(W_STD)));
        s.push(ParamSpec::new(format!("{prefix}.ac.b"), &[cfg.k], Init::Zeros));
    }
    s
}

/// Returns `(head [N, head], class_logits [N, k] in AC mode)`.
pub fn discriminator_forward<'g>(
    ctx: &Ctx<'_, 'g>,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var<'g, f32>,
) -> Result<(Var<'g, f32>, Option<Var<'g, f32>>), ModelError> {
    let lc = cfg.label_maps() > 0;
    let mut h = x;
    for i in 0..cfg.d_widths.len() {
        let inp = if lc { ctx.with_maps(h)? } else { h };
        h = ctx.conv(inp, &format!("{prefix}.conv{i}"), 2, 1)?;
        if i > 0 {
            h = ctx.batch_norm(h, &format!("{prefix}.bn{i}"))?;
        }
        h = h.leaky_relu(LEAKY_SLOPE);
    }
    let flat = h.flatten()?;
    let inp = if lc { ctx.with_label_vec(flat)? } else { flat };
    let score = ctx.linear(inp, &format!("{prefix}.fc"))?;
    let logits = if cfg.conditioning == Conditioning::Ac {
        Some(ctx.linear(flat, &format!("{prefix}.ac"))?)
    } else {
        None
    };
    Ok((score, logits))
}
