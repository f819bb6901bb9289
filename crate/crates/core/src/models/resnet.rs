//! Residual generator and critic. Label maps enter the residual path only;
//! shortcuts stay unconditional. The critic has no normalization.

use super::config::{Conditioning, ModelConfig};
use super::layers::{global_mean_pool, Ctx};
use super::params::{Init, ParamSpec};
use super::ModelError;
use crate::tensor::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resample {
    Up,
    Down,
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub prefix: String,
    pub cin: usize,
    pub cout: usize,
    pub resample: Resample,
    /// Batch norm before each activation (generator blocks).
    pub norm: bool,
    /// Activation before the first convolution; off for the critic's
    /// input block.
    pub preact: bool,
    /// Label channels appended before each residual-path convolution.
    pub label_maps: usize,
}

impl BlockConfig {
    fn has_projection(&self) -> bool {
        self.cin != self.cout || self.resample != Resample::Same
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let p = &self.prefix;
        let kc = self.label_maps;
        let mut s = Vec::new();
        if self.norm {
            s.push(ParamSpec::new(format!("{p}.bn1.gamma"), &[self.cin], Init::Ones));
            s.push(ParamSpec::new(format!("{p}.bn1.beta"), &[self.cin], Init::Zeros));
        }
        s.push(ParamSpec::new(format!("{p}.conv1.w"), &[self.cout, self.cin + kc, 3, 3], Init::He((self.cin + kc) * 9)));
        s.push(ParamSpec::new(format!("{p}.conv1.b"), &[self.cout], Init::Zeros));
        if self.norm {
            s.push(ParamSpec::new(format!("{p}.bn2.gamma"), &[self.cout], Init::Ones));
            s.push(ParamSpec::new(format!("{p}.bn2.beta"), &[self.cout], Init::Zeros));
        }
        s.push(ParamSpec::new(format!("{p}.conv2.w"), &[self.cout, self.cout + kc, 3, 3], Init::He((self.cout + kc) * 9)));
        s.push(ParamSpec::new(format!("{p}.conv2.b"), &[self.cout], Init::Zeros));
        if self.has_projection() {
            s.push(ParamSpec::new(format!("{p}.sc.w"), &[self.cout, self.cin, 1, 1], Init::He(self.cin)));
            s.push(ParamSpec::new(format!("{p}.sc.b"), &[self.cout], Init::Zeros));
        }
        s
    }
}

/// Residual path of a block, with label maps appended before each
/// convolution when `label_maps > 0`.
pub fn resblock_residual<'g>(ctx: &Ctx<'_, 'g>, b: &BlockConfig, x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
    let p = &b.prefix;
    let maps = |h: Var<'g, f32>| if b.label_maps > 0 { ctx.with_maps(h) } else { Ok(h) };
    let mut h = x;
    if b.norm {
        h = ctx.batch_norm(h, &format!("{p}.bn1"))?;
    }
    if b.preact {
        h = h.relu();
    }
    if b.resample == Resample::Up {
        h = h.upsample2()?;
    }
    h = ctx.conv(maps(h)?, &format!("{p}.conv1"), 1, 1)?;
    if b.norm {
        h = ctx.batch_norm(h, &format!("{p}.bn2"))?;
    }
    h = ctx.conv(maps(h.relu())?, &format!("{p}.conv2"), 1, 1)?;
    if b.resample == Resample::Down {
        h = h.avgpool2()?;
    }
    Ok(h)
}

/// Unconditional shortcut: identity, or a 1×1 projection with the block's
/// resampling.
pub fn resblock_shortcut<'g>(ctx: &Ctx<'_, 'g>, b: &BlockConfig, x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
    if !b.has_projection() {
        return Ok(x);
    }
    let mut h = x;
    if b.resample == Resample::Up {
        h = h.upsample2()?;
    }
    h = ctx.conv(h, &format!("{}.sc", b.prefix), 1, 0)?;
    if b.resample == Resample::Down {
        h = h.avgpool2()?;
    }
    Ok(h)
}

/// `shortcut(x) + residual(x ⊕ maps)`.
pub fn resblock_lc_forward<'g>(ctx: &Ctx<'_, 'g>, b: &BlockConfig, x: Var<'g, f32>) -> Result<Var<'g, f32>, ModelError> {
    let r = resblock_residual(ctx, b, x)?;
    Ok(resblock_shortcut(ctx, b, x)?.add(r)?)
}

fn generator_blocks(cfg: &ModelConfig, prefix: &str) -> Vec<BlockConfig> {
    let w = cfg.g_widths[0];
    (1..=cfg.stages())
        .map(|i| BlockConfig {
            prefix: format!("{prefix}.rb{i}"),
            cin: w,
            cout: w,
            resample: Resample::Up,
            norm: true,
            preact: true,
            label_maps: cfg.label_maps(),
        })
        .collect()
}

fn critic_blocks(cfg: &ModelConfig, prefix: &str) -> Vec<BlockConfig> {
    let w = cfg.d_widths[0];
    let downs = (cfg.native_resolution() / 8).trailing_zeros() as usize;
    let mut v = Vec::new();
    for i in 0..downs + 2 {
        v.push(BlockConfig {
            prefix: format!("{prefix}.rb{i}"),
            cin: if i == 0 { cfg.channels } else { w },
            cout: w,
            resample: if i < downs { Resample::Down } else { Resample::Same },
            norm: false,
            preact: i > 0,
            label_maps: cfg.label_maps(),
        });
    }
    v
}

pub fn generator_specs(cfg: &ModelConfig, prefix: &str) -> Vec<ParamSpec> {
    let w = cfg.g_widths[0];
    let kc = cfg.label_maps();
    let fc_in = cfg.latent_dim + cfg.g_label_inputs();
    let mut s = vec![
        ParamSpec::new(format!("{prefix}.fc.w"), &[fc_in, w * 16], Init::He(fc_in)),
        ParamSpec::new(format!("{prefix}.fc.b"), &[w * 16], Init::Zeros),
    ];
    for b in generator_blocks(cfg, prefix) {
        s.extend(b.specs());
    }
    s.push(ParamSpec::new(format!("{prefix}.bn_out.gamma"), &[w], Init::Ones));
    s.push(ParamSpec::new(format!("{prefix}.bn_out.beta"), &[w], Init::Zeros));
    s.push(ParamSpec::new(format!("{prefix}.out.w"), &[cfg.channels, w + kc, 3, 3], Init::He((w + kc) * 9)));
    s.push(ParamSpec::new(format!("{prefix}.out.b"), &[cfg.channels], Init::Zeros));
    s
}

pub fn generator_forward<'g>(
    ctx: &Ctx<'_, 'g>,
    cfg: &ModelConfig,
    prefix: &str,
    z: Var<'g, f32>,
) -> Result<Var<'g, f32>, ModelError> {
    let w = cfg.g_widths[0];
    let n = z.dims()[0];
    let input = if cfg.g_label_inputs() > 0 { ctx.with_label_vec(z)? } else { z };
    let mut h = ctx.linear(input, &format!("{prefix}.fc"))?.reshape(&[n, w, 4, 4])?;
    for b in generator_blocks(cfg, prefix) {
        h = resblock_lc_forward(ctx, &b, h)?;
    }
    h = ctx.batch_norm(h, &format!("{prefix}.bn_out"))?.relu();
    if cfg.label_maps() > 0 {
        h = ctx.with_maps(h)?;
    }
    Ok(ctx.conv(h, &format!("{prefix}.out"), 1, 1)?.tanh())
}

pub fn critic_specs(cfg: &ModelConfig, prefix: &str) -> Vec<ParamSpec> {
    let w = cfg.d_widths[0];
    let kc = cfg.label_maps();
    let mut s = Vec::new();
    for b in critic_blocks(cfg, prefix) {
        s.extend(b.specs());
    }
    s.push(ParamSpec::new(format!("{prefix}.fc.w"), &[w + kc, 1], Init::He(w + kc)));
    s.push(ParamSpec::new(format!("{prefix}.fc.b"), &[1], Init::Zeros));
    if cfg.conditioning == Conditioning::Ac {
        s.push(ParamSpec::new(format!("{prefix}.ac.w"), &[w, cfg.k], Init::He(w)));
        s.push(ParamSpec::new(format!("{prefix}.ac.b"), &[cfg.k], Init::Zeros));
    }
    s
}

pub fn critic_forward<'g>(
    ctx: &Ctx<'_, 'g>,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var<'g, f32>,
) -> Result<(Var<'g, f32>, Option<Var<'g, f32>>), ModelError> {
    let mut h = x;
    for b in critic_blocks(cfg, prefix) {
        h = resblock_lc_forward(ctx, &b, h)?;
    }
    let pooled = global_mean_pool(h.relu())?;
    let inp = if cfg.label_maps() > 0 { ctx.with_label_vec(pooled)? } else { pooled };
    let score = ctx.linear(inp, &format!("{prefix}.fc"))?;
    let logits = if cfg.conditioning == Conditioning::Ac {
        Some(ctx.linear(pooled, &format!("{prefix}.ac"))?)
    } else {
        None
    };
    Ok((score, logits))
}
