use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Dcgan,
    Resnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    None,
    Lc,
    Ac,
}

impl std::str::FromStr for Conditioning {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "lc" => Ok(Self::Lc),
            "ac" => Ok(Self::Ac),
            _ => Err(ModelError::Config(format!("unknown conditioning `{s}`"))),
        }
    }
}

impl std::fmt::Display for Conditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Lc => "lc",
            Self::Ac => "ac",
        })
    }
}

pub const SUPPORTED_RESOLUTIONS: [usize; 3] = [16, 32, 64];

/// Architecture and conditioning of a generator/discriminator pair.
///
/// For DCGAN the width lists hold one entry per stride-2 stage, ordered from
/// the 4×4 bottleneck outward for the generator and from the image inward
/// for the discriminator. The residual variant uses a single width each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub latent_dim: usize,
    pub k: usize,
    pub resolution: usize,
    pub channels: usize,
    pub g_widths: Vec<usize>,
    pub d_widths: Vec<usize>,
    pub conditioning: Conditioning,
    /// Blur applied to every discriminator input; the generator then works
    /// at twice the output resolution.
    pub blur_sigma: Option<f64>,
}

impl ModelConfig {
    /// DCGAN at 32×32 with the blur trick (64×64 native).
    pub fn dcgan_lld(k: usize, conditioning: Conditioning) -> Self {
        Self {
            arch: Arch::Dcgan,
            latent_dim: 512,
            k,
            resolution: 32,
            channels: 3,
            g_widths: vec![2048, 1024, 512, 256],
            d_widths: vec![128, 256, 512, 1024],
            conditioning,
            blur_sigma: Some(1.0),
        }
    }

    /// Residual WGAN at 32×32.
    pub fn resnet_32(k: usize, conditioning: Conditioning) -> Self {
        Self {
            arch: Arch::Resnet,
            latent_dim: 128,
            k,
            resolution: 32,
            channels: 3,
            g_widths: vec![128],
            d_widths: vec![128],
            conditioning,
            blur_sigma: None,
        }
    }

    /// Small DCGAN for quick experiments at 16×16.
    pub fn dcgan_desk(k: usize, conditioning: Conditioning) -> Self {
        Self {
            arch: Arch::Dcgan,
            latent_dim: 32,
            k,
            resolution: 16,
            channels: 3,
            g_widths: vec![64, 32],
            d_widths: vec![32, 64],
            conditioning,
            blur_sigma: None,
        }
    }

    pub fn native_resolution(&self) -> usize {
        if self.blur_sigma.is_some() {
            2 * self.resolution
        } else {
            self.resolution
        }
    }

    /// Number of stride-2 stages between 4×4 and the native resolution.
    pub fn stages(&self) -> usize {
        (self.native_resolution() / 4).trailing_zeros() as usize
    }

    /// Channels appended before each conditioned convolution.
    pub fn label_maps(&self) -> usize {
        match self.conditioning {
            Conditioning::Lc => self.k,
            _ => 0,
        }
    }

    /// Label entries appended to the generator's latent input.
    pub fn g_label_inputs(&self) -> usize {
        match self.conditioning {
            Conditioning::None => 0,
            _ => self.k,
        }
    }

    pub fn is_conditional(&self) -> bool {
        self.conditioning != Conditioning::None
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !SUPPORTED_RESOLUTIONS.contains(&self.resolution) {
            return bad(format!("resolution {} not in {SUPPORTED_RESOLUTIONS:?}", self.resolution));
        }
        if self.native_resolution() > 64 {
            return bad(format!("native resolution {} above 64", self.native_resolution()));
        }
        if self.k == 0 || self.latent_dim == 0 || self.channels == 0 {
            return bad("k, latent_dim and channels must be positive".into());
        }
        if self.g_widths.contains(&0) || self.d_widths.contains(&0) {
            return bad("zero feature width".into());
        }
        if let Some(s) = self.blur_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("blur sigma {s}"));
            }
        }
        let want = match self.arch {
            Arch::Dcgan => self.stages(),
            Arch::Resnet => 1,
        };
        if self.g_widths.len() != want || self.d_widths.len() != want {
            return bad(format!(
                "expected {want} widths per network, got {} / {}",
                self.g_widths.len(),
                self.d_widths.len()
            ));
        }
        Ok(())
    }
}
