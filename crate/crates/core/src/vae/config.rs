use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderFamily {
    /// Ladder of stride-2 3D convolutions.
    Conv3d,
    /// Average-pooled grid followed by fully connected layers.
    FullyConnected,
}

/// Which latent code the discriminator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiCode {
    /// Posterior mean, the code later extracted as DLR.
    Mean,
    /// Reparameterized sample `mu + sigma * eps`.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Axial rotation drawn uniformly from `[-max, max]` degrees.
    pub rotation_max_deg: f64,
    /// Integer translation drawn per axis from `[-jitter, jitter]` voxels.
    pub jitter_voxels: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_max_deg: 10.0,
            jitter_voxels: 4,
        }
    }
}

/// Everything that defines a VAE+MI training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    /// Grid size `[nx, ny, nz]` of the preprocessed volumes.
    pub grid: [usize; 3],
    pub hcr_dim: usize,
    pub dlr_dim: usize,
    pub sigma_obs: f64,
    pub kappa: f64,
    pub vae_epochs: usize,
    pub vae_batch: usize,
    pub disc_period: usize,
    pub disc_epochs: usize,
    pub disc_hidden: usize,
    pub mi_code: MiCode,
    pub lr: f64,
    pub disc_lr: f64,
    pub encoder: EncoderFamily,
    pub base_channels: usize,
    pub max_bottleneck: usize,
    /// Forces the number of conv blocks instead of deriving it from
    /// `max_bottleneck`.
    pub conv_depth: Option<usize>,
    /// Average-pool factor for the fully connected family.
    pub fc_pool: usize,
    pub fc_hidden: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            grid: [24, 16, 8],
            hcr_dim: crate::hcr::N_HCR,
            dlr_dim: 32,
            sigma_obs: 1.0,
            kappa: 1.0,
            vae_epochs: 200,
            vae_batch: 32,
            disc_period: 5,
            disc_epochs: 150,
            disc_hidden: 128,
            mi_code: MiCode::Sample,
            lr: 1e-3,
            disc_lr: 1e-3,
            encoder: EncoderFamily::Conv3d,
            base_channels: 8,
            max_bottleneck: 1024,
            conv_depth: None,
            fc_pool: 2,
            fc_hidden: 256,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grid[0]", self.grid[0]),
            ("grid[1]", self.grid[1]),
            ("grid[2]", self.grid[2]),
            ("hcr_dim", self.hcr_dim),
            ("dlr_dim", self.dlr_dim),
            ("vae_batch", self.vae_batch),
            ("disc_period", self.disc_period),
            ("disc_hidden", self.disc_hidden),
            ("base_channels", self.base_channels),
            ("max_bottleneck", self.max_bottleneck),
            ("fc_pool", self.fc_pool),
            ("fc_hidden", self.fc_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_depth == Some(0) {
            return Err(Error::Config("conv_depth must be positive".into()));
        }
        for (name, v) in [("sigma_obs", self.sigma_obs), ("lr", self.lr), ("disc_lr", self.disc_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Config(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        let a = &self.augment;
        if !(a.rotation_max_deg.is_finite() && a.rotation_max_deg >= 0.0) {
            return Err(Error::Config("augment.rotation_max_deg must be non-negative".into()));
        }
        Ok(())
    }

    /// Tensor spatial shape `[D, H, W]` = `[nz, ny, nx]`.
    pub fn spatial(&self) -> [usize; 3] {
        [self.grid[2], self.grid[1], self.grid[0]]
    }

    pub fn voxels(&self) -> usize {
        self.grid.iter().product()
    }
}
