//! Volumes, masks and the preprocessing chain that turns a raw scan into the
//! masked, standardized image the rest of the pipeline consumes.
//!
//! Voxels are stored x-fastest: the flat index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Seen as a row-major array this is `[z][y][x]`,
//! which is also the `[D, H, W]` layout of the convolution tensors.

mod io;
mod preprocess;
mod resample;

pub use io::{load_mask, load_volume, save_mask, save_volume, BundleHeader};
pub use preprocess::{
    center_on_grid, clip_and_standardize, fit_intensity_stats, IntensityStats,
};
pub use resample::{resample, resample_mask, Interpolation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];
pub type Spacing = [f64; 3];

pub(crate) fn check_geometry(dims: Dims, spacing: Spacing) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

#[inline]
pub fn flat_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

/// A dense scalar image with physical voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, voxels: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let n = dims.iter().product::<usize>();
        if voxels.len() != n {
            return Err(Error::Shape {
                op: "Volume::new",
                lhs: dims.to_vec(),
                rhs: vec![voxels.len()],
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite voxel at index {i}")));
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
        })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Result<Self> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[flat_index(self.dims, x, y, z)]
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    /// Applies `f` to every voxel. The result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.voxels.iter().map(|&v| f(v)).collect())
    }
}

/// Binary organ mask on the same grid as its volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    dims: Dims,
    spacing: Spacing,
    voxels: Vec<u8>,
}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, voxels: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing)?;
        let n = dims.iter().product::<usize>();
        if voxels.len() != n {
            return Err(Error::Shape {
                op: "Mask::new",
                lhs: dims.to_vec(),
                rhs: vec![voxels.len()],
            });
        }
        if let Some(i) = voxels.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "mask voxel {i} has value {} (expected 0 or 1)",
                voxels[i]
            )));
        }
        Ok(Self {
            dims,
            spacing,
            voxels,
        })
    }

    /// Builds a mask from a predicate on voxel indices.
    pub fn from_fn(dims: Dims, spacing: Spacing, f: impl Fn(usize, usize, usize) -> bool) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    voxels.push(u8::from(f(x, y, z)));
                }
            }
        }
        Self::new(dims, spacing, voxels)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.voxels[flat_index(self.dims, x, y, z)] != 0
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, x: isize, y: isize, z: isize) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return false;
        }
        self.get(x, y, z)
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v != 0).count()
    }

    /// Voxel coordinates of every foreground voxel, in storage order.
    pub fn foreground(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    if self.get(x, y, z) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    }

    /// Inclusive per-axis bounding box of the foreground, or `None` when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let fg = self.foreground();
        let first = *fg.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &fg {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// The masked image `x* = x * y` together with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedVolume {
    pub volume: Volume,
    pub mask: Mask,
}

impl MaskedVolume {
    pub fn new(volume: Volume, mask: Mask) -> Result<Self> {
        if volume.dims != mask.dims {
            return Err(Error::Shape {
                op: "MaskedVolume::new",
                lhs: volume.dims.to_vec(),
                rhs: mask.dims.to_vec(),
            });
        }
        if volume.spacing != mask.spacing {
            return Err(Error::invalid(format!(
                "volume spacing {:?} differs from mask spacing {:?}",
                volume.spacing, mask.spacing
            )));
        }
        Ok(Self { volume, mask })
    }

    pub fn dims(&self) -> Dims {
        self.volume.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.volume.spacing
    }

    /// In-mask intensities in storage order.
    pub fn masked_values(&self) -> Vec<f64> {
        self.volume
            .voxels
            .iter()
            .zip(&self.mask.voxels)
            .filter(|(_, &m)| m != 0)
            .map(|(&v, _)| f64::from(v))
            .collect()
    }
}
