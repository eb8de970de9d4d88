use serde::{Deserialize, Serialize};

use super::{flat_index, Mask, MaskedVolume, Volume};
use crate::error::{Error, Result};
use crate::stats::{percentile_sorted, sorted_copy};

/// Cohort-level intensity normalisation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityStats {
    pub p_low: f64,
    pub p_high: f64,
    pub mean: f64,
    pub std: f64,
}

impl IntensityStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_low < self.p_high) {
            return Err(Error::invalid(format!(
                "percentile cuts not increasing: {} >= {}",
                self.p_low, self.p_high
            )));
        }
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::invalid(format!("standard deviation must be positive, got {}", self.std)));
        }
        Ok(())
    }

    pub fn standardize(&self, value: f64) -> f64 {
        (value.clamp(self.p_low, self.p_high) - self.mean) / self.std
    }
}

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Moves the mask centroid to the grid centre `grid / 2` (integer division).
///
/// The shift is clamped so the whole foreground stays inside the grid, which
/// keeps the foreground voxel count. Uncovered volume voxels take `fill`,
/// uncovered mask voxels are background. Spacing is unchanged.
pub fn center_on_grid(mv: &MaskedVolume, grid: [usize; 3], fill: f32) -> Result<MaskedVolume> {
    if grid.contains(&0) {
        return Err(Error::invalid(format!("grid must be positive, got {grid:?}")));
    }
    let mask = &mv.mask;
    let fg = mask.foreground();
    let (lo, hi) = mask.bounding_box().ok_or(Error::EmptyMask)?;
    let mut offset = [0isize; 3];
    for a in 0..3 {
        let extent = hi[a] - lo[a] + 1;
        if extent > grid[a] {
            return Err(Error::ExceedsGrid {
                axis: AXES[a],
                extent,
                grid: grid[a],
            });
        }
        let centroid = fg.iter().map(|p| p[a] as f64).sum::<f64>() / fg.len() as f64;
        let anchor = centroid.round() as isize;
        let target = (grid[a] / 2) as isize;
        let min_off = -(lo[a] as isize);
        let max_off = (grid[a] - 1) as isize - hi[a] as isize;
        offset[a] = (target - anchor).clamp(min_off, max_off);
    }

    let src_dims = mv.dims();
    let n = grid.iter().product();
    let mut vox = vec![fill; n];
    let mut mvox = vec![0u8; n];
    let src_v = mv.volume.voxels();
    let src_m = mask.voxels();
    for z in 0..grid[2] {
        let sz = z as isize - offset[2];
        if sz < 0 || sz >= src_dims[2] as isize {
            continue;
        }
        for y in 0..grid[1] {
            let sy = y as isize - offset[1];
            if sy < 0 || sy >= src_dims[1] as isize {
                continue;
            }
            for x in 0..grid[0] {
                let sx = x as isize - offset[0];
                if sx < 0 || sx >= src_dims[0] as isize {
                    continue;
                }
                let s = flat_index(src_dims, sx as usize, sy as usize, sz as usize);
                let d = flat_index(grid, x, y, z);
                vox[d] = src_v[s];
                mvox[d] = src_m[s];
            }
        }
    }
    MaskedVolume::new(
        Volume::new(grid, mv.spacing(), vox)?,
        Mask::new(grid, mv.spacing(), mvox)?,
    )
}

/// Fits clip/standardize parameters on the pooled in-mask intensities of a
/// cohort. Percentiles use linear interpolation between order statistics;
/// mean and (population) std are taken over the clipped pool.
pub fn fit_intensity_stats<'a>(
    cohort: impl IntoIterator<Item = &'a MaskedVolume>,
    p_low_pct: f64,
    p_high_pct: f64,
) -> Result<IntensityStats> {
    if !(0.0..=100.0).contains(&p_low_pct) || !(0.0..=100.0).contains(&p_high_pct) || p_low_pct > p_high_pct {
        return Err(Error::invalid(format!(
            "invalid percentile pair ({p_low_pct}, {p_high_pct})"
        )));
    }
    let mut pool = Vec::new();
    for mv in cohort {
        let values = mv.masked_values();
        if values.is_empty() {
            return Err(Error::EmptyMask);
        }
        pool.extend(values);
    }
    if pool.is_empty() {
        return Err(Error::invalid("empty intensity pool"));
    }
    let sorted = sorted_copy(&pool);
    let p_low = percentile_sorted(&sorted, p_low_pct);
    let p_high = percentile_sorted(&sorted, p_high_pct);
    let clipped: Vec<f64> = sorted.iter().map(|v| v.clamp(p_low, p_high)).collect();
    let mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
    let var = clipped.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / clipped.len() as f64;
    let stats = IntensityStats {
        p_low,
        p_high,
        mean,
        std: var.sqrt(),
    };
    stats.validate()?;
    Ok(stats)
}

/// Clamps in-mask voxels to the percentile cuts, standardizes them, and sets
/// every out-of-mask voxel to exactly zero.
pub fn clip_and_standardize(mv: &MaskedVolume, stats: &IntensityStats) -> Result<MaskedVolume> {
    stats.validate()?;
    let vox = mv
        .volume
        .voxels()
        .iter()
        .zip(mv.mask.voxels())
        .map(|(&v, &m)| if m != 0 { stats.standardize(v as f64) as f32 } else { 0.0 })
        .collect();
    MaskedVolume::new(Volume::new(mv.dims(), mv.spacing(), vox)?, mv.mask.clone())
}
