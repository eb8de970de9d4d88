//! Training-time augmentation: axial rotation plus integer translation.
//!
//! Rotation is about the z axis through the grid center, in voxel units
//! (the in-plane spacing is assumed equal along x and y).

use rand::Rng;

use super::config::AugmentConfig;
use super::model::Sample;

fn bbox(mask: &[f64], grid: [usize; 3]) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, _] = grid;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    let mut any = false;
    for (i, &m) in mask.iter().enumerate() {
        if m != 0.0 {
            let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            any = true;
        }
    }
    any.then_some((lo, hi))
}

/// Rotates by `angle_deg` about the axial axis, then shifts by `shift`
/// voxels. The image is sampled trilinearly and the mask by nearest
/// neighbour; the image is re-masked afterwards.
pub fn transform(sample: &Sample, grid: [usize; 3], angle_deg: f64, shift: [isize; 3]) -> Sample {
    if angle_deg == 0.0 && shift == [0; 3] {
        return sample.clone();
    }
    let [nx, ny, nz] = grid;
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let at = |x: isize, y: isize, z: isize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
            0.0
        } else {
            sample.x[idx(x as usize, y as usize, z as usize)]
        }
    };
    let mut x_out = vec![0.0; sample.x.len()];
    let mut m_out = vec![0.0; sample.mask.len()];
    for z in 0..nz {
        let sz = z as isize - shift[2];
        for y in 0..ny {
            for x in 0..nx {
                let qx = x as f64 - shift[0] as f64 - cx;
                let qy = y as f64 - shift[1] as f64 - cy;
                // inverse rotation
                let fx = c * qx + s * qy + cx;
                let fy = -s * qx + c * qy + cy;
                let (rx, ry) = (fx.round() as isize, fy.round() as isize);
                let inside = |v: isize, n: usize| v >= 0 && v < n as isize;
                if !(inside(rx, nx) && inside(ry, ny) && inside(sz, nz)) {
                    continue;
                }
                let o = idx(x, y, z);
                m_out[o] = sample.mask[idx(rx as usize, ry as usize, sz as usize)];
                if m_out[o] == 0.0 {
                    continue;
                }
                let (x0, y0) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - x0, fy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                x_out[o] = (1.0 - ty) * ((1.0 - tx) * at(x0, y0, sz) + tx * at(x0 + 1, y0, sz))
                    + ty * ((1.0 - tx) * at(x0, y0 + 1, sz) + tx * at(x0 + 1, y0 + 1, sz));
            }
        }
    }
    if m_out.iter().all(|&m| m == 0.0) {
        return sample.clone();
    }
    Sample { x: x_out, mask: m_out }
}

/// Draws a random transform. Shifts are limited so the mask's bounding box
/// stays on the grid.
pub fn random_augment(sample: &Sample, grid: [usize; 3], cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    if !cfg.enabled {
        return sample.clone();
    }
    let angle = if cfg.rotation_max_deg > 0.0 {
        rng.random_range(-cfg.rotation_max_deg..=cfg.rotation_max_deg)
    } else {
        0.0
    };
    let mut shift = [0isize; 3];
    if let Some((lo, hi)) = bbox(&sample.mask, grid) {
        let j = cfg.jitter_voxels as isize;
        for a in 0..3 {
            let min = (-j).max(-(lo[a] as isize));
            let max = j.min(grid[a] as isize - 1 - hi[a] as isize);
            shift[a] = if min < max { rng.random_range(min as i64..=max as i64) as isize } else { 0 };
        }
    }
    transform(sample, grid, angle, shift)
}
