use serde::{Deserialize, Serialize};

use super::{check_geometry, flat_index, Dims, Mask, Spacing, Volume};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Output grid and the source coordinate of every output index, per axis.
///
/// Output voxel `i` samples source coordinate `(i + 0.5) * t / s - 0.5`,
/// which aligns the outer edges of both grids.
fn plan(dims: Dims, spacing: Spacing, target: Spacing) -> Result<(Dims, [Vec<f64>; 3])> {
    check_geometry(dims, target)
        .map_err(|_| Error::invalid(format!("degenerate target spacing {target:?}")))?;
    let mut out = [0usize; 3];
    let mut coords: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        let n = ((dims[a] as f64 * spacing[a] / target[a]).round() as usize).max(1);
        out[a] = n;
        let ratio = target[a] / spacing[a];
        coords[a] = (0..n)
            .map(|i| ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (dims[a] - 1) as f64))
            .collect();
    }
    Ok((out, coords))
}

fn nearest_index(u: f64) -> usize {
    (u + 0.5).floor() as usize
}

/// Resamples a volume to `target` spacing. Identical spacing returns an exact copy.
pub fn resample(v: &Volume, target: Spacing, mode: Interpolation) -> Result<Volume> {
    if v.spacing() == target {
        return Ok(v.clone());
    }
    let dims = v.dims();
    let (out_dims, [cx, cy, cz]) = plan(dims, v.spacing(), target)?;
    let src = v.voxels();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &uz in &cz {
        for &uy in &cy {
            for &ux in &cx {
                let value = match mode {
                    Interpolation::Nearest => {
                        src[flat_index(dims, nearest_index(ux), nearest_index(uy), nearest_index(uz))]
                            as f64
                    }
                    Interpolation::Trilinear => trilinear(src, dims, ux, uy, uz),
                };
                out.push(value as f32);
            }
        }
    }
    Volume::new(out_dims, target, out)
}

fn axis_weights(u: f64, n: usize) -> (usize, usize, f64) {
    let i0 = u.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, u - i0 as f64)
}

fn trilinear(src: &[f32], dims: Dims, ux: f64, uy: f64, uz: f64) -> f64 {
    let (x0, x1, fx) = axis_weights(ux, dims[0]);
    let (y0, y1, fy) = axis_weights(uy, dims[1]);
    let (z0, z1, fz) = axis_weights(uz, dims[2]);
    let at = |x, y, z| src[flat_index(dims, x, y, z)] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), fx);
    let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), fx);
    let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), fx);
    let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}

/// Resamples a mask. Only nearest-neighbour keeps it binary, so any other
/// mode is rejected.
pub fn resample_mask(m: &Mask, target: Spacing, mode: Interpolation) -> Result<Mask> {
    if mode != Interpolation::Nearest {
        return Err(Error::invalid("masks must be resampled with nearest-neighbour interpolation"));
    }
    if m.spacing() == target {
        return Ok(m.clone());
    }
    let dims = m.dims();
    let (out_dims, [cx, cy, cz]) = plan(dims, m.spacing(), target)?;
    let src = m.voxels();
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for &uz in &cz {
        for &uy in &cy {
            for &ux in &cx {
                out.push(src[flat_index(dims, nearest_index(ux), nearest_index(uy), nearest_index(uz))]);
            }
        }
    }
    Mask::new(out_dims, target, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_spacing_is_bit_exact_identity() {
        let v = Volume::new([3, 2, 2], [1.0, 1.0, 2.0], (0..12).map(|i| i as f32 * 0.37 - 1.0).collect())
            .unwrap();
        let r = resample(&v, [1.0, 1.0, 2.0], Interpolation::Trilinear).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::filled([5, 4, 3], [0.7, 1.3, 2.5], 3.25).unwrap();
        for target in [[1.0, 1.0, 2.0], [0.3, 0.5, 0.9], [4.0, 4.0, 4.0]] {
            let r = resample(&v, target, Interpolation::Trilinear).unwrap();
            assert!(r.voxels().iter().all(|&x| x == 3.25));
        }
    }

    #[test]
    fn output_dims_follow_rounding_rule() {
        let v = Volume::filled([10, 7, 3], [1.0, 1.5, 3.0], 0.0).unwrap();
        let r = resample(&v, [2.0, 1.0, 2.0], Interpolation::Nearest).unwrap();
        assert_eq!(r.dims(), [5, 11, 5]);
        let r = resample(&v, [100.0, 100.0, 100.0], Interpolation::Nearest).unwrap();
        assert_eq!(r.dims(), [1, 1, 1]);
        assert!(resample(&v, [0.0, 1.0, 1.0], Interpolation::Nearest).is_err());
    }

    #[test]
    fn ramp_matches_analytic_interpolation() {
        // ramp along x with 2 mm spacing, resampled to 1 mm
        let n = 9;
        let ramp = |x: f64| 0.5 + 1.25 * x;
        let mut vox = Vec::new();
        for _z in 0..2 {
            for _y in 0..3 {
                for x in 0..n {
                    vox.push(ramp(x as f64) as f32);
                }
            }
        }
        let v = Volume::new([n, 3, 2], [2.0, 1.0, 1.0], vox).unwrap();
        let r = resample(&v, [1.0, 1.0, 1.0], Interpolation::Trilinear).unwrap();
        assert_eq!(r.dims(), [2 * n, 3, 2]);
        for i in 0..2 * n {
            let u = ((i as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (n - 1) as f64);
            let expected = ramp(u);
            for (y, z) in [(0, 0), (2, 1)] {
                assert!((r.get(i, y, z) as f64 - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mask_resampling_stays_binary_and_rejects_trilinear() {
        let m = Mask::from_fn([6, 6, 3], [1.0, 1.0, 2.0], |x, y, _| x > 1 && y < 4).unwrap();
        assert!(resample_mask(&m, [0.5, 0.5, 1.0], Interpolation::Trilinear).is_err());
        let r = resample_mask(&m, [0.5, 0.5, 1.0], Interpolation::Nearest).unwrap();
        assert_eq!(r.dims(), [12, 12, 6]);
        assert_eq!(r.count(), m.count() * 8);
    }
}
