use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::mesh::marching_cubes;
use super::FeatureWarning;
use crate::error::{Error, Result};
use crate::volume::Mask;

/// The 14 shape descriptors. Lengths in mm, areas in mm², volumes in mm³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeatures {
    pub mesh_volume: f64,
    pub voxel_volume: f64,
    pub surface_area: f64,
    pub surface_to_volume: f64,
    pub sphericity: f64,
    pub max_diam_3d: f64,
    pub max_diam_axial: f64,
    pub max_diam_coronal: f64,
    pub max_diam_sagittal: f64,
    pub major_axis: f64,
    pub minor_axis: f64,
    pub least_axis: f64,
    pub elongation: f64,
    pub flatness: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<FeatureWarning>,
}

impl ShapeFeatures {
    pub fn to_array(&self) -> [f64; 14] {
        [
            self.mesh_volume,
            self.voxel_volume,
            self.surface_area,
            self.surface_to_volume,
            self.sphericity,
            self.max_diam_3d,
            self.max_diam_axial,
            self.max_diam_coronal,
            self.max_diam_sagittal,
            self.major_axis,
            self.minor_axis,
            self.least_axis,
            self.elongation,
            self.flatness,
        ]
    }
}

/// Physical position relative to `origin`, which keeps every feature exactly
/// translation-invariant.
fn physical(p: [usize; 3], origin: [usize; 3], sp: [f64; 3]) -> [f64; 3] {
    [
        (p[0] - origin[0]) as f64 * sp[0],
        (p[1] - origin[1]) as f64 * sp[1],
        (p[2] - origin[2]) as f64 * sp[2],
    ]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn max_pairwise(points: &[[f64; 3]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(dist2(*a, *b));
        }
    }
    best.sqrt()
}

/// Largest in-plane distance between boundary voxels of the same slice.
/// `fixed` is the axis held constant (2 = axial, 1 = coronal, 0 = sagittal).
fn max_diam_2d(mask: &Mask, fg: &[[usize; 3]], origin: [usize; 3], fixed: usize) -> f64 {
    let sp = mask.spacing();
    let (a, b) = match fixed {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut slices: Vec<Vec<[f64; 3]>> = vec![Vec::new(); mask.dims()[fixed]];
    for &p in fg {
        let q = p.map(|v| v as isize);
        let is_boundary = [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)].iter().any(|&(da, db)| {
            let mut n = q;
            n[a] += da;
            n[b] += db;
            !mask.get_signed(n[0], n[1], n[2])
        });
        if is_boundary {
            let mut pt = physical(p, origin, sp);
            pt[fixed] = 0.0;
            slices[p[fixed]].push(pt);
        }
    }
    slices.iter().map(|s| max_pairwise(s)).fold(0.0, f64::max)
}

/// Foreground voxels with at least one 6-neighbour outside the mask.
fn surface_voxels(mask: &Mask, fg: &[[usize; 3]]) -> Vec<[usize; 3]> {
    const N6: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    fg.iter()
        .copied()
        .filter(|p| {
            N6.iter().any(|d| {
                !mask.get_signed(p[0] as isize + d[0], p[1] as isize + d[1], p[2] as isize + d[2])
            })
        })
        .collect()
}

/// Eigenvalues (descending, clamped at 0) of the population covariance of
/// the voxel-centre coordinates.
pub(crate) fn principal_moments(points: &[[f64; 3]]) -> [f64; 3] {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for a in 0..3 {
            mean[a] += p[a] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j] / n;
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

pub fn compute_shape_features(mask: &Mask) -> Result<ShapeFeatures> {
    let fg = mask.foreground();
    if fg.is_empty() {
        return Err(Error::EmptyMask);
    }
    let sp = mask.spacing();
    let origin = mask.bounding_box().map(|(lo, _)| lo).unwrap_or_default();
    let mut warnings = Vec::new();

    let mesh = marching_cubes(mask);
    let mesh_volume = mesh.volume();
    let surface_area = mesh.surface_area();
    let voxel_volume = fg.len() as f64 * mask.voxel_volume();
    let sphericity = (36.0 * std::f64::consts::PI * mesh_volume * mesh_volume).cbrt() / surface_area;

    let surface: Vec<[f64; 3]> = surface_voxels(mask, &fg).into_iter().map(|p| physical(p, origin, sp)).collect();
    let max_diam_3d = max_pairwise(&surface);

    let coords: Vec<[f64; 3]> = fg.iter().map(|&p| physical(p, origin, sp)).collect();
    let [l1, l2, l3] = principal_moments(&coords);
    let (elongation, flatness) = if l1 > 0.0 {
        ((l2 / l1).sqrt(), (l3 / l1).sqrt())
    } else {
        warnings.push(FeatureWarning::DegenerateAxes);
        (0.0, 0.0)
    };

    Ok(ShapeFeatures {
        mesh_volume,
        voxel_volume,
        surface_area,
        surface_to_volume: surface_area / mesh_volume,
        sphericity,
        max_diam_3d,
        max_diam_axial: max_diam_2d(mask, &fg, origin, 2),
        max_diam_coronal: max_diam_2d(mask, &fg, origin, 1),
        max_diam_sagittal: max_diam_2d(mask, &fg, origin, 0),
        major_axis: 4.0 * l1.sqrt(),
        minor_axis: 4.0 * l2.sqrt(),
        least_axis: 4.0 * l3.sqrt(),
        elongation,
        flatness,
        warnings,
    })
}
