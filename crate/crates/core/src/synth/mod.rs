//! Labelled ellipsoid phantoms standing in for a clinical cohort.
//!
//! Each phantom is an ellipsoid with a small rigid pose and a speckle
//! texture. Four binary markers perturb it:
//! - `shape`: sinusoidal lobulation of the boundary;
//! - `atrophy`: volume scaled by `atrophy_factor`;
//! - `fat`: lower mean intensity and stronger speckle;
//! - `senility`: milder volume loss plus coarser, stronger speckle.
//!
//! In hard mode the fat marker keeps only a weak intensity offset and
//! additionally changes the speckle correlation length with the in-mask
//! moments matched, and flips the sign of an intensity ramp along the major
//! axis. Both changes leave the in-mask histogram unchanged in expectation.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{Labels, Manifest, Split, SubjectRecord};
use crate::volume::{save_mask, save_volume, Mask, MaskedVolume, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prevalence {
    pub shape: f64,
    pub atrophy: f64,
    pub fat: f64,
    pub senility: f64,
}

impl Default for Prevalence {
    fn default() -> Self {
        Self {
            shape: 0.5,
            atrophy: 0.5,
            fat: 0.5,
            senility: 0.5,
        }
    }
}

impl Prevalence {
    fn as_array(&self) -> [f64; 4] {
        [self.shape, self.atrophy, self.fat, self.senility]
    }
}

/// Appearance settings shared by every phantom of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomStyle {
    pub semi_axes_mm: [f64; 3],
    /// Per-axis relative size jitter, drawn uniformly from `[-j, j]`.
    pub size_jitter: f64,
    pub max_pose_deg: f64,
    /// Maximum centre offset per axis (mm).
    pub max_offset_mm: [f64; 3],
    pub lobulation_amplitude: f64,
    pub lobulation_frequency: f64,
    pub atrophy_factor: f64,
    pub senility_volume_factor: f64,
    pub base_intensity: f64,
    /// Between-subject standard deviation of the base intensity.
    pub base_jitter: f64,
    pub background_intensity: f64,
    pub speckle_std: f64,
    /// Gaussian smoothing width of the speckle (voxels).
    pub speckle_width: f64,
    pub fat_offset: f64,
    pub fat_speckle_factor: f64,
    pub senility_speckle_factor: f64,
    pub senility_width_extra: f64,
    pub hard_mode: bool,
    pub hard_fat_offset: f64,
    pub hard_fat_width: f64,
    pub hard_ramp_amplitude: f64,
}

impl Default for PhantomStyle {
    fn default() -> Self {
        Self {
            semi_axes_mm: [25.0, 14.0, 8.0],
            size_jitter: 0.05,
            max_pose_deg: 15.0,
            max_offset_mm: [4.0, 4.0, 2.0],
            lobulation_amplitude: 0.15,
            lobulation_frequency: 5.0,
            atrophy_factor: 0.7,
            senility_volume_factor: 0.85,
            base_intensity: 100.0,
            base_jitter: 4.0,
            background_intensity: 40.0,
            speckle_std: 6.0,
            speckle_width: 1.0,
            fat_offset: -15.0,
            fat_speckle_factor: 1.5,
            senility_speckle_factor: 1.25,
            senility_width_extra: 0.5,
            hard_mode: false,
            hard_fat_offset: -2.0,
            hard_fat_width: 2.0,
            hard_ramp_amplitude: 3.0,
        }
    }
}

/// Everything needed to draw one phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// `[shape, atrophy, fat, senility]`.
    pub flags: [bool; 4],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_subjects: usize,
    /// Native grid of the generated bundles.
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub prevalence: Prevalence,
    /// Fractions `(train, test)`; they must sum to 1.
    pub split: [f64; 2],
    pub seed: u64,
    pub style: PhantomStyle,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_subjects: 64,
            dims: [40, 28, 12],
            spacing: [2.0, 2.0, 2.0],
            prevalence: Prevalence::default(),
            split: [0.7, 0.3],
            seed: 0,
            style: PhantomStyle::default(),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 8 {
            return Err(Error::Config(format!("n_subjects must be at least 8, got {}", self.n_subjects)));
        }
        if self.dims.contains(&0) || self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("cohort dims and spacing must be positive".into()));
        }
        if self.prevalence.as_array().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("prevalences must lie in [0, 1]".into()));
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split[0] + self.split[1] - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must be in [0, 1] and sum to 1", self.split)));
        }
        self.style.validate()
    }

    pub fn n_train(&self) -> usize {
        (self.split[0] * self.n_subjects as f64).round() as usize
    }
}

impl PhantomStyle {
    pub fn validate(&self) -> Result<()> {
        if self.semi_axes_mm.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::Config("semi-axes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.size_jitter) || !(0.0..1.0).contains(&self.lobulation_amplitude) {
            return Err(Error::Config("size_jitter and lobulation_amplitude must lie in [0, 1)".into()));
        }
        for (name, f) in [
            ("atrophy_factor", self.atrophy_factor),
            ("senility_volume_factor", self.senility_volume_factor),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if !(self.speckle_width > 0.0 && self.hard_fat_width > 0.0) {
            return Err(Error::Config("speckle widths must be positive".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(width: f64) -> Vec<f64> {
    let r = (3.0 * width).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-0.5 * (i as f64 / width).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with zero padding, on an x-fastest grid.
fn smooth(field: &[f64], dims: [usize; 3], width: f64) -> Vec<f64> {
    let k = gaussian_kernel(width);
    let r = (k.len() / 2) as isize;
    let mut cur = field.to_vec();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for a in 0..3 {
        let mut out = vec![0.0; cur.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let coord = (i / strides[a]) % dims[a];
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                let c = coord as isize + t as isize - r;
                if c >= 0 && (c as usize) < dims[a] {
                    acc += w * cur[i - coord * strides[a] + c as usize * strides[a]];
                }
            }
            *o = acc;
        }
        cur = out;
    }
    cur
}

/// Draws a phantom. Same params give a bit-identical result.
pub fn phantom(params: &PhantomParams, style: &PhantomStyle) -> Result<MaskedVolume> {
    style.validate()?;
    let [shape, atrophy, fat, senility] = params.flags;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let dims = params.dims;
    let sp = params.spacing;

    let mut vol_factor = 1.0;
    if atrophy {
        vol_factor *= style.atrophy_factor;
    }
    if senility {
        vol_factor *= style.senility_volume_factor;
    }
    let scale = vol_factor.cbrt();
    let axes: Vec<f64> = style
        .semi_axes_mm
        .iter()
        .map(|&a| a * scale * (1.0 + style.size_jitter * rng.random_range(-1.0..=1.0)))
        .collect();
    let angle = style.max_pose_deg.to_radians() * rng.random_range(-1.0..=1.0);
    let (sin, cos) = angle.sin_cos();
    let centre: Vec<f64> = (0..3)
        .map(|a| (dims[a] as f64 - 1.0) * sp[a] / 2.0 + style.max_offset_mm[a] * rng.random_range(-1.0..=1.0))
        .collect();
    let lob_amp = if shape { style.lobulation_amplitude } else { 0.0 };
    let lob_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let base = style.base_intensity + style.base_jitter * { let g: f64 = StandardNormal.sample(&mut rng); g };

    let n: usize = dims.iter().product();
    let mut mask = vec![0u8; n];
    // normalized major-axis coordinate, used by the hard-mode ramp
    let mut major = vec![0.0; n];
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [
                    x as f64 * sp[0] - centre[0],
                    y as f64 * sp[1] - centre[1],
                    z as f64 * sp[2] - centre[2],
                ];
                let q = [cos * p[0] + sin * p[1], -sin * p[0] + cos * p[1], p[2]];
                let u = [q[0] / axes[0], q[1] / axes[1], q[2] / axes[2]];
                let rho = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
                let limit = if lob_amp > 0.0 && rho > 0.0 {
                    let azimuth = u[1].atan2(u[0]);
                    let sin_polar = (u[0] * u[0] + u[1] * u[1]).sqrt() / rho;
                    1.0 + lob_amp * (style.lobulation_frequency * azimuth + lob_phase).sin() * sin_polar
                } else {
                    1.0
                };
                let i = x + dims[0] * (y + dims[1] * z);
                if rho <= limit {
                    mask[i] = 1;
                }
                major[i] = u[0];
            }
        }
    }
    let count = mask.iter().filter(|&&m| m == 1).count();
    if count == 0 {
        return Err(Error::invalid("phantom parameters produce an empty mask"));
    }

    let mut speckle_std = style.speckle_std;
    let mut width = style.speckle_width;
    let mut offset = 0.0;
    if fat {
        if style.hard_mode {
            offset += style.hard_fat_offset;
            width = style.hard_fat_width;
        } else {
            offset += style.fat_offset;
            speckle_std *= style.fat_speckle_factor;
        }
    }
    if senility {
        speckle_std *= style.senility_speckle_factor;
        width += style.senility_width_extra;
    }

    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut speckle = smooth(&white, dims, width);
    // match in-mask moments to mean 0, std 1
    let inside: Vec<f64> = speckle.iter().zip(&mask).filter(|(_, &m)| m == 1).map(|(&v, _)| v).collect();
    let m = crate::stats::mean(&inside);
    let s = crate::stats::variance(&inside).sqrt().max(1e-12);
    for v in &mut speckle {
        *v = (*v - m) / s;
    }

    let ramp_sign = if fat { 1.0 } else { -1.0 };
    let voxels: Vec<f32> = (0..n)
        .map(|i| {
            let v = if mask[i] == 1 {
                let mut v = base + offset + speckle_std * speckle[i];
                if style.hard_mode {
                    v += ramp_sign * style.hard_ramp_amplitude * (2.0 * major[i]).tanh();
                }
                v
            } else {
                style.background_intensity + 0.5 * style.speckle_std * white[i]
            };
            v as f32
        })
        .collect();
    let volume = Volume::new(dims, sp, voxels)?;
    let mask = Mask::new(dims, sp, mask)?;
    MaskedVolume::new(volume, mask)
}

/// Per-subject seeds and flags plus the split, all derived from the master
/// seed.
pub fn plan_cohort(spec: &CohortSpec) -> Result<Vec<(PhantomParams, Split)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prev = spec.prevalence.as_array();
    let mut params: Vec<PhantomParams> = (0..spec.n_subjects)
        .map(|_| {
            let seed = rng.next_u64();
            let mut flags = [false; 4];
            for (f, &p) in flags.iter_mut().zip(&prev) {
                *f = rng.random_bool(p);
            }
            PhantomParams {
                dims: spec.dims,
                spacing: spec.spacing,
                flags,
                seed,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..spec.n_subjects).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let mut split = vec![Split::Test; spec.n_subjects];
    for &i in &order[..spec.n_train()] {
        split[i] = Split::Train;
    }
    Ok(params.drain(..).zip(split).collect())
}

pub fn subject_id(i: usize) -> String {
    format!("sub-{i:04}")
}

/// Writes every phantom as a bundle under `out/` and returns the manifest
/// (also written to `out/manifest.json`).
pub fn generate_cohort(spec: &CohortSpec, out: &Path) -> Result<Manifest> {
    let plan = plan_cohort(spec)?;
    let dir = out.join("subjects");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let records = plan
        .par_iter()
        .enumerate()
        .map(|(i, (p, split))| {
            let id = subject_id(i);
            let mv = phantom(p, &spec.style)?;
            let vol_rel = format!("subjects/{id}_volume.json");
            let mask_rel = format!("subjects/{id}_mask.json");
            save_volume(out.join(&vol_rel), &mv.volume)?;
            save_mask(out.join(&mask_rel), &mv.mask)?;
            Ok(SubjectRecord {
                id,
                volume: vol_rel,
                mask: mask_rel,
                labels: Labels::from_flags(p.flags),
                split: *split,
                seed: Some(p.seed),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        dir: out.to_path_buf(),
        subjects: records,
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// Generates the cohort in memory without touching the disk.
pub fn generate_in_memory(spec: &CohortSpec) -> Result<Vec<(MaskedVolume, [bool; 4], Split)>> {
    let plan = plan_cohort(spec)?;
    plan.par_iter()
        .map(|(p, split)| Ok((phantom(p, &spec.style)?, p.flags, *split)))
        .collect()
}
