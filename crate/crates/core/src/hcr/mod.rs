//! Hand-crafted radiomics: 14 shape and 18 first-order features per subject.

mod first_order;
pub mod mesh;
mod shape;

pub use first_order::{compute_first_order, FirstOrderFeatures};
pub use shape::{compute_shape_features, ShapeFeatures};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::MaskedVolume;

/// Number of hand-crafted features.
pub const N_HCR: usize = 32;

/// Default histogram bin width, in standardized intensity units.
pub const DEFAULT_BIN_WIDTH: f64 = 0.1;

/// Feature names in vector order: shape features first, then first-order.
pub const HCR_NAMES: [&str; N_HCR] = [
    "mesh_volume",
    "voxel_volume",
    "surface_area",
    "surface_to_volume",
    "sphericity",
    "max_diameter_3d",
    "max_diameter_axial",
    "max_diameter_coronal",
    "max_diameter_sagittal",
    "major_axis_length",
    "minor_axis_length",
    "least_axis_length",
    "elongation",
    "flatness",
    "energy",
    "total_energy",
    "entropy",
    "minimum",
    "percentile_10",
    "percentile_90",
    "maximum",
    "mean",
    "median",
    "interquartile_range",
    "range",
    "mean_absolute_deviation",
    "robust_mean_absolute_deviation",
    "root_mean_squared",
    "skewness",
    "kurtosis",
    "variance",
    "uniformity",
];

/// A feature took its documented fallback value on a degenerate input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureWarning {
    /// Fewer than two distinct voxel positions along the principal axis.
    DegenerateAxes,
    /// All in-mask intensities are equal.
    ZeroVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcrVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<FeatureWarning>,
}

impl HcrVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != N_HCR {
            return Err(Error::Shape {
                op: "HcrVector",
                lhs: vec![N_HCR],
                rhs: vec![values.len()],
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature `{}` is not finite", HCR_NAMES[i])));
        }
        Ok(Self {
            values,
            warnings: Vec::new(),
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        HCR_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }
}

pub fn extract_hcr(mv: &MaskedVolume, bin_width: f64) -> Result<HcrVector> {
    let shape = compute_shape_features(&mv.mask)?;
    let first = compute_first_order(mv, bin_width)?;
    let mut values = shape.to_array().to_vec();
    values.extend(first.to_array());
    let mut v = HcrVector::from_values(values)?;
    v.warnings = shape.warnings;
    v.warnings.extend(first.warnings);
    Ok(v)
}

/// Column-wise z-score fitted on a training cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcrScaler {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl HcrScaler {
    /// Fits on `rows` (subjects x features). `names` label the columns in
    /// error messages and in the saved scaler.
    pub fn fit(rows: &[Vec<f64>], names: &[&str]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid("scaler needs at least two subjects"));
        }
        let width = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Shape {
                op: "HcrScaler::fit",
                lhs: vec![width],
                rhs: vec![r.len()],
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        let mut std = vec![0.0; width];
        for j in 0..width {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            if !(var > 0.0) {
                return Err(Error::ConstantFeature(names[j].to_string()));
            }
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            mean,
            std,
        })
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::Shape {
                op: "HcrScaler::apply",
                lhs: vec![self.mean.len()],
                rhs: vec![row.len()],
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}
