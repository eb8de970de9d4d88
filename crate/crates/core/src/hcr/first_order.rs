use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FeatureWarning;
use crate::error::{Error, Result};
use crate::stats::{percentile_sorted, sorted_copy};
use crate::volume::MaskedVolume;

/// The 18 first-order intensity statistics over in-mask voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderFeatures {
    pub energy: f64,
    pub total_energy: f64,
    /// Shannon entropy in bits.
    pub entropy: f64,
    pub minimum: f64,
    pub p10: f64,
    pub p90: f64,
    pub maximum: f64,
    pub mean: f64,
    pub median: f64,
    pub interquartile_range: f64,
    pub range: f64,
    pub mad: f64,
    pub rmad: f64,
    pub rms: f64,
    pub skewness: f64,
    /// Fourth standardized moment, not excess-corrected.
    pub kurtosis: f64,
    pub variance: f64,
    pub uniformity: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<FeatureWarning>,
}

impl FirstOrderFeatures {
    pub fn to_array(&self) -> [f64; 18] {
        [
            self.energy,
            self.total_energy,
            self.entropy,
            self.minimum,
            self.p10,
            self.p90,
            self.maximum,
            self.mean,
            self.median,
            self.interquartile_range,
            self.range,
            self.mad,
            self.rmad,
            self.rms,
            self.skewness,
            self.kurtosis,
            self.variance,
            self.uniformity,
        ]
    }
}

fn mean_abs_dev(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m).abs()).sum::<f64>() / values.len() as f64
}

pub fn compute_first_order(mv: &MaskedVolume, bin_width: f64) -> Result<FirstOrderFeatures> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    let values = mv.masked_values();
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = values.len() as f64;
    let sorted = sorted_copy(&values);
    let minimum = sorted[0];
    let maximum = sorted[sorted.len() - 1];
    let pct = |q| percentile_sorted(&sorted, q);
    let (p10, p90) = (pct(10.0), pct(90.0));

    let energy: f64 = values.iter().map(|v| v * v).sum();
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in &values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);

    let mut warnings = Vec::new();
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        warnings.push(FeatureWarning::ZeroVariance);
        (0.0, 0.0)
    };

    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for v in &values {
        *bins.entry(((v - minimum) / bin_width).floor() as i64).or_default() += 1;
    }
    let (mut entropy, mut uniformity) = (0.0, 0.0);
    for &count in bins.values() {
        let p = count as f64 / n;
        entropy -= p * p.log2();
        uniformity += p * p;
    }

    let robust: Vec<f64> = values.iter().copied().filter(|v| (p10..=p90).contains(v)).collect();

    Ok(FirstOrderFeatures {
        energy,
        total_energy: mv.mask.voxel_volume() * energy,
        entropy: entropy.max(0.0),
        minimum,
        p10,
        p90,
        maximum,
        mean,
        median: pct(50.0),
        interquartile_range: pct(75.0) - pct(25.0),
        range: maximum - minimum,
        mad: mean_abs_dev(&values),
        rmad: mean_abs_dev(&robust),
        rms: (energy / n).sqrt(),
        skewness,
        kurtosis,
        variance: m2,
        uniformity,
        warnings,
    })
}
