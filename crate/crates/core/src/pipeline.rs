//! Cohort-level glue: preprocessing, HCR matrices, and feature tables.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hcr::{extract_hcr, DEFAULT_BIN_WIDTH};
use crate::volume::{
    center_on_grid, clip_and_standardize, fit_intensity_stats, resample, resample_mask, Interpolation, IntensityStats,
    MaskedVolume,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_spacing: [f64; 3],
    pub grid: [usize; 3],
    pub p_low: f64,
    pub p_high: f64,
    /// Value for voxels uncovered by centering; background ends up as 0
    /// after standardization either way.
    pub fill: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing: [3.0, 3.0, 3.0],
            grid: [24, 16, 8],
            p_low: 0.5,
            p_high: 99.5,
            fill: 0.0,
        }
    }
}

/// Resamples to the target spacing and centres on the grid.
pub fn resample_and_center(mv: &MaskedVolume, cfg: &PreprocessConfig) -> Result<MaskedVolume> {
    let volume = resample(&mv.volume, cfg.target_spacing, Interpolation::Trilinear)?;
    let mask = resample_mask(&mv.mask, cfg.target_spacing, Interpolation::Nearest)?;
    let resampled = MaskedVolume::new(volume, mask)?;
    center_on_grid(&resampled, cfg.grid, cfg.fill)
}

/// Full preprocessing. Intensity statistics are fitted on the subjects
/// flagged in `fit_on` and applied to all.
pub fn preprocess_cohort(
    cohort: &[MaskedVolume],
    fit_on: &[bool],
    cfg: &PreprocessConfig,
) -> Result<(Vec<MaskedVolume>, IntensityStats)> {
    if fit_on.len() != cohort.len() {
        return Err(Error::invalid("fit selection is not aligned with the cohort"));
    }
    let centred: Vec<MaskedVolume> = cohort
        .par_iter()
        .map(|mv| resample_and_center(mv, cfg))
        .collect::<Result<_>>()?;
    let stats = fit_intensity_stats(
        centred.iter().zip(fit_on).filter(|(_, &f)| f).map(|(mv, _)| mv),
        cfg.p_low,
        cfg.p_high,
    )?;
    let out = centred
        .par_iter()
        .map(|mv| clip_and_standardize(mv, &stats))
        .collect::<Result<_>>()?;
    Ok((out, stats))
}

/// One HCR row per subject, in cohort order.
pub fn hcr_matrix(cohort: &[MaskedVolume], bin_width: f64) -> Result<Vec<Vec<f64>>> {
    cohort
        .par_iter()
        .map(|mv| extract_hcr(mv, bin_width).map(|h| h.values))
        .collect()
}

pub fn default_bin_width() -> f64 {
    DEFAULT_BIN_WIDTH
}

/// A subjects × features table keyed by subject id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>, ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() || rows.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::invalid("feature table rows do not match ids or columns"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature table contains non-finite values"));
        }
        Ok(Self { columns, ids, rows })
    }

    /// CSV with an `id` column first. Numbers are written in shortest
    /// round-trip form, so reading back is exact.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("id") {
            return Err(Error::invalid(format!("{}: first column must be `id`", path.display())));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::invalid(format!("{}: bad number {s:?}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(columns, ids, rows)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows reordered to `ids`; errors on any missing id.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Vec<f64>>> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.rows[i].clone())
                    .ok_or_else(|| Error::invalid(format!("subject {id:?} missing from feature table")))
            })
            .collect()
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `text` creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
