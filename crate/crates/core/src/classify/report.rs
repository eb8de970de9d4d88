//! Evaluation grid over feature sets and markers, and the reports built on it.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logreg::{cv_ensemble_fit, EnsembleModel};
use super::metrics::{auc, bootstrap_auc};
use crate::error::{Error, Result};
use crate::manifest::{Split, SubjectRecord};
use crate::pipeline::FeatureTable;

/// One grid cell: a feature configuration evaluated on one marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub config: String,
    pub marker: String,
    /// AUC of the ensemble on the full test set.
    pub auc: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub n_test: usize,
    pub n_boot: usize,
    pub seed: u64,
}

/// A named configuration built by concatenating feature tables, e.g.
/// `HD64-MI = [hcr, dlr-mi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub name: String,
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub folds: usize,
    pub l2_c: f64,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            folds: 4,
            l2_c: 1.0,
            n_boot: 10_000,
            seed: 0,
        }
    }
}

/// Labeled ids and labels of one split for one marker. Subjects with a
/// missing label are skipped.
pub fn marker_subset(subjects: &[SubjectRecord], split: Split, marker: &str) -> Result<(Vec<String>, Vec<u8>)> {
    let mut ids = Vec::new();
    let mut y = Vec::new();
    for s in subjects.iter().filter(|s| s.split == split) {
        match s.labels.get(marker) {
            None => return Err(Error::invalid(format!("unknown marker `{marker}`"))),
            Some(None) => {}
            Some(Some(v)) => {
                ids.push(s.id.clone());
                y.push(v);
            }
        }
    }
    Ok((ids, y))
}

/// Column names and rows of the named tables joined side by side on `ids`.
pub fn assemble(tables: &BTreeMap<String, FeatureTable>, names: &[String], ids: &[String]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if names.is_empty() {
        return Err(Error::invalid("configuration lists no feature tables"));
    }
    let mut columns = Vec::new();
    let mut rows = vec![Vec::new(); ids.len()];
    let mut seen = HashSet::new();
    for name in names {
        let t = tables
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing feature table `{name}`")))?;
        for c in &t.columns {
            if !seen.insert(c.clone()) {
                return Err(Error::invalid(format!("column `{c}` appears in more than one table")));
            }
        }
        columns.extend(t.columns.iter().cloned());
        for (row, part) in rows.iter_mut().zip(t.select(ids)?) {
            row.extend(part);
        }
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    Ok((columns, rows))
}

/// Trains the fold ensemble on the train split and scores the test split.
pub fn fit_marker(
    subjects: &[SubjectRecord],
    tables: &BTreeMap<String, FeatureTable>,
    names: &[String],
    marker: &str,
    cfg: &ClassifierConfig,
) -> Result<(EnsembleModel, Vec<String>, Vec<f64>, Vec<u8>)> {
    let (train_ids, train_y) = marker_subset(subjects, Split::Train, marker)?;
    let (test_ids, test_y) = marker_subset(subjects, Split::Test, marker)?;
    let (columns, train_x) = assemble(tables, names, &train_ids)?;
    let (_, test_x) = assemble(tables, names, &test_ids)?;
    let model = cv_ensemble_fit(&train_x, &train_y, cfg.folds, cfg.seed, cfg.l2_c)?;
    let scores = model.predict(&test_x);
    Ok((model, columns, scores, test_y))
}

pub fn evaluate_cell(
    subjects: &[SubjectRecord],
    tables: &BTreeMap<String, FeatureTable>,
    config: &GridConfig,
    marker: &str,
    cfg: &ClassifierConfig,
) -> Result<AucReport> {
    let (_, _, scores, y) = fit_marker(subjects, tables, &config.tables, marker, cfg)?;
    let point = auc(&scores, &y)?;
    let (mean, std) = bootstrap_auc(&scores, &y, cfg.n_boot, cfg.seed)?;
    Ok(AucReport {
        config: config.name.clone(),
        marker: marker.to_string(),
        auc: point,
        auc_mean: mean,
        auc_std: std,
        n_test: y.len(),
        n_boot: cfg.n_boot,
        seed: cfg.seed,
    })
}

/// Every configuration on every marker, in config-major order. Cells run in
/// parallel; each is deterministic on its own.
pub fn run_grid(
    subjects: &[SubjectRecord],
    tables: &BTreeMap<String, FeatureTable>,
    configs: &[GridConfig],
    markers: &[String],
    cfg: &ClassifierConfig,
) -> Result<Vec<AucReport>> {
    let cells: Vec<(&GridConfig, &String)> = configs.iter().flat_map(|c| markers.iter().map(move |m| (c, m))).collect();
    cells
        .par_iter()
        .map(|(c, m)| evaluate_cell(subjects, tables, c, m, cfg))
        .collect()
}

fn find<'a>(reports: &'a [AucReport], config: &str, marker: &str) -> Option<&'a AucReport> {
    reports.iter().find(|r| r.config == config && r.marker == marker)
}

/// Mean over markers of `auc_mean(config) - auc_mean(baseline)`, per config.
/// `None` when a marker is missing for either side.
pub fn delta_row(reports: &[AucReport], configs: &[String], markers: &[String], baseline: &str) -> Vec<(String, Option<f64>)> {
    configs
        .iter()
        .map(|c| {
            let diffs: Option<Vec<f64>> = markers
                .iter()
                .map(|m| Some(find(reports, c, m)?.auc_mean - find(reports, baseline, m)?.auc_mean))
                .collect();
            let d = diffs.filter(|d| !d.is_empty()).map(|d| d.iter().sum::<f64>() / d.len() as f64);
            (c.clone(), d)
        })
        .collect()
}

/// Markers as rows, configurations as columns, `mean ± std` in percent, and
/// a closing row of mean differences against `baseline`.
pub fn markdown_table(reports: &[AucReport], configs: &[String], markers: &[String], baseline: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| marker | {} |", configs.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(configs.len()));
    for m in markers {
        let cells: Vec<String> = configs
            .iter()
            .map(|c| match find(reports, c, m) {
                Some(r) => format!("{:.2} ± {:.2}", 100.0 * r.auc_mean, 100.0 * r.auc_std),
                None => "-".to_string(),
            })
            .collect();
        let _ = writeln!(out, "| {m} | {} |", cells.join(" | "));
    }
    let deltas: Vec<String> = delta_row(reports, configs, markers, baseline)
        .into_iter()
        .map(|(_, d)| d.map_or("-".to_string(), |d| format!("{:+.2}", 100.0 * d)))
        .collect();
    let _ = writeln!(out, "| δ vs {baseline} | {} |", deltas.join(" | "));
    out
}

pub fn write_reports_csv(path: &Path, reports: &[AucReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_reports_csv(path: &Path) -> Result<Vec<AucReport>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub feature: String,
    pub mean_abs_weight: f64,
    pub is_dlr: bool,
}

/// Number of DLR features among the top `k`, with the two extreme
/// orderings for reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub count: usize,
    /// Every DLR feature ranked first.
    pub extreme_hi: usize,
    /// Every HCR feature ranked first.
    pub extreme_lo: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub ranking: Vec<RankedFeature>,
    pub curve: Vec<CurvePoint>,
}

/// Ranks features by mean |weight| across fold models, ties broken by
/// column order.
pub fn coefficient_report(model: &EnsembleModel, names: &[String], is_dlr: &[bool]) -> Result<CoefficientReport> {
    let w = model.mean_abs_weights();
    if names.len() != w.len() || is_dlr.len() != w.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} names and {} flags",
            w.len(),
            names.len(),
            is_dlr.len()
        )));
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let ranking = order
        .iter()
        .enumerate()
        .map(|(r, &j)| RankedFeature {
            rank: r + 1,
            feature: names[j].clone(),
            mean_abs_weight: w[j],
            is_dlr: is_dlr[j],
        })
        .collect();
    let flags: Vec<bool> = order.iter().map(|&j| is_dlr[j]).collect();
    Ok(CoefficientReport {
        ranking,
        curve: dlr_curve(&flags),
    })
}

/// Curve for features already sorted by importance.
pub fn dlr_curve(ranked_is_dlr: &[bool]) -> Vec<CurvePoint> {
    let n = ranked_is_dlr.len();
    let n_dlr = ranked_is_dlr.iter().filter(|&&d| d).count();
    let n_hcr = n - n_dlr;
    let mut count = 0;
    ranked_is_dlr
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let k = i + 1;
            count += d as usize;
            CurvePoint {
                k,
                count,
                extreme_hi: k.min(n_dlr),
                extreme_lo: k.saturating_sub(n_hcr),
            }
        })
        .collect()
}

pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
