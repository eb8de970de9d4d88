//! Marker classifiers, AUC evaluation and the reports built from them.

mod logreg;
mod metrics;
mod report;

pub use logreg::{
    cv_ensemble_fit, fit_logreg, gradient, objective, stratified_folds, EnsembleModel, LogRegModel,
    Standardizer, GRAD_TOL,
};
pub use metrics::{auc, bootstrap_auc};
pub use report::{
    assemble, coefficient_report, delta_row, dlr_curve, evaluate_cell, fit_marker, markdown_table, marker_subset,
    read_reports_csv, run_grid, write_csv_rows, write_reports_csv, AucReport, ClassifierConfig, CoefficientReport,
    CurvePoint, GridConfig, RankedFeature,
};
