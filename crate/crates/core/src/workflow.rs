//! Pipeline stages over a workspace directory. Each stage reads what the
//! previous ones wrote, writes into its own subdirectory, and leaves the
//! resolved configuration next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{
    auc, bootstrap_auc, coefficient_report, fit_marker, markdown_table, read_reports_csv, write_csv_rows,
    write_reports_csv, AucReport, ClassifierConfig, EnsembleModel, GridConfig,
};
use crate::error::{Error, Result};
use crate::hcr::{HcrScaler, DEFAULT_BIN_WIDTH, HCR_NAMES, N_HCR};
use crate::manifest::{Manifest, Split, SubjectRecord, MARKERS};
use crate::pipeline::{hcr_matrix, preprocess_cohort, write_text, FeatureTable, PreprocessConfig};
use crate::synth::{generate_cohort, CohortSpec};
use crate::vae::{Sample, TrainReport, VaeConfig, VaeModel};
use crate::volume::{load_mask, load_volume, save_mask, save_volume, MaskedVolume};

pub const HCR_TABLE: &str = "hcr";

/// A VAE trained by `train-vae`, differing from the base config in MI
/// weight and DLR size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeVariant {
    pub name: String,
    pub kappa: f64,
    pub dlr_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kappa: Vec<f64>,
    pub latent: Vec<usize>,
    /// MI weight used by the latent-size sweep.
    pub latent_kappa: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kappa: vec![0.01, 0.1, 1.0, 10.0],
            latent: vec![32, 64, 256, 512, 1024, 2048],
            latent_kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. When set from the command line it replaces the cohort,
    /// VAE and classifier seeds.
    pub seed: u64,
    /// Existing cohort manifest to use instead of `gen-cohort` output.
    pub manifest: Option<PathBuf>,
    pub cohort: CohortSpec,
    pub preprocess: PreprocessConfig,
    pub hcr_bin_width: f64,
    /// Z-score the HCR fed to the VAE with train statistics. When off,
    /// `hcr_scaled.csv` carries the raw values.
    pub scale_hcr: bool,
    pub vae: VaeConfig,
    pub variants: Vec<VaeVariant>,
    pub classifier: ClassifierConfig,
    pub markers: Vec<String>,
    pub grid: Vec<GridConfig>,
    pub baseline: String,
    pub sweep: SweepConfig,
}

fn grid_config(name: &str, tables: &[&str]) -> GridConfig {
    GridConfig {
        name: name.to_string(),
        tables: tables.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            manifest: None,
            cohort: CohortSpec::default(),
            preprocess: PreprocessConfig::default(),
            hcr_bin_width: DEFAULT_BIN_WIDTH,
            scale_hcr: true,
            vae: VaeConfig::default(),
            variants: vec![
                VaeVariant {
                    name: "d32".into(),
                    kappa: 0.0,
                    dlr_dim: 32,
                },
                VaeVariant {
                    name: "d32-mi".into(),
                    kappa: 1.0,
                    dlr_dim: 32,
                },
            ],
            classifier: ClassifierConfig::default(),
            markers: MARKERS.iter().map(|s| s.to_string()).collect(),
            grid: vec![
                grid_config("H32", &[HCR_TABLE]),
                grid_config("D32", &["d32"]),
                grid_config("D32-MI", &["d32-mi"]),
                grid_config("HD64", &[HCR_TABLE, "d32"]),
                grid_config("HD64-MI", &[HCR_TABLE, "d32-mi"]),
            ],
            baseline: "H32".into(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the master seed into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.cohort.seed = seed;
        self.vae.seed = seed;
        self.classifier.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.vae.validate()?;
        if self.vae.grid != self.preprocess.grid {
            return Err(Error::Config(format!(
                "vae.grid {:?} differs from preprocess.grid {:?}",
                self.vae.grid, self.preprocess.grid
            )));
        }
        if self.vae.hcr_dim != N_HCR {
            return Err(Error::Config(format!("vae.hcr_dim must be {N_HCR}")));
        }
        if !(self.hcr_bin_width > 0.0) {
            return Err(Error::Config("hcr_bin_width must be positive".into()));
        }
        for m in &self.markers {
            if !MARKERS.contains(&m.as_str()) {
                return Err(Error::Config(format!("unknown marker `{m}`")));
            }
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&HCR_TABLE) {
            return Err(Error::Config("variant names must be unique and differ from `hcr`".into()));
        }
        for g in &self.grid {
            for t in &g.tables {
                if t != HCR_TABLE && !names.contains(&t.as_str()) {
                    return Err(Error::Config(format!("grid config {} uses unknown table `{t}`", g.name)));
                }
            }
        }
        if !self.grid.iter().any(|g| g.name == self.baseline) {
            return Err(Error::Config(format!("baseline `{}` is not a grid config", self.baseline)));
        }
        Ok(())
    }

    fn variant_config(&self, v: &VaeVariant) -> VaeConfig {
        VaeConfig {
            kappa: v.kappa,
            dlr_dim: v.dlr_dim,
            ..self.vae.clone()
        }
    }
}

/// Stage names, which double as subdirectory names.
pub const STAGES: [&str; 9] = [
    "gen-cohort",
    "preprocess",
    "extract-hcr",
    "train-vae",
    "extract-dlr",
    "train-classifier",
    "evaluate",
    "sweep",
    "report",
];

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    /// Creates the stage directory and records the configuration there.
    pub fn begin(&self, stage: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let record = serde_json::json!({
            "stage": stage,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "config": cfg,
        });
        write_text(
            &dir.join("config.json"),
            &serde_json::to_string_pretty(&record).expect("config serializes"),
        )?;
        Ok(dir)
    }

    fn input(&self, stage: &str, rel: &str) -> Result<PathBuf> {
        let p = self.stage_dir(stage).join(rel);
        if !p.exists() {
            return Err(Error::invalid(format!(
                "missing input {}; run `{stage}` first",
                p.display()
            )));
        }
        Ok(p)
    }

    fn cohort_manifest(&self, cfg: &RunConfig) -> Result<PathBuf> {
        match &cfg.manifest {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(Error::invalid(format!("missing input {}", p.display()))),
            None => self.input("gen-cohort", "manifest.json"),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("value serializes"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn load_cohort(manifest: &Manifest) -> Result<Vec<MaskedVolume>> {
    manifest
        .subjects
        .iter()
        .map(|s| MaskedVolume::new(load_volume(manifest.resolve(&s.volume))?, load_mask(manifest.resolve(&s.mask))?))
        .collect()
}

pub fn gen_cohort(ws: &Workspace, cfg: &RunConfig) -> Result<Manifest> {
    let dir = ws.begin("gen-cohort", cfg)?;
    let m = generate_cohort(&cfg.cohort, &dir)?;
    log::info!("generated {} subjects, manifest hash {}", m.subjects.len(), m.hash());
    Ok(m)
}

/// Resamples, centres and standardizes every subject. Intensity statistics
/// come from the train split only.
pub fn preprocess(ws: &Workspace, cfg: &RunConfig) -> Result<Manifest> {
    let src = Manifest::load(&ws.cohort_manifest(cfg)?)?;
    let dir = ws.begin("preprocess", cfg)?;
    let raw = load_cohort(&src)?;
    let fit_on: Vec<bool> = src.subjects.iter().map(|s| s.split == Split::Train).collect();
    let (out, stats) = preprocess_cohort(&raw, &fit_on, &cfg.preprocess)?;
    let sub = dir.join("subjects");
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut records = Vec::with_capacity(out.len());
    for (s, mv) in src.subjects.iter().zip(&out) {
        let volume = format!("subjects/{}_volume.json", s.id);
        let mask = format!("subjects/{}_mask.json", s.id);
        save_volume(dir.join(&volume), &mv.volume)?;
        save_mask(dir.join(&mask), &mv.mask)?;
        records.push(SubjectRecord {
            volume,
            mask,
            ..s.clone()
        });
    }
    write_json(&dir.join("intensity_stats.json"), &stats)?;
    let m = Manifest {
        dir: dir.clone(),
        subjects: records,
    };
    m.save(&dir.join("manifest.json"))?;
    log::info!("preprocessed {} subjects", m.subjects.len());
    Ok(m)
}

fn preprocessed(ws: &Workspace) -> Result<(Manifest, Vec<MaskedVolume>)> {
    let m = Manifest::load(&ws.input("preprocess", "manifest.json")?)?;
    let vols = load_cohort(&m)?;
    Ok((m, vols))
}

fn ids(m: &Manifest) -> Vec<String> {
    m.subjects.iter().map(|s| s.id.clone()).collect()
}

/// Writes `hcr.csv` (raw) and `hcr_scaled.csv` (z-scored with train
/// statistics unless `scale_hcr` is off, the VAE's conditioning input).
pub fn extract_hcr(ws: &Workspace, cfg: &RunConfig) -> Result<FeatureTable> {
    let (m, vols) = preprocessed(ws)?;
    let dir = ws.begin("extract-hcr", cfg)?;
    let rows = hcr_matrix(&vols, cfg.hcr_bin_width)?;
    let columns: Vec<String> = HCR_NAMES.iter().map(|s| s.to_string()).collect();
    let train: Vec<Vec<f64>> = rows
        .iter()
        .zip(&m.subjects)
        .filter(|(_, s)| s.split == Split::Train)
        .map(|(r, _)| r.clone())
        .collect();
    let scaler = HcrScaler::fit(&train, &HCR_NAMES)?;
    let conditioning = if cfg.scale_hcr { scaler.apply_all(&rows)? } else { rows.clone() };
    let scaled = FeatureTable::new(columns.clone(), ids(&m), conditioning)?;
    let table = FeatureTable::new(columns, ids(&m), rows)?;
    table.write_csv(&dir.join("hcr.csv"))?;
    scaled.write_csv(&dir.join("hcr_scaled.csv"))?;
    write_json(&dir.join("hcr_scaler.json"), &scaler)?;
    log::info!("extracted {} HCR for {} subjects", N_HCR, table.ids.len());
    Ok(table)
}

fn samples(vols: &[MaskedVolume], vae: &VaeConfig) -> Result<Vec<Sample>> {
    vols.iter().map(|mv| Sample::from_masked(mv, vae)).collect()
}

/// Trains one VAE on the train split and saves checkpoint and trace into
/// `dir`.
fn train_variant(
    dir: &Path,
    vae: VaeConfig,
    m: &Manifest,
    vols: &[MaskedVolume],
    hcr_scaled: &FeatureTable,
) -> Result<(VaeModel, TrainReport)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let all = samples(vols, &vae)?;
    let train: Vec<usize> = (0..m.subjects.len())
        .filter(|&i| m.subjects[i].split == Split::Train)
        .collect();
    let train_ids: Vec<String> = train.iter().map(|&i| m.subjects[i].id.clone()).collect();
    let h = hcr_scaled.select(&train_ids)?;
    let xs: Vec<Sample> = train.iter().map(|&i| all[i].clone()).collect();
    let mut model = VaeModel::new(vae)?;
    let report = model.train(&xs, &h)?;
    model.save(&dir.join("model.ckpt"))?;
    write_csv_rows(&dir.join("trace.csv"), &report.trace)?;
    write_json(&dir.join("schedule.json"), &report)?;
    Ok((model, report))
}

fn dlr_table(model: &VaeModel, name: &str, m: &Manifest, vols: &[MaskedVolume]) -> Result<FeatureTable> {
    let all = samples(vols, &model.config)?;
    let d = model.extract_dlr(&all)?;
    let columns = (0..model.config.dlr_dim).map(|i| format!("{name}_{i}")).collect();
    FeatureTable::new(columns, ids(m), d)
}

pub fn train_vae(ws: &Workspace, cfg: &RunConfig) -> Result<()> {
    let (m, vols) = preprocessed(ws)?;
    let hs = FeatureTable::read_csv(&ws.input("extract-hcr", "hcr_scaled.csv")?)?;
    let dir = ws.begin("train-vae", cfg)?;
    for v in &cfg.variants {
        let (_, report) = train_variant(&dir.join(&v.name), cfg.variant_config(v), &m, &vols, &hs)?;
        let last = report.trace.last();
        log::info!(
            "variant {}: {} epochs, {} disc phases, final nll {:?}",
            v.name,
            report.trace.len(),
            report.phases.len(),
            last.map(|r| r.nll)
        );
    }
    Ok(())
}

pub fn extract_dlr(ws: &Workspace, cfg: &RunConfig) -> Result<()> {
    let (m, vols) = preprocessed(ws)?;
    let models: Vec<(String, VaeModel)> = cfg
        .variants
        .iter()
        .map(|v| Ok((v.name.clone(), VaeModel::load(&ws.input("train-vae", &format!("{}/model.ckpt", v.name))?)?)))
        .collect::<Result<_>>()?;
    let dir = ws.begin("extract-dlr", cfg)?;
    for (name, model) in &models {
        dlr_table(model, name, &m, &vols)?.write_csv(&dir.join(format!("{name}.csv")))?;
        log::info!("extracted {} DLR from {name}", model.config.dlr_dim);
    }
    Ok(())
}

fn feature_tables(ws: &Workspace, cfg: &RunConfig) -> Result<BTreeMap<String, FeatureTable>> {
    let mut tables = BTreeMap::new();
    tables.insert(
        HCR_TABLE.to_string(),
        FeatureTable::read_csv(&ws.input("extract-hcr", "hcr.csv")?)?,
    );
    for v in &cfg.variants {
        let t = FeatureTable::read_csv(&ws.input("extract-dlr", &format!("{}.csv", v.name))?)?;
        tables.insert(v.name.clone(), t);
    }
    Ok(tables)
}

/// A fitted classifier as stored by `train-classifier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredClassifier {
    pub config: GridConfig,
    pub marker: String,
    pub columns: Vec<String>,
    pub model: EnsembleModel,
}

fn classifier_file(config: &str, marker: &str) -> String {
    format!("{config}__{marker}.json")
}

pub fn train_classifier(ws: &Workspace, cfg: &RunConfig) -> Result<()> {
    let m = Manifest::load(&ws.input("preprocess", "manifest.json")?)?;
    let tables = feature_tables(ws, cfg)?;
    let dir = ws.begin("train-classifier", cfg)?;
    let hcr_cols = &tables[HCR_TABLE].columns;
    for g in &cfg.grid {
        for marker in &cfg.markers {
            let (model, columns, _, _) = fit_marker(&m.subjects, &tables, &g.tables, marker, &cfg.classifier)?;
            let is_dlr: Vec<bool> = columns.iter().map(|c| !hcr_cols.contains(c)).collect();
            if is_dlr.iter().any(|&d| d) && is_dlr.iter().any(|&d| !d) {
                let rep = coefficient_report(&model, &columns, &is_dlr)?;
                write_csv_rows(&dir.join(format!("{}__{marker}_ranking.csv", g.name)), &rep.ranking)?;
                write_csv_rows(&dir.join(format!("{}__{marker}_curve.csv", g.name)), &rep.curve)?;
            }
            let stored = StoredClassifier {
                config: g.clone(),
                marker: marker.clone(),
                columns,
                model,
            };
            write_json(&dir.join(classifier_file(&g.name, marker)), &stored)?;
            log::info!("trained {} on {marker}", g.name);
        }
    }
    Ok(())
}

fn score_report(name: &str, marker: &str, scores: &[f64], y: &[u8], cc: &ClassifierConfig) -> Result<AucReport> {
    let (mean, std) = bootstrap_auc(scores, y, cc.n_boot, cc.seed)?;
    Ok(AucReport {
        config: name.to_string(),
        marker: marker.to_string(),
        auc: auc(scores, y)?,
        auc_mean: mean,
        auc_std: std,
        n_test: y.len(),
        n_boot: cc.n_boot,
        seed: cc.seed,
    })
}

pub fn evaluate(ws: &Workspace, cfg: &RunConfig) -> Result<Vec<AucReport>> {
    let m = Manifest::load(&ws.input("preprocess", "manifest.json")?)?;
    let tables = feature_tables(ws, cfg)?;
    let stored: Vec<StoredClassifier> = cfg
        .grid
        .iter()
        .flat_map(|g| cfg.markers.iter().map(move |mk| (g, mk)))
        .map(|(g, mk)| read_json(&ws.input("train-classifier", &classifier_file(&g.name, mk))?))
        .collect::<Result<_>>()?;
    let dir = ws.begin("evaluate", cfg)?;
    let mut reports = Vec::new();
    for s in &stored {
        let (test_ids, y) = crate::classify::marker_subset(&m.subjects, Split::Test, &s.marker)?;
        let (_, x) = crate::classify::assemble(&tables, &s.config.tables, &test_ids)?;
        let scores = s.model.predict(&x);
        reports.push(score_report(&s.config.name, &s.marker, &scores, &y, &cfg.classifier)?);
    }
    write_reports_csv(&dir.join("auc.csv"), &reports)?;
    let names: Vec<String> = cfg.grid.iter().map(|g| g.name.clone()).collect();
    write_text(
        &dir.join("auc.md"),
        &markdown_table(&reports, &names, &cfg.markers, &cfg.baseline),
    )?;
    Ok(reports)
}

/// One row of a κ or latent-size sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep: String,
    pub value: f64,
    pub marker: String,
    pub auc: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub n_test: usize,
}

/// Trains one VAE per value and evaluates HCR + its DLR on every marker.
/// Rows for κ values go to `kappa.csv`, latent sizes to `latent.csv`.
pub fn sweep(ws: &Workspace, cfg: &RunConfig, kappas: &[f64], latents: &[usize]) -> Result<Vec<SweepRow>> {
    let (m, vols) = preprocessed(ws)?;
    let hs = FeatureTable::read_csv(&ws.input("extract-hcr", "hcr_scaled.csv")?)?;
    let hcr = FeatureTable::read_csv(&ws.input("extract-hcr", "hcr.csv")?)?;
    let dir = ws.begin("sweep", cfg)?;
    let base_dim = cfg.vae.dlr_dim;
    let runs: Vec<(&str, f64, VaeVariant)> = kappas
        .iter()
        .map(|&k| {
            (
                "kappa",
                k,
                VaeVariant {
                    name: format!("kappa-{k}"),
                    kappa: k,
                    dlr_dim: base_dim,
                },
            )
        })
        .chain(latents.iter().map(|&l| {
            (
                "latent",
                l as f64,
                VaeVariant {
                    name: format!("latent-{l}"),
                    kappa: cfg.sweep.latent_kappa,
                    dlr_dim: l,
                },
            )
        }))
        .collect();
    let mut all = Vec::new();
    for (kind, value, v) in &runs {
        let (model, _) = train_variant(&dir.join("vae").join(&v.name), cfg.variant_config(v), &m, &vols, &hs)?;
        let mut tables = BTreeMap::new();
        tables.insert(HCR_TABLE.to_string(), hcr.clone());
        tables.insert(v.name.clone(), dlr_table(&model, &v.name, &m, &vols)?);
        let names = vec![HCR_TABLE.to_string(), v.name.clone()];
        for marker in &cfg.markers {
            let (_, _, scores, y) = fit_marker(&m.subjects, &tables, &names, marker, &cfg.classifier)?;
            let r = score_report(&v.name, marker, &scores, &y, &cfg.classifier)?;
            all.push(SweepRow {
                sweep: kind.to_string(),
                value: *value,
                marker: marker.clone(),
                auc: r.auc,
                auc_mean: r.auc_mean,
                auc_std: r.auc_std,
                n_test: r.n_test,
            });
        }
        log::info!("sweep {kind} = {value} done");
    }
    for kind in ["kappa", "latent"] {
        let rows: Vec<&SweepRow> = all.iter().filter(|r| r.sweep == kind).collect();
        if !rows.is_empty() {
            write_csv_rows(&dir.join(format!("{kind}.csv")), &rows)?;
        }
    }
    Ok(all)
}

fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn sweep_markdown(rows: &[SweepRow], markers: &[String]) -> String {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    let mut out = format!(
        "| marker | {} |\n|---|{}\n",
        values
            .iter()
            .map(|v| format!("{} {v}", rows[0].sweep))
            .collect::<Vec<_>>()
            .join(" | "),
        "---|".repeat(values.len())
    );
    for m in markers {
        let cells: Vec<String> = values
            .iter()
            .map(|v| {
                rows.iter()
                    .find(|r| &r.marker == m && r.value == *v)
                    .map_or("-".into(), |r| format!("{:.2} ± {:.2}", 100.0 * r.auc_mean, 100.0 * r.auc_std))
            })
            .collect();
        out.push_str(&format!("| {m} | {} |\n", cells.join(" | ")));
    }
    out
}

/// Renders the AUC table, its CSV, the DLR-in-top-k curves and any sweep
/// tables found in the workspace.
pub fn report(ws: &Workspace, cfg: &RunConfig) -> Result<()> {
    let reports = read_reports_csv(&ws.input("evaluate", "auc.csv")?)?;
    let dir = ws.begin("report", cfg)?;
    let names: Vec<String> = cfg.grid.iter().map(|g| g.name.clone()).collect();
    let mut md = String::from("# Marker prediction AUC (%)\n\n");
    md.push_str(&markdown_table(&reports, &names, &cfg.markers, &cfg.baseline));
    write_reports_csv(&dir.join("auc_table.csv"), &reports)?;
    for g in &cfg.grid {
        for marker in &cfg.markers {
            let src = ws.stage_dir("train-classifier").join(format!("{}__{marker}_curve.csv", g.name));
            if src.exists() {
                let dst = dir.join(format!("top_k_dlr__{}__{marker}.csv", g.name));
                fs::copy(&src, &dst).map_err(|e| Error::io(&dst, e))?;
            }
        }
    }
    for kind in ["kappa", "latent"] {
        let p = ws.stage_dir("sweep").join(format!("{kind}.csv"));
        if p.exists() {
            let rows = read_sweep(&p)?;
            if !rows.is_empty() {
                md.push_str(&format!("\n# Sweep over {kind} (HCR + DLR, AUC %)\n\n"));
                md.push_str(&sweep_markdown(&rows, &cfg.markers));
            }
        }
    }
    write_text(&dir.join("report.md"), &md)?;
    Ok(())
}

/// Every stage from `gen-cohort` to `report`, without sweeps.
pub fn run_all(ws: &Workspace, cfg: &RunConfig) -> Result<()> {
    if cfg.manifest.is_none() {
        gen_cohort(ws, cfg)?;
    }
    preprocess(ws, cfg)?;
    extract_hcr(ws, cfg)?;
    train_vae(ws, cfg)?;
    extract_dlr(ws, cfg)?;
    train_classifier(ws, cfg)?;
    evaluate(ws, cfg)?;
    report(ws, cfg)
}
