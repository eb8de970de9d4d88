//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails at the end if any criterion failed. Run with `--nocapture` to see
//! the lines as they are produced.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::checks::{calibration_estimate, full_objective_error, op_errors, GRAD_TOL};
use common::phantoms::{ball, ellipsoid, naive_first_order, random_phantom};
use common::{micro_config, random_rows, random_samples, rng};
use radmi::classify::{auc, bootstrap_auc, cv_ensemble_fit, dlr_curve, ClassifierConfig};
use radmi::hcr::{compute_first_order, compute_shape_features, HcrScaler, HCR_NAMES};
use radmi::manifest::Split;
use radmi::pipeline::{default_bin_width, hcr_matrix, preprocess_cohort};
use radmi::stats::{median, pearson};
use radmi::synth::{generate_in_memory, CohortSpec, PhantomStyle};
use radmi::vae::{kl_closed_form, Sample, VaeConfig, VaeModel};
use radmi::volume::Mask;
use radmi::workflow::{run_all, RunConfig, Workspace};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let tag = if res.pass { "PASS" } else { "FAIL" };
    println!("{tag} {id:>2} {name}: {} [{:.1?}]", res.detail, start.elapsed());
    res.pass
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("runtime {t:.0?} (limit {limit:?})"))
}

// 1

fn autodiff_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    for s in 1..=5 {
        for (name, e) in op_errors(s) {
            if e > worst.1 {
                worst = (format!("{name} seed {s}"), e);
            }
        }
    }
    let full = (0..5).map(full_objective_error).fold(0.0f64, f64::max);
    let (fast, rt) = within(Duration::from_secs(60), start);
    outcome(
        worst.1 < GRAD_TOL && full < GRAD_TOL && fast,
        format!("worst op error {:.1e} ({}), micro-model objective {full:.1e}, {rt}", worst.1, worst.0),
    )
}

// 2

fn closed_form_kl() -> Outcome {
    let mut r = rng(21);
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dim = 4;
        let mu: Vec<f64> = (0..dim).map(|_| r.random_range(-1.5..1.5)).collect();
        let sigma: Vec<f64> = (0..dim).map(|_| r.random_range(0.3..2.0)).collect();
        let kl = kl_closed_form(&mu, &sigma);
        let direct: f64 = mu
            .iter()
            .zip(&sigma)
            .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
            .sum();
        exact &= kl == direct;
        // Monte Carlo estimate of E_q[log q(z) - log p(z)]
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            for (m, s) in mu.iter().zip(&sigma) {
                let e: f64 = r.sample(StandardNormal);
                let z = m + s * e;
                acc += -0.5 * e * e - s.ln() + 0.5 * z * z;
            }
        }
        let mc = acc / draws as f64;
        worst = worst.max((mc - kl).abs() / kl);
    }
    outcome(exact && worst < 0.02, format!("closed form exact: {exact}, worst Monte Carlo relative gap {:.2}%", 100.0 * worst))
}

// 3

fn mi_calibration() -> Outcome {
    let start = Instant::now();
    let est: Vec<f64> = [0.0, 0.5, 0.9].iter().map(|&rho| calibration_estimate(rho)).collect();
    let analytic = -0.5 * (1.0 - 0.81f64).ln();
    let monotone = est[0] < est[1] && est[1] < est[2];
    let (fast, rt) = within(Duration::from_secs(120), start);
    outcome(
        est[0] < 0.05 && (0.5..=1.1).contains(&est[2]) && monotone && fast,
        format!(
            "rho 0: {:.3}, rho 0.5: {:.3}, rho 0.9: {:.3} (analytic {analytic:.3}), {rt}",
            est[0], est[1], est[2]
        ),
    )
}

// 4

fn hcr_oracles() -> Outcome {
    let start = Instant::now();
    let radii = [5.0, 10.0, 20.0, 40.0];
    let sph: Vec<f64> = radii
        .iter()
        .map(|&r| compute_shape_features(&ball(r)).unwrap().sphericity)
        .collect();
    let ball_ok = (sph[2] - 1.0).abs() <= 0.03;
    let monotone = sph.windows(2).all(|w| w[1] >= w[0]);

    let f = compute_shape_features(&ellipsoid([20.0, 10.0, 5.0], [1.0; 3])).unwrap();
    let want = 4.0 * 20.0 / 5f64.sqrt();
    let axis_err = (f.major_axis - want).abs() / want;

    let cube_want = (36.0 * std::f64::consts::PI).powf(1.0 / 3.0) / 6.0;
    let cube_err = [32usize, 40]
        .iter()
        .map(|&side| {
            let m = Mask::from_fn([side + 2; 3], [1.0; 3], |x, y, z| {
                [x, y, z].iter().all(|&c| (1..=side).contains(&c))
            })
            .unwrap();
            (compute_shape_features(&m).unwrap().sphericity - cube_want).abs() / cube_want
        })
        .fold(0.0f64, f64::max);

    let mut r = rng(2024);
    let mut fo_err = 0.0f64;
    for _ in 0..20 {
        let mv = random_phantom(&mut r);
        let values = mv.masked_values();
        let sp = mv.spacing();
        let want = naive_first_order(&values, sp[0] * sp[1] * sp[2], 0.1);
        let got = compute_first_order(&mv, 0.1).unwrap().to_array();
        for (g, w) in got.iter().zip(&want) {
            if (g - w).abs() > 1e-12 {
                fo_err = fo_err.max((g - w).abs() / w.abs().max(1e-12));
            }
        }
    }
    let (fast, rt) = within(Duration::from_secs(120), start);
    outcome(
        ball_ok && monotone && axis_err < 0.02 && cube_err < 0.02 && fo_err <= 1e-5 && fast,
        format!(
            "ball sphericity r5/10/20/40 {:.3}/{:.3}/{:.3}/{:.3} (r20 needs |1 - s| <= 0.03), monotone {monotone}, \
             ellipsoid major axis error {:.2}%, cube sphericity error {:.2}%, first-order error {fo_err:.1e}, {rt}",
            sph[0],
            sph[1],
            sph[2],
            sph[3],
            100.0 * axis_err,
            100.0 * cube_err
        ),
    )
}

// 5

fn schedule_fidelity() -> Outcome {
    let cfg = VaeConfig {
        vae_epochs: 23,
        ..micro_config()
    };
    let mut r = rng(40);
    let samples = random_samples(&mut r, &cfg, 6);
    let h = random_rows(&mut r, 6, cfg.hcr_dim);
    let mut model = VaeModel::new(cfg.clone()).unwrap();
    let report = model.train(&samples, &h).unwrap();

    let after: Vec<usize> = report.phases.iter().map(|p| p.after_epoch).collect();
    let timing = after == vec![5, 10, 15, 20];
    let lengths = report.phases.iter().all(|p| p.epochs == 150);
    let vae_frozen = report.phases.iter().all(|p| p.vae_before == p.vae_after && p.disc_before != p.disc_after);
    let disc_frozen = report
        .epochs
        .iter()
        .all(|e| e.disc_before == e.disc_after && e.vae_before != e.vae_after);
    let chained = report.phases.iter().all(|p| {
        report
            .epochs
            .iter()
            .find(|e| e.epoch == p.after_epoch + 1)
            .is_none_or(|e| e.disc_before == p.disc_after && e.vae_before == p.vae_after)
    });
    let steps = model.state.disc_steps == 4 * 150;
    outcome(
        timing && lengths && vae_frozen && disc_frozen && chained && steps,
        format!(
            "phases after epochs {after:?}, 150 epochs each: {lengths}, VAE frozen in phases: {vae_frozen}, \
             discriminator frozen in VAE epochs: {disc_frozen}, digests chain: {chained}, disc steps {}",
            model.state.disc_steps
        ),
    )
}

// shared cohort setup for 6 to 8

struct Prepared {
    samples: Vec<Sample>,
    h: Vec<Vec<f64>>,
    h_scaled: Vec<Vec<f64>>,
    train: Vec<bool>,
    flags: Vec<[bool; 4]>,
}

impl Prepared {
    fn new(spec: &CohortSpec, cfg: &VaeConfig) -> Self {
        let cohort = generate_in_memory(spec).unwrap();
        let volumes: Vec<_> = cohort.iter().map(|c| c.0.clone()).collect();
        let train: Vec<bool> = cohort.iter().map(|c| c.2 == Split::Train).collect();
        let (pre, _) = preprocess_cohort(&volumes, &train, &Default::default()).unwrap();
        let h = hcr_matrix(&pre, default_bin_width()).unwrap();
        let scaler = HcrScaler::fit(&pick(&h, &train, true), &HCR_NAMES).unwrap();
        Self {
            samples: pre.iter().map(|m| Sample::from_masked(m, cfg).unwrap()).collect(),
            h_scaled: scaler.apply_all(&h).unwrap(),
            h,
            train,
            flags: cohort.iter().map(|c| c.1).collect(),
        }
    }

    fn fit(&self, cfg: VaeConfig) -> VaeModel {
        let mut model = VaeModel::new(cfg).unwrap();
        model
            .train(&pick(&self.samples, &self.train, true), &pick(&self.h_scaled, &self.train, true))
            .unwrap();
        model
    }
}

fn pick<T: Clone>(rows: &[T], train: &[bool], want: bool) -> Vec<T> {
    rows.iter().zip(train).filter(|(_, &t)| t == want).map(|(r, _)| r.clone()).collect()
}

/// Mean absolute Pearson correlation over every (DLR column, HCR column) pair.
fn mean_abs_r(d: &[Vec<f64>], h: &[Vec<f64>]) -> f64 {
    let col = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<f64>>();
    let (nd, nh) = (d[0].len(), h[0].len());
    let mut acc = 0.0;
    for i in 0..nd {
        let a = col(d, i);
        for j in 0..nh {
            acc += pearson(&a, &col(h, j)).abs();
        }
    }
    acc / (nd * nh) as f64
}

const SEEDS: [u64; 3] = [0, 1, 2];

/// Per seed: (|r| at kappa 0, |r| at kappa 1, test error at kappa 0, test error at kappa 1).
fn desk_cohort_runs() -> Vec<[f64; 4]> {
    let base = VaeConfig::default();
    let data = Prepared::new(&CohortSpec::default(), &base);
    SEEDS
        .iter()
        .map(|&seed| {
            let mut row = [0.0; 4];
            for (k, kappa) in [0.0, 1.0].into_iter().enumerate() {
                let model = data.fit(VaeConfig { kappa, seed, ..base.clone() });
                let d = model.extract_dlr(&data.samples).unwrap();
                row[k] = mean_abs_r(&d, &data.h);
                let test = pick(&data.samples, &data.train, false);
                row[2 + k] = model.reconstruction_error(&test, &pick(&data.h_scaled, &data.train, false)).unwrap().0;
            }
            println!("     seed {seed}: |r| {:.3} -> {:.3}, test error {:.4} -> {:.4}", row[0], row[1], row[2], row[3]);
            row
        })
        .collect()
}

fn disentanglement(runs: &[[f64; 4]], elapsed: Duration) -> Outcome {
    let r0 = median(&runs.iter().map(|r| r[0]).collect::<Vec<_>>());
    let r1 = median(&runs.iter().map(|r| r[1]).collect::<Vec<_>>());
    let drop = 1.0 - r1 / r0;
    let limit = Duration::from_secs(15 * 60);
    outcome(
        drop >= 0.30 && elapsed < limit,
        format!(
            "median mean |r| kappa 0 {r0:.3}, kappa 1 {r1:.3}, reduction {:.1}% (needs >= 30%), runtime {elapsed:.0?}",
            100.0 * drop
        ),
    )
}

// 8

fn reconstruction_neutrality(runs: &[[f64; 4]]) -> Outcome {
    let e0 = median(&runs.iter().map(|r| r[2]).collect::<Vec<_>>());
    let e1 = median(&runs.iter().map(|r| r[3]).collect::<Vec<_>>());
    let gap = (e1 - e0).abs() / e0;
    outcome(
        gap <= 0.10,
        format!("median test in-mask l2 error kappa 0 {e0:.4}, kappa 1 {e1:.4}, gap {:.1}%", 100.0 * gap),
    )
}

// 7

fn combination_benefit() -> Outcome {
    const FAT: usize = 2;
    let (n_train, n_test) = (64, 200);
    let n = n_train + n_test;
    let clf = ClassifierConfig::default();
    let mut cells = Vec::new();
    for seed in SEEDS {
        let spec = CohortSpec {
            n_subjects: n,
            seed: 100 + seed,
            split: [n_train as f64 / n as f64, n_test as f64 / n as f64],
            style: PhantomStyle {
                hard_mode: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let base = VaeConfig { seed, ..Default::default() };
        let data = Prepared::new(&spec, &base);
        let y: Vec<u8> = data.flags.iter().map(|f| f[FAT] as u8).collect();
        let score = |x: &[Vec<f64>]| {
            let m = cv_ensemble_fit(&pick(x, &data.train, true), &pick(&y, &data.train, true), clf.folds, seed, clf.l2_c).unwrap();
            auc(&m.predict(&pick(x, &data.train, false)), &pick(&y, &data.train, false)).unwrap()
        };
        let h32 = score(&data.h_scaled);
        let mut hd = [0.0; 2];
        for (k, kappa) in [0.0, 1.0].into_iter().enumerate() {
            let model = data.fit(VaeConfig { kappa, ..base.clone() });
            let d = model.extract_dlr(&data.samples).unwrap();
            let joined: Vec<Vec<f64>> = data.h_scaled.iter().zip(&d).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
            hd[k] = score(&joined);
        }
        println!("     seed {seed}: H32 {h32:.4}, HD64 {:.4}, HD64-MI {:.4}", hd[0], hd[1]);
        cells.push([h32, hd[0], hd[1]]);
    }
    let med = |k: usize| median(&cells.iter().map(|c| c[k]).collect::<Vec<_>>());
    let (h32, hd, hdmi) = (med(0), med(1), med(2));
    outcome(
        hdmi >= h32 + 0.02 && hdmi >= hd,
        format!(
            "median AUC H32 {:.2}, HD64 {:.2}, HD64-MI {:.2} (needs HD64-MI >= H32 + 2 and >= HD64)",
            100.0 * h32,
            100.0 * hd,
            100.0 * hdmi
        ),
    )
}

// 9

/// AUC as the share of positive/negative pairs ordered correctly, ties half.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                den += 1.0;
                num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    num / den
}

fn evaluation_stack() -> Outcome {
    // every labeling of 2..=6 subjects with scores drawn from three levels
    let levels = [0.0, 0.5, 1.0];
    let (mut cases, mut mismatches) = (0usize, 0usize);
    for n in 2..=6usize {
        for lab in 0..(1u32 << n) {
            let labels: Vec<u8> = (0..n).map(|i| ((lab >> i) & 1) as u8).collect();
            if labels.iter().all(|&l| l == labels[0]) {
                continue;
            }
            for code in 0..3usize.pow(n as u32) {
                let scores: Vec<f64> = (0..n).map(|i| levels[code / 3usize.pow(i as u32) % 3]).collect();
                cases += 1;
                if auc(&scores, &labels).unwrap() != pairwise_auc(&scores, &labels) {
                    mismatches += 1;
                }
            }
        }
    }

    let mut r = rng(77);
    let labels: Vec<u8> = (0..200).map(|i| (i % 3 == 0) as u8).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| l as f64 * 0.8 + r.sample::<f64, _>(StandardNormal))
        .collect();
    let point = auc(&scores, &labels).unwrap();
    let (boot_mean, _) = bootstrap_auc(&scores, &labels, 10_000, 5).unwrap();
    let boot_gap = (boot_mean - point).abs();

    // DLR features ranked all first, then all last
    let dlr_first: Vec<bool> = (0..64).map(|i| i < 32).collect();
    let hcr_first: Vec<bool> = (0..64).map(|i| i >= 32).collect();
    let extremes = dlr_curve(&dlr_first)
        .iter()
        .zip(dlr_curve(&hcr_first))
        .all(|(p, q)| p.count == p.k.min(32) && q.count == q.k.saturating_sub(32) && p.extreme_hi == p.count && q.extreme_lo == q.count);
    outcome(
        mismatches == 0 && boot_gap <= 0.005 && extremes,
        format!(
            "{cases} exhaustive cases, {mismatches} mismatches; bootstrap mean {:.2} vs point {:.2}; curve extremes exact: {extremes}",
            100.0 * boot_mean,
            100.0 * point
        ),
    )
}

// 10

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut cfg = RunConfig::default().with_seed(3);
    cfg.cohort.n_subjects = 40;
    cfg.vae.vae_epochs = 10;
    cfg.classifier.n_boot = 500;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&Workspace::new(a.path()), &cfg).unwrap();
    run_all(&Workspace::new(b.path()), &cfg).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    let differing: Vec<String> = fa
        .iter()
        .filter(|p| fs::read(a.path().join(p)).ok() != fs::read(b.path().join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    outcome(
        fa == fb && !fa.is_empty() && differing.is_empty(),
        format!("{} CSV files compared, differing: {differing:?}", fa.len()),
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    results.push(run(1, "autodiff correctness", autodiff_correctness));
    results.push(run(2, "closed-form KL", closed_form_kl));
    results.push(run(3, "MI estimator calibration", mi_calibration));
    results.push(run(4, "HCR oracle suite", hcr_oracles));
    results.push(run(5, "schedule fidelity", schedule_fidelity));

    let start = Instant::now();
    let runs = catch_unwind(desk_cohort_runs).ok();
    let elapsed = start.elapsed();
    results.push(run(6, "disentanglement direction", || disentanglement(runs.as_deref().unwrap(), elapsed)));
    results.push(run(7, "combination benefit direction", combination_benefit));
    results.push(run(8, "reconstruction neutrality", || reconstruction_neutrality(runs.as_deref().unwrap())));
    results.push(run(9, "evaluation stack", evaluation_stack));
    results.push(run(10, "determinism", determinism));

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
