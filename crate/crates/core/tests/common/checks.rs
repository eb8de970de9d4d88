//! Checks shared by the per-module suites and the acceptance target.

use std::collections::BTreeMap;

use super::{max_rel_error, micro_config, random_rows, random_samples, random_tensor, rng, weighted_sum};
use radmi::autodiff::{Adam, AdamConfig, ParamSet, Tape, Tensor, Var};
use radmi::vae::{build_mi_batch, mi_estimate, new_discriminator, objective, train_discriminator, Batch, VaeConfig, VaeModel};
use rand::Rng;
use rand_distr::StandardNormal;

pub const GRAD_H: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-3;

fn params(entries: Vec<(&str, Tensor)>) -> ParamSet {
    let mut p = ParamSet::new();
    for (k, t) in entries {
        p.insert(k, t).unwrap();
    }
    p
}

/// Values bounded away from zero, to keep ReLU kinks out of the stencil.
fn away_from_zero(seed: u64, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(&mut rng(seed), shape, 0.1, 1.0);
    let mut r = rng(seed + 100);
    for v in &mut t.data {
        if r.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

type Build = Box<dyn Fn(&mut Tape, &BTreeMap<String, Var>) -> Var>;

/// Worst relative gradient error of every tape op for one seed, by name.
pub fn op_errors(s: u64) -> Vec<(String, f64)> {
    let mut r = rng(s);
    let mut out = Vec::new();
    let mut check = |name: String, p: &ParamSet, f: &dyn Fn(&mut Tape, &BTreeMap<String, Var>) -> Var| {
        out.push((name, max_rel_error(p, GRAD_H, f)));
    };

    let p = params(vec![
        ("x", random_tensor(&mut r, &[3, 4], -1.0, 1.0)),
        ("w", random_tensor(&mut r, &[4, 2], -1.0, 1.0)),
        ("b", random_tensor(&mut r, &[2], -1.0, 1.0)),
        ("w1", random_tensor(&mut r, &[4, 1], -1.0, 1.0)),
        ("b1", random_tensor(&mut r, &[1], -1.0, 1.0)),
    ]);
    check("affine".into(), &p, &|t, v| {
        let y = t.affine(v["x"], v["w"], v["b"]).unwrap();
        weighted_sum(t, y, s)
    });
    check("affine (one column)".into(), &p, &|t, v| {
        let y = t.affine(v["x"], v["w1"], v["b1"]).unwrap();
        weighted_sum(t, y, s)
    });

    let p = params(vec![
        ("x", random_tensor(&mut r, &[2, 2, 5, 4, 3], -1.0, 1.0)),
        ("k", random_tensor(&mut r, &[3, 2, 3, 3, 3], -1.0, 1.0)),
        ("b", random_tensor(&mut r, &[3], -1.0, 1.0)),
    ]);
    for (stride, pad) in [(1, 1), (2, 1), (2, 0)] {
        check(format!("conv3d stride {stride} pad {pad}"), &p, &|t, v| {
            let y = t.conv3d(v["x"], v["k"], v["b"], stride, pad).unwrap();
            weighted_sum(t, y, s)
        });
    }

    let p = params(vec![
        ("x", random_tensor(&mut r, &[2, 2, 3, 2, 2], -1.0, 1.0)),
        ("k", random_tensor(&mut r, &[2, 3, 3, 3, 3], -1.0, 1.0)),
        ("b", random_tensor(&mut r, &[3], -1.0, 1.0)),
    ]);
    for op in [[0, 0, 0], [1, 0, 1]] {
        check(format!("conv_transpose3d output padding {op:?}"), &p, &|t, v| {
            let y = t.conv_transpose3d(v["x"], v["k"], v["b"], 2, 1, op).unwrap();
            weighted_sum(t, y, s)
        });
    }

    let p = params(vec![
        ("a", away_from_zero(s, &[2, 3])),
        ("b", random_tensor(&mut r, &[2, 3], -1.0, 1.0)),
        ("pos", random_tensor(&mut r, &[2, 3], 0.5, 2.0)),
    ]);
    let elementwise: Vec<(&str, Build)> = vec![
        ("relu", Box::new(|t, v| t.relu(v["a"]))),
        ("sigmoid", Box::new(|t, v| t.sigmoid(v["b"]))),
        ("exp", Box::new(|t, v| t.exp(v["b"]))),
        ("log", Box::new(|t, v| t.log(v["pos"]))),
        ("add", Box::new(|t, v| t.add(v["a"], v["b"]).unwrap())),
        ("sub", Box::new(|t, v| t.sub(v["a"], v["b"]).unwrap())),
        ("mul", Box::new(|t, v| t.mul(v["a"], v["b"]).unwrap())),
        ("scale_shift", Box::new(|t, v| t.scale_shift(v["b"], -2.5, 0.3))),
        ("clamp", Box::new(|t, v| t.clamp(v["b"], -0.5, 0.5))),
        ("reshape", Box::new(|t, v| t.reshape(v["b"], &[3, 2]).unwrap())),
        ("concat_cols", Box::new(|t, v| t.concat_cols(v["a"], v["b"]).unwrap())),
    ];
    for (name, f) in &elementwise {
        check((*name).into(), &p, &|t, v| {
            let y = f(t, v);
            weighted_sum(t, y, s)
        });
    }

    let p = params(vec![("x", random_tensor(&mut r, &[4, 3], -1.0, 1.0))]);
    check("sum".into(), &p, &|t, v| {
        let sq = t.mul(v["x"], v["x"]).unwrap();
        t.sum(sq)
    });
    check("mean".into(), &p, &|t, v| {
        let e = t.exp(v["x"]);
        t.mean(e)
    });

    let eps = random_tensor(&mut r, &[2, 3], -2.0, 2.0);
    let p = params(vec![
        ("mu", random_tensor(&mut r, &[2, 3], -1.0, 1.0)),
        ("sigma", random_tensor(&mut r, &[2, 3], 0.2, 1.5)),
    ]);
    check("gaussian_sample".into(), &p, &|t, v| {
        let y = t.gaussian_sample(v["mu"], v["sigma"], &eps.data).unwrap();
        weighted_sum(t, y, s)
    });

    let targets: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    let p = params(vec![("z", random_tensor(&mut r, &[6, 1], -3.0, 3.0))]);
    check("bce_with_logits".into(), &p, &|t, v| t.bce_with_logits(v["z"], &targets).unwrap());
    out
}

fn prefixed(groups: &[(&str, &ParamSet)]) -> ParamSet {
    let mut all = ParamSet::new();
    for (g, p) in groups {
        for (k, t) in p.iter() {
            all.insert(format!("{g}/{k}"), t.clone()).unwrap();
        }
    }
    all
}

fn group(bound: &BTreeMap<String, Var>, name: &str) -> BTreeMap<String, Var> {
    let prefix = format!("{name}/");
    bound
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), *v)))
        .collect()
}

/// Worst relative error of the full VAE + MI objective on the 4x4x2 micro
/// model, over encoder, decoder and discriminator parameters at once.
pub fn full_objective_error(seed: u64) -> f64 {
    let cfg = VaeConfig { seed, ..micro_config() };
    let model = VaeModel::new(cfg.clone()).unwrap();
    let mut r = rng(100 + seed);
    let samples = random_samples(&mut r, &cfg, 3);
    let h = random_rows(&mut r, 3, cfg.hcr_dim);
    let refs: Vec<_> = samples.iter().collect();
    let hrefs: Vec<&[f64]> = h.iter().map(Vec::as_slice).collect();
    let batch = Batch::new(&refs, &hrefs).unwrap();
    let eps: Vec<f64> = (0..3 * cfg.dlr_dim).map(|_| r.sample(StandardNormal)).collect();
    let params = prefixed(&[("enc", &model.enc), ("dec", &model.dec), ("disc", &model.disc)]);
    max_rel_error(&params, GRAD_H, |tape, b| {
        let (enc, dec, disc) = (group(b, "enc"), group(b, "dec"), group(b, "disc"));
        objective(tape, &cfg, &model.arch, &enc, &dec, &disc, &batch, &eps).unwrap().total
    })
}

/// MI estimate for a bivariate Gaussian with correlation `rho`: 5000 seeded
/// samples, a 128-unit discriminator trained full-batch for 300 epochs at
/// the default discriminator lr with a fresh product pairing each epoch,
/// scored on a new pairing.
pub fn calibration_estimate(rho: f64) -> f64 {
    let n = 5000;
    let mut r = rng(11);
    let (mut h, mut d) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        h.push(vec![a]);
        d.push(vec![rho * a + (1.0 - rho * rho).sqrt() * b]);
    }
    let mut disc = new_discriminator(2, 128, 5);
    let mut adam = Adam::new(
        &disc,
        AdamConfig {
            lr: VaeConfig::default().disc_lr,
            ..AdamConfig::default()
        },
    );
    for _ in 0..300 {
        let batch = build_mi_batch(&h, &d, &mut r).unwrap();
        train_discriminator(&batch, &mut disc, &mut adam, 1).unwrap();
    }
    let batch = build_mi_batch(&h, &d, &mut r).unwrap();
    mi_estimate(&batch.joint, &disc).unwrap()
}
