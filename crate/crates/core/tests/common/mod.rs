#![allow(dead_code)]

pub mod checks;
pub mod phantoms;

use radmi::autodiff::{ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Worst relative error between tape gradients and central differences
/// (step `h`) over every scalar in `params`.
pub fn max_rel_error<F>(params: &ParamSet, h: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Var,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = build(&mut tape, &bound);
    let grads = tape.backward(loss).unwrap();

    let eval = |p: &ParamSet| {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false);
        let loss = build(&mut tape, &bound);
        tape.value(loss).item()
    };

    let mut worst: f64 = 0.0;
    for (name, t) in params.iter() {
        let analytic = grads.get(bound[name], t);
        for i in 0..t.len() {
            let mut p = params.clone();
            p.get_mut(name).unwrap().data[i] += h;
            let up = eval(&p);
            p.get_mut(name).unwrap().data[i] -= 2.0 * h;
            let down = eval(&p);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// `sum(y * w)` for a fixed random weight tensor, so every output element
/// carries a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.value(y).shape.clone();
    let w = random_tensor(&mut rng(seed ^ 0x5eed), &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

/// A model small enough for finite differences: 4x4x2 grid, N_h = 3,
/// N_d = 2, one conv block.
pub fn micro_config() -> radmi::vae::VaeConfig {
    radmi::vae::VaeConfig {
        grid: [4, 4, 2],
        hcr_dim: 3,
        dlr_dim: 2,
        base_channels: 2,
        conv_depth: Some(1),
        disc_hidden: 4,
        vae_batch: 4,
        augment: radmi::vae::AugmentConfig {
            enabled: false,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Random masked samples with at least one foreground voxel each.
pub fn random_samples(rng: &mut ChaCha8Rng, cfg: &radmi::vae::VaeConfig, n: usize) -> Vec<radmi::vae::Sample> {
    let v = cfg.voxels();
    (0..n)
        .map(|_| {
            let mut mask: Vec<f64> = (0..v).map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 }).collect();
            mask[rng.random_range(0..v)] = 1.0;
            let x = mask.iter().map(|m| m * rng.random_range(-2.0..2.0)).collect();
            radmi::vae::Sample { x, mask }
        })
        .collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..width).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect()
}

/// The 64-phantom desk cohort on the default 24x16x8 grid as VAE samples,
/// with HCR standardized on the train split.
pub fn smoke_cohort(cfg: &radmi::vae::VaeConfig) -> (Vec<radmi::vae::Sample>, Vec<Vec<f64>>) {
    use radmi::manifest::Split;
    let spec = radmi::synth::CohortSpec {
        n_subjects: 64,
        seed: 7,
        ..Default::default()
    };
    let cohort = radmi::synth::generate_in_memory(&spec).unwrap();
    let volumes: Vec<_> = cohort.iter().map(|c| c.0.clone()).collect();
    let fit: Vec<bool> = cohort.iter().map(|c| c.2 == Split::Train).collect();
    let (pre, _) = radmi::pipeline::preprocess_cohort(&volumes, &fit, &Default::default()).unwrap();
    let h = radmi::pipeline::hcr_matrix(&pre, radmi::pipeline::default_bin_width()).unwrap();
    let train: Vec<Vec<f64>> = h.iter().zip(&fit).filter(|(_, f)| **f).map(|(r, _)| r.clone()).collect();
    let scaler = radmi::hcr::HcrScaler::fit(&train, &radmi::hcr::HCR_NAMES).unwrap();
    let samples = pre.iter().map(|m| radmi::vae::Sample::from_masked(m, cfg).unwrap()).collect();
    (samples, scaler.apply_all(&h).unwrap())
}
