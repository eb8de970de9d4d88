//! Density-ratio MI estimation between HCR and DLR codes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{disc_logits, mi_term};
use crate::autodiff::{Adam, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};

/// Joint rows `[h_i, d_i]` and product rows `[h_k, d_i]` with `k != i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiBatch {
    pub joint: Tensor,
    pub product: Tensor,
    /// `pairing[i]` is the HCR row paired with DLR row `i` in `product`.
    pub pairing: Vec<usize>,
}

impl MiBatch {
    pub fn len(&self) -> usize {
        self.joint.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Joint rows then product rows, with labels 1 and 0.
    pub fn stacked(&self) -> (Tensor, Vec<f64>) {
        let n = self.len();
        let mut data = self.joint.data.clone();
        data.extend_from_slice(&self.product.data);
        let labels = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
        (
            Tensor {
                shape: vec![2 * n, self.joint.shape[1]],
                data,
            },
            labels,
        )
    }
}

/// Uniformly random permutation of `0..n` without fixed points, by
/// rejection. Needs `n >= 2`.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(n >= 2, "no derangement of {n} elements");
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

fn rows_to_tensor(rows: impl Iterator<Item = Vec<f64>>, n: usize, width: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.flatten().collect();
    Tensor::new(vec![n, width], data)
}

pub fn build_mi_batch(h: &[Vec<f64>], d: &[Vec<f64>], rng: &mut impl Rng) -> Result<MiBatch> {
    let n = h.len();
    if n < 2 || d.len() != n {
        return Err(Error::invalid(format!(
            "MI batch needs at least 2 aligned rows, got {} HCR and {} DLR",
            n,
            d.len()
        )));
    }
    let width = h[0].len() + d[0].len();
    if h.iter().any(|r| r.len() != h[0].len()) || d.iter().any(|r| r.len() != d[0].len()) {
        return Err(Error::invalid("ragged HCR or DLR rows"));
    }
    let cat = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().collect::<Vec<_>>();
    let pairing = derangement(n, rng);
    let joint = rows_to_tensor((0..n).map(|i| cat(&h[i], &d[i])), n, width)?;
    let product = rows_to_tensor((0..n).map(|i| cat(&h[pairing[i]], &d[i])), n, width)?;
    Ok(MiBatch {
        joint,
        product,
        pairing,
    })
}

/// Fresh two-layer discriminator for `input` features.
pub fn new_discriminator(input: usize, hidden: usize, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let mut lin = |name: &str, fan_in: usize, fan_out: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor {
                shape,
                data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            }
        };
        let w = draw(vec![fan_in, fan_out]);
        let b = draw(vec![fan_out]);
        p.insert(format!("{name}.w"), w).expect("unique");
        p.insert(format!("{name}.b"), b).expect("unique");
    };
    lin("fc1", input, hidden);
    lin("fc2", hidden, 1);
    p
}

/// Full-batch BCE training. Returns the loss before each update.
pub fn train_discriminator(batch: &MiBatch, disc: &mut ParamSet, adam: &mut Adam, epochs: usize) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty MI batch"));
    }
    let (rows, labels) = batch.stacked();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape, true);
        let x = tape.constant(rows.clone());
        let z = disc_logits(&mut tape, &bound, x)?;
        let loss = tape.bce_with_logits(z, &labels)?;
        let l = tape.value(loss).item();
        if !l.is_finite() {
            return Err(Error::Diverged {
                epoch: losses.len(),
                value: l,
            });
        }
        losses.push(l);
        let grads = tape.backward(loss)?;
        adam.step(disc, &bound, &grads)?;
    }
    Ok(losses)
}

/// Discriminator probabilities for each row.
pub fn disc_probabilities(rows: &Tensor, disc: &ParamSet) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape, false);
    let x = tape.constant(rows.clone());
    let z = disc_logits(&mut tape, &bound, x)?;
    let p = tape.sigmoid(z);
    Ok(tape.value(p).data.clone())
}

/// Fraction of joint and product rows classified on the correct side of 0.5.
pub fn disc_accuracy(batch: &MiBatch, disc: &ParamSet) -> Result<f64> {
    let (rows, labels) = batch.stacked();
    let p = disc_probabilities(&rows, disc)?;
    let correct = p.iter().zip(&labels).filter(|(&p, &y)| (p > 0.5) == (y == 1.0)).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// `mean_i ReLU(logit(clamp(D(h_i, d_i))))` over joint rows.
pub fn mi_estimate(joint: &Tensor, disc: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape, false);
    let x = tape.constant(joint.clone());
    let mi = mi_term(&mut tape, &bound, x)?;
    Ok(tape.value(mi).item())
}
