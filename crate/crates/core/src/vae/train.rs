//! Alternating VAE / discriminator training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::augment::random_augment;
use super::config::MiCode;
use super::mi::{build_mi_batch, disc_accuracy, train_discriminator};
use super::model::{objective, Batch, Sample};
use super::VaeModel;
use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::{Error, Result};

/// One row of the loss trace. Values are per-subject means over the epoch;
/// `mi` is the batch-size weighted mean of the per-batch estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub mi: f64,
    pub total: f64,
}

/// Parameter digests around one VAE epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeEpochRecord {
    pub epoch: usize,
    pub vae_before: String,
    pub vae_after: String,
    pub disc_before: String,
    pub disc_after: String,
}

/// Parameter digests and losses around one discriminator phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscPhase {
    /// VAE epoch after which the phase ran.
    pub after_epoch: usize,
    pub epochs: usize,
    pub vae_before: String,
    pub vae_after: String,
    pub disc_before: String,
    pub disc_after: String,
    pub bce_first: Option<f64>,
    pub bce_last: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub epochs: Vec<VaeEpochRecord>,
    pub phases: Vec<DiscPhase>,
}

fn normal_draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Latent codes for every subject with the encoder held fixed.
fn latent_codes(model: &VaeModel, samples: &[Sample], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let (mu, sigma) = model.posterior_batch(&refs)?;
    if model.config.mi_code == MiCode::Mean {
        return Ok(mu);
    }
    Ok(mu
        .into_iter()
        .zip(sigma)
        .map(|(m, s)| {
            let eps = normal_draws(rng, m.len());
            m.iter().zip(&s).zip(eps).map(|((m, s), e)| m + s * e).collect()
        })
        .collect())
}

impl VaeModel {
    /// Runs `cfg.vae_epochs` VAE epochs; after every `disc_period`-th epoch
    /// the discriminator trains for `disc_epochs` full-batch steps with the
    /// encoder and decoder frozen.
    pub fn train(&mut self, samples: &[Sample], hcr: &[Vec<f64>]) -> Result<TrainReport> {
        let cfg = self.config.clone();
        let n = samples.len();
        if n < 2 || hcr.len() != n {
            return Err(Error::invalid(format!(
                "training needs at least 2 subjects with aligned HCR rows, got {n} and {}",
                hcr.len()
            )));
        }
        if hcr.iter().any(|r| r.len() != cfg.hcr_dim) {
            return Err(Error::invalid(format!("HCR rows must have {} columns", cfg.hcr_dim)));
        }
        let v = cfg.voxels();
        if samples.iter().any(|s| s.x.len() != v || s.mask.len() != v) {
            return Err(Error::invalid(format!("grid mismatch: samples must have {v} voxels")));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let vae_adam = AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        };
        let mut adam_enc = Adam::new(&self.enc, vae_adam);
        let mut adam_dec = Adam::new(&self.dec, vae_adam);
        let mut adam_disc = Adam::new(
            &self.disc,
            AdamConfig {
                lr: cfg.disc_lr,
                ..Default::default()
            },
        );

        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 1..=cfg.vae_epochs {
            let vae_before = self.vae_digest();
            let disc_before = self.disc.digest();
            order.shuffle(&mut rng);
            let (mut nll_sum, mut kl_sum, mut mi_sum) = (0.0, 0.0, 0.0);
            for chunk in order.chunks(cfg.vae_batch) {
                let aug: Vec<Sample> = chunk
                    .iter()
                    .map(|&i| random_augment(&samples[i], cfg.grid, &cfg.augment, &mut rng))
                    .collect();
                let refs: Vec<&Sample> = aug.iter().collect();
                let hrows: Vec<&[f64]> = chunk.iter().map(|&i| hcr[i].as_slice()).collect();
                let batch = Batch::new(&refs, &hrows)?;
                let eps = normal_draws(&mut rng, chunk.len() * cfg.dlr_dim);

                let mut tape = Tape::new();
                let enc = self.enc.bind(&mut tape, true);
                let dec = self.dec.bind(&mut tape, true);
                let disc = self.disc.bind(&mut tape, false);
                let obj = objective(&mut tape, &cfg, &self.arch, &enc, &dec, &disc, &batch, &eps)?;
                let total = tape.value(obj.total).item();
                if !total.is_finite() {
                    return Err(Error::Diverged { epoch, value: total });
                }
                nll_sum += tape.value(obj.nll).item();
                kl_sum += tape.value(obj.kl).item();
                mi_sum += tape.value(obj.mi).item() * chunk.len() as f64;
                let grads = tape.backward(obj.total)?;
                adam_enc.step(&mut self.enc, &enc, &grads)?;
                adam_dec.step(&mut self.dec, &dec, &grads)?;
            }
            let nf = n as f64;
            let row = TraceRow {
                epoch,
                nll: nll_sum / nf,
                kl: kl_sum / nf,
                mi: mi_sum / nf,
                total: (nll_sum + kl_sum) / nf + cfg.kappa * mi_sum / nf,
            };
            log::info!(
                "epoch {epoch}: nll {:.4} kl {:.4} mi {:.4} total {:.4}",
                row.nll,
                row.kl,
                row.mi,
                row.total
            );
            report.trace.push(row);
            report.epochs.push(VaeEpochRecord {
                epoch,
                vae_before,
                vae_after: self.vae_digest(),
                disc_before,
                disc_after: self.disc.digest(),
            });
            self.state.epochs_done = epoch;
            self.state.vae_steps = adam_enc.step;

            if epoch % cfg.disc_period == 0 {
                let vae_before = self.vae_digest();
                let disc_before = self.disc.digest();
                let codes = latent_codes(self, samples, &mut rng)?;
                // A fresh product pairing every epoch keeps the discriminator
                // from memorizing one derangement of a small cohort.
                let mut batch = build_mi_batch(hcr, &codes, &mut rng)?;
                let mut losses = Vec::with_capacity(cfg.disc_epochs);
                for e in 0..cfg.disc_epochs {
                    if e > 0 {
                        batch = build_mi_batch(hcr, &codes, &mut rng)?;
                    }
                    losses.extend(train_discriminator(&batch, &mut self.disc, &mut adam_disc, 1)?);
                }
                let accuracy = disc_accuracy(&batch, &self.disc)?;
                log::info!(
                    "disc phase after epoch {epoch}: bce {:?} -> {:?}, accuracy {accuracy:.3}",
                    losses.first(),
                    losses.last()
                );
                report.phases.push(DiscPhase {
                    after_epoch: epoch,
                    epochs: losses.len(),
                    vae_before,
                    vae_after: self.vae_digest(),
                    disc_before,
                    disc_after: self.disc.digest(),
                    bce_first: losses.first().copied(),
                    bce_last: losses.last().copied(),
                    accuracy,
                });
                self.state.disc_phases_done += 1;
                self.state.disc_steps = adam_disc.step;
            }
        }
        Ok(report)
    }
}
