//! VAE over masked volumes conditioned on HCR, with a discriminator-based
//! MI penalty between the HCR and the latent code.

mod augment;
mod config;
mod mi;
mod model;
mod train;

pub use augment::{random_augment, transform};
pub use config::{AugmentConfig, EncoderFamily, MiCode, VaeConfig};
pub use mi::{
    build_mi_batch, derangement, disc_accuracy, disc_probabilities, mi_estimate, new_discriminator,
    train_discriminator, MiBatch,
};
pub use model::{
    decode, disc_logits, encode, init_params, kl_closed_form, masked_nll, mi_term, objective, Architecture, Batch,
    Bound, Objective, Sample, D_CLAMP,
};
pub use train::{DiscPhase, TraceRow, TrainReport, VaeEpochRecord};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{load_checkpoint, save_checkpoint, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Training progress stored alongside the parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleState {
    pub epochs_done: usize,
    pub disc_phases_done: usize,
    pub vae_steps: u64,
    pub disc_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub arch: Architecture,
    pub enc: ParamSet,
    pub dec: ParamSet,
    pub disc: ParamSet,
    pub state: ScheduleState,
}

impl VaeModel {
    pub fn new(config: VaeConfig) -> Result<Self> {
        let arch = Architecture::from_config(&config)?;
        let (enc, dec, disc) = init_params(&config, &arch);
        Ok(Self {
            config,
            arch,
            enc,
            dec,
            disc,
            state: ScheduleState::default(),
        })
    }

    /// Digest over encoder and decoder parameters.
    pub fn vae_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.enc.digest());
        h.update(self.dec.digest());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.enc.num_scalars() + self.dec.num_scalars() + self.disc.num_scalars()
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        let v = self.config.voxels();
        if s.x.len() != v || s.mask.len() != v {
            return Err(Error::invalid(format!(
                "grid mismatch: sample has {} voxels, model grid {:?} has {v}",
                s.x.len(),
                self.config.grid
            )));
        }
        Ok(())
    }

    /// Posterior means and standard deviations for a batch of subjects.
    pub fn posterior_batch(&self, samples: &[&Sample]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        for s in samples {
            self.check_sample(s)?;
        }
        let v = self.config.voxels();
        let data = samples.iter().flat_map(|s| s.x.iter().copied()).collect();
        let mut tape = Tape::new();
        let enc = self.enc.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(vec![samples.len(), v], data)?);
        let (mu, ls) = encode(&mut tape, &self.config, &self.arch, &enc, x)?;
        let nd = self.config.dlr_dim;
        let rows = |t: &Tensor, f: fn(f64) -> f64| t.data.chunks(nd).map(|r| r.iter().map(|&v| f(v)).collect()).collect();
        Ok((rows(tape.value(mu), |v| v), rows(tape.value(ls), f64::exp)))
    }

    pub fn encode(&self, sample: &Sample) -> Result<LatentPosterior> {
        let (mut mu, mut sigma) = self.posterior_batch(&[sample])?;
        Ok(LatentPosterior {
            mu: mu.pop().expect("one row"),
            sigma: sigma.pop().expect("one row"),
        })
    }

    /// Decoder output for condition `[h, d]`, in volume order.
    pub fn decode(&self, h: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let (nh, nd) = (self.config.hcr_dim, self.config.dlr_dim);
        if h.len() != nh || d.len() != nd {
            return Err(Error::invalid(format!(
                "decode expects |h| = {nh} and |d| = {nd}, got {} and {}",
                h.len(),
                d.len()
            )));
        }
        let mut tape = Tape::new();
        let dec = self.dec.bind(&mut tape, false);
        let hd = tape.constant(Tensor::new(vec![1, nh + nd], h.iter().chain(d).copied().collect())?);
        let r = decode(&mut tape, &self.config, &self.arch, &dec, hd)?;
        Ok(tape.value(r).data.clone())
    }

    /// Posterior means, one row per subject, computed in parallel.
    pub fn extract_dlr(&self, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        samples.par_iter().map(|s| self.encode(s).map(|p| p.mu)).collect()
    }

    /// Reconstruction from `[h, mu(x)]`.
    pub fn reconstruct(&self, sample: &Sample, h: &[f64]) -> Result<Vec<f64>> {
        let post = self.encode(sample)?;
        self.decode(h, &post.mu)
    }

    /// Mean and population std over subjects of the in-mask mean squared
    /// error.
    pub fn reconstruction_error(&self, samples: &[Sample], hcr: &[Vec<f64>]) -> Result<(f64, f64)> {
        if hcr.len() != samples.len() {
            return Err(Error::invalid("samples and HCR rows are not aligned"));
        }
        let per: Vec<Vec<f64>> = samples
            .par_iter()
            .zip(hcr)
            .map(|(s, h)| self.reconstruct(s, h))
            .collect::<Result<_>>()?;
        reconstruction_error_with(samples, |i, _| per[i].clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config).map_err(|e| Error::json(path, e))?;
        let state = serde_json::to_value(self.state).map_err(|e| Error::json(path, e))?;
        save_checkpoint(path, config, state, &[("enc", &self.enc), ("dec", &self.dec), ("disc", &self.disc)])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut groups) = load_checkpoint(path)?;
        let config: VaeConfig = serde_json::from_value(header.config).map_err(|e| Error::json(path, e))?;
        let state: ScheduleState = serde_json::from_value(header.state).map_err(|e| Error::json(path, e))?;
        let mut model = Self::new(config)?;
        for (name, slot) in [("enc", &mut model.enc), ("dec", &mut model.dec), ("disc", &mut model.disc)] {
            let loaded = groups.remove(name).unwrap_or_default();
            let same_layout = loaded.len() == slot.len()
                && loaded
                    .iter()
                    .all(|(k, t)| slot.get(k).is_some_and(|s| s.shape == t.shape));
            if !same_layout {
                return Err(Error::Bundle {
                    path: path.to_path_buf(),
                    reason: format!("parameter group {name:?} does not match the embedded config"),
                });
            }
            *slot = loaded;
        }
        model.state = state;
        Ok(model)
    }
}

/// Per-subject in-mask MSE of `recon(i, sample)` against `sample.x`,
/// aggregated as (mean, population std).
pub fn reconstruction_error_with(samples: &[Sample], recon: impl Fn(usize, &Sample) -> Vec<f64>) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("no subjects"));
    }
    let mut errs = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let r = recon(i, s);
        let n: f64 = s.mask.iter().sum();
        if n == 0.0 {
            return Err(Error::EmptyMask);
        }
        let sse: f64 = s
            .x
            .iter()
            .zip(&r)
            .zip(&s.mask)
            .map(|((a, b), m)| m * (a - b) * (a - b))
            .sum();
        errs.push(sse / n);
    }
    Ok((crate::stats::mean(&errs), crate::stats::variance(&errs).sqrt()))
}
