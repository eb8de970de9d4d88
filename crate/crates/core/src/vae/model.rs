//! Encoder, decoder and discriminator networks and the training objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderFamily, MiCode, VaeConfig};
use crate::autodiff::{conv_output_dims, ConvSpec, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume::MaskedVolume;

pub type Bound = BTreeMap<String, Var>;

const LADDER: ConvSpec = ConvSpec {
    kernel: 3,
    stride: 2,
    padding: 1,
};

/// Discriminator outputs are clamped to `[D_CLAMP, 1 - D_CLAMP]` before the
/// logit is taken.
pub const D_CLAMP: f64 = 1e-6;

/// Layer shapes derived from a [`VaeConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub family: EncoderFamily,
    /// `(C, D, H, W)` per level; entry 0 is the single-channel input.
    pub levels: Vec<[usize; 4]>,
    /// Flattened encoder feature size feeding the posterior heads.
    pub bottleneck: usize,
    /// Pooled grid `[D, H, W]` for the fully connected family.
    pub pooled: [usize; 3],
}

impl Architecture {
    pub fn from_config(cfg: &VaeConfig) -> Result<Self> {
        cfg.validate()?;
        let spatial = cfg.spatial();
        let mut levels = vec![[1, spatial[0], spatial[1], spatial[2]]];
        match cfg.encoder {
            EncoderFamily::Conv3d => {
                let mut channels = cfg.base_channels;
                loop {
                    let last = *levels.last().expect("nonempty");
                    let depth = levels.len() - 1;
                    let size: usize = last.iter().product();
                    let done = match cfg.conv_depth {
                        Some(d) => depth == d,
                        None => depth >= 1 && (size <= cfg.max_bottleneck || last[1..].iter().all(|&d| d == 1)),
                    };
                    if done {
                        break;
                    }
                    let next = conv_output_dims([last[1], last[2], last[3]], LADDER)
                        .ok_or_else(|| Error::Config("grid too small for the conv ladder".into()))?;
                    levels.push([channels, next[0], next[1], next[2]]);
                    channels *= 2;
                }
                let bottleneck = levels.last().expect("nonempty").iter().product();
                Ok(Self {
                    family: cfg.encoder,
                    levels,
                    bottleneck,
                    pooled: [0; 3],
                })
            }
            EncoderFamily::FullyConnected => {
                let pooled = spatial.map(|d| d.div_ceil(cfg.fc_pool));
                Ok(Self {
                    family: cfg.encoder,
                    levels,
                    bottleneck: cfg.fc_hidden,
                    pooled,
                })
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Output padding for the transposed conv that maps level `l` back to
    /// level `l - 1`, so decoder shapes retrace the encoder exactly.
    fn output_padding(&self, l: usize) -> [usize; 3] {
        let (small, big) = (self.levels[l], self.levels[l - 1]);
        let mut op = [0; 3];
        for a in 0..3 {
            let base = (small[a + 1] - 1) * LADDER.stride + LADDER.kernel - 2 * LADDER.padding;
            op[a] = big[a + 1] - base;
        }
        op
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    }
}

fn linear(p: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    p.insert(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], fan_in))
        .expect("unique");
    p.insert(format!("{name}.b"), uniform(rng, &[fan_out], fan_in)).expect("unique");
}

/// Randomly initialized encoder, decoder and discriminator parameters.
pub fn init_params(cfg: &VaeConfig, arch: &Architecture) -> (ParamSet, ParamSet, ParamSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut enc, mut dec, mut disc) = (ParamSet::new(), ParamSet::new(), ParamSet::new());
    let cond = cfg.hcr_dim + cfg.dlr_dim;
    match arch.family {
        EncoderFamily::Conv3d => {
            for l in 1..arch.levels.len() {
                let (cin, cout) = (arch.levels[l - 1][0], arch.levels[l][0]);
                let fan = cin * 27;
                enc.insert(format!("conv{l}.k"), uniform(&mut rng, &[cout, cin, 3, 3, 3], fan))
                    .expect("unique");
                enc.insert(format!("conv{l}.b"), uniform(&mut rng, &[cout], fan)).expect("unique");
            }
            linear(&mut dec, &mut rng, "fc", cond, arch.bottleneck);
            for l in (1..arch.levels.len()).rev() {
                let (cin, cout) = (arch.levels[l][0], arch.levels[l - 1][0]);
                let fan = cin * 27;
                dec.insert(format!("deconv{l}.k"), uniform(&mut rng, &[cin, cout, 3, 3, 3], fan))
                    .expect("unique");
                dec.insert(format!("deconv{l}.b"), uniform(&mut rng, &[cout], fan)).expect("unique");
            }
        }
        EncoderFamily::FullyConnected => {
            let pooled: usize = arch.pooled.iter().product();
            linear(&mut enc, &mut rng, "fc", pooled, arch.bottleneck);
            linear(&mut dec, &mut rng, "fc1", cond, arch.bottleneck);
            linear(&mut dec, &mut rng, "fc2", arch.bottleneck, cfg.voxels());
        }
    }
    linear(&mut enc, &mut rng, "mu", arch.bottleneck, cfg.dlr_dim);
    linear(&mut enc, &mut rng, "logsigma", arch.bottleneck, cfg.dlr_dim);
    linear(&mut disc, &mut rng, "fc1", cond, cfg.disc_hidden);
    linear(&mut disc, &mut rng, "fc2", cfg.disc_hidden, 1);
    (enc, dec, disc)
}

/// Average-pooling matrix `[V, V_pooled]` over blocks of `f` voxels per axis.
fn pool_matrix(spatial: [usize; 3], pooled: [usize; 3], f: usize) -> Tensor {
    let v: usize = spatial.iter().product();
    let vp: usize = pooled.iter().product();
    let mut counts = vec![0usize; vp];
    let mut target = Vec::with_capacity(v);
    for d in 0..spatial[0] {
        for h in 0..spatial[1] {
            for w in 0..spatial[2] {
                let j = ((d / f) * pooled[1] + h / f) * pooled[2] + w / f;
                counts[j] += 1;
                target.push(j);
            }
        }
    }
    let mut data = vec![0.0; v * vp];
    for (i, &j) in target.iter().enumerate() {
        data[i * vp + j] = 1.0 / counts[j] as f64;
    }
    Tensor {
        shape: vec![v, vp],
        data,
    }
}

/// Posterior heads `(mu, log_sigma)`, each `[B, N_d]`, for input `x` of
/// shape `[B, V]`.
pub fn encode(tape: &mut Tape, cfg: &VaeConfig, arch: &Architecture, enc: &Bound, x: Var) -> Result<(Var, Var)> {
    let b = tape.value(x).shape[0];
    let features = match arch.family {
        EncoderFamily::Conv3d => {
            let s = cfg.spatial();
            let mut cur = tape.reshape(x, &[b, 1, s[0], s[1], s[2]])?;
            for l in 1..arch.levels.len() {
                let y = tape.conv3d(cur, enc[&format!("conv{l}.k")], enc[&format!("conv{l}.b")], 2, 1)?;
                cur = tape.relu(y);
            }
            tape.reshape(cur, &[b, arch.bottleneck])?
        }
        EncoderFamily::FullyConnected => {
            let p = tape.constant(pool_matrix(cfg.spatial(), arch.pooled, cfg.fc_pool));
            let zero = tape.constant(Tensor::zeros(&[arch.pooled.iter().product()]));
            let pooled = tape.affine(x, p, zero)?;
            let hdn = tape.affine(pooled, enc["fc.w"], enc["fc.b"])?;
            tape.relu(hdn)
        }
    };
    let mu = tape.affine(features, enc["mu.w"], enc["mu.b"])?;
    let log_sigma = tape.affine(features, enc["logsigma.w"], enc["logsigma.b"])?;
    Ok((mu, log_sigma))
}

/// Reconstruction `[B, V]` from the condition `[h, d]` of shape `[B, N_h + N_d]`.
pub fn decode(tape: &mut Tape, cfg: &VaeConfig, arch: &Architecture, dec: &Bound, hd: Var) -> Result<Var> {
    let b = tape.value(hd).shape[0];
    match arch.family {
        EncoderFamily::Conv3d => {
            let z = tape.affine(hd, dec["fc.w"], dec["fc.b"])?;
            let z = tape.relu(z);
            let top = *arch.levels.last().expect("nonempty");
            let mut cur = tape.reshape(z, &[b, top[0], top[1], top[2], top[3]])?;
            for l in (1..arch.levels.len()).rev() {
                let op = arch.output_padding(l);
                let y = tape.conv_transpose3d(cur, dec[&format!("deconv{l}.k")], dec[&format!("deconv{l}.b")], 2, 1, op)?;
                cur = if l > 1 { tape.relu(y) } else { y };
            }
            tape.reshape(cur, &[b, cfg.voxels()])
        }
        EncoderFamily::FullyConnected => {
            let z = tape.affine(hd, dec["fc1.w"], dec["fc1.b"])?;
            let z = tape.relu(z);
            tape.affine(z, dec["fc2.w"], dec["fc2.b"])
        }
    }
}

/// Discriminator logits `[B, 1]` for rows `[h, d]`.
pub fn disc_logits(tape: &mut Tape, disc: &Bound, hd: Var) -> Result<Var> {
    let z = tape.affine(hd, disc["fc1.w"], disc["fc1.b"])?;
    let z = tape.relu(z);
    tape.affine(z, disc["fc2.w"], disc["fc2.b"])
}

/// `mean_i ReLU(logit(clamp(D_i)))` over the rows of `hd`.
pub fn mi_term(tape: &mut Tape, disc: &Bound, hd: Var) -> Result<Var> {
    let z = disc_logits(tape, disc, hd)?;
    let d = tape.sigmoid(z);
    let d = tape.clamp(d, D_CLAMP, 1.0 - D_CLAMP);
    let log_d = tape.log(d);
    let one_minus = tape.scale_shift(d, -1.0, 1.0);
    let log_1md = tape.log(one_minus);
    let logit = tape.sub(log_d, log_1md)?;
    let r = tape.relu(logit);
    Ok(tape.mean(r))
}

/// A preprocessed subject as flat arrays in volume order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Masked image `x * y`.
    pub x: Vec<f64>,
    pub mask: Vec<f64>,
}

impl Sample {
    pub fn from_masked(mv: &MaskedVolume, cfg: &VaeConfig) -> Result<Self> {
        if mv.dims() != cfg.grid {
            return Err(Error::invalid(format!(
                "grid mismatch: volume dims {:?}, model grid {:?}",
                mv.dims(),
                cfg.grid
            )));
        }
        let mask: Vec<f64> = mv.mask.voxels().iter().map(|&m| m as f64).collect();
        let x = mv
            .volume
            .voxels()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v as f64 * m)
            .collect();
        Ok(Self { x, mask })
    }
}

/// A training minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub mask: Tensor,
    pub h: Tensor,
}

impl Batch {
    pub fn new(samples: &[&Sample], h: &[&[f64]]) -> Result<Self> {
        let b = samples.len();
        if b == 0 || h.len() != b {
            return Err(Error::invalid(format!("batch of {b} samples with {} HCR rows", h.len())));
        }
        let v = samples[0].x.len();
        let nh = h[0].len();
        let x = samples.iter().flat_map(|s| s.x.iter().copied()).collect();
        let mask = samples.iter().flat_map(|s| s.mask.iter().copied()).collect();
        let hd = h.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            x: Tensor::new(vec![b, v], x)?,
            mask: Tensor::new(vec![b, v], mask)?,
            h: Tensor::new(vec![b, nh], hd)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles for the pieces of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    /// Negative log-likelihood summed over the batch.
    pub nll: Var,
    /// KL to the prior summed over the batch.
    pub kl: Var,
    pub mi: Var,
    /// `(nll + kl) / B + kappa * mi`.
    pub total: Var,
    pub mu: Var,
    pub log_sigma: Var,
}

/// Builds the full training objective for one batch. `eps` holds the
/// standard normal draws for the reparameterized latent sample. With
/// `kappa == 0` the MI term is evaluated but does not enter `total`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    tape: &mut Tape,
    cfg: &VaeConfig,
    arch: &Architecture,
    enc: &Bound,
    dec: &Bound,
    disc: &Bound,
    batch: &Batch,
    eps: &[f64],
) -> Result<Objective> {
    let b = batch.len();
    let n_masked: f64 = batch.mask.data.iter().sum();
    if batch.mask.data.chunks(batch.mask.shape[1]).any(|m| m.iter().all(|&v| v == 0.0)) {
        return Err(Error::EmptyMask);
    }
    let x = tape.constant(batch.x.clone());
    let mask = tape.constant(batch.mask.clone());
    let h = tape.constant(batch.h.clone());

    let (mu, log_sigma) = encode(tape, cfg, arch, enc, x)?;
    let sigma = tape.exp(log_sigma);
    let d = tape.gaussian_sample(mu, sigma, eps)?;
    let hd = tape.concat_cols(h, d)?;
    let recon = decode(tape, cfg, arch, dec, hd)?;

    let resid = tape.sub(x, recon)?;
    let resid = tape.mul(resid, mask)?;
    let sq = tape.mul(resid, resid)?;
    let sse = tape.sum(sq);
    let s2 = cfg.sigma_obs * cfg.sigma_obs;
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI * s2).ln() * n_masked;
    let nll = tape.scale_shift(sse, 1.0 / (2.0 * s2), log_norm);

    let mu2 = tape.mul(mu, mu)?;
    let var = tape.mul(sigma, sigma)?;
    let two_ls = tape.scale(log_sigma, 2.0);
    let a = tape.add(mu2, var)?;
    let a = tape.sub(a, two_ls)?;
    let a = tape.scale_shift(a, 0.5, -0.5);
    let kl = tape.sum(a);

    let mi = match cfg.mi_code {
        MiCode::Sample => mi_term(tape, disc, hd)?,
        MiCode::Mean => {
            let hm = tape.concat_cols(h, mu)?;
            mi_term(tape, disc, hm)?
        }
    };

    let elbo = tape.add(nll, kl)?;
    let mut total = tape.scale(elbo, 1.0 / b as f64);
    if cfg.kappa != 0.0 {
        let weighted = tape.scale(mi, cfg.kappa);
        total = tape.add(total, weighted)?;
    }
    Ok(Objective {
        nll,
        kl,
        mi,
        total,
        mu,
        log_sigma,
    })
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))` summed over dimensions.
pub fn kl_closed_form(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - (s * s).ln()))
        .sum()
}

/// Masked Gaussian negative log-likelihood of `x` given reconstruction `r`.
pub fn masked_nll(x: &[f64], r: &[f64], mask: &[f64], sigma_obs: f64) -> f64 {
    let s2 = sigma_obs * sigma_obs;
    x.iter()
        .zip(r)
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|((&a, &b), _)| (a - b) * (a - b) / (2.0 * s2) + 0.5 * (2.0 * std::f64::consts::PI * s2).ln())
        .sum()
}
