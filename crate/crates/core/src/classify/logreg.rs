//! L2-regularized logistic regression and fold ensembles.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRAD_TOL: f64 = 1e-6;
const MAX_NEWTON_ITERS: usize = 200;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2_c: f64,
}

fn check_xy(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid(format!("{} rows with {} labels", x.len(), y.len())));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("ragged feature matrix"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix contains non-finite values"));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(p)
}

/// `mean logloss + ||w||^2 / (2 C n)`; the intercept is not penalized.
pub fn objective(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, l2_c: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &t)| {
            let z = b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
            softplus(z) - t as f64 * z
        })
        .sum::<f64>()
        / n;
    loss + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * l2_c * n)
}

/// Gradient with respect to `(w, b)`, intercept last.
pub fn gradient(x: &[Vec<f64>], y: &[u8], w: &[f64], b: f64, l2_c: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let p = w.len();
    let mut g = vec![0.0; p + 1];
    for (r, &t) in x.iter().zip(y) {
        let z = b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let e = sigmoid(z) - t as f64;
        for j in 0..p {
            g[j] += e * r[j];
        }
        g[p] += e;
    }
    for j in 0..p {
        g[j] = g[j] / n + w[j] / (l2_c * n);
    }
    g[p] /= n;
    g
}

/// Fits by Newton's method with a backtracking (Armijo) line search. The
/// objective is strictly convex in `w` and convex in the intercept, and the
/// loop stops once the gradient norm is below [`GRAD_TOL`].
pub fn fit_logreg(x: &[Vec<f64>], y: &[u8], l2_c: f64) -> Result<LogRegModel> {
    let p = check_xy(x, y)?;
    if !(l2_c > 0.0 && l2_c.is_finite()) {
        return Err(Error::invalid(format!("l2_c must be positive, got {l2_c}")));
    }
    let n = x.len() as f64;
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut f = objective(x, y, &w, b, l2_c);
    for _ in 0..MAX_NEWTON_ITERS {
        let g = gradient(x, y, &w, b, l2_c);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < GRAD_TOL * 1e-3 {
            break;
        }
        // Hessian of the mean loss plus the ridge term
        let mut h = DMatrix::<f64>::zeros(p + 1, p + 1);
        for r in x {
            let z = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let s = sigmoid(z);
            let q = s * (1.0 - s) / n;
            for i in 0..=p {
                let ri = if i < p { r[i] } else { 1.0 };
                for j in 0..=i {
                    let rj = if j < p { r[j] } else { 1.0 };
                    h[(i, j)] += q * ri * rj;
                }
            }
        }
        for i in 0..=p {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        for i in 0..p {
            h[(i, i)] += 1.0 / (l2_c * n);
        }
        // tiny damping keeps the intercept direction well posed
        for i in 0..=p {
            h[(i, i)] += 1e-12;
        }
        let gv = DVector::from_vec(g.clone());
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&gv),
            None => gv.clone(),
        };
        let slope: f64 = -step.dot(&gv);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let nw: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let nb = b - t * step[p];
            let nf = objective(x, y, &nw, nb, l2_c);
            if nf <= f + 1e-4 * t * slope {
                w = nw;
                b = nb;
                f = nf;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let g = gradient(x, y, &w, b, l2_c);
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gnorm >= GRAD_TOL || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("logistic regression did not converge (gradient norm {gnorm:e})")));
    }
    Ok(LogRegModel {
        weights: w,
        intercept: b,
        l2_c,
    })
}

impl LogRegModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| sigmoid(self.decision(r))).collect()
    }
}

/// Column-wise z-score statistics. Constant columns get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x.first().map_or(0, Vec::len);
        let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
        let mean = cols.iter().map(|c| crate::stats::mean(c)).collect();
        let std = cols
            .iter()
            .map(|c| {
                let s = crate::stats::variance(c).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                r.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

/// Fold index per example; each class is shuffled and dealt round-robin so
/// every fold sees both classes.
pub fn stratified_folds(y: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; y.len()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if idx.len() < k {
            return Err(Error::invalid(format!(
                "class {class} has {} examples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[i] = j % k;
        }
    }
    Ok(folds)
}

/// `k` fold models, each trained on the other `k - 1` folds, sharing one
/// standardizer fitted on all training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub models: Vec<LogRegModel>,
    pub folds: Vec<usize>,
    pub seed: u64,
    pub standardizer: Standardizer,
}

pub fn cv_ensemble_fit(x: &[Vec<f64>], y: &[u8], k: usize, seed: u64, l2_c: f64) -> Result<EnsembleModel> {
    check_xy(x, y)?;
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.apply(x);
    let folds = stratified_folds(y, k, seed)?;
    let models = (0..k)
        .map(|f| {
            let (xt, yt): (Vec<Vec<f64>>, Vec<u8>) = xs
                .iter()
                .zip(y)
                .zip(&folds)
                .filter(|(_, &g)| g != f)
                .map(|((r, &t), _)| (r.clone(), t))
                .unzip();
            fit_logreg(&xt, &yt, l2_c)
        })
        .collect::<Result<_>>()?;
    Ok(EnsembleModel {
        models,
        folds,
        seed,
        standardizer,
    })
}

impl EnsembleModel {
    /// Mean of the fold models' probabilities.
    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let xs = self.standardizer.apply(x);
        let k = self.models.len() as f64;
        let mut acc = vec![0.0; x.len()];
        for m in &self.models {
            for (a, p) in acc.iter_mut().zip(m.predict_proba(&xs)) {
                *a += p;
            }
        }
        acc.into_iter().map(|a| a / k).collect()
    }

    /// Mean absolute weight per feature across fold models.
    pub fn mean_abs_weights(&self) -> Vec<f64> {
        let p = self.models[0].weights.len();
        (0..p)
            .map(|j| self.models.iter().map(|m| m.weights[j].abs()).sum::<f64>() / self.models.len() as f64)
            .collect()
    }
}
