//! Mask and phantom builders plus a longhand first-order reference.

use radmi::volume::{Mask, MaskedVolume, Volume};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Solid ellipsoid with semi-axes in mm, sampled at voxel centres.
pub fn ellipsoid(semi: [f64; 3], spacing: [f64; 3]) -> Mask {
    let dims = [0, 1, 2].map(|a| (2.0 * semi[a] / spacing[a]).ceil() as usize + 3);
    let centre = [0, 1, 2].map(|a| (dims[a] - 1) as f64 / 2.0);
    Mask::from_fn(dims, spacing, |x, y, z| {
        let p = [x, y, z];
        (0..3)
            .map(|a| ((p[a] as f64 - centre[a]) * spacing[a] / semi[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    })
    .unwrap()
}

pub fn ball(r: f64) -> Mask {
    ellipsoid([r; 3], [1.0; 3])
}

pub fn random_blob(r: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3], lobes: usize) -> Mask {
    let lobes: Vec<([f64; 3], [f64; 3])> = (0..lobes)
        .map(|_| {
            let c = [0, 1, 2].map(|a| r.random_range(0.35..0.65) * dims[a] as f64);
            let s = [0, 1, 2].map(|a| r.random_range(0.15..0.3) * dims[a] as f64);
            (c, s)
        })
        .collect();
    Mask::from_fn(dims, spacing, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        lobes
            .iter()
            .any(|(c, s)| (0..3).map(|a| ((p[a] - c[a]) / s[a]).powi(2)).sum::<f64>() <= 1.0)
    })
    .unwrap()
}

pub fn random_phantom(r: &mut ChaCha8Rng) -> MaskedVolume {
    let dims = [r.random_range(8..16), r.random_range(8..16), r.random_range(4..10)];
    let spacing = [r.random_range(0.5..2.0), r.random_range(0.5..2.0), r.random_range(0.5..3.0)];
    let mask = random_blob(r, dims, spacing, 2);
    let n: usize = dims.iter().product();
    let base: f32 = r.random_range(-1.0..1.0);
    let vox: Vec<f32> = (0..n).map(|_| base + r.sample::<f32, _>(StandardNormal)).collect();
    MaskedVolume::new(Volume::new(dims, spacing, vox).unwrap(), mask).unwrap()
}

/// First-order statistics written out longhand: sort-based percentiles,
/// two-pass moments and a bin-by-bin histogram scan.
pub fn naive_first_order(values: &[f64], voxel_volume: f64, bin_width: f64) -> [f64; 18] {
    let n = values.len();
    let nf = n as f64;
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| {
        let pos = q / 100.0 * (n - 1) as f64;
        let i = pos as usize;
        if i + 1 >= n {
            s[n - 1]
        } else {
            s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
        }
    };
    let mut energy = 0.0;
    let mut total = 0.0;
    for v in values {
        energy += v * v;
        total += v;
    }
    let mean = total / nf;
    let mut m = [0.0; 5];
    for v in values {
        for (k, slot) in m.iter_mut().enumerate() {
            *slot += (v - mean).powi(k as i32);
        }
    }
    let var = m[2] / nf;
    let skew = (m[3] / nf) / var.powf(1.5);
    let kurt = (m[4] / nf) / (var * var);
    let mad = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / nf;
    let (p10, p90) = (pct(10.0), pct(90.0));
    let inner: Vec<f64> = values.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    let inner_mean = inner.iter().sum::<f64>() / inner.len() as f64;
    let rmad = inner.iter().map(|v| (v - inner_mean).abs()).sum::<f64>() / inner.len() as f64;
    let lo = s[0];
    let nbins = ((s[n - 1] - lo) / bin_width).floor() as usize + 1;
    let (mut entropy, mut uniformity) = (0.0, 0.0);
    for b in 0..nbins {
        let count = values.iter().filter(|&&v| ((v - lo) / bin_width).floor() as usize == b).count();
        if count > 0 {
            let p = count as f64 / nf;
            entropy -= p * p.log2();
            uniformity += p * p;
        }
    }
    [
        energy,
        energy * voxel_volume,
        entropy,
        s[0],
        p10,
        p90,
        s[n - 1],
        mean,
        pct(50.0),
        pct(75.0) - pct(25.0),
        s[n - 1] - s[0],
        mad,
        rmad,
        (energy / nf).sqrt(),
        skew,
        kurt,
        var,
        uniformity,
    ]
}
