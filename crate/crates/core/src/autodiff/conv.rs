//! Index geometry and kernels for 3D convolution and its transpose.
//!
//! Both layers relate a "small" grid and a "big" grid through
//! `big = small * stride + tap - padding`. For a convolution the output is
//! the small grid; for a transposed convolution the input is.

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Per axis, per tap: the `(small, big)` coordinate pairs that are in range.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub small: [usize; 3],
    pub big: [usize; 3],
    pub kernel: usize,
    pairs: [Vec<Vec<(usize, usize)>>; 3],
}

impl Geometry {
    /// `small` and `big` are `[D, H, W]`.
    pub fn new(small: [usize; 3], big: [usize; 3], spec: ConvSpec) -> Self {
        let mut pairs: [Vec<Vec<(usize, usize)>>; 3] = Default::default();
        for a in 0..3 {
            pairs[a] = (0..spec.kernel)
                .map(|t| {
                    (0..small[a])
                        .filter_map(|s| {
                            let b = (s * spec.stride + t) as isize - spec.padding as isize;
                            (b >= 0 && (b as usize) < big[a]).then_some((s, b as usize))
                        })
                        .collect()
                })
                .collect();
        }
        Self {
            small,
            big,
            kernel: spec.kernel,
            pairs,
        }
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    fn big_len(&self) -> usize {
        self.big.iter().product()
    }

    /// Calls `f(small_index, big_index)` for every in-range position of tap
    /// `(td, th, tw)`.
    #[inline]
    fn for_tap(&self, td: usize, th: usize, tw: usize, mut f: impl FnMut(usize, usize)) {
        let [_, sh, sw] = self.small;
        let [_, bh, bw] = self.big;
        for &(sd, bd) in &self.pairs[0][td] {
            for &(sy, by) in &self.pairs[1][th] {
                let srow = (sd * sh + sy) * sw;
                let brow = (bd * bh + by) * bw;
                for &(sx, bx) in &self.pairs[2][tw] {
                    f(srow + sx, brow + bx);
                }
            }
        }
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let k = self.kernel;
        (0..k * k * k).map(move |t| (t, t / (k * k), (t / k) % k, t % k))
    }
}

pub fn conv_output_dims(input: [usize; 3], spec: ConvSpec) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * spec.padding;
        if padded < spec.kernel {
            return None;
        }
        out[a] = (padded - spec.kernel) / spec.stride + 1;
    }
    Some(out)
}

pub fn conv_transpose_output_dims(input: [usize; 3], spec: ConvSpec, output_padding: [usize; 3]) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let full = (input[a] - 1) * spec.stride + spec.kernel + output_padding[a];
        if full <= 2 * spec.padding {
            return None;
        }
        out[a] = full - 2 * spec.padding;
    }
    Some(out)
}

/// Convolution forward. `x`: `[N, Cin, big]`, `k`: `[Cout, Cin, K, K, K]`,
/// `b`: `[Cout]`; returns `[N, Cout, small]`.
pub(crate) fn conv_forward(x: &Tensor, k: &Tensor, b: &Tensor, g: &Geometry) -> Vec<f64> {
    let (n, cin, cout) = (x.shape[0], x.shape[1], k.shape[0]);
    let (sl, bl, kk) = (g.small_len(), g.big_len(), g.kernel.pow(3));
    let mut y = vec![0.0; n * cout * sl];
    for ni in 0..n {
        for co in 0..cout {
            let out = &mut y[(ni * cout + co) * sl..][..sl];
            out.fill(b.data[co]);
            for ci in 0..cin {
                let inp = &x.data[(ni * cin + ci) * bl..][..bl];
                let w = &k.data[(co * cin + ci) * kk..][..kk];
                for (t, td, th, tw) in g.taps() {
                    let wt = w[t];
                    g.for_tap(td, th, tw, |s, bi| out[s] += wt * inp[bi]);
                }
            }
        }
    }
    y
}

/// Gradients of [`conv_forward`] given the upstream gradient `dy`.
pub(crate) fn conv_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &[f64],
    g: &Geometry,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, cin, cout) = (x.shape[0], x.shape[1], k.shape[0]);
    let (sl, bl, kk) = (g.small_len(), g.big_len(), g.kernel.pow(3));
    let mut dx = vec![0.0; x.data.len()];
    let mut dk = vec![0.0; k.data.len()];
    let mut db = vec![0.0; cout];
    for ni in 0..n {
        for co in 0..cout {
            let gy = &dy[(ni * cout + co) * sl..][..sl];
            db[co] += gy.iter().sum::<f64>();
            for ci in 0..cin {
                let inp = &x.data[(ni * cin + ci) * bl..][..bl];
                let gx = &mut dx[(ni * cin + ci) * bl..][..bl];
                let w = &k.data[(co * cin + ci) * kk..][..kk];
                let gw = &mut dk[(co * cin + ci) * kk..][..kk];
                for (t, td, th, tw) in g.taps() {
                    let wt = w[t];
                    let mut acc = 0.0;
                    g.for_tap(td, th, tw, |s, bi| {
                        gx[bi] += wt * gy[s];
                        acc += inp[bi] * gy[s];
                    });
                    gw[t] += acc;
                }
            }
        }
    }
    (dx, dk, db)
}

/// Transposed convolution forward. `x`: `[N, Cin, small]`,
/// `k`: `[Cin, Cout, K, K, K]`, `b`: `[Cout]`; returns `[N, Cout, big]`.
pub(crate) fn conv_transpose_forward(x: &Tensor, k: &Tensor, b: &Tensor, g: &Geometry) -> Vec<f64> {
    let (n, cin, cout) = (x.shape[0], x.shape[1], k.shape[1]);
    let (sl, bl, kk) = (g.small_len(), g.big_len(), g.kernel.pow(3));
    let mut y = vec![0.0; n * cout * bl];
    for ni in 0..n {
        for co in 0..cout {
            let out = &mut y[(ni * cout + co) * bl..][..bl];
            out.fill(b.data[co]);
            for ci in 0..cin {
                let inp = &x.data[(ni * cin + ci) * sl..][..sl];
                let w = &k.data[(ci * cout + co) * kk..][..kk];
                for (t, td, th, tw) in g.taps() {
                    let wt = w[t];
                    g.for_tap(td, th, tw, |s, bi| out[bi] += wt * inp[s]);
                }
            }
        }
    }
    y
}

pub(crate) fn conv_transpose_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &[f64],
    g: &Geometry,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, cin, cout) = (x.shape[0], x.shape[1], k.shape[1]);
    let (sl, bl, kk) = (g.small_len(), g.big_len(), g.kernel.pow(3));
    let mut dx = vec![0.0; x.data.len()];
    let mut dk = vec![0.0; k.data.len()];
    let mut db = vec![0.0; cout];
    for ni in 0..n {
        for co in 0..cout {
            let gy = &dy[(ni * cout + co) * bl..][..bl];
            db[co] += gy.iter().sum::<f64>();
            for ci in 0..cin {
                let inp = &x.data[(ni * cin + ci) * sl..][..sl];
                let gx = &mut dx[(ni * cin + ci) * sl..][..sl];
                let w = &k.data[(ci * cout + co) * kk..][..kk];
                let gw = &mut dk[(ci * cout + co) * kk..][..kk];
                for (t, td, th, tw) in g.taps() {
                    let wt = w[t];
                    let mut acc = 0.0;
                    g.for_tap(td, th, tw, |s, bi| {
                        gx[s] += wt * gy[bi];
                        acc += inp[s] * gy[bi];
                    });
                    gw[t] += acc;
                }
            }
        }
    }
    (dx, dk, db)
}
