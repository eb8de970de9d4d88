//! A small reverse-mode automatic differentiation engine.
//!
//! A [`Tape`] records every operation eagerly: each call computes its value
//! immediately and appends a node. [`Tape::backward`] then walks the nodes in
//! reverse, accumulating vector-Jacobian products. Everything is `f64`.

mod adam;
mod conv;
mod params;

pub use adam::{collect_grads, Adam, AdamConfig};
pub use conv::{conv_output_dims, conv_transpose_output_dims, ConvSpec};
pub use params::{config_hash, load_checkpoint, save_checkpoint, CheckpointHeader, ParamSet, TensorEntry, CHECKPOINT_FORMAT_VERSION};

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use conv::Geometry;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    fn view2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).expect("rank-2 tensor")
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Conv { x: Var, k: Var, b: Var, geom: Box<Geometry> },
    ConvTranspose { x: Var, k: Var, b: Var, geom: Box<Geometry> },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift { x: Var, scale: f64 },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    GaussianSample { mu: Var, sigma: Var, eps: Vec<f64> },
    BceWithLogits { z: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x @ w + b` with `x: [N, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape.len() != 2 || wv.shape.len() != 2 || xv.shape[1] != wv.shape[0] {
            return Err(shape_err("affine", xv, wv));
        }
        if bv.shape != [wv.shape[1]] {
            return Err(shape_err("affine bias", wv, bv));
        }
        let mut y = xv.view2().dot(&wv.view2());
        y += &ndarray::ArrayView1::from(&bv.data[..]);
        let shape = vec![xv.shape[0], wv.shape[1]];
        let value = Tensor {
            shape,
            // Row-major regardless of the layout ndarray picked for the product.
            data: y.iter().copied().collect(),
        };
        Ok(self.push(value, Op::Affine { x, w, b }, &[x, w, b]))
    }

    /// 3D convolution. `x: [N, Cin, D, H, W]`, `k: [Cout, Cin, K, K, K]`, `b: [Cout]`.
    pub fn conv3d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let ks = kv.shape.get(2).copied().unwrap_or(0);
        if xv.shape.len() != 5
            || kv.shape.len() != 5
            || kv.shape[1] != xv.shape[1]
            || kv.shape[2..].iter().any(|&d| d != ks)
            || stride == 0
        {
            return Err(shape_err("conv3d", xv, kv));
        }
        if bv.shape != [kv.shape[0]] {
            return Err(shape_err("conv3d bias", kv, bv));
        }
        let spec = ConvSpec {
            kernel: ks,
            stride,
            padding,
        };
        let big = [xv.shape[2], xv.shape[3], xv.shape[4]];
        let small = conv_output_dims(big, spec).ok_or_else(|| shape_err("conv3d", xv, kv))?;
        let geom = Geometry::new(small, big, spec);
        let data = conv::conv_forward(xv, kv, bv, &geom);
        let shape = vec![xv.shape[0], kv.shape[0], small[0], small[1], small[2]];
        let value = Tensor { shape, data };
        Ok(self.push(
            value,
            Op::Conv {
                x,
                k,
                b,
                geom: Box::new(geom),
            },
            &[x, k, b],
        ))
    }

    /// Transposed 3D convolution. `x: [N, Cin, D, H, W]`,
    /// `k: [Cin, Cout, K, K, K]`, `b: [Cout]`. Output size per axis is
    /// `(in - 1) * stride - 2 * padding + K + output_padding`.
    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        padding: usize,
        output_padding: [usize; 3],
    ) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let ks = kv.shape.get(2).copied().unwrap_or(0);
        if xv.shape.len() != 5
            || kv.shape.len() != 5
            || kv.shape[0] != xv.shape[1]
            || kv.shape[2..].iter().any(|&d| d != ks)
            || stride == 0
            || output_padding.iter().any(|&p| p >= stride.max(1) && p > 0)
        {
            return Err(shape_err("conv_transpose3d", xv, kv));
        }
        if bv.shape != [kv.shape[1]] {
            return Err(shape_err("conv_transpose3d bias", kv, bv));
        }
        let spec = ConvSpec {
            kernel: ks,
            stride,
            padding,
        };
        let small = [xv.shape[2], xv.shape[3], xv.shape[4]];
        let big = conv_transpose_output_dims(small, spec, output_padding)
            .ok_or_else(|| shape_err("conv_transpose3d", xv, kv))?;
        let geom = Geometry::new(small, big, spec);
        let data = conv::conv_transpose_forward(xv, kv, bv, &geom);
        let shape = vec![xv.shape[0], kv.shape[1], big[0], big[1], big[2]];
        let value = Tensor { shape, data };
        Ok(self.push(
            value,
            Op::ConvTranspose {
                x,
                k,
                b,
                geom: Box::new(geom),
            },
            &[x, k, b],
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let value = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| f(v)).collect(),
        };
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// `scale * x + shift`.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::ScaleShift { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.scale_shift(x, scale, 0.0)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(shape_err(name, av, bv));
        }
        let value = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data.iter().sum::<f64>() / xv.data.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: xv.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: xv.data.clone(),
        };
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Concatenates two `[N, *]` matrices along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[0] != bv.shape[0] {
            return Err(shape_err("concat_cols", av, bv));
        }
        let (n, ca, cb) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&av.data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&bv.data[i * cb..(i + 1) * cb]);
        }
        let value = Tensor {
            shape: vec![n, ca + cb],
            data,
        };
        Ok(self.push(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Reparameterized draw `mu + sigma * eps` with `eps` supplied by the
    /// caller (it is not part of the graph).
    pub fn gaussian_sample(&mut self, mu: Var, sigma: Var, eps: &[f64]) -> Result<Var> {
        let (mv, sv) = (self.value(mu), self.value(sigma));
        if mv.shape != sv.shape || eps.len() != mv.data.len() {
            return Err(shape_err("gaussian_sample", mv, sv));
        }
        let data = mv
            .data
            .iter()
            .zip(&sv.data)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let value = Tensor {
            shape: mv.shape.clone(),
            data,
        };
        Ok(self.push(
            value,
            Op::GaussianSample {
                mu,
                sigma,
                eps: eps.to_vec(),
            },
            &[mu, sigma],
        ))
    }

    /// Mean binary cross-entropy between `sigmoid(z)` and `targets`,
    /// evaluated in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, z: Var, targets: &[f64]) -> Result<Var> {
        let zv = self.value(z);
        if zv.data.len() != targets.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: zv.shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss = zv
            .data
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                z,
                targets: targets.to_vec(),
            },
            &[z],
        ))
    }

    /// Reverse pass from a scalar `loss`. Leaves that do not influence the
    /// loss get no entry, and [`Grads::get`] reports them as zero.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let acc = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |v: Var| &self.nodes[v.0].value;
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (val(*x), val(*w));
                    let gy = ArrayView2::from_shape((xv.shape[0], wv.shape[1]), &g).expect("affine grad");
                    if self.nodes[x.0].needs_grad {
                        let dx = gy.dot(&wv.view2().t());
                        acc(*x, dx.iter().copied().collect(), &mut grads);
                    }
                    if self.nodes[w.0].needs_grad {
                        let dw = xv.view2().t().dot(&gy);
                        acc(*w, dw.iter().copied().collect(), &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(*b, gy.sum_axis(Axis(0)).to_vec(), &mut grads);
                    }
                }
                Op::Conv { x, k, b, geom } => {
                    let (dx, dk, db) = conv::conv_backward(val(*x), val(*k), &g, geom);
                    acc(*x, dx, &mut grads);
                    acc(*k, dk, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::ConvTranspose { x, k, b, geom } => {
                    let (dx, dk, db) = conv::conv_transpose_backward(val(*x), val(*k), &g, geom);
                    acc(*x, dx, &mut grads);
                    acc(*k, dk, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Relu(x) => {
                    let d = val(*x).data.iter().zip(&g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect();
                    acc(*x, d, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let d = out.data.iter().zip(&g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                    acc(*x, d, &mut grads);
                }
                Op::Exp(x) => {
                    let d = out.data.iter().zip(&g).map(|(&e, &gi)| gi * e).collect();
                    acc(*x, d, &mut grads);
                }
                Op::Log(x) => {
                    let d = val(*x).data.iter().zip(&g).map(|(&v, &gi)| gi / v).collect();
                    acc(*x, d, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.iter().map(|v| -v).collect(), &mut grads);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let da = g.iter().zip(&bv.data).map(|(gi, y)| gi * y).collect();
                    let db = g.iter().zip(&av.data).map(|(gi, x)| gi * x).collect();
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::ScaleShift { x, scale } => {
                    acc(*x, g.iter().map(|v| v * scale).collect(), &mut grads);
                }
                Op::Clamp { x, lo, hi } => {
                    let d = val(*x)
                        .data
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gi)| if v >= *lo && v <= *hi { gi } else { 0.0 })
                        .collect();
                    acc(*x, d, &mut grads);
                }
                Op::Sum(x) => {
                    acc(*x, vec![g[0]; val(*x).data.len()], &mut grads);
                }
                Op::Mean(x) => {
                    let n = val(*x).data.len();
                    acc(*x, vec![g[0] / n as f64; n], &mut grads);
                }
                Op::Reshape(x) => acc(*x, g, &mut grads),
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (val(*a).shape[1], val(*b).shape[1]);
                    let mut da = Vec::with_capacity(val(*a).data.len());
                    let mut db = Vec::with_capacity(val(*b).data.len());
                    for row in g.chunks_exact(ca + cb) {
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::GaussianSample { mu, sigma, eps } => {
                    acc(*mu, g.clone(), &mut grads);
                    acc(*sigma, g.iter().zip(eps).map(|(gi, e)| gi * e).collect(), &mut grads);
                }
                Op::BceWithLogits { z, targets } => {
                    let n = targets.len() as f64;
                    let d = val(*z)
                        .data
                        .iter()
                        .zip(targets)
                        .map(|(&zi, &y)| g[0] * (sigmoid(zi) - y) / n)
                        .collect();
                    acc(*z, d, &mut grads);
                }
            }
        }
        let leaves = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| if matches!(n.op, Op::Leaf) { g } else { None })
            .collect();
        Ok(Grads { leaves })
    }
}

/// Gradients of the leaves after [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    leaves: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient for leaf `v`, or `None` when the loss does not depend on it.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for leaf `v` shaped like `like`, zero when unused.
    pub fn get(&self, v: Var, like: &Tensor) -> Tensor {
        match self.raw(v) {
            Some(g) => Tensor {
                shape: like.shape.clone(),
                data: g.to_vec(),
            },
            None => Tensor::zeros(&like.shape),
        }
    }
}
