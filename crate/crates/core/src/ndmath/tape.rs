//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive call appends a node holding its output value and enough
//! saved state to compute the vector-Jacobian product. Node inputs always
//! refer to earlier nodes, so a single reverse sweep visits each node once.

use std::borrow::Cow;

use super::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};
use super::NdError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
    LogSoftmax(Var, usize),
    Reshape(Var),
    Conv2d {
        input: Var,
        weight: Var,
        cols: Tensor,
        geom: ConvGeom,
    },
    Upsample2(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddBias(a, b) | MatMul(a, b) | Minimum(a, b) => {
                vec![a, b]
            }
            Conv2d { input, weight, .. } => vec![input, weight],
            Scale(a, _) | AddScalar(a) | Tanh(a) | Relu(a) | Sigmoid(a) | Exp(a) | Log(a)
            | Sum(a) | Mean(a) | RowSum(a) | Clamp(a, _, _) | LogSoftmax(a, _) | Reshape(a)
            | Upsample2(a) => vec![a],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive applications.
///
/// Parameters are borrowed rather than copied, so a tape can be built for
/// every forward pass without cloning network weights.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowed from the caller.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf owned by the tape.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary_same(
        &mut self,
        a: Var,
        b: Var,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NdError> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, op_name)?;
        let out = va.zip_map(vb, f);
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary_same(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    /// Adds a bias vector to every row: `[.., m] + [m]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NdError> {
        let (va, vb) = (self.value(a), self.value(bias));
        let m = vb.len();
        if *va.shape().last().unwrap() != m || vb.shape().len() != 1 {
            return Err(NdError::ShapeMismatch {
                op: "add_bias",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(NdError::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let out = Tensor::matrix(n, m, matmul_raw(va.data(), vb.data(), n, k, m));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same node")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sums over the trailing extent: `[n, m] -> [n]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = *v.shape().last().unwrap();
        let data: Vec<f64> = v.data().chunks(m).map(|r| r.iter().sum()).collect();
        self.push(Tensor::from_vec(data), Op::RowSum(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Log-softmax over consecutive groups of `group` entries along the flat buffer.
    pub fn log_softmax(&mut self, a: Var, group: usize) -> Result<Var, NdError> {
        let v = self.value(a);
        if group == 0 || v.len() % group != 0 {
            return Err(NdError::ShapeMismatch {
                op: "log_softmax",
                left: v.shape().to_vec(),
                right: vec![group],
            });
        }
        let mut out = v.clone();
        for chunk in out.data_mut().chunks_mut(group) {
            let ls = super::ops::log_softmax(chunk);
            chunk.copy_from_slice(&ls);
        }
        Ok(self.push(out, Op::LogSoftmax(a, group)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NdError> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// 2-D convolution on NHWC input `[b, h, w, c]` with weights `[k*k*c, c_out]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NdError> {
        let x = self.value(input);
        let w = self.value(weight);
        let xs = x.shape();
        if xs.len() != 4 || w.shape().len() != 2 || w.shape()[0] != k * k * xs[3] {
            return Err(NdError::ShapeMismatch {
                op: "conv2d",
                left: xs.to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let (batch, h, wd, c) = (xs[0], xs[1], xs[2], xs[3]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(NdError::ShapeMismatch {
                op: "conv2d",
                left: xs.to_vec(),
                right: vec![k],
            });
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            batch,
            h,
            w: wd,
            c,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let cols = im2col(x.data(), &geom);
        let co = w.shape()[1];
        let rows = batch * ho * wo;
        let out = matmul_raw(&cols, w.data(), rows, k * k * c, co);
        let out = Tensor::new(vec![batch, ho, wo, co], out)?;
        let cols = Tensor::matrix(rows, k * k * c, cols);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                cols,
                geom,
            },
        ))
    }

    /// Nearest-neighbour 2x upsampling of NHWC input.
    pub fn upsample2(&mut self, a: Var) -> Result<Var, NdError> {
        let x = self.value(a);
        let s = x.shape();
        if s.len() != 4 {
            return Err(NdError::ShapeMismatch {
                op: "upsample2",
                left: s.to_vec(),
                right: vec![],
            });
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![0.0; b * 4 * h * w * c];
        let src = x.data();
        for bi in 0..b {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let si = ((bi * h + y / 2) * w + xx / 2) * c;
                    let di = ((bi * 2 * h + y) * 2 * w + xx) * c;
                    out[di..di + c].copy_from_slice(&src[si..si + c]);
                }
            }
        }
        let out = Tensor::new(vec![b, 2 * h, 2 * w, c], out)?;
        Ok(self.push(out, Op::Upsample2(a)))
    }

    /// Confirms every node only references earlier nodes.
    pub fn validate(&self) -> Result<(), NdError> {
        for (i, n) in self.nodes.iter().enumerate() {
            for inp in n.op.inputs() {
                if inp.0 >= i {
                    return Err(NdError::CyclicTape {
                        node: i,
                        input: inp.0,
                    });
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NdError> {
        self.validate()?;
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NdError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.zip_map(vb, |d, y| d * y));
                acc(*b, g.zip_map(va, |d, x| d * x));
            }
            Op::AddBias(a, b) => {
                acc(*a, g.clone());
                let m = self.value(*b).len();
                let mut db = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (d, r) in db.iter_mut().zip(row) {
                        *d += r;
                    }
                }
                acc(*b, Tensor::from_vec(db));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let da = matmul_bt_raw(g.data(), vb.data(), n, m, k);
                let db = matmul_at_raw(va.data(), g.data(), n, k, m);
                acc(*a, Tensor::matrix(n, k, da));
                acc(*b, Tensor::matrix(k, m, db));
            }
            Op::Tanh(a) => acc(*a, g.zip_map(out, |d, t| d * (1.0 - t * t))),
            Op::Relu(a) => {
                let va = self.value(*a);
                acc(*a, g.zip_map(va, |d, x| if x > 0.0 { d } else { 0.0 }));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |d, s| d * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, g.zip_map(out, |d, e| d * e)),
            Op::Log(a) => {
                let va = self.value(*a);
                acc(*a, g.zip_map(va, |d, x| d / x));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::full(&shape, g.item()));
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let n = va.len() as f64;
                acc(*a, Tensor::full(va.shape(), g.item() / n));
            }
            Op::RowSum(a) => {
                let va = self.value(*a);
                let m = *va.shape().last().unwrap();
                let mut d = Vec::with_capacity(va.len());
                for &gi in g.data() {
                    d.extend(std::iter::repeat(gi).take(m));
                }
                acc(*a, Tensor::new(va.shape().to_vec(), d).expect("row_sum grad"));
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                for ((x, y), (ga, gb)) in va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .zip(da.data_mut().iter_mut().zip(db.data_mut().iter_mut()))
                {
                    if x <= y {
                        *gb = 0.0;
                    } else {
                        *ga = 0.0;
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a);
                acc(
                    *a,
                    g.zip_map(va, |d, x| if x >= *lo && x <= *hi { d } else { 0.0 }),
                );
            }
            Op::LogSoftmax(a, group) => {
                let mut d = g.clone();
                for (dc, yc) in d.data_mut().chunks_mut(*group).zip(out.data().chunks(*group)) {
                    let s: f64 = dc.iter().sum();
                    for (di, yi) in dc.iter_mut().zip(yc) {
                        *di -= yi.exp() * s;
                    }
                }
                acc(*a, d);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, g.clone().reshape(&shape).expect("reshape grad"));
            }
            Op::Conv2d {
                input,
                weight,
                cols,
                geom,
            } => {
                let w = self.value(*weight);
                let co = w.shape()[1];
                let kkc = geom.k * geom.k * geom.c;
                let rows = geom.batch * geom.ho * geom.wo;
                let dw = matmul_at_raw(cols.data(), g.data(), rows, kkc, co);
                acc(*weight, Tensor::matrix(kkc, co, dw));
                if self.nodes[input.0].needs_grad {
                    let dcols = matmul_bt_raw(g.data(), w.data(), rows, co, kkc);
                    let dx = col2im(&dcols, geom);
                    acc(
                        *input,
                        Tensor::new(vec![geom.batch, geom.h, geom.w, geom.c], dx)
                            .expect("conv grad"),
                    );
                }
            }
            Op::Upsample2(a) => {
                let s = self.value(*a).shape().to_vec();
                let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
                let mut d = vec![0.0; b * h * w * c];
                let gd = g.data();
                for bi in 0..b {
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            let di = ((bi * h + y / 2) * w + x / 2) * c;
                            let si = ((bi * 2 * h + y) * 2 * w + x) * c;
                            for ci in 0..c {
                                d[di + ci] += gd[si + ci];
                            }
                        }
                    }
                }
                acc(*a, Tensor::new(s, d).expect("upsample grad"));
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn push_raw_for_test(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let kkc = g.k * g.k * g.c;
    let mut cols = vec![0.0; g.batch * g.ho * g.wo * kkc];
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((b * g.ho + oy) * g.wo + ox) * kkc;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let dst = row + (ky * g.k + kx) * g.c;
                        cols[dst..dst + g.c].copy_from_slice(&x[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let kkc = g.k * g.k * g.c;
    let mut dx = vec![0.0; g.batch * g.h * g.w * g.c];
    for b in 0..g.batch {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((b * g.ho + oy) * g.wo + ox) * kkc;
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.c;
                        let src = row + (ky * g.k + kx) * g.c;
                        for ci in 0..g.c {
                            dx[dst + ci] += dcols[src + ci];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::gradcheck::{check_gradients, GradCheckReport};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 4.0, -5.0]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let loss = tape.sum(xv);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(xv), Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn mse_of_self_has_zero_gradient() {
        let x = Tensor::from_vec(vec![0.3, -0.7, 1.1]);
        let mut tape = Tape::new();
        let a = tape.param(&x);
        let d = tape.sub(a, a).unwrap();
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unused_leaf_gets_zeros() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let y = Tensor::from_vec(vec![3.0, 4.0, 5.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let yv = tape.param(&y);
        let loss = tape.sum(xv);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(yv).is_none());
        assert_eq!(g.wrt(yv), Tensor::zeros(&[3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let y = tape.tanh(xv);
        assert!(matches!(tape.backward(y), Err(NdError::NonScalarLoss(_))));
    }

    #[test]
    fn cyclic_tape_rejected() {
        let mut tape = Tape::new();
        let a = tape.param_owned(Tensor::scalar(1.0));
        // A node that names itself as an input.
        let bad = tape.push_raw_for_test(Tensor::scalar(1.0), Op::Tanh(Var(1)));
        let _ = a;
        assert!(matches!(
            tape.backward(bad),
            Err(NdError::CyclicTape { node: 1, input: 1 })
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let av = tape.param(&a);
        let bv = tape.param(&b);
        assert!(tape.add(av, bv).is_err());
        assert!(tape.matmul(av, bv).is_err());
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut r = rng();
        let w = Tensor::randn(&[4, 3], 1.0, &mut r);
        let x = Tensor::randn(&[5, 4], 1.0, &mut r);
        let run = || {
            let mut tape = Tape::new();
            let wv = tape.param(&w);
            let xv = tape.constant_ref(&x);
            let h = tape.matmul(xv, wv).unwrap();
            let h = tape.tanh(h);
            let l = tape.log_softmax(h, 3).unwrap();
            let loss = tape.sum(l);
            tape.backward(loss).unwrap().wrt(wv)
        };
        assert_eq!(run().data(), run().data());
    }

    #[test]
    fn conv_and_upsample_gradients() {
        let mut r = rng();
        let x = Tensor::randn(&[2, 5, 4, 3], 1.0, &mut r);
        let w = Tensor::randn(&[3 * 3 * 3, 2], 0.5, &mut r);
        let report: GradCheckReport = check_gradients(&[x, w], 1e-5, |tape, vars| {
            let y = tape.conv2d(vars[0], vars[1], 3, 2, 1).unwrap();
            let y = tape.upsample2(y).unwrap();
            let y = tape.tanh(y);
            let y2 = tape.square(y);
            tape.sum(y2)
        });
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }
}
