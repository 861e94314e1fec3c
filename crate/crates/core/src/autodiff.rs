//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] walks it in
//! reverse. Elementwise binary ops broadcast operands of shape `r×c`, `r×1`,
//! `1×c` or `1×1`. Curvatures enter the κ-stereographic ops as `1×1` nodes,
//! so gradients flow into them as well.
//!
//! The stereographic maps are written as functions of `z = κ‖v‖²`:
//! `exp_0(v) = v · E(z)` and `log_0(y) = y · L(z)` with
//! `E(z) = tan_κ(√|z|)/√|z|` and `L(z) = artan_κ(√|z|)/√|z|`. Both are
//! analytic through `z = 0`, which makes the flat limit exact.

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::linalg::Mat;
use crate::stereo::BALL_MARGIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Recip,
    Square,
    Sqrt,
    Softplus,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(BinOp, Var, Var),
    Unary(UnOp, Var),
    Scale(Var, f64),
    AddScalar(Var),
    SumAll(Var),
    RowSum(Var),
    ColSum(Var),
    RowSumSq(Var),
    MatMul(Var, Var),
    SpMatMul(usize, Var),
    Slice(Var, usize),
    HCat(Vec<Var>),
    Gather(Var, Vec<usize>),
    Exp0(Var, Var),
    Log0(Var, Var),
    MobiusAdd(Var, Var, Var),
    Project(Var, Var),
    SqDist0(Var, Var),
    CrossEntropy(Var, Vec<usize>),
    BceLogits(Var, Vec<f64>),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    sparse: Vec<(Csr, Csr)>,
    clipped: usize,
}

/// Gradients of a scalar output with respect to every node.
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    /// Gradient of `v`, if any flowed to it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, zero when nothing flowed to it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

// Series coefficients of E(z) and L(z) around z = 0.
const SERIES_Z: f64 = 1e-4;

/// `E(z)` and `E'(z)`.
pub fn exp_factor(z: f64) -> (f64, f64) {
    if z.abs() < SERIES_Z {
        let e = 1.0 + z * (1.0 / 3.0 + z * (2.0 / 15.0 + z * (17.0 / 315.0 + z * 62.0 / 2835.0)));
        let d = 1.0 / 3.0 + z * (4.0 / 15.0 + z * (51.0 / 315.0 + z * 248.0 / 2835.0));
        return (e, d);
    }
    if z > 0.0 {
        let w = z.sqrt();
        let t = w.tan();
        let sec2 = 1.0 + t * t;
        (t / w, (w * sec2 - t) / (2.0 * w * w * w))
    } else {
        let w = (-z).sqrt();
        let t = w.tanh();
        let sech2 = 1.0 - t * t;
        (t / w, (t - w * sech2) / (2.0 * w * w * w))
    }
}

/// `L(z)` and `L'(z)`.
pub fn log_factor(z: f64) -> (f64, f64) {
    if z.abs() < SERIES_Z {
        let l = 1.0 + z * (-1.0 / 3.0 + z * (1.0 / 5.0 + z * (-1.0 / 7.0 + z / 9.0)));
        let d = -1.0 / 3.0 + z * (2.0 / 5.0 + z * (-3.0 / 7.0 + z * 4.0 / 9.0));
        return (l, d);
    }
    if z > 0.0 {
        let w = z.sqrt();
        let a = w.atan();
        (a / w, (w / (1.0 + w * w) - a) / (2.0 * w * w * w))
    } else {
        let w = (-z).sqrt();
        let a = w.atanh();
        (a / w, (a - w / (1.0 - w * w)) / (2.0 * w * w * w))
    }
}

fn bshape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::dims(format!(
            "cannot broadcast {}x{} with {}x{}",
            a.0, a.1, b.0, b.1
        ))),
    }
}

#[inline]
fn bidx(m: &Mat, i: usize, j: usize) -> usize {
    let r = if m.rows() == 1 { 0 } else { i };
    let c = if m.cols() == 1 { 0 } else { j };
    r * m.cols() + c
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn scalar(m: &Mat) -> f64 {
    m.as_slice()[0]
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => acc.as_mut_slice().iter_mut().zip(g.as_slice()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rows radially clipped by [`Tape::project`] so far.
    pub fn clipped_rows(&self) -> usize {
        self.clipped
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable input.
    pub fn param(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Mat::from_vec(1, 1, vec![x]).expect("1x1"))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Register a constant sparse operator.
    pub fn sparse(&mut self, a: Csr) -> usize {
        let t = a.transpose();
        self.sparse.push((a, t));
        self.sparse.len() - 1
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (r, c) = bshape(ma.shape(), mb.shape())?;
        let f = |x: f64, y: f64| match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        };
        let (sa, sb) = (ma.as_slice(), mb.as_slice());
        let out = if ma.shape() == (r, c) && mb.shape() == (r, c) {
            sa.iter().zip(sb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(f(sa[bidx(ma, i, j)], sb[bidx(mb, i, j)]));
                }
            }
            out
        };
        let v = Mat::from_vec(r, c, out)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Binary(op, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnOp, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let f = |x: f64| match op {
            UnOp::Neg => -x,
            UnOp::Exp => x.exp(),
            UnOp::Ln => x.ln(),
            UnOp::Tanh => x.tanh(),
            UnOp::Sigmoid => sigmoid(x),
            UnOp::Recip => 1.0 / x,
            UnOp::Square => x * x,
            UnOp::Sqrt => x.sqrt(),
            UnOp::Softplus => softplus(x),
        };
        let v = Mat::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|&t| f(t)).collect())
            .expect("same shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::Unary(op, a), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnOp::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnOp::Exp, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnOp::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnOp::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnOp::Softplus, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.scale(c);
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Mat::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|t| t + c).collect())
            .expect("same shape");
        let ng = self.ng(&[a]);
        self.push(v, Op::AddScalar(a), ng)
    }

    /// Sum of all entries, `1×1`.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.as_slice().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Mat::from_vec(1, 1, vec![s]).expect("1x1"), Op::SumAll(a), ng)
    }

    /// Mean of all entries, `1×1`.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Per-row sums, `r×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Mat::from_fn(x.rows(), 1, |i, _| x.row(i).iter().sum());
        let ng = self.ng(&[a]);
        self.push(v, Op::RowSum(a), ng)
    }

    /// Per-column sums, `1×c`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut v = Mat::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, t) in v.row_mut(0).iter_mut().zip(x.row(i)) {
                *o += t;
            }
        }
        let ng = self.ng(&[a]);
        self.push(v, Op::ColSum(a), ng)
    }

    /// Per-row squared norms, `r×1`.
    pub fn row_sum_sq(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let v = Mat::from_fn(x.rows(), 1, |i, _| row_dot(x.row(i), x.row(i)));
        let ng = self.ng(&[a]);
        self.push(v, Op::RowSumSq(a), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// Constant sparse operator times `b`.
    pub fn spmm(&mut self, id: usize, b: Var) -> Result<Var> {
        let v = self.sparse[id].0.matmul(&self.nodes[b.0].value)?;
        let ng = self.ng(&[b]);
        Ok(self.push(v, Op::SpMatMul(id, b), ng))
    }

    /// Columns `start..end`.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.nodes[a.0].value.cols_range(start, end);
        let ng = self.ng(&[a]);
        self.push(v, Op::Slice(a, start), ng)
    }

    /// Horizontal concatenation.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Mat> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let v = Mat::hcat(&mats)?;
        let ng = self.ng(parts);
        Ok(self.push(v, Op::HCat(parts.to_vec()), ng))
    }

    /// Rows `idx` of `a`, repeats allowed.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::invalid(format!("row {bad} out of range for {} rows", x.rows())));
        }
        let mut data = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let v = Mat::from_vec(idx.len(), x.cols(), data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(v, Op::Gather(a, idx.to_vec()), ng))
    }

    fn check_kappa(&self, k: Var) -> Result<f64> {
        let m = &self.nodes[k.0].value;
        if m.shape() != (1, 1) {
            return Err(Error::dims("curvature node must be 1x1"));
        }
        Ok(scalar(m))
    }

    /// Row-wise `exp_0` (without projection).
    pub fn exp0(&mut self, v: Var, k: Var) -> Result<Var> {
        self.radial(v, k, exp_factor, true)
    }

    /// Row-wise `log_0`.
    pub fn log0(&mut self, y: Var, k: Var) -> Result<Var> {
        self.radial(y, k, log_factor, false)
    }

    fn radial(&mut self, v: Var, k: Var, f: fn(f64) -> (f64, f64), is_exp: bool) -> Result<Var> {
        let kappa = self.check_kappa(k)?;
        let x = &self.nodes[v.0].value;
        let mut out = x.clone();
        for i in 0..x.rows() {
            let (e, _) = f(kappa * row_dot(x.row(i), x.row(i)));
            out.row_mut(i).iter_mut().for_each(|t| *t *= e);
        }
        let op = if is_exp { Op::Exp0(v, k) } else { Op::Log0(v, k) };
        let ng = self.ng(&[v, k]);
        Ok(self.push(out, op, ng))
    }

    /// Row-wise Möbius addition `x ⊕_κ y` (without projection).
    pub fn mobius_add(&mut self, x: Var, y: Var, k: Var) -> Result<Var> {
        let kappa = self.check_kappa(k)?;
        let (mx, my) = (&self.nodes[x.0].value, &self.nodes[y.0].value);
        if mx.shape() != my.shape() {
            return Err(Error::dims("Möbius addition of differently shaped blocks"));
        }
        let mut out = Mat::zeros(mx.rows(), mx.cols());
        for i in 0..mx.rows() {
            let (a, b) = (mx.row(i), my.row(i));
            let (xy, x2, y2) = (row_dot(a, b), row_dot(a, a), row_dot(b, b));
            let ca = 1.0 - 2.0 * kappa * xy - kappa * y2;
            let cb = 1.0 + kappa * x2;
            let d = 1.0 - 2.0 * kappa * xy + kappa * kappa * x2 * y2;
            for ((o, p), q) in out.row_mut(i).iter_mut().zip(a).zip(b) {
                *o = (ca * p + cb * q) / d;
            }
        }
        let ng = self.ng(&[x, y, k]);
        Ok(self.push(out, Op::MobiusAdd(x, y, k), ng))
    }

    /// Radial projection into the Poincaré ball for κ < 0; identity otherwise.
    pub fn project(&mut self, x: Var, k: Var) -> Result<Var> {
        let kappa = self.check_kappa(k)?;
        let mut out = self.nodes[x.0].value.clone();
        if kappa < 0.0 {
            let r = (1.0 - BALL_MARGIN) / (-kappa).sqrt();
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let n = row_dot(row, row).sqrt();
                if n > r {
                    row.iter_mut().for_each(|t| *t *= r / n);
                    self.clipped += 1;
                }
            }
        }
        let ng = self.ng(&[x, k]);
        Ok(self.push(out, Op::Project(x, k), ng))
    }

    /// Row-wise squared distance from the origin,
    /// `4‖w‖² L(κ‖w‖²)²`, as an `r×1` column.
    pub fn sq_dist0(&mut self, w: Var, k: Var) -> Result<Var> {
        let kappa = self.check_kappa(k)?;
        let x = &self.nodes[w.0].value;
        let v = Mat::from_fn(x.rows(), 1, |i, _| {
            let q = row_dot(x.row(i), x.row(i));
            let (l, _) = log_factor(kappa * q);
            4.0 * q * l * l
        });
        let ng = self.ng(&[w, k]);
        Ok(self.push(v, Op::SqDist0(w, k), ng))
    }

    /// Mean softmax cross-entropy of each row against its target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let x = &self.nodes[logits.0].value;
        if targets.len() != x.rows() || targets.is_empty() {
            return Err(Error::dims(format!("{} targets for {} rows", targets.len(), x.rows())));
        }
        if targets.iter().any(|&t| t >= x.cols()) {
            return Err(Error::invalid("target class out of range"));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            total += log_sum_exp(x.row(i)) - x.row(i)[t];
        }
        let v = Mat::from_vec(1, 1, vec![total / targets.len() as f64])?;
        let ng = self.ng(&[logits]);
        Ok(self.push(v, Op::CrossEntropy(logits, targets.to_vec()), ng))
    }

    /// Mean binary cross-entropy of an `r×1` logit column.
    pub fn bce_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let x = &self.nodes[logits.0].value;
        if x.cols() != 1 || labels.len() != x.rows() || labels.is_empty() {
            return Err(Error::dims("binary cross-entropy needs one logit per label"));
        }
        let total: f64 = x
            .as_slice()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        let v = Mat::from_vec(1, 1, vec![total / labels.len() as f64])?;
        let ng = self.ng(&[logits]);
        Ok(self.push(v, Op::BceLogits(logits, labels.to_vec()), ng))
    }

    /// Gradients of the `1×1` node `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.shape(out) != (1, 1) {
            return Err(Error::dims("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Mat::from_vec(1, 1, vec![1.0])?);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (ma, mb) = (val(*a), val(*b));
                let mut ga = Mat::zeros(ma.rows(), ma.cols());
                let mut gb = Mat::zeros(mb.rows(), mb.cols());
                let (sa, sb, sg) = (ma.as_slice(), mb.as_slice(), g.as_slice());
                let (r, c) = g.shape();
                for i in 0..r {
                    for j in 0..c {
                        let (ia, ib) = (bidx(ma, i, j), bidx(mb, i, j));
                        let gv = sg[i * c + j];
                        let (x, y) = (sa[ia], sb[ib]);
                        let (da, db) = match op {
                            BinOp::Add => (gv, gv),
                            BinOp::Sub => (gv, -gv),
                            BinOp::Mul => (gv * y, gv * x),
                            BinOp::Div => (gv / y, -gv * x / (y * y)),
                        };
                        ga.as_mut_slice()[ia] += da;
                        gb.as_mut_slice()[ib] += db;
                    }
                }
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Unary(op, a) => {
                let (x, y) = (val(*a).as_slice(), node.value.as_slice());
                let d: Vec<f64> = g
                    .as_slice()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gv, (&x, &y))| {
                        gv * match op {
                            UnOp::Neg => -1.0,
                            UnOp::Exp => y,
                            UnOp::Ln => 1.0 / x,
                            UnOp::Tanh => 1.0 - y * y,
                            UnOp::Sigmoid => y * (1.0 - y),
                            UnOp::Recip => -y * y,
                            UnOp::Square => 2.0 * x,
                            UnOp::Sqrt => 0.5 / y,
                            UnOp::Softplus => sigmoid(x),
                        }
                    })
                    .collect();
                accumulate(&mut grads[a.0], Mat::from_vec(g.rows(), g.cols(), d)?);
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g.scale(*c)),
            Op::AddScalar(a) => accumulate(&mut grads[a.0], g.clone()),
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                accumulate(&mut grads[a.0], Mat::from_vec(r, c, vec![scalar(g); r * c])?);
            }
            Op::RowSum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(&mut grads[a.0], Mat::from_fn(r, c, |i, _| g[(i, 0)]));
            }
            Op::ColSum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(&mut grads[a.0], Mat::from_fn(r, c, |_, j| g[(0, j)]));
            }
            Op::RowSumSq(a) => {
                let x = val(*a);
                accumulate(&mut grads[a.0], Mat::from_fn(x.rows(), x.cols(), |i, j| 2.0 * g[(i, 0)] * x[(i, j)]));
            }
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.matmul(&val(*b).transpose())?);
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], val(*a).transpose().matmul(g)?);
                }
            }
            Op::SpMatMul(id, b) => accumulate(&mut grads[b.0], self.sparse[*id].1.matmul(g)?),
            Op::Slice(a, start) => {
                let (r, c) = val(*a).shape();
                let mut ga = Mat::zeros(r, c);
                for i in 0..r {
                    ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::HCat(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], g.cols_range(off, off + w));
                    }
                    off += w;
                }
            }
            Op::Gather(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Mat::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, t) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += t;
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::Exp0(v, k) | Op::Log0(v, k) => {
                let f = if matches!(node.op, Op::Exp0(..)) { exp_factor } else { log_factor };
                let kappa = scalar(val(*k));
                let x = val(*v);
                let mut gv = Mat::zeros(x.rows(), x.cols());
                let mut gk = 0.0;
                for i in 0..x.rows() {
                    let (row, gr) = (x.row(i), g.row(i));
                    let q = row_dot(row, row);
                    let (e, de) = f(kappa * q);
                    let c = de * row_dot(gr, row);
                    for ((o, &gi), &xi) in gv.row_mut(i).iter_mut().zip(gr).zip(row) {
                        *o = e * gi + c * 2.0 * kappa * xi;
                    }
                    gk += c * q;
                }
                if self.wants(*v) {
                    accumulate(&mut grads[v.0], gv);
                }
                if self.wants(*k) {
                    accumulate(&mut grads[k.0], Mat::from_vec(1, 1, vec![gk])?);
                }
            }
            Op::MobiusAdd(x, y, k) => {
                let kappa = scalar(val(*k));
                let (mx, my) = (val(*x), val(*y));
                let mut gx = Mat::zeros(mx.rows(), mx.cols());
                let mut gy = Mat::zeros(my.rows(), my.cols());
                let mut gk = 0.0;
                for i in 0..mx.rows() {
                    let (a, b, gr, o) = (mx.row(i), my.row(i), g.row(i), node.value.row(i));
                    let (xy, x2, y2) = (row_dot(a, b), row_dot(a, a), row_dot(b, b));
                    let ca = 1.0 - 2.0 * kappa * xy - kappa * y2;
                    let cb = 1.0 + kappa * x2;
                    let d = 1.0 - 2.0 * kappa * xy + kappa * kappa * x2 * y2;
                    let g_a = row_dot(gr, a) / d;
                    let g_b = row_dot(gr, b) / d;
                    let g_d = -row_dot(gr, o) / d;
                    let g_xy = -2.0 * kappa * (g_a + g_d);
                    let g_x2 = g_b * kappa + g_d * kappa * kappa * y2;
                    let g_y2 = -g_a * kappa + g_d * kappa * kappa * x2;
                    gk += g_a * (-2.0 * xy - y2) + g_b * x2 + g_d * (-2.0 * xy + 2.0 * kappa * x2 * y2);
                    for j in 0..a.len() {
                        gx.row_mut(i)[j] = ca * gr[j] / d + g_xy * b[j] + 2.0 * g_x2 * a[j];
                        gy.row_mut(i)[j] = cb * gr[j] / d + g_xy * a[j] + 2.0 * g_y2 * b[j];
                    }
                }
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], gx);
                }
                if self.wants(*y) {
                    accumulate(&mut grads[y.0], gy);
                }
                if self.wants(*k) {
                    accumulate(&mut grads[k.0], Mat::from_vec(1, 1, vec![gk])?);
                }
            }
            Op::Project(x, k) => {
                let kappa = scalar(val(*k));
                let mx = val(*x);
                let mut gx = g.clone();
                let mut gk = 0.0;
                if kappa < 0.0 {
                    let r = (1.0 - BALL_MARGIN) / (-kappa).sqrt();
                    for i in 0..mx.rows() {
                        let row = mx.row(i);
                        let n = row_dot(row, row).sqrt();
                        if n > r {
                            let gr = g.row(i);
                            let proj = row_dot(gr, row) / n;
                            for (o, (&gi, &xi)) in gx.row_mut(i).iter_mut().zip(gr.iter().zip(row)) {
                                *o = r / n * (gi - xi / n * proj);
                            }
                            gk += proj * r / (-2.0 * kappa);
                        }
                    }
                }
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], gx);
                }
                if self.wants(*k) {
                    accumulate(&mut grads[k.0], Mat::from_vec(1, 1, vec![gk])?);
                }
            }
            Op::SqDist0(w, k) => {
                let kappa = scalar(val(*k));
                let x = val(*w);
                let mut gw = Mat::zeros(x.rows(), x.cols());
                let mut gk = 0.0;
                for i in 0..x.rows() {
                    let row = x.row(i);
                    let q = row_dot(row, row);
                    let (l, dl) = log_factor(kappa * q);
                    let gi = g[(i, 0)];
                    let dq = 4.0 * l * l + 8.0 * q * l * dl * kappa;
                    for (o, &xi) in gw.row_mut(i).iter_mut().zip(row) {
                        *o = gi * dq * 2.0 * xi;
                    }
                    gk += gi * 8.0 * q * q * l * dl;
                }
                if self.wants(*w) {
                    accumulate(&mut grads[w.0], gw);
                }
                if self.wants(*k) {
                    accumulate(&mut grads[k.0], Mat::from_vec(1, 1, vec![gk])?);
                }
            }
            Op::CrossEntropy(a, targets) => {
                let x = val(*a);
                let scale = scalar(g) / targets.len() as f64;
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for (i, &t) in targets.iter().enumerate() {
                    let lse = log_sum_exp(x.row(i));
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = scale * ((x[(i, j)] - lse).exp() - if j == t { 1.0 } else { 0.0 });
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::BceLogits(a, labels) => {
                let x = val(*a);
                let scale = scalar(g) / labels.len() as f64;
                let d: Vec<f64> = x
                    .as_slice()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| scale * (sigmoid(z) - y))
                    .collect();
                accumulate(&mut grads[a.0], Mat::from_vec(x.rows(), 1, d)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stereo;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-s..s))
    }

    /// Compare tape gradients of `build` with central differences on every
    /// entry of every input.
    fn check(inputs: Vec<Mat>, build: impl Fn(&mut Tape, &[Var]) -> Var, tol: f64) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], m.shape());
            for e in 0..m.as_slice().len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == k {
                                x.as_mut_slice()[e] += delta;
                            }
                            t.param(x)
                        })
                        .collect();
                    let o = build(&mut t, &vs);
                    scalar(t.value(o))
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.as_slice()[e];
                assert!(
                    (a - fd).abs() <= tol * fd.abs().max(1.0),
                    "input {k} entry {e}: analytic {a} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn series_matches_closed_form() {
        for z in [-1.01e-4, 1.01e-4, -0.99e-4, 0.99e-4] {
            let (e, de) = exp_factor(z);
            let (l, dl) = log_factor(z);
            let w = z.abs().sqrt();
            let (e2, l2) = if z > 0.0 { (w.tan() / w, w.atan() / w) } else { (w.tanh() / w, w.atanh() / w) };
            assert!((e - e2).abs() < 1e-14 && (l - l2).abs() < 1e-14);
            assert!((de - 1.0 / 3.0).abs() < 1e-3 && (dl + 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn radial_ops_match_stereo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_mat(&mut rng, 3, 4, 0.3);
        for kappa in [-1.5, -1e-7, 0.0, 1e-7, 0.8] {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let k = t.scalar_const(kappa);
            let e = t.exp0(v, k).unwrap();
            let l = t.log0(v, k).unwrap();
            let d = t.sq_dist0(v, k).unwrap();
            for i in 0..3 {
                let want = stereo::exp0(x.row(i), kappa).unwrap();
                assert!(t.value(e).row(i).iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
                let want = stereo::log0(x.row(i), kappa).unwrap();
                assert!(t.value(l).row(i).iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
                let want = stereo::norm0(x.row(i), kappa).unwrap().powi(2);
                assert!((t.value(d)[(i, 0)] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn mobius_matches_stereo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 3, 4, 0.3);
        let y = rand_mat(&mut rng, 3, 4, 0.3);
        let mut t = Tape::new();
        let (vx, vy) = (t.constant(x.clone()), t.constant(y.clone()));
        let k = t.scalar_const(-0.7);
        let z = t.mobius_add(vx, vy, k).unwrap();
        for i in 0..3 {
            let want = stereo::mobius_add(x.row(i), y.row(i), -0.7).unwrap();
            assert!(t.value(z).row(i).iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn grad_elementwise_and_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 3, 4, 1.0);
        let b = rand_mat(&mut rng, 1, 4, 1.0);
        let c = Mat::from_fn(3, 1, |_, _| rng.random_range(0.5..1.5));
        check(
            vec![a, b, c],
            |t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                let m = t.mul(s, v[0]).unwrap();
                let d = t.div(m, v[2]).unwrap();
                let e = t.sub(d, v[1]).unwrap();
                let th = t.tanh(e);
                let sg = t.sigmoid(th);
                let sp = t.softplus(sg);
                let sq = t.unary(UnOp::Square, sp);
                let rs = t.row_sum(sq);
                let cs = t.col_sum(sq);
                let r2 = t.row_sum_sq(e);
                let x = t.add(rs, r2).unwrap();
                let y = t.unary(UnOp::Sqrt, x);
                let l = t.unary(UnOp::Ln, y);
                let ex = t.exp(cs);
                let rc = t.unary(UnOp::Recip, ex);
                let s1 = t.sum_all(l);
                let s2 = t.mean_all(rc);
                let sc = t.scale(s2, 3.0);
                let o = t.add(s1, sc).unwrap();
                t.add_scalar(o, 1.0)
            },
            1e-7,
        );
    }

    #[test]
    fn grad_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_mat(&mut rng, 4, 3, 1.0);
        let w = rand_mat(&mut rng, 3, 5, 1.0);
        let sp = Csr::from_dense(&rand_mat(&mut rng, 4, 4, 1.0));
        check(
            vec![a, w],
            move |t, v| {
                let id = t.sparse(sp.clone());
                let m = t.matmul(v[0], v[1]).unwrap();
                let s = t.spmm(id, m).unwrap();
                let l = t.slice(s, 1, 4);
                let r = t.slice(s, 0, 2);
                let h = t.hcat(&[l, r, v[0]]).unwrap();
                let g = t.gather(h, &[3, 0, 3, 1]).unwrap();
                let q = t.unary(UnOp::Square, g);
                let n = t.neg(q);
                t.mean_all(n)
            },
            1e-7,
        );
    }

    #[test]
    fn grad_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_mat(&mut rng, 5, 3, 2.0);
        let z = rand_mat(&mut rng, 4, 1, 3.0);
        check(
            vec![logits, z],
            |t, v| {
                let a = t.cross_entropy(v[0], &[0, 2, 1, 1, 0]).unwrap();
                let b = t.bce_logits(v[1], &[1.0, 0.0, 1.0, 0.0]).unwrap();
                t.add(a, b).unwrap()
            },
            1e-7,
        );
    }

    #[test]
    fn grad_stereo_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kappa in [-0.9, 0.6] {
            let x = rand_mat(&mut rng, 3, 4, 0.35);
            let y = rand_mat(&mut rng, 3, 4, 0.35);
            let k = Mat::from_vec(1, 1, vec![kappa]).unwrap();
            check(
                vec![x, y, k],
                |t, v| {
                    let e = t.exp0(v[0], v[2]).unwrap();
                    let m = t.mobius_add(e, v[1], v[2]).unwrap();
                    let p = t.project(m, v[2]).unwrap();
                    let l = t.log0(p, v[2]).unwrap();
                    let d = t.sq_dist0(m, v[2]).unwrap();
                    let s = t.sum_all(l);
                    let s2 = t.sum_all(d);
                    t.add(s, s2).unwrap()
                },
                1e-6,
            );
        }
    }

    #[test]
    fn grad_projection_active() {
        let x = Mat::from_rows(&[vec![0.9, 0.8], vec![0.1, 0.2]]).unwrap();
        let k = Mat::from_vec(1, 1, vec![-1.0]).unwrap();
        check(
            vec![x, k],
            |t, v| {
                let p = t.project(v[0], v[1]).unwrap();
                let w = t.scalar_const(0.3);
                let q = t.mul(p, w).unwrap();
                let s = t.unary(UnOp::Square, q);
                let c = t.col_sum(s);
                let e = t.exp(c);
                t.sum_all(e)
            },
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let u = t.constant(Mat::zeros(4, 5));
        let l = t.cross_entropy(u, &[0, 1, 2, 3]).unwrap();
        assert!((scalar(t.value(l)) - 5f64.ln()).abs() < 1e-14);
        let sure = t.constant(Mat::from_fn(2, 3, |i, j| if i == j { 60.0 } else { 0.0 }));
        let l = t.cross_entropy(sure, &[0, 1]).unwrap();
        assert!(scalar(t.value(l)) < 1e-20);
        assert!(t.cross_entropy(sure, &[]).is_err());
    }
}
