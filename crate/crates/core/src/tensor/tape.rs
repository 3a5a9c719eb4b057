use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvSpec, PoolStat, ResampleMode};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

type Id = usize;

enum Op {
    Leaf,
    Conv {
        x: Id,
        w: Id,
        b: Option<Id>,
        spec: ConvSpec,
    },
    Linear {
        x: Id,
        w: Id,
        b: Option<Id>,
    },
    Pool {
        x: Id,
        stat: PoolStat,
        arg: Vec<usize>,
    },
    Resample {
        x: Id,
        mode: ResampleMode,
    },
    Project {
        x: Id,
        basis: Rc<Tensor>,
    },
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Div(Id, Id),
    Affine {
        x: Id,
        scale: f64,
    },
    Sigmoid(Id),
    Relu(Id),
    MulConst {
        x: Id,
        c: Rc<Tensor>,
    },
    AddConst(Id),
    MulChannel {
        x: Id,
        m: Id,
    },
    MulSpatial {
        x: Id,
        m: Id,
    },
    MulScalar {
        x: Id,
        s: Id,
    },
    Concat {
        a: Id,
        b: Id,
    },
    SliceChannels {
        x: Id,
        start: usize,
    },
    BceLogits {
        x: Id,
        target: Rc<Tensor>,
    },
    Sum(Id),
    SumSamples(Id),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records operations in creation order, which is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Id,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: Id) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, ids: &[Id]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Propagates `d loss / d leaf` into every differentiable leaf that the
    /// loss depends on. Gradients accumulate across calls until
    /// [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        debug_assert!(std::ptr::eq(loss.tape, self));
        let loss_shape = loss.shape();
        if loss_shape != Shape::SCALAR {
            return Err(Error::Contract(format!(
                "backward needs a (1, 1, 1, 1) loss, got {loss_shape}"
            )));
        }
        let mut leaf_grads: Vec<(Id, Tensor)> = Vec::new();
        {
            let nodes = self.nodes.borrow();
            let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
            grads[loss.id] = Some(Tensor::scalar(1.0));
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else {
                    continue;
                };
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                if let Op::Leaf = node.op {
                    leaf_grads.push((id, g));
                    continue;
                }
                propagate(&nodes, id, &g, &mut grads)?;
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: Id, g: Tensor) -> Result<()> {
    if !nodes[id].requires_grad {
        return Ok(());
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g)?,
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

fn propagate(nodes: &[Node], id: Id, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let val = |i: Id| -> &Tensor { &nodes[i].value };
    let req = |i: Id| nodes[i].requires_grad;
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Conv { x, w, b, spec } => {
            let cg = kernels::conv2d_backward(val(*x), val(*w), g, *spec, req(*x), req(*w))?;
            if let Some(gx) = cg.input {
                accumulate(nodes, grads, *x, gx)?;
            }
            if let Some(gw) = cg.weight {
                accumulate(nodes, grads, *w, gw)?;
            }
            if let Some(b) = b {
                accumulate(nodes, grads, *b, cg.bias)?;
            }
        }
        Op::Linear { x, w, b } => {
            let xs = val(*x).shape();
            let ws = val(*w).shape();
            let (cin, cout) = (ws.c, ws.n);
            if req(*x) {
                let mut gx = vec![0.0; xs.numel()];
                for n in 0..xs.n {
                    for o in 0..cout {
                        let go = g.data()[n * cout + o];
                        let wrow = &val(*w).data()[o * cin..(o + 1) * cin];
                        for (d, wv) in gx[n * cin..(n + 1) * cin].iter_mut().zip(wrow) {
                            *d += go * wv;
                        }
                    }
                }
                accumulate(nodes, grads, *x, Tensor::from_vec(xs, gx)?)?;
            }
            if req(*w) {
                let mut gw = vec![0.0; ws.numel()];
                for n in 0..xs.n {
                    let xrow = &val(*x).data()[n * cin..(n + 1) * cin];
                    for o in 0..cout {
                        let go = g.data()[n * cout + o];
                        for (d, xv) in gw[o * cin..(o + 1) * cin].iter_mut().zip(xrow) {
                            *d += go * xv;
                        }
                    }
                }
                accumulate(nodes, grads, *w, Tensor::from_vec(ws, gw)?)?;
            }
            if let Some(b) = b {
                let mut gb = vec![0.0; cout];
                for n in 0..xs.n {
                    for (o, acc) in gb.iter_mut().enumerate() {
                        *acc += g.data()[n * cout + o];
                    }
                }
                accumulate(nodes, grads, *b, Tensor::from_vec(Shape::new(cout, 1, 1, 1), gb)?)?;
            }
        }
        Op::Pool { x, stat, arg } => {
            let gx = kernels::global_pool_backward(val(*x).shape(), g, *stat, arg);
            accumulate(nodes, grads, *x, gx)?;
        }
        Op::Resample { x, mode } => {
            let gx = kernels::resample_backward(val(*x).shape(), g, *mode);
            accumulate(nodes, grads, *x, gx)?;
        }
        Op::Project { x, basis } => {
            let gx = kernels::project_backward(val(*x).shape(), basis, g);
            accumulate(nodes, grads, *x, gx)?;
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone())?;
            accumulate(nodes, grads, *b, g.clone())?;
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone())?;
            accumulate(nodes, grads, *b, g.map(|v| -v))?;
        }
        Op::Mul(a, b) => {
            if req(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |g, y| g * y)?)?;
            }
            if req(*b) {
                accumulate(nodes, grads, *b, g.zip_map(val(*a), |g, x| g * x)?)?;
            }
        }
        Op::Div(a, b) => {
            if req(*a) {
                accumulate(nodes, grads, *a, g.zip_map(val(*b), |g, y| g / y)?)?;
            }
            if req(*b) {
                // d(a/b)/db = -(a/b)/b
                let q = out.zip_map(val(*b), |q, y| q / y)?;
                accumulate(nodes, grads, *b, g.zip_map(&q, |g, q| -g * q)?)?;
            }
        }
        Op::Affine { x, scale } => {
            accumulate(nodes, grads, *x, g.map(|v| v * scale))?;
        }
        Op::Sigmoid(x) => {
            accumulate(nodes, grads, *x, g.zip_map(out, |g, y| g * y * (1.0 - y))?)?;
        }
        Op::Relu(x) => {
            accumulate(
                nodes,
                grads,
                *x,
                g.zip_map(val(*x), |g, v| if v > 0.0 { g } else { 0.0 })?,
            )?;
        }
        Op::MulConst { x, c } => {
            accumulate(nodes, grads, *x, g.zip_map(c, |g, c| g * c)?)?;
        }
        Op::AddConst(x) => {
            accumulate(nodes, grads, *x, g.clone())?;
        }
        Op::MulChannel { x, m } => {
            let xv = val(*x);
            let s = xv.shape();
            let plane = s.plane();
            if req(*x) {
                let mut gx = g.clone();
                for (nc, chunk) in gx.data_mut().chunks_mut(plane).enumerate() {
                    let mv = val(*m).data()[nc];
                    chunk.iter_mut().for_each(|v| *v *= mv);
                }
                accumulate(nodes, grads, *x, gx)?;
            }
            if req(*m) {
                let gm: Vec<f64> = g
                    .data()
                    .chunks(plane)
                    .zip(xv.data().chunks(plane))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(nodes, grads, *m, Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), gm)?)?;
            }
        }
        Op::MulSpatial { x, m } => {
            let xv = val(*x);
            let mv = val(*m);
            let s = xv.shape();
            let plane = s.plane();
            if req(*x) {
                let mut gx = g.clone();
                for n in 0..s.n {
                    let mp = mv.plane(n, 0);
                    for c in 0..s.c {
                        let start = s.index(n, c, 0, 0);
                        for (v, mval) in gx.data_mut()[start..start + plane].iter_mut().zip(mp) {
                            *v *= mval;
                        }
                    }
                }
                accumulate(nodes, grads, *x, gx)?;
            }
            if req(*m) {
                let mut gm = Tensor::zeros(mv.shape());
                for n in 0..s.n {
                    for c in 0..s.c {
                        let start = s.index(n, c, 0, 0);
                        let gc = &g.data()[start..start + plane];
                        let xc = &xv.data()[start..start + plane];
                        let dst = &mut gm.data_mut()[n * plane..(n + 1) * plane];
                        for ((d, a), b) in dst.iter_mut().zip(gc).zip(xc) {
                            *d += a * b;
                        }
                    }
                }
                accumulate(nodes, grads, *m, gm)?;
            }
        }
        Op::MulScalar { x, s } => {
            let sv = val(*s).data()[0];
            if req(*x) {
                accumulate(nodes, grads, *x, g.map(|v| v * sv))?;
            }
            if req(*s) {
                let d: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                accumulate(nodes, grads, *s, Tensor::scalar(d))?;
            }
        }
        Op::Concat { a, b } => {
            let ca = val(*a).shape().c;
            let cb = val(*b).shape().c;
            let (ga, gb) = split_channels(g, ca, cb)?;
            accumulate(nodes, grads, *a, ga)?;
            accumulate(nodes, grads, *b, gb)?;
        }
        Op::SliceChannels { x, start } => {
            let xs = val(*x).shape();
            let gs = g.shape();
            let mut gx = Tensor::zeros(xs);
            let plane = xs.plane();
            for n in 0..xs.n {
                let src = &g.data()[gs.index(n, 0, 0, 0)..gs.index(n, 0, 0, 0) + gs.c * plane];
                let dst_start = xs.index(n, *start, 0, 0);
                gx.data_mut()[dst_start..dst_start + gs.c * plane].copy_from_slice(src);
            }
            accumulate(nodes, grads, *x, gx)?;
        }
        Op::BceLogits { x, target } => {
            let p = val(*x).map(sigmoid);
            let gx = p.zip_map(target, |p, t| p - t)?.zip_map(g, |d, g| d * g)?;
            accumulate(nodes, grads, *x, gx)?;
        }
        Op::Sum(x) => {
            let gv = g.data()[0];
            accumulate(nodes, grads, *x, Tensor::full(val(*x).shape(), gv))?;
        }
        Op::SumSamples(x) => {
            let xs = val(*x).shape();
            let per = xs.numel() / xs.n.max(1);
            let data = g.data().iter().flat_map(|&gv| std::iter::repeat(gv).take(per)).collect();
            accumulate(nodes, grads, *x, Tensor::from_vec(xs, data)?)?;
        }
    }
    Ok(())
}

fn split_channels(t: &Tensor, ca: usize, cb: usize) -> Result<(Tensor, Tensor)> {
    let s = t.shape();
    let plane = s.plane();
    let mut a = Vec::with_capacity(s.n * ca * plane);
    let mut b = Vec::with_capacity(s.n * cb * plane);
    for n in 0..s.n {
        let base = s.index(n, 0, 0, 0);
        a.extend_from_slice(&t.data()[base..base + ca * plane]);
        b.extend_from_slice(&t.data()[base + ca * plane..base + (ca + cb) * plane]);
    }
    Ok((
        Tensor::from_vec(Shape::new(s.n, ca, s.h, s.w), a)?,
        Tensor::from_vec(Shape::new(s.n, cb, s.h, s.w), b)?,
    ))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `max(x, 0) - x t + ln(1 + e^{-|x|})`, the stable form of
/// `-(t ln σ(x) + (1 - t) ln(1 - σ(x)))`.
#[inline]
pub fn bce_logit(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Accumulated gradient, if [`Tape::backward`] reached this leaf.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    /// The single entry of a `(1, 1, 1, 1)` value.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[Id]) -> Var<'t> {
        let rg = self.tape.requires(inputs);
        self.tape.push(value, op, rg)
    }

    fn same_shape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::dim(op, format!("shapes differ: {a} vs {b}")));
        }
        Ok(())
    }

    pub fn conv2d(&self, weight: Var<'t>, bias: Option<Var<'t>>, spec: ConvSpec) -> Result<Var<'t>> {
        let b = bias.map(|b| b.value());
        let y = kernels::conv2d(&self.value(), &weight.value(), b.as_deref(), spec)?;
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.record(
            y,
            Op::Conv {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
                spec,
            },
            &inputs,
        ))
    }

    pub fn linear(&self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let b = bias.map(|b| b.value());
        let y = kernels::linear(&self.value(), &weight.value(), b.as_deref())?;
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.record(
            y,
            Op::Linear {
                x: self.id,
                w: weight.id,
                b: bias.map(|b| b.id),
            },
            &inputs,
        ))
    }

    pub fn global_pool(&self, stat: PoolStat) -> Result<Var<'t>> {
        let (y, arg) = kernels::global_pool(&self.value(), stat)?;
        Ok(self.record(y, Op::Pool { x: self.id, stat, arg }, &[self.id]))
    }

    pub fn resample(&self, out_h: usize, out_w: usize, mode: ResampleMode) -> Result<Var<'t>> {
        let s = self.shape();
        if (s.h, s.w) == (out_h, out_w) {
            return Ok(*self);
        }
        let y = kernels::resample(&self.value(), out_h, out_w, mode)?;
        Ok(self.record(y, Op::Resample { x: self.id, mode }, &[self.id]))
    }

    /// Resize by `scale`; output dims are `round(H * scale)`, `round(W * scale)`.
    pub fn resample_scale(&self, scale: f64, mode: ResampleMode) -> Result<Var<'t>> {
        if !(scale > 0.0) {
            return Err(Error::dim("resample", format!("scale must be positive, got {scale}")));
        }
        let s = self.shape();
        let oh = (s.h as f64 * scale).round() as usize;
        let ow = (s.w as f64 * scale).round() as usize;
        self.resample(oh, ow, mode)
    }

    /// Project every plane onto the basis images in `basis` `(K, 1, H, W)`.
    pub fn project(&self, basis: Rc<Tensor>) -> Result<Var<'t>> {
        let y = kernels::project(&self.value(), &basis)?;
        Ok(self.record(y, Op::Project { x: self.id, basis }, &[self.id]))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "add")?;
        let y = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.record(y, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "sub")?;
        let y = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.record(y, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "mul")?;
        let y = self.value().zip_map(&other.value(), |a, b| a * b)?;
        Ok(self.record(y, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_shape(&other, "div")?;
        let y = self.value().zip_map(&other.value(), |a, b| a / b)?;
        Ok(self.record(y, Op::Div(self.id, other.id), &[self.id, other.id]))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        let y = self.value().map(|v| scale * v + shift);
        self.record(y, Op::Affine { x: self.id, scale }, &[self.id])
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&self) -> Var<'t> {
        self.affine(-1.0, 1.0)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let y = self.value().map(sigmoid);
        self.record(y, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn relu(&self) -> Var<'t> {
        // NaN passes through so a poisoned input still trips the loss check
        let y = self.value().map(|v| if v < 0.0 { 0.0 } else { v });
        self.record(y, Op::Relu(self.id), &[self.id])
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&self, c: &Tensor) -> Result<Var<'t>> {
        let y = self.value().zip_map(c, |a, b| a * b)?;
        Ok(self.record(
            y,
            Op::MulConst {
                x: self.id,
                c: Rc::new(c.clone()),
            },
            &[self.id],
        ))
    }

    /// Elementwise sum with a constant tensor of the same shape.
    pub fn add_const(&self, c: &Tensor) -> Result<Var<'t>> {
        let y = self.value().zip_map(c, |a, b| a + b)?;
        Ok(self.record(y, Op::AddConst(self.id), &[self.id]))
    }

    /// Recalibrate: multiply `(N, C, H, W)` by a per-channel `(N, C, 1, 1)` vector.
    pub fn mul_channelwise(&self, m: Var<'t>) -> Result<Var<'t>> {
        let s = self.shape();
        let ms = m.shape();
        if ms != Shape::new(s.n, s.c, 1, 1) {
            return Err(Error::dim(
                "mul_channelwise",
                format!("N/C: attention {ms} does not match feature map {s}"),
            ));
        }
        let mut y = (*self.value()).clone();
        let plane = s.plane();
        let mv = m.value();
        for (nc, chunk) in y.data_mut().chunks_mut(plane.max(1)).enumerate() {
            let f = mv.data()[nc];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.record(y, Op::MulChannel { x: self.id, m: m.id }, &[self.id, m.id]))
    }

    /// Multiply `(N, C, H, W)` by a single-channel `(N, 1, H, W)` map
    /// shared by every channel.
    pub fn mul_spatial(&self, m: Var<'t>) -> Result<Var<'t>> {
        let s = self.shape();
        let ms = m.shape();
        if ms != Shape::new(s.n, 1, s.h, s.w) {
            return Err(Error::dim(
                "mul_spatial",
                format!("N/H/W: map {ms} does not match feature map {s}"),
            ));
        }
        let mut y = (*self.value()).clone();
        let mv = m.value();
        let plane = s.plane();
        for n in 0..s.n {
            let mp = mv.plane(n, 0);
            for c in 0..s.c {
                let start = s.index(n, c, 0, 0);
                for (v, f) in y.data_mut()[start..start + plane].iter_mut().zip(mp) {
                    *v *= f;
                }
            }
        }
        Ok(self.record(y, Op::MulSpatial { x: self.id, m: m.id }, &[self.id, m.id]))
    }

    /// Multiply every entry by a `(1, 1, 1, 1)` scalar variable.
    pub fn mul_scalar(&self, s: Var<'t>) -> Result<Var<'t>> {
        if s.shape() != Shape::SCALAR {
            return Err(Error::dim(
                "mul_scalar",
                format!("scalar must be (1, 1, 1, 1), got {}", s.shape()),
            ));
        }
        let f = s.item();
        let y = self.value().map(|v| v * f);
        Ok(self.record(y, Op::MulScalar { x: self.id, s: s.id }, &[self.id, s.id]))
    }

    /// Channel concatenation; `self` occupies the leading channels.
    pub fn concat_channels(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.shape(), other.shape());
        if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
            return Err(Error::dim(
                "concat_channels",
                format!("N/H/W: {a} vs {b}"),
            ));
        }
        let plane = a.plane();
        let (av, bv) = (self.value(), other.value());
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for n in 0..a.n {
            data.extend_from_slice(&av.data()[n * a.c * plane..(n + 1) * a.c * plane]);
            data.extend_from_slice(&bv.data()[n * b.c * plane..(n + 1) * b.c * plane]);
        }
        let y = Tensor::from_vec(Shape::new(a.n, a.c + b.c, a.h, a.w), data)?;
        Ok(self.record(
            y,
            Op::Concat {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if len == 0 || start + len > s.c {
            return Err(Error::dim(
                "slice_channels",
                format!("C: range {start}..{} outside {} channels", start + len, s.c),
            ));
        }
        let plane = s.plane();
        let v = self.value();
        let mut data = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            let from = s.index(n, start, 0, 0);
            data.extend_from_slice(&v.data()[from..from + len * plane]);
        }
        let y = Tensor::from_vec(Shape::new(s.n, len, s.h, s.w), data)?;
        Ok(self.record(y, Op::SliceChannels { x: self.id, start }, &[self.id]))
    }

    /// Elementwise binary cross-entropy between `σ(self)` and `target`.
    pub fn bce_with_logits(&self, target: &Tensor) -> Result<Var<'t>> {
        let y = self.value().zip_map(target, bce_logit)?;
        Ok(self.record(
            y,
            Op::BceLogits {
                x: self.id,
                target: Rc::new(target.clone()),
            },
            &[self.id],
        ))
    }

    /// Sum of all entries as a `(1, 1, 1, 1)` value.
    pub fn sum(&self) -> Var<'t> {
        let y = Tensor::scalar(self.value().sum());
        self.record(y, Op::Sum(self.id), &[self.id])
    }

    /// Per-sample sum, `(N, C, H, W) -> (N, 1, 1, 1)`.
    pub fn sum_per_sample(&self) -> Var<'t> {
        let v = self.value();
        let s = v.shape();
        let per = s.numel() / s.n.max(1);
        let data = if per == 0 {
            vec![0.0; s.n]
        } else {
            v.data().chunks(per).map(|c| c.iter().sum()).collect()
        };
        let y = Tensor::from_vec(Shape::new(s.n, 1, 1, 1), data).expect("one value per sample");
        self.record(y, Op::SumSamples(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.shape().numel() as f64;
        self.sum().scale(1.0 / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape::new(n, c, h, w)
    }

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(s(1, 2, 2, 1), vec![1.0, -2.0, 3.5, 0.0]).unwrap());
        tape.backward(x.sum()).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(s(1, 1, 3, 3)));
        let y = x.sigmoid();
        assert!(y.value().data().iter().all(|&v| v == 0.5));
        tape.backward(y.sum()).unwrap();
        assert!(x.grad().unwrap().data().iter().all(|&g| g == 0.25));
    }

    #[test]
    fn relu_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(s(1, 1, 1, 2), vec![-3.0, 3.0]).unwrap());
        assert_eq!(x.relu().value().data(), &[0.0, 3.0]);
    }

    #[test]
    fn backward_accumulates_and_resets() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(s(1, 1, 2, 2)));
        let loss = x.sum();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0; 4]);
        tape.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(s(1, 1, 2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_get_no_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(s(1, 1, 2, 2)));
        let c = tape.constant(Tensor::full(s(1, 1, 2, 2), 3.0));
        tape.backward(x.mul(c).unwrap().sum()).unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap().data(), &[3.0; 4]);
    }

    #[test]
    fn channelwise_recalibration() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(s(1, 2, 2, 2), 4.0));
        let m = tape.constant(Tensor::from_vec(s(1, 2, 1, 1), vec![0.0, 1.0]).unwrap());
        let y = x.mul_channelwise(m).unwrap().value();
        assert_eq!(&y.data()[..4], &[0.0; 4]);
        assert_eq!(&y.data()[4..], &[4.0; 4]);
        let bad = tape.constant(Tensor::ones(s(1, 3, 1, 1)));
        assert!(x.mul_channelwise(bad).is_err());
    }

    #[test]
    fn concat_then_slice_is_identity() {
        let tape = Tape::new();
        let mut rng = rand::thread_rng();
        let x = tape.leaf(Tensor::randn(s(1, 2, 4, 4), 1.0, &mut rng));
        let z = tape.constant(Tensor::zeros(s(1, 3, 4, 4)));
        let cat = x.concat_channels(z).unwrap();
        assert_eq!(cat.shape(), s(1, 5, 4, 4));
        assert_eq!(*cat.slice_channels(0, 2).unwrap().value(), *x.value());
        let other = tape.constant(Tensor::zeros(s(1, 3, 4, 5)));
        assert!(x.concat_channels(other).is_err());
    }

    #[test]
    fn binary_ops_reject_mismatch() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::ones(s(1, 1, 2, 2)));
        let b = tape.leaf(Tensor::ones(s(1, 1, 2, 3)));
        assert!(a.add(b).is_err());
        assert!(a.mul(b).is_err());
        assert!(a.sub(b).is_err());
        assert!(a.div(b).is_err());
    }

    #[test]
    fn stable_bce() {
        assert!((bce_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_logit(800.0, 1.0).abs() < 1e-300);
        assert!((bce_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }
}
