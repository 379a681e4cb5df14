//! Record-on-execute tape and the reverse sweep over it.

use crate::autodiff::kernels::{
    matmul_acc, matmul_nt_acc, matmul_tn_acc, permute_index, split_axis,
};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_raw(i: usize) -> Self {
        Var(i)
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    DivOrZero(Var, Var),
    Atan2(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Neg(Var),
    PowInt(Var, i32),
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Silu(Var),
    Sqrt(Var),
    Abs(Var),
    MatMul(Var, Var),
    SumAll(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    MovingAverage(Var, usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Dynamic computation graph.
///
/// Every primitive appends one node; a node's inputs always have smaller
/// indices, so the insertion order is a topological order and the reverse
/// sweep is a single backwards pass over the node list.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    if a.len() > b.len() && a.ends_with(b) {
        return Ok(a.to_vec());
    }
    if b.len() > a.len() && b.ends_with(a) {
        return Ok(b.to_vec());
    }
    Err(Error::shape(op, a, b))
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Scalar `x·σ(x)`, bit-identical to the graph primitive.
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// `atan2(y, x)` mapped into (-π, π] with `atan2(0, 0) = 0`.
pub fn atan2_phase<T: Scalar>(y: T, x: T) -> T {
    if y == T::zero() && x == T::zero() {
        return T::zero();
    }
    let p = y.atan2(x);
    // keep the phase in (-π, π]
    if p == -T::PI() {
        T::PI()
    } else {
        p
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf; it is differentiable when the tensor
    /// requires grad.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.push(Vec::new(), vec![v], Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn item(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("graph node shapes are consistent")
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (zeros if unreachable) into `param`.
    pub fn write_grad(&self, v: Var, param: &mut Tensor<T>) -> Result<()> {
        match self.grad(v) {
            Some(g) => param.accumulate_grad(g),
            None => param.accumulate_grad(&vec![T::zero(); param.numel()]),
        }
    }

    // ---- elementwise binary ----

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let numel: usize = shape.iter().product();
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let (na, nb) = (av.len(), bv.len());
        let value: Vec<T> = if na == numel && nb == numel {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..numel).map(|i| f(av[i % na], bv[i % nb])).collect()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a / b`, with positions where `b == 0` defined as 0 (gradient 0).
    pub fn div_or_zero(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "div_or_zero",
            a,
            b,
            |x, y| if y == T::zero() { T::zero() } else { x / y },
            Op::DivOrZero(a, b),
        )
    }

    /// Four-quadrant arctangent of `y / x` in (-π, π]; `atan2(0, 0) = 0`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.binary("atan2", y, x, atan2_phase, Op::Atan2(y, x))
    }

    // ---- elementwise unary ----

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, rec: Op<T>) -> Var {
        let n = self.node(a);
        let value = n.value.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        self.push(shape, value, rec, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn pow_int(&mut self, a: Var, n: i32) -> Var {
        self.unary(a, |x| x.powi(n), Op::PowInt(a, n))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.pow_int(a, 2)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.cos(), Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sqrt(), Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    // ---- linear algebra ----

    /// `(…, m, k) @ (k, n)` or batched `(…, m, k) @ (…, k, n)` with equal
    /// leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let lead = &sa[..sa.len() - 2];
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let mut value = vec![T::zero(); shape.iter().product()];
        if sb.len() == 2 {
            let rows = lead.iter().product::<usize>() * m;
            matmul_acc(&self.node(a).value, &self.node(b).value, &mut value, rows, k, n);
        } else {
            if sb[..sb.len() - 2] != *lead {
                return Err(Error::shape("matmul", &sa, &sb));
            }
            let batches: usize = lead.iter().product();
            let (av, bv) = (&self.node(a).value, &self.node(b).value);
            for bi in 0..batches {
                matmul_acc(
                    &av[bi * m * k..(bi + 1) * m * k],
                    &bv[bi * k * n..(bi + 1) * k * n],
                    &mut value[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, Op::MatMul(a, b), rg))
    }

    // ---- reductions ----

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().copied().sum();
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_count(self.node(a).value.len());
        let s = self.sum_all(a);
        self.scale(s, T::one() / n)
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                if mean { "mean_axis" } else { "sum_axis" },
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = &self.node(a).value;
        let mut value = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut value[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = T::one() / T::from_count(len);
            value.iter_mut().for_each(|v| *v *= inv);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let rg = self.rg(a);
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        Ok(self.push(out_shape, value, op, rg))
    }

    /// Sums out `axis` (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.node(a).value.len() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let value = self.node(a).value.clone();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("permute", format!("{perm:?} is not a permutation of {shape:?}")));
        }
        let idx = permute_index(&shape, perm);
        let src = &self.node(a).value;
        let value = idx.iter().map(|&i| src[i]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let rg = self.rg(a);
        Ok(self.push(out_shape, value, Op::Permute(a, perm.to_vec()), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let src = &self.node(p).value;
                value.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let src = &self.node(a).value;
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let b = (o * alen + start) * inner;
            value.extend_from_slice(&src[b..b + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(out_shape, value, Op::Slice(a, axis, start), rg))
    }

    /// Centered moving average along the last axis, with both ends padded by
    /// replicating the edge values.
    pub fn moving_average(&mut self, a: Var, kernel: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let len = *shape
            .last()
            .ok_or_else(|| Error::invalid("moving_average", "rank-0 input"))?;
        if kernel.is_multiple_of(2) || kernel == 0 {
            return Err(Error::invalid("moving_average", format!("kernel {kernel} must be odd")));
        }
        if kernel > 2 * len - 1 {
            return Err(Error::invalid(
                "moving_average",
                format!("kernel {kernel} exceeds 2L-1 = {}", 2 * len - 1),
            ));
        }
        let half = (kernel - 1) / 2;
        let inv = T::from_count(kernel);
        let src = &self.node(a).value;
        let mut value = Vec::with_capacity(src.len());
        for row in src.chunks(len) {
            for t in 0..len {
                let mut s = T::zero();
                for q in 0..kernel {
                    let pos = (t + q).saturating_sub(half).min(len - 1);
                    s += row[pos];
                }
                value.push(s / inv);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::MovingAverage(a, kernel), rg))
    }

    // ---- reverse sweep ----

    /// Populates gradients of `loss` with respect to every differentiable
    /// node reachable from it. Results replace those of any earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::NonScalarLoss(self.node(loss).shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.rg(v) {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    /// Accumulates `g · d(out)/d(input)` for an elementwise-broadcast input.
    fn acc_broadcast(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T], f: impl Fn(usize) -> T) {
        if let Some(buf) = self.acc(grads, v) {
            let n = buf.len();
            if n == g.len() {
                for (i, (b, &gv)) in buf.iter_mut().zip(g).enumerate() {
                    *b += gv * f(i);
                }
            } else {
                for (i, &gv) in g.iter().enumerate() {
                    buf[i % n] += gv * f(i);
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, g, |_| T::one());
                self.acc_broadcast(grads, *b, g, |_| T::one());
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, g, |_| T::one());
                self.acc_broadcast(grads, *b, g, |_| -T::one());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (na, nb) = (av.len(), bv.len());
                self.acc_broadcast(grads, *a, g, |k| bv[k % nb]);
                self.acc_broadcast(grads, *b, g, |k| av[k % na]);
            }
            Op::DivOrZero(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (na, nb) = (av.len(), bv.len());
                self.acc_broadcast(grads, *a, g, |k| {
                    let d = bv[k % nb];
                    if d == T::zero() { T::zero() } else { T::one() / d }
                });
                self.acc_broadcast(grads, *b, g, |k| {
                    let d = bv[k % nb];
                    if d == T::zero() { T::zero() } else { -av[k % na] / (d * d) }
                });
            }
            Op::Atan2(y, x) => {
                let (yv, xv) = (self.value(*y), self.value(*x));
                let (ny, nx) = (yv.len(), xv.len());
                let r2 = |k: usize| {
                    let (yy, xx) = (yv[k % ny], xv[k % nx]);
                    yy * yy + xx * xx
                };
                self.acc_broadcast(grads, *y, g, |k| {
                    let r = r2(k);
                    if r == T::zero() { T::zero() } else { xv[k % nx] / r }
                });
                self.acc_broadcast(grads, *x, g, |k| {
                    let r = r2(k);
                    if r == T::zero() { T::zero() } else { -yv[k % ny] / r }
                });
            }
            Op::Scale(a, s) => self.acc_broadcast(grads, *a, g, |_| *s),
            Op::AddScalar(a) => self.acc_broadcast(grads, *a, g, |_| T::one()),
            Op::Neg(a) => self.acc_broadcast(grads, *a, g, |_| -T::one()),
            Op::PowInt(a, n) => {
                let av = self.value(*a);
                let n = *n;
                let nf = T::lit(n as f64);
                self.acc_broadcast(grads, *a, g, |k| {
                    if n == 0 { T::zero() } else { nf * av[k].powi(n - 1) }
                });
            }
            Op::Sin(a) => {
                let av = self.value(*a);
                self.acc_broadcast(grads, *a, g, |k| av[k].cos());
            }
            Op::Cos(a) => {
                let av = self.value(*a);
                self.acc_broadcast(grads, *a, g, |k| -av[k].sin());
            }
            Op::Exp(a) => self.acc_broadcast(grads, *a, g, |k| out[k]),
            Op::Silu(a) => {
                let av = self.value(*a);
                self.acc_broadcast(grads, *a, g, |k| {
                    let s = sigmoid(av[k]);
                    s * (T::one() + av[k] * (T::one() - s))
                });
            }
            Op::Sqrt(a) => self.acc_broadcast(grads, *a, g, |k| {
                if out[k] == T::zero() { T::zero() } else { T::lit(0.5) / out[k] }
            }),
            Op::Abs(a) => {
                let av = self.value(*a);
                self.acc_broadcast(grads, *a, g, |k| {
                    if av[k] > T::zero() {
                        T::one()
                    } else if av[k] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads),
            Op::SumAll(a) => self.acc_broadcast(grads, *a, &vec![g[0]; self.value(*a).len()], |_| T::one()),
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let shape = &self.nodes[a.0].shape;
                let (outer, len, inner) = split_axis(shape, *axis);
                let scale = if matches!(self.nodes[i].op, Op::MeanAxis(..)) {
                    T::one() / T::from_count(len)
                } else {
                    T::one()
                };
                if let Some(buf) = self.acc(grads, *a) {
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for q in 0..inner {
                                buf[base + q] += g[o * inner + q] * scale;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_broadcast(grads, *a, g, |_| T::one()),
            Op::Permute(a, perm) => {
                let idx = permute_index(&self.nodes[a.0].shape, perm);
                if let Some(buf) = self.acc(grads, *a) {
                    for (k, &src) in idx.iter().enumerate() {
                        buf[src] += g[k];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let shape = &self.nodes[i].shape;
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].shape[*axis];
                    if let Some(buf) = self.acc(grads, p) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for q in 0..len * inner {
                                buf[dst + q] += g[src + q];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice(a, axis, start) => {
                let in_shape = &self.nodes[a.0].shape;
                let (outer, alen, inner) = split_axis(in_shape, *axis);
                let len = self.nodes[i].shape[*axis];
                let start = *start;
                if let Some(buf) = self.acc(grads, *a) {
                    for o in 0..outer {
                        let dst = (o * alen + start) * inner;
                        let src = o * len * inner;
                        for q in 0..len * inner {
                            buf[dst + q] += g[src + q];
                        }
                    }
                }
            }
            Op::MovingAverage(a, kernel) => {
                let kernel = *kernel;
                let len = *self.nodes[a.0].shape.last().expect("rank >= 1");
                let half = (kernel - 1) / 2;
                let inv = T::one() / T::from_count(kernel);
                if let Some(buf) = self.acc(grads, *a) {
                    for (r, grow) in g.chunks(len).enumerate() {
                        let row = &mut buf[r * len..(r + 1) * len];
                        for (t, &gv) in grow.iter().enumerate() {
                            let share = gv * inv;
                            for q in 0..kernel {
                                let pos = (t + q).saturating_sub(half).min(len - 1);
                                row[pos] += share;
                            }
                        }
                    }
                }
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        if sb.len() == 2 {
            let rows = av.len() / k;
            if let Some(buf) = self.acc(grads, a) {
                matmul_nt_acc(g, bv, buf, rows, k, n);
            }
            if let Some(buf) = self.acc(grads, b) {
                matmul_tn_acc(av, g, buf, rows, k, n);
            }
        } else {
            let batches = av.len() / (m * k);
            if let Some(buf) = self.acc(grads, a) {
                for bi in 0..batches {
                    matmul_nt_acc(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bv[bi * k * n..(bi + 1) * k * n],
                        &mut buf[bi * m * k..(bi + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(buf) = self.acc(grads, b) {
                for bi in 0..batches {
                    matmul_tn_acc(
                        &av[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut buf[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
    }
}
