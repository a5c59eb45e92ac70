use std::cell::RefCell;

use super::param::{ParamId, Parameter};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Minimum(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Neg(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Abs(usize),
    Square(usize),
    Relu(usize),
    Clamp(usize, T, T),
    Atanh(usize),
    LogSech2(usize),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Gather(usize, Vec<usize>),
    Concat(Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Record of primitive operations for one forward pass.
///
/// A tape is built fresh for every loss evaluation and cleared by
/// [`Tape::backward`]. Nodes are appended in evaluation order, so the
/// inputs of a node always precede it.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    frozen: RefCell<Vec<ParamId>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    idx: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.idx)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    params: Vec<(ParamId, Tensor<T>)>,
    leaves: Vec<(usize, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a parameter, `None` if the loss does not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Gradient for a non-parameter leaf created with [`Tape::var`].
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.iter().find(|(i, _)| *i == v.idx).map(|(_, g)| g)
    }

    /// Adds the gradients into the matching parameters' accumulators.
    pub fn accumulate<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        for p in params {
            if let Some(g) = self.get(p.id()) {
                p.grad.add_assign(g);
            }
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
            frozen: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Parameters with these ids enter the tape as constants. Gradients still
    /// flow through the operations that use them.
    pub fn freeze(&self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.borrow_mut().extend(ids);
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Constant input: no gradient is tracked for it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false, None)
    }

    /// Free input whose gradient is reported by [`Gradients::wrt`].
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true, None)
    }

    pub fn param(&self, p: &Parameter<T>) -> Var<'_, T> {
        let frozen = self.frozen.borrow().contains(&p.id());
        self.push(p.value.clone(), Op::Leaf, !frozen, Some(p.id()))
    }

    fn value_of(&self, idx: usize) -> std::cell::Ref<'_, Tensor<T>> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[idx].value)
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].requires_grad
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl Fn(T) -> T) -> Var<'_, T> {
        let v = self.value_of(a).map(f);
        let rg = self.rg(a);
        self.push(v, op, rg, None)
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (va, vb) = (self.value_of(a), self.value_of(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn binary(&self, name: &'static str, a: usize, b: usize, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var<'_, T>> {
        self.same_shape(name, a, b)?;
        let v = self.value_of(a).zip_map(&self.value_of(b), f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, op, rg, None))
    }

    /// Computes the gradient of the scalar `loss` with respect to every
    /// parameter and free variable on the tape, then clears the tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.idx];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.idx + 1, || None);
        grads[loss.idx] = Some(Tensor::full(root.value.shape(), T::one()));
        let mut out = Gradients::default();

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let x = |j: usize| &nodes[j].value;
            let needs = |j: usize| nodes[j].requires_grad;
            let mut send = |j: usize, t: Tensor<T>| {
                if !nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    match node.param {
                        Some(id) => match out.params.iter_mut().find(|(p, _)| *p == id) {
                            Some((_, acc)) => acc.add_assign(&g),
                            None => out.params.push((id, g)),
                        },
                        None => out.leaves.push((i, g)),
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (x(*a), x(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    if needs(*a) {
                        let mut da = vec![T::zero(); m * k];
                        gemm_nt_acc(g.data(), vb.data(), &mut da, m, n, k);
                        send(*a, Tensor::new(&[m, k], da).expect("matmul grad shape"));
                    }
                    if needs(*b) {
                        let mut db = vec![T::zero(); k * n];
                        gemm_tn_acc(va.data(), g.data(), &mut db, m, k, n);
                        send(*b, Tensor::new(&[k, n], db).expect("matmul grad shape"));
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(x(*b), |gv, bv| gv * bv);
                    let gb = g.zip_map(x(*a), |gv, av| gv * av);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::AddRow(a, r) => {
                    if needs(*r) {
                        send(*r, col_sums(&g));
                    }
                    send(*a, g);
                }
                Op::MulRow(a, r) => {
                    let (va, vr) = (x(*a), x(*r));
                    let n = va.cols();
                    if needs(*r) {
                        let prod = g.zip_map(va, |gv, av| gv * av);
                        send(*r, col_sums(&prod));
                    }
                    let mut ga = g.clone();
                    for (idx, v) in ga.data_mut().iter_mut().enumerate() {
                        *v *= vr.data()[idx % n];
                    }
                    send(*a, ga);
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (x(*a), x(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    for idx in 0..ga.len() {
                        if va.data()[idx] <= vb.data()[idx] {
                            gb.data_mut()[idx] = T::zero();
                        } else {
                            ga.data_mut()[idx] = T::zero();
                        }
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|v| v * c));
                }
                Op::AddScalar(a) => send(*a, g),
                Op::Neg(a) => send(*a, g.map(|v| -v)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gv, yv| gv * (T::one() - yv * yv)));
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gv, yv| gv * yv));
                }
                Op::Log(a) => send(*a, g.zip_map(x(*a), |gv, xv| gv / xv)),
                Op::Abs(a) => send(*a, g.zip_map(x(*a), |gv, xv| gv * sign(xv))),
                Op::Square(a) => send(*a, g.zip_map(x(*a), |gv, xv| gv * (xv + xv))),
                Op::Relu(a) => send(
                    *a,
                    g.zip_map(x(*a), |gv, xv| if xv > T::zero() { gv } else { T::zero() }),
                ),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(
                        *a,
                        g.zip_map(x(*a), |gv, xv| if xv >= lo && xv <= hi { gv } else { T::zero() }),
                    )
                }
                Op::Atanh(a) => send(*a, g.zip_map(x(*a), |gv, xv| gv / (T::one() - xv * xv))),
                Op::LogSech2(a) => {
                    let two = T::lit(2.0);
                    send(*a, g.zip_map(x(*a), |gv, xv| -two * xv.tanh() * gv))
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    send(*a, Tensor::full(x(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let va = x(*a);
                    let gv = g.item() / T::from_usize(va.len()).expect("len as scalar");
                    send(*a, Tensor::full(va.shape(), gv));
                }
                Op::SumCols(a) => {
                    let va = x(*a);
                    let n = va.cols();
                    let mut ga = Tensor::zeros(va.shape());
                    for (idx, v) in ga.data_mut().iter_mut().enumerate() {
                        *v = g.data()[idx / n];
                    }
                    send(*a, ga);
                }
                Op::Gather(a, cols) => {
                    let va = x(*a);
                    let (m, n) = (va.rows(), va.cols());
                    let k = cols.len();
                    let mut ga = Tensor::zeros(va.shape());
                    let d = ga.data_mut();
                    for r in 0..m {
                        for (c, &src) in cols.iter().enumerate() {
                            d[r * n + src] += g.data()[r * k + c];
                        }
                    }
                    send(*a, ga);
                }
                Op::Concat(parts) => {
                    let total = g.cols();
                    let m = g.rows();
                    let mut off = 0;
                    for &p in parts {
                        let w = x(p).cols();
                        if needs(p) {
                            let mut gp = Vec::with_capacity(m * w);
                            for r in 0..m {
                                gp.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                            }
                            send(p, Tensor::new(&[m, w], gp).expect("concat grad shape"));
                        }
                        off += w;
                    }
                }
            }
        }
        nodes.clear();
        Ok(out)
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn col_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let n = g.cols();
    let mut s = vec![T::zero(); n];
    for (idx, &v) in g.data().iter().enumerate() {
        s[idx % n] += v;
    }
    Tensor::new(&[1, n], s).expect("column sums shape")
}

/// Numerically stable `log(1 - tanh(x)^2)`.
pub fn log_sech2<T: Real>(x: T) -> T {
    let ax = x.abs();
    let two = T::lit(2.0);
    two * (T::LN_2() - ax - (-two * ax).exp().ln_1p())
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.idx).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.idx).shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.tape.value_of(self.idx).rows()
    }

    pub fn cols(&self) -> usize {
        self.tape.value_of(self.idx).cols()
    }

    pub fn item(&self) -> T {
        self.tape.value_of(self.idx).item()
    }

    /// Same value, cut off from the gradient graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant(self.value())
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let t = self.tape;
        let v = {
            let (a, b) = (t.value_of(self.idx), t.value_of(other.idx));
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            if b.rows() != k || a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(Error::Shape {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut out = vec![T::zero(); m * n];
            gemm_acc(a.data(), b.data(), &mut out, m, k, n);
            Tensor::new(&[m, n], out)?
        };
        let rg = t.rg(self.idx) || t.rg(other.idx);
        Ok(t.push(v, Op::MatMul(self.idx, other.idx), rg, None))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape
            .binary("add", self.idx, other.idx, Op::Add(self.idx, other.idx), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape
            .binary("sub", self.idx, other.idx, Op::Sub(self.idx, other.idx), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape
            .binary("mul", self.idx, other.idx, Op::Mul(self.idx, other.idx), |a, b| a * b)
    }

    /// Elementwise minimum; the gradient goes to the smaller operand (ties to the left).
    pub fn minimum(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.binary(
            "minimum",
            self.idx,
            other.idx,
            Op::Minimum(self.idx, other.idx),
            |a, b| if a <= b { a } else { b },
        )
    }

    fn row_broadcast(
        self,
        name: &'static str,
        row: Var<'t, T>,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        let t = self.tape;
        let v = {
            let (a, r) = (t.value_of(self.idx), t.value_of(row.idx));
            let n = a.cols();
            if r.len() != n || a.shape().len() != 2 {
                return Err(Error::Shape {
                    op: name,
                    left: a.shape().to_vec(),
                    right: r.shape().to_vec(),
                });
            }
            let mut out = a.clone();
            for (idx, o) in out.data_mut().iter_mut().enumerate() {
                *o = f(*o, r.data()[idx % n]);
            }
            out
        };
        let rg = t.rg(self.idx) || t.rg(row.idx);
        Ok(t.push(v, op, rg, None))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(self, row: Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast("add_row", row, Op::AddRow(self.idx, row.idx), |a, b| a + b)
    }

    /// Multiplies every row of an `m×n` matrix by a `1×n` row.
    pub fn mul_row(self, row: Var<'t, T>) -> Result<Var<'t, T>> {
        self.row_broadcast("mul_row", row, Op::MulRow(self.idx, row.idx), |a, b| a * b)
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Scale(self.idx, c), |v| v * c)
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::AddScalar(self.idx), |v| v + c)
    }

    pub fn neg(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Neg(self.idx), |v| -v)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Tanh(self.idx), |v| v.tanh())
    }

    pub fn exp(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Exp(self.idx), |v| v.exp())
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        if let Some(bad) = self
            .tape
            .value_of(self.idx)
            .data()
            .iter()
            .find(|v| !(**v > T::zero()))
        {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.tape.unary(self.idx, Op::Log(self.idx), |v| v.ln()))
    }

    pub fn abs(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Abs(self.idx), |v| v.abs())
    }

    pub fn square(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::Square(self.idx), |v| v * v)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::Relu(self.idx), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        self.tape
            .unary(self.idx, Op::Clamp(self.idx, lo, hi), |v| v.max(lo).min(hi))
    }

    /// Inverse hyperbolic tangent; inputs must lie strictly inside (−1, 1).
    pub fn atanh(self) -> Result<Var<'t, T>> {
        if let Some(bad) = self
            .tape
            .value_of(self.idx)
            .data()
            .iter()
            .find(|v| !(v.abs() < T::one()))
        {
            return Err(Error::Domain {
                op: "atanh",
                detail: format!("input {bad} outside (-1, 1)"),
            });
        }
        Ok(self.tape.unary(self.idx, Op::Atanh(self.idx), |v| v.atanh()))
    }

    /// `log(1 − tanh(x)²)`, the log-derivative of `tanh`, evaluated stably.
    pub fn log_sech2(self) -> Var<'t, T> {
        self.tape.unary(self.idx, Op::LogSech2(self.idx), log_sech2)
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = self.tape.value_of(self.idx).sum();
        let rg = self.tape.rg(self.idx);
        self.tape.push(Tensor::scalar(s), Op::Sum(self.idx), rg, None)
    }

    pub fn mean(self) -> Var<'t, T> {
        let m = {
            let v = self.tape.value_of(self.idx);
            v.sum() / T::from_usize(v.len()).expect("len as scalar")
        };
        let rg = self.tape.rg(self.idx);
        self.tape.push(Tensor::scalar(m), Op::Mean(self.idx), rg, None)
    }

    /// Row-wise sum: `m×n → m×1`.
    pub fn sum_cols(self) -> Var<'t, T> {
        let v = {
            let a = self.tape.value_of(self.idx);
            let n = a.cols();
            let data = (0..a.rows()).map(|r| a.data()[r * n..(r + 1) * n].iter().copied().sum()).collect();
            Tensor::new(&[a.rows(), 1], data).expect("sum_cols shape")
        };
        let rg = self.tape.rg(self.idx);
        self.tape.push(v, Op::SumCols(self.idx), rg, None)
    }

    /// Column gather: output column `j` is input column `cols[j]`.
    pub fn cols_at(self, cols: &[usize]) -> Result<Var<'t, T>> {
        let v = {
            let a = self.tape.value_of(self.idx);
            if let Some(&bad) = cols.iter().find(|&&c| c >= a.cols()) {
                return Err(Error::Shape {
                    op: "cols_at",
                    left: a.shape().to_vec(),
                    right: vec![bad],
                });
            }
            a.select_cols(cols)
        };
        let rg = self.tape.rg(self.idx);
        Ok(self.tape.push(v, Op::Gather(self.idx, cols.to_vec()), rg, None))
    }

    /// Contiguous column range `[start, end)`.
    pub fn col_range(self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let idx: Vec<usize> = (start..end).collect();
        self.cols_at(&idx)
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols<'t, T: Real>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let tape = parts
        .first()
        .ok_or_else(|| Error::Config("concat of zero tensors".into()))?
        .tape;
    let v = {
        let vals: Vec<_> = parts.iter().map(|p| tape.value_of(p.idx)).collect();
        let refs: Vec<&Tensor<T>> = vals.iter().map(|r| &**r).collect();
        Tensor::concat_cols(&refs)?
    };
    let rg = parts.iter().any(|p| tape.rg(p.idx));
    Ok(tape.push(v, Op::Concat(parts.iter().map(|p| p.idx).collect()), rg, None))
}
