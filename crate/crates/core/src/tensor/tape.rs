use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Indices refer to earlier nodes on the same tape.
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddConst(usize),
    MulConst(usize, T),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Square(usize),
    Sum {
        input: usize,
        axis: Option<usize>,
    },
    Mean {
        input: usize,
        axis: Option<usize>,
    },
    Max {
        input: usize,
        argmax: Vec<usize>,
    },
    AddBias(usize, usize),
    SliceCols {
        input: usize,
        start: usize,
    },
    ConcatCols(usize, usize),
    SoftmaxCe {
        logits: usize,
        labels: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::AddConst(a)
            | Op::MulConst(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Square(a) => vec![*a],
            Op::Sum { input, .. } | Op::Mean { input, .. } | Op::Max { input, .. } | Op::SliceCols { input, .. } => {
                vec![*input]
            }
            Op::SoftmaxCe { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Define-by-run gradient tape. Build one per forward pass.
pub struct Tape<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Removes and returns a gradient; missing entries become zeros of the
    /// variable's shape.
    pub fn take_or_zeros(&mut self, var: Var<'_, T>) -> Tensor<T> {
        self.grads
            .get_mut(var.id)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(var.shape().as_slice()))
    }
}

fn broadcast_kind(a: &[usize], a_scalar: bool, b: &[usize], b_scalar: bool) -> Option<Bcast> {
    if a == b {
        Some(Bcast::Same)
    } else if b_scalar {
        Some(Bcast::RhsScalar)
    } else if a_scalar {
        Some(Bcast::LhsScalar)
    } else {
        None
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

/// (outer, len, inner) decomposition of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => Vec::new(),
        Some(a) => shape
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != a)
            .map(|(_, &d)| d)
            .collect(),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Registers an input tensor.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a scalar `loss`. The tape may be consumed once.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("loss belongs to a different tape"));
        }
        if self.consumed.replace(true) {
            return Err(Error::contract("backward called twice on one tape"));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contrib) in node_backward(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Local backward rule: gradient contributions for each input of `node`.
fn node_backward<T: Element>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
    let val = |i: usize| nodes[i].value.as_ref();
    let want = |i: usize| nodes[i].requires_grad;
    let out = node.value.as_ref();
    let zip_map = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
        let data = a.data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect();
        Tensor::new(a.shape(), data).expect("shape preserved")
    };

    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2().expect("rank 2");
            let n = bv.shape()[1];
            let mut res = Vec::new();
            if want(*a) {
                let mut da = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    g.data(),
                    (n as isize, 1),
                    bv.data(),
                    (1, n as isize),
                    &mut da,
                    false,
                );
                res.push((*a, Tensor::new(&[m, k], da).unwrap()));
            }
            if want(*b) {
                let mut db = vec![T::zero(); k * n];
                T::gemm(
                    k,
                    m,
                    n,
                    av.data(),
                    (1, k as isize),
                    g.data(),
                    (n as isize, 1),
                    &mut db,
                    false,
                );
                res.push((*b, Tensor::new(&[k, n], db).unwrap()));
            }
            res
        }
        Op::MatMulT(a, b) => {
            // C[m×n] = A[m×k] · B[n×k]ᵀ
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2().expect("rank 2");
            let n = bv.shape()[0];
            let mut res = Vec::new();
            if want(*a) {
                let mut da = vec![T::zero(); m * k];
                T::gemm(
                    m,
                    n,
                    k,
                    g.data(),
                    (n as isize, 1),
                    bv.data(),
                    (k as isize, 1),
                    &mut da,
                    false,
                );
                res.push((*a, Tensor::new(&[m, k], da).unwrap()));
            }
            if want(*b) {
                let mut db = vec![T::zero(); n * k];
                T::gemm(
                    n,
                    m,
                    k,
                    g.data(),
                    (1, n as isize),
                    av.data(),
                    (k as isize, 1),
                    &mut db,
                    false,
                );
                res.push((*b, Tensor::new(&[n, k], db).unwrap()));
            }
            res
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let kind = broadcast_kind(av.shape(), av.is_scalar(), bv.shape(), bv.is_scalar())
                .expect("validated at record time");
            let reduce = |t: Tensor<T>, target: &Tensor<T>| -> Tensor<T> {
                if t.shape() == target.shape() {
                    t
                } else {
                    Tensor::full(target.shape(), T::from_f64(t.sum_f64()))
                }
            };
            let scalar_of = |t: &Tensor<T>| t.data()[0];
            let mut res = Vec::new();
            match &node.op {
                Op::Add(..) => {
                    res.push((*a, reduce(g.clone(), av)));
                    res.push((*b, reduce(g.clone(), bv)));
                }
                Op::Sub(..) => {
                    res.push((*a, reduce(g.clone(), av)));
                    res.push((*b, reduce(g.map(|v| -v), bv)));
                }
                _ => {
                    // d(a*b)/da = b, d(a*b)/db = a, with scalar operands broadcast.
                    let ga: Tensor<T> = match kind {
                        Bcast::Same => zip_map(bv, &|x, gv| x * gv),
                        Bcast::RhsScalar => g.map(|gv| gv * scalar_of(bv)),
                        Bcast::LhsScalar => {
                            let prod: Vec<T> = bv.data().iter().zip(g.data()).map(|(&x, &gv)| x * gv).collect();
                            Tensor::new(g.shape(), prod).unwrap()
                        }
                    };
                    let gb: Tensor<T> = match kind {
                        Bcast::Same => zip_map(av, &|x, gv| x * gv),
                        Bcast::LhsScalar => g.map(|gv| gv * scalar_of(av)),
                        Bcast::RhsScalar => {
                            let prod: Vec<T> = av.data().iter().zip(g.data()).map(|(&x, &gv)| x * gv).collect();
                            Tensor::new(g.shape(), prod).unwrap()
                        }
                    };
                    res.push((*a, reduce(ga, av)));
                    res.push((*b, reduce(gb, bv)));
                }
            }
            res
        }
        Op::AddConst(a) => vec![(*a, g.clone())],
        Op::MulConst(a, c) => vec![(*a, g.map(|v| v * *c))],
        Op::Exp(a) => vec![(*a, zip_map(out, &|y, gv| y * gv))],
        Op::Log(a) => vec![(*a, zip_map(val(*a), &|x, gv| gv / x))],
        Op::Tanh(a) => vec![(*a, zip_map(out, &|y, gv| gv * (T::one() - y * y)))],
        Op::Relu(a) => vec![(
            *a,
            zip_map(val(*a), &|x, gv| if x > T::zero() { gv } else { T::zero() }),
        )],
        Op::Sigmoid(a) => vec![(*a, zip_map(out, &|y, gv| gv * y * (T::one() - y)))],
        Op::Square(a) => {
            let two = T::from_f64(2.0);
            vec![(*a, zip_map(val(*a), &|x, gv| two * x * gv))]
        }
        Op::Sum { input, axis } | Op::Mean { input, axis } => {
            let iv = val(*input);
            let is_mean = matches!(node.op, Op::Mean { .. });
            let mut data = vec![T::zero(); iv.numel()];
            match axis {
                None => {
                    let scale = if is_mean {
                        T::from_f64(1.0 / iv.numel() as f64)
                    } else {
                        T::one()
                    };
                    data.iter_mut().for_each(|d| *d = g.data()[0] * scale);
                }
                Some(ax) => {
                    let (outer, len, inner) = axis_split(iv.shape(), *ax);
                    let scale = if is_mean {
                        T::from_f64(1.0 / len as f64)
                    } else {
                        T::one()
                    };
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                data[(o * len + l) * inner + i] = g.data()[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            vec![(*input, Tensor::new(iv.shape(), data).unwrap())]
        }
        Op::Max { input, argmax, .. } => {
            let iv = val(*input);
            let mut data = vec![T::zero(); iv.numel()];
            for (o, &src) in argmax.iter().enumerate() {
                data[src] = data[src] + g.data()[o];
            }
            vec![(*input, Tensor::new(iv.shape(), data).unwrap())]
        }
        Op::AddBias(x, b) => {
            let (rows, cols) = val(*x).dims2().unwrap();
            let mut db = vec![0f64; cols];
            for r in 0..rows {
                for (acc, v) in db.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                    *acc += v.to_f64().unwrap();
                }
            }
            let db = Tensor::new(&[cols], db.into_iter().map(T::from_f64).collect()).unwrap();
            vec![(*x, g.clone()), (*b, db)]
        }
        Op::SliceCols { input, start } => {
            let iv = val(*input);
            let (rows, cols) = iv.dims2().unwrap();
            let w = g.shape()[1];
            let mut data = vec![T::zero(); rows * cols];
            for r in 0..rows {
                data[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
            }
            vec![(*input, Tensor::new(&[rows, cols], data).unwrap())]
        }
        Op::ConcatCols(a, b) => {
            let c1 = val(*a).shape()[1];
            let c2 = val(*b).shape()[1];
            vec![
                (*a, g.slice_cols(0, c1).unwrap()),
                (*b, g.slice_cols(c1, c1 + c2).unwrap()),
            ]
        }
        Op::SoftmaxCe {
            logits,
            labels,
            weights,
            probs,
        } => {
            let lv = val(*logits);
            let (rows, cols) = lv.dims2().unwrap();
            let total: T = weights.iter().fold(T::zero(), |acc, &w| acc + w);
            let g0 = g.data()[0];
            let mut data = probs.clone();
            for r in 0..rows {
                let scale = g0 * weights[r] / total;
                let row = &mut data[r * cols..(r + 1) * cols];
                row[labels[r]] = row[labels[r]] - T::one();
                row.iter_mut().for_each(|v| *v = *v * scale);
            }
            vec![(*logits, Tensor::new(&[rows, cols], data).unwrap())]
        }
    }
}

// Fallible ops can't implement the std::ops traits.
#[allow(clippy::should_implement_trait)]
impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn unary(self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        self.tape.push(value, self.requires_grad(), op)
    }

    fn binary(self, other: Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, rg, op)
    }

    fn same_tape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract(format!("{op}: operands live on different tapes")))
        }
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other, "matmul")?;
        let value = self.value().matmul(&other.value())?;
        Ok(self.binary(other, value, Op::MatMul(self.id, other.id)))
    }

    /// `self[m×k] · otherᵀ` for `other[n×k]`, the layout of affine weights.
    pub fn matmul_transposed(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other, "matmul_transposed")?;
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2()?;
        let (n, k2) = b.dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul_transposed", a.shape(), b.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            a.data(),
            (k as isize, 1),
            b.data(),
            (1, k as isize),
            &mut out,
            false,
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.binary(other, value, Op::MatMulT(self.id, other.id)))
    }

    fn elementwise(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other, name)?;
        let (a, b) = (self.value(), other.value());
        let kind = broadcast_kind(a.shape(), a.is_scalar(), b.shape(), b.is_scalar())
            .ok_or_else(|| Error::dim(name, a.shape(), b.shape()))?;
        let value = match kind {
            Bcast::Same => {
                let d = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape(), d)?
            }
            Bcast::RhsScalar => {
                let y = b.data()[0];
                a.map(|x| f(x, y))
            }
            Bcast::LhsScalar => {
                let x = a.data()[0];
                b.map(|y| f(x, y))
            }
        };
        Ok(self.binary(other, value, op))
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        self.unary(self.value().map(|x| x + c), Op::AddConst(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        self.unary(self.value().map(|x| x * c), Op::MulConst(self.id, c))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-1.0)
    }

    pub fn exp(self) -> Var<'t, T> {
        self.unary(self.value().map(T::exp), Op::Exp(self.id))
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        let v = self.value();
        if let Some(bad) = v.data().iter().find(|&&x| x <= T::zero() || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad:?}"),
            });
        }
        Ok(self.unary(v.map(T::ln), Op::Log(self.id)))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(self.value().map(T::tanh), Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(self.value().map(|x| x.max(T::zero())), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let sig = |x: T| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        };
        self.unary(self.value().map(sig), Op::Sigmoid(self.id))
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(self.value().map(|x| x * x), Op::Square(self.id))
    }

    fn check_axis(&self, axis: Option<usize>, op: &'static str) -> Result<()> {
        let shape = self.shape();
        match axis {
            Some(a) if a >= shape.len() => Err(Error::dim(op, &shape, &[a])),
            _ => Ok(()),
        }
    }

    fn reduce_with(&self, axis: Option<usize>, f: impl Fn(&mut dyn Iterator<Item = T>) -> T) -> Tensor<T> {
        let v = self.value();
        match axis {
            None => Tensor::scalar(f(&mut v.data().iter().copied())),
            Some(ax) => {
                let (outer, len, inner) = axis_split(v.shape(), ax);
                let mut data = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut it = (0..len).map(|l| v.data()[(o * len + l) * inner + i]);
                        data.push(f(&mut it));
                    }
                }
                Tensor::new(&reduced_shape(v.shape(), axis), data).unwrap()
            }
        }
    }

    /// Sum over `axis`, or over all elements when `None`. Accumulates in f64.
    pub fn sum(self, axis: Option<usize>) -> Result<Var<'t, T>> {
        self.check_axis(axis, "sum")?;
        let value = self.reduce_with(axis, |it| T::from_f64(it.map(|x| x.to_f64().unwrap()).sum()));
        Ok(self.unary(value, Op::Sum { input: self.id, axis }))
    }

    pub fn mean(self, axis: Option<usize>) -> Result<Var<'t, T>> {
        self.check_axis(axis, "mean")?;
        let value = self.reduce_with(axis, |it| {
            let (s, n) = it.fold((0f64, 0usize), |(s, n), x| (s + x.to_f64().unwrap(), n + 1));
            T::from_f64(s / n as f64)
        });
        Ok(self.unary(value, Op::Mean { input: self.id, axis }))
    }

    /// Maximum over `axis`; the gradient is routed to the first maximal
    /// element.
    pub fn max(self, axis: Option<usize>) -> Result<Var<'t, T>> {
        self.check_axis(axis, "max")?;
        let v = self.value();
        if v.numel() == 0 {
            return Err(Error::contract("max of an empty tensor"));
        }
        let (outer, len, inner) = match axis {
            None => (1, v.numel(), 1),
            Some(ax) => axis_split(v.shape(), ax),
        };
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * len) * inner + i;
                for l in 1..len {
                    let idx = (o * len + l) * inner + i;
                    if v.data()[idx] > v.data()[best] {
                        best = idx;
                    }
                }
                data.push(v.data()[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(&reduced_shape(v.shape(), axis), data)?;
        Ok(self.unary(value, Op::Max { input: self.id, argmax }))
    }

    /// Adds a bias row vector `b[n]` to every row of `self[B×n]`.
    pub fn add_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias, "add_bias")?;
        let (x, b) = (self.value(), bias.value());
        let (rows, cols) = x.dims2()?;
        if b.shape() != [cols] {
            return Err(Error::dim("add_bias", x.shape(), b.shape()));
        }
        let mut data = x.data().to_vec();
        for r in 0..rows {
            for (v, &bv) in data[r * cols..(r + 1) * cols].iter_mut().zip(b.data()) {
                *v = *v + bv;
            }
        }
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.binary(bias, value, Op::AddBias(self.id, bias.id)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let value = self.value().slice_cols(start, end)?;
        Ok(self.unary(value, Op::SliceCols { input: self.id, start }))
    }

    pub fn concat_cols(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other, "concat_cols")?;
        let value = self.value().concat_cols(&other.value())?;
        Ok(self.binary(other, value, Op::ConcatCols(self.id, other.id)))
    }

    /// Weighted mean softmax cross-entropy of `self[B×C]` logits against
    /// class indices. The weighted form divides by the total weight, which
    /// makes an integer weight equivalent to duplicating the row.
    pub fn softmax_cross_entropy(self, labels: &[usize], weights: Option<&[f32]>) -> Result<Var<'t, T>> {
        let lv = self.value();
        let (rows, cols) = lv.dims2()?;
        if labels.len() != rows {
            return Err(Error::dim("softmax_cross_entropy", lv.shape(), &[labels.len()]));
        }
        if rows == 0 {
            return Err(Error::contract("softmax_cross_entropy on an empty batch"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
            return Err(Error::contract(format!("label {bad} out of range for {cols} classes")));
        }
        let weights: Vec<T> = match weights {
            Some(w) if w.len() != rows => return Err(Error::dim("softmax_cross_entropy weights", &[rows], &[w.len()])),
            Some(w) => w.iter().map(|&x| T::from_f64(x as f64)).collect(),
            None => vec![T::one(); rows],
        };
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = 0f64;
        let mut wsum = 0f64;
        for r in 0..rows {
            let row: Vec<f64> = lv.row(r).iter().map(|x| x.to_f64().unwrap()).collect();
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            let w = weights[r].to_f64().unwrap();
            total += w * (lse - row[labels[r]]);
            wsum += w;
            probs.extend(row.iter().map(|&x| T::from_f64((x - lse).exp())));
        }
        if wsum <= 0.0 {
            return Err(Error::contract("softmax_cross_entropy weights sum to zero"));
        }
        let value = Tensor::scalar(T::from_f64(total / wsum));
        Ok(self.unary(
            value,
            Op::SoftmaxCe {
                logits: self.id,
                labels: labels.to_vec(),
                weights,
                probs,
            },
        ))
    }

    /// Inputs this variable was computed from (empty for leaves).
    pub fn parents(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].op.inputs()
    }

    pub fn id(&self) -> usize {
        self.id
    }
}
