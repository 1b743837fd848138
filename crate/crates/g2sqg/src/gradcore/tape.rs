//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! Every forward primitive appends an immutable node; `backward` replays
//! the tape in reverse, accumulating gradients into per-node buffers. The
//! primitive set is closed: only the operations below may enter a tape,
//! and each carries its backward rule in [`Tape::backward_op`].
//!
//! Subgradient conventions: ReLU'(0) = 0; elementwise-min ties route the
//! gradient to the first argument; max-pool ties pick the lowest column.

use super::array::{Real, RealArray};
use crate::error::{Error, Result};
use num_traits::Float;
use std::cell::{Ref, RefCell};
use std::rc::Rc;

/// Canonical names of the registered primitives, used by the gradient
/// check harness to sweep the whole registry.
pub const PRIMITIVE_NAMES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "elementwise-mul",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "concat",
    "masked-softmax",
    "elementwise-min",
    "max-pool",
    "gather-rows",
    "scalar-scale",
    "sum-reduce",
];

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul {
        ta: bool,
        tb: bool,
    },
    Add,
    Sub,
    Mul,
    Min,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Scale {
        factor: T,
    },
    Concat {
        axis: usize,
        sizes: Vec<usize>,
    },
    MaskedSoftmax {
        axis: usize,
        mask: Option<Vec<bool>>,
    },
    MaxPool {
        argmax: Vec<usize>,
    },
    Gather {
        axis: usize,
        indices: Vec<usize>,
    },
    SumReduce,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "elementwise-mul",
            Op::Min => "elementwise-min",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Scale { .. } => "scalar-scale",
            Op::Concat { .. } => "concat",
            Op::MaskedSoftmax { .. } => "masked-softmax",
            Op::MaxPool { .. } => "max-pool",
            Op::Gather { .. } => "gather-rows",
            Op::SumReduce => "sum-reduce",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<usize>,
    value: RealArray<T>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
    // Branch counters let the gradient checker detect when a perturbation
    // crossed a kink (ReLU sign flip, min tie flip, max-pool argmax flip).
    relu_positive: u64,
    min_first: u64,
    argmax_checksum: u64,
}

/// Records primitives during a forward pass. A tape and its arrays are
/// confined to one thread; independent tapes may run concurrently.
pub struct Tape<T: Real> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Real> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one recorded array on a tape.
pub struct Var<T: Real> {
    tape: Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(node {}, {:?})", self.id, *self.value())
    }
}

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                relu_positive: 0,
                min_first: 0,
                argmax_checksum: 0,
            })),
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Forward branch decisions taken so far, as a cheap signature. Two
    /// evaluations that disagree here took a different path through a
    /// nondifferentiable point.
    pub fn branch_signature(&self) -> (u64, u64, u64) {
        let inner = self.inner.borrow();
        (inner.relu_positive, inner.min_first, inner.argmax_checksum)
    }

    /// Record an input array.
    pub fn leaf(&self, value: RealArray<T>) -> Var<T> {
        self.push(Op::Leaf, vec![], value)
    }

    /// Record a non-trainable constant. Identical to a leaf; the name
    /// documents intent at call sites.
    pub fn constant(&self, value: RealArray<T>) -> Var<T> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: T) -> Var<T> {
        self.leaf(RealArray::scalar(value))
    }

    pub fn ones(&self, rows: usize, cols: usize) -> Var<T> {
        self.leaf(RealArray::full(rows, cols, T::one()))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<T> {
        self.leaf(RealArray::zeros(rows, cols))
    }

    fn push(&self, op: Op<T>, inputs: Vec<usize>, value: RealArray<T>) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, inputs, value });
        Var {
            tape: self.clone(),
            id,
        }
    }

    fn push_checked(&self, op: Op<T>, inputs: Vec<usize>, value: RealArray<T>) -> Result<Var<T>> {
        if !value.all_finite() {
            return Err(Error::Numeric(op.name()));
        }
        Ok(self.push(op, inputs, value))
    }

    /// Concatenate along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&self, axis: usize, parts: &[&Var<T>]) -> Result<Var<T>> {
        assert!(!parts.is_empty(), "concat requires at least one input");
        assert!(axis < 2, "concat axis must be 0 or 1");
        for p in parts {
            assert!(
                Rc::ptr_eq(&self.inner, &p.tape.inner),
                "vars must share a tape"
            );
        }
        let shapes: Vec<[usize; 2]> = parts.iter().map(|p| p.shape()).collect();
        let fixed = 1 - axis;
        let fixed_dim = shapes[0][fixed];
        for s in &shapes {
            if s[fixed] != fixed_dim {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: shapes[0].to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        let sizes: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = sizes.iter().sum();
        let value = {
            let inner = self.inner.borrow();
            if axis == 0 {
                let mut data = Vec::with_capacity(total * fixed_dim);
                for p in parts {
                    data.extend_from_slice(inner.nodes[p.id].value.data());
                }
                RealArray::new(total, fixed_dim, data)?
            } else {
                let mut out = RealArray::zeros(fixed_dim, total);
                let mut offset = 0;
                for p in parts {
                    let v = &inner.nodes[p.id].value;
                    for r in 0..fixed_dim {
                        for c in 0..v.cols() {
                            out.set(r, offset + c, v.at(r, c));
                        }
                    }
                    offset += v.cols();
                }
                out
            }
        };
        self.push_checked(
            Op::Concat { axis, sizes },
            parts.iter().map(|p| p.id).collect(),
            value,
        )
    }

    /// Backpropagate from a scalar output. The tape itself is immutable:
    /// running backward twice over the same tape yields identical results.
    pub fn backward(&self, output: &Var<T>) -> Result<Gradients<T>> {
        assert!(
            Rc::ptr_eq(&self.inner, &output.tape.inner),
            "output var belongs to a different tape"
        );
        let inner = self.inner.borrow();
        let out_node = &inner.nodes[output.id];
        if out_node.value.len() != 1 {
            return Err(Error::Shape {
                op: "backward (scalar output required)",
                lhs: out_node.value.shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<RealArray<T>>> = vec![None; inner.nodes.len()];
        grads[output.id] = Some(RealArray::scalar(T::one()));

        for id in (0..=output.id).rev() {
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let node = &inner.nodes[id];
            Self::backward_op(&inner, node, &grad_out, &mut grads)?;
            grads[id] = Some(grad_out);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        grads: &mut [Option<RealArray<T>>],
        id: usize,
        update: impl Fn(&mut RealArray<T>),
    ) {
        update(grads[id].as_mut().expect("gradient buffer pre-allocated"));
    }

    fn backward_op(
        inner: &TapeInner<T>,
        node: &Node<T>,
        grad_out: &RealArray<T>,
        grads: &mut [Option<RealArray<T>>],
    ) -> Result<()> {
        // Ensure gradient buffers exist for all inputs.
        for &inp in &node.inputs {
            if grads[inp].is_none() {
                let shape = inner.nodes[inp].value.shape();
                grads[inp] = Some(RealArray::zeros(shape[0], shape[1]));
            }
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { ta, tb } => {
                let a = &inner.nodes[node.inputs[0]].value;
                let b = &inner.nodes[node.inputs[1]].value;
                let da = if !ta {
                    matmul_raw(grad_out, b, false, !tb)
                } else {
                    matmul_raw(b, grad_out, *tb, true)
                };
                let db = if !tb {
                    matmul_raw(a, grad_out, !ta, false)
                } else {
                    matmul_raw(grad_out, a, true, *ta)
                };
                add_into(grads[node.inputs[0]].as_mut().unwrap(), &da);
                add_into(grads[node.inputs[1]].as_mut().unwrap(), &db);
            }
            Op::Add => {
                add_into(grads[node.inputs[0]].as_mut().unwrap(), grad_out);
                add_into(grads[node.inputs[1]].as_mut().unwrap(), grad_out);
            }
            Op::Sub => {
                add_into(grads[node.inputs[0]].as_mut().unwrap(), grad_out);
                sub_into(grads[node.inputs[1]].as_mut().unwrap(), grad_out);
            }
            Op::Mul => {
                let a = &inner.nodes[node.inputs[0]].value;
                let b = &inner.nodes[node.inputs[1]].value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for ((g, &go), &bv) in
                        g.data_mut().iter_mut().zip(grad_out.data()).zip(b.data())
                    {
                        *g += go * bv;
                    }
                });
                Self::accumulate(grads, node.inputs[1], |g| {
                    for ((g, &go), &av) in
                        g.data_mut().iter_mut().zip(grad_out.data()).zip(a.data())
                    {
                        *g += go * av;
                    }
                });
            }
            Op::Min => {
                let a = &inner.nodes[node.inputs[0]].value;
                let b = &inner.nodes[node.inputs[1]].value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        if a.data()[i] <= b.data()[i] {
                            g.data_mut()[i] += grad_out.data()[i];
                        }
                    }
                });
                Self::accumulate(grads, node.inputs[1], |g| {
                    for i in 0..g.len() {
                        if b.data()[i] < a.data()[i] {
                            g.data_mut()[i] += grad_out.data()[i];
                        }
                    }
                });
            }
            Op::Relu => {
                let x = &inner.nodes[node.inputs[0]].value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        if x.data()[i] > T::zero() {
                            g.data_mut()[i] += grad_out.data()[i];
                        }
                    }
                });
            }
            Op::Sigmoid => {
                let y = &node.value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        let yv = y.data()[i];
                        g.data_mut()[i] += grad_out.data()[i] * yv * (T::one() - yv);
                    }
                });
            }
            Op::Tanh => {
                let y = &node.value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        let yv = y.data()[i];
                        g.data_mut()[i] += grad_out.data()[i] * (T::one() - yv * yv);
                    }
                });
            }
            Op::Exp => {
                let y = &node.value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        g.data_mut()[i] += grad_out.data()[i] * y.data()[i];
                    }
                });
            }
            Op::Log => {
                let x = &inner.nodes[node.inputs[0]].value;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        g.data_mut()[i] += grad_out.data()[i] / x.data()[i];
                    }
                });
            }
            Op::Scale { factor } => {
                let f = *factor;
                Self::accumulate(grads, node.inputs[0], |g| {
                    for i in 0..g.len() {
                        g.data_mut()[i] += grad_out.data()[i] * f;
                    }
                });
            }
            Op::Concat { axis, sizes } => {
                let mut offset = 0;
                for (part, &size) in node.inputs.iter().zip(sizes) {
                    let g = grads[*part].as_mut().unwrap();
                    if *axis == 0 {
                        for r in 0..size {
                            for c in 0..g.cols() {
                                let add = grad_out.at(offset + r, c);
                                let cur = g.at(r, c);
                                g.set(r, c, cur + add);
                            }
                        }
                    } else {
                        for r in 0..g.rows() {
                            for c in 0..size {
                                let add = grad_out.at(r, offset + c);
                                let cur = g.at(r, c);
                                g.set(r, c, cur + add);
                            }
                        }
                    }
                    offset += size;
                }
            }
            Op::MaskedSoftmax { axis, mask } => {
                let y = &node.value;
                let [rows, cols] = y.shape();
                let g = grads[node.inputs[0]].as_mut().unwrap();
                let slices = if *axis == 1 { rows } else { cols };
                let slice_len = if *axis == 1 { cols } else { rows };
                for s in 0..slices {
                    let idx = |i: usize| if *axis == 1 { (s, i) } else { (i, s) };
                    let mut dot = T::zero();
                    for i in 0..slice_len {
                        let (r, c) = idx(i);
                        dot += grad_out.at(r, c) * y.at(r, c);
                    }
                    for i in 0..slice_len {
                        let (r, c) = idx(i);
                        let masked = mask.as_ref().is_some_and(|m| !m[r * cols + c]);
                        if masked {
                            continue;
                        }
                        let yv = y.at(r, c);
                        let cur = g.at(r, c);
                        g.set(r, c, cur + yv * (grad_out.at(r, c) - dot));
                    }
                }
            }
            Op::MaxPool { argmax } => {
                let g = grads[node.inputs[0]].as_mut().unwrap();
                for (r, &c) in argmax.iter().enumerate() {
                    let cur = g.at(r, c);
                    g.set(r, c, cur + grad_out.at(r, 0));
                }
            }
            Op::Gather { axis, indices } => {
                let g = grads[node.inputs[0]].as_mut().unwrap();
                for (out_pos, &src) in indices.iter().enumerate() {
                    if *axis == 0 {
                        for c in 0..g.cols() {
                            let cur = g.at(src, c);
                            g.set(src, c, cur + grad_out.at(out_pos, c));
                        }
                    } else {
                        for r in 0..g.rows() {
                            let cur = g.at(r, src);
                            g.set(r, src, cur + grad_out.at(r, out_pos));
                        }
                    }
                }
            }
            Op::SumReduce => {
                let go = grad_out.item();
                Self::accumulate(grads, node.inputs[0], |g| {
                    for v in g.data_mut() {
                        *v += go;
                    }
                });
            }
        }
        Ok(())
    }
}

/// Gradients from one backward sweep, indexed by tape node.
pub struct Gradients<T: Real> {
    grads: Vec<Option<RealArray<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `var`, or `None` if no gradient flowed
    /// to it.
    pub fn wrt(&self, var: &Var<T>) -> Option<&RealArray<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `var`, zeros when none flowed.
    pub fn wrt_or_zeros(&self, var: &Var<T>) -> RealArray<T> {
        match self.wrt(var) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = var.shape();
                RealArray::zeros(r, c)
            }
        }
    }
}

impl<T: Real> Var<T> {
    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn value(&self) -> Ref<'_, RealArray<T>> {
        Ref::map(self.tape.inner.borrow(), |inner| {
            &inner.nodes[self.id].value
        })
    }

    pub fn to_array(&self) -> RealArray<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    /// Scalar value of a 1×1 var.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn same_tape(&self, other: &Var<T>) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "vars must share a tape"
        );
    }

    fn binary_elementwise(
        &self,
        other: &Var<T>,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<T>> {
        self.same_tape(other);
        let value = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let data: Vec<T> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            RealArray::new(a.rows(), a.cols(), data)?
        };
        self.tape.push_checked(op, vec![self.id, other.id], value)
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var<T>> {
        let value = {
            let x = self.value();
            let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
            RealArray::new(x.rows(), x.cols(), data)?
        };
        self.tape.push_checked(op, vec![self.id], value)
    }

    /// Matrix product, with optional transposition of either operand.
    pub fn matmul_t(&self, other: &Var<T>, ta: bool, tb: bool) -> Result<Var<T>> {
        self.same_tape(other);
        let value = {
            let a = self.value();
            let b = other.value();
            let inner_a = if ta { a.rows() } else { a.cols() };
            let inner_b = if tb { b.cols() } else { b.rows() };
            if inner_a != inner_b {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            matmul_raw(&a, &b, ta, tb)
        };
        self.tape
            .push_checked(Op::MatMul { ta, tb }, vec![self.id, other.id], value)
    }

    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.matmul_t(other, false, false)
    }

    /// selfᵀ · other
    pub fn matmul_tn(&self, other: &Var<T>) -> Result<Var<T>> {
        self.matmul_t(other, true, false)
    }

    /// self · otherᵀ
    pub fn matmul_nt(&self, other: &Var<T>) -> Result<Var<T>> {
        self.matmul_t(other, false, true)
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary_elementwise(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary_elementwise(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary_elementwise(other, Op::Mul, |a, b| a * b)
    }

    /// Elementwise minimum. On ties the gradient routes to `self`.
    pub fn min(&self, other: &Var<T>) -> Result<Var<T>> {
        let out = self.binary_elementwise(other, Op::Min, |a, b| if a <= b { a } else { b })?;
        let first_wins = {
            let a = self.value();
            let b = other.value();
            a.data()
                .iter()
                .zip(b.data())
                .filter(|(x, y)| x <= y)
                .count() as u64
        };
        self.tape.inner.borrow_mut().min_first += first_wins;
        Ok(out)
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let out = self.unary(Op::Relu, |v| if v > T::zero() { v } else { T::zero() })?;
        let positives = {
            let x = self.value();
            x.data().iter().filter(|v| **v > T::zero()).count() as u64
        };
        self.tape.inner.borrow_mut().relu_positive += positives;
        Ok(out)
    }

    pub fn sigmoid(&self) -> Result<Var<T>> {
        self.unary(Op::Sigmoid, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&self) -> Result<Var<T>> {
        self.unary(Op::Tanh, Float::tanh)
    }

    pub fn exp(&self) -> Result<Var<T>> {
        self.unary(Op::Exp, Float::exp)
    }

    pub fn log(&self) -> Result<Var<T>> {
        self.unary(Op::Log, Float::ln)
    }

    /// Multiply every entry by a constant.
    pub fn scale(&self, factor: T) -> Result<Var<T>> {
        self.unary(Op::Scale { factor }, |v| v * factor)
    }

    /// Numerically stabilized softmax along `axis` (1 = within each row,
    /// 0 = within each column). Masked entries are exactly 0 in the
    /// output; each slice must keep at least one unmasked entry.
    pub fn masked_softmax(&self, axis: usize, mask: Option<&[bool]>) -> Result<Var<T>> {
        assert!(axis < 2, "softmax axis must be 0 or 1");
        let value = {
            let x = self.value();
            let [rows, cols] = x.shape();
            if let Some(m) = mask {
                if m.len() != rows * cols {
                    return Err(Error::Shape {
                        op: "masked-softmax",
                        lhs: vec![rows, cols],
                        rhs: vec![m.len()],
                    });
                }
            }
            let unmasked = |r: usize, c: usize| mask.is_none_or(|m| m[r * cols + c]);
            let slices = if axis == 1 { rows } else { cols };
            let slice_len = if axis == 1 { cols } else { rows };
            let mut out = RealArray::zeros(rows, cols);
            for s in 0..slices {
                let idx = |i: usize| if axis == 1 { (s, i) } else { (i, s) };
                let mut max: Option<T> = None;
                for i in 0..slice_len {
                    let (r, c) = idx(i);
                    if unmasked(r, c) {
                        let v = x.at(r, c);
                        max = Some(match max {
                            Some(m) if m >= v => m,
                            _ => v,
                        });
                    }
                }
                let Some(max) = max else {
                    return Err(Error::DegenerateSlice { axis, slice: s });
                };
                let mut denom = T::zero();
                for i in 0..slice_len {
                    let (r, c) = idx(i);
                    if unmasked(r, c) {
                        let e = (x.at(r, c) - max).exp();
                        out.set(r, c, e);
                        denom += e;
                    }
                }
                for i in 0..slice_len {
                    let (r, c) = idx(i);
                    if unmasked(r, c) {
                        out.set(r, c, out.at(r, c) / denom);
                    }
                }
            }
            out
        };
        self.tape.push_checked(
            Op::MaskedSoftmax {
                axis,
                mask: mask.map(<[bool]>::to_vec),
            },
            vec![self.id],
            value,
        )
    }

    /// Row-wise max over columns: d×N → d×1. Pooling a single column is
    /// the identity. Ties pick the lowest column index.
    pub fn max_pool(&self) -> Result<Var<T>> {
        let (value, argmax) = {
            let x = self.value();
            let mut out = RealArray::zeros(x.rows(), 1);
            let mut argmax = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                let mut best = x.at(r, 0);
                let mut best_c = 0;
                for c in 1..x.cols() {
                    if x.at(r, c) > best {
                        best = x.at(r, c);
                        best_c = c;
                    }
                }
                out.set(r, 0, best);
                argmax.push(best_c);
            }
            (out, argmax)
        };
        let checksum: u64 = argmax
            .iter()
            .enumerate()
            .map(|(r, &c)| (r as u64 + 1).wrapping_mul(c as u64 + 1))
            .fold(0u64, u64::wrapping_add);
        {
            let mut inner = self.tape.inner.borrow_mut();
            inner.argmax_checksum = inner.argmax_checksum.wrapping_add(checksum);
        }
        self.tape
            .push_checked(Op::MaxPool { argmax }, vec![self.id], value)
    }

    fn gather(&self, axis: usize, indices: &[usize]) -> Result<Var<T>> {
        assert!(axis < 2, "gather axis must be 0 or 1");
        assert!(!indices.is_empty(), "gather requires at least one index");
        let value = {
            let x = self.value();
            let dim = if axis == 0 { x.rows() } else { x.cols() };
            if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
                return Err(Error::Shape {
                    op: "gather-rows",
                    lhs: vec![bad],
                    rhs: vec![dim],
                });
            }
            if axis == 0 {
                let mut out = RealArray::zeros(indices.len(), x.cols());
                for (r, &src) in indices.iter().enumerate() {
                    for c in 0..x.cols() {
                        out.set(r, c, x.at(src, c));
                    }
                }
                out
            } else {
                let mut out = RealArray::zeros(x.rows(), indices.len());
                for (c, &src) in indices.iter().enumerate() {
                    for r in 0..x.rows() {
                        out.set(r, c, x.at(r, src));
                    }
                }
                out
            }
        };
        self.tape.push_checked(
            Op::Gather {
                axis,
                indices: indices.to_vec(),
            },
            vec![self.id],
            value,
        )
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<T>> {
        self.gather(0, indices)
    }

    pub fn gather_cols(&self, indices: &[usize]) -> Result<Var<T>> {
        self.gather(1, indices)
    }

    /// Sum of all entries, as a 1×1 var.
    pub fn sum(&self) -> Result<Var<T>> {
        let value = {
            let x = self.value();
            let mut acc = T::zero();
            for &v in x.data() {
                acc += v;
            }
            RealArray::scalar(acc)
        };
        self.tape.push_checked(Op::SumReduce, vec![self.id], value)
    }
}

fn matmul_raw<T: Real>(a: &RealArray<T>, b: &RealArray<T>, ta: bool, tb: bool) -> RealArray<T> {
    let m = if ta { a.cols() } else { a.rows() };
    let k = if ta { a.rows() } else { a.cols() };
    let n = if tb { b.rows() } else { b.cols() };
    let mut out = RealArray::zeros(m, n);
    for i in 0..m {
        for p in 0..k {
            let av = if ta { a.at(p, i) } else { a.at(i, p) };
            if av == T::zero() {
                continue;
            }
            for j in 0..n {
                let bv = if tb { b.at(j, p) } else { b.at(p, j) };
                let cur = out.at(i, j);
                out.set(i, j, cur + av * bv);
            }
        }
    }
    out
}

fn add_into<T: Real>(dst: &mut RealArray<T>, src: &RealArray<T>) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

fn sub_into<T: Real>(dst: &mut RealArray<T>, src: &RealArray<T>) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d -= *s;
    }
}
