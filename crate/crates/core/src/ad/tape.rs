use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::TensorOps;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Offset,
    Powf(f64),
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Sqrt,
    MatMul,
    Transpose,
    Sum,
    SumToShape,
    BroadcastTo,
    Reshape,
    SliceLast { start: usize, len: usize },
    ConcatLast,
}

/// Operand as recorded: tape index (if the operand is tracked) and its value.
#[derive(Clone)]
struct Arg<T> {
    index: Option<usize>,
    value: T,
}

struct Node<T> {
    op: Op,
    args: Vec<Arg<T>>,
    out: T,
}

/// Append-only record of operations. Node arguments always refer to earlier
/// indices, so one reverse pass over the indices is a valid backward sweep.
pub struct Tape<T> {
    nodes: Rc<RefCell<Vec<Node<T>>>>,
}

impl<T> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            nodes: Rc::clone(&self.nodes),
        }
    }
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Self {
            nodes: Rc::new(RefCell::new(Vec::new())),
        }
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.nodes.borrow().len())
    }
}

/// Reverse-mode value. Values derived only from constants are not recorded.
#[derive(Clone)]
pub struct Rev<T> {
    tape: Option<Tape<T>>,
    index: usize,
    value: T,
}

impl<T: fmt::Debug> fmt::Debug for Rev<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tape {
            Some(_) => write!(f, "Rev(#{}, {:?})", self.index, self.value),
            None => write!(f, "Rev(const, {:?})", self.value),
        }
    }
}

impl<T: TensorOps> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: T) -> Rev<T> {
        self.push(Op::Leaf, Vec::new(), value)
    }

    fn push(&self, op: Op, args: Vec<Arg<T>>, out: T) -> Rev<T> {
        let mut nodes = self.nodes.borrow_mut();
        debug_assert!(args.iter().all(|a| a.index.is_none_or(|i| i < nodes.len())));
        let index = nodes.len();
        nodes.push(Node {
            op,
            args,
            out: out.clone(),
        });
        Rev {
            tape: Some(self.clone()),
            index,
            value: out,
        }
    }

    /// Gradients of a single-element `output` with respect to each of `wrt`.
    /// Visits each recorded node at most once, in reverse order.
    pub fn gradient(&self, output: &Rev<T>, wrt: &[&Rev<T>]) -> Result<Vec<T>> {
        if output.value.value().len() != 1 {
            return Err(Error::ScalarOutputRequired(output.shape().to_vec()));
        }
        let zeros = |r: &Rev<T>| T::constant(Tensor::zeros(r.shape()));
        let Some(out_tape) = &output.tape else {
            return Ok(wrt.iter().map(|r| zeros(r)).collect());
        };
        assert!(Rc::ptr_eq(&out_tape.nodes, &self.nodes), "output recorded on another tape");

        let nodes = self.nodes.borrow();
        let mut adjoints: Vec<Option<T>> = vec![None; output.index + 1];
        adjoints[output.index] = Some(T::constant(Tensor::ones(output.shape())));

        for i in (0..=output.index).rev() {
            let Some(g) = adjoints[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                adjoints[i] = Some(g);
                continue;
            }
            for (k, contribution) in backward(node, &g) {
                let j = node.args[k].index.expect("contribution to untracked arg");
                adjoints[j] = Some(match adjoints[j].take() {
                    Some(acc) => acc.add(&contribution),
                    None => contribution,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|r| match &r.tape {
                Some(t) if Rc::ptr_eq(&t.nodes, &self.nodes) && r.index <= output.index => {
                    adjoints[r.index].clone().unwrap_or_else(|| zeros(r))
                }
                _ => zeros(r),
            })
            .collect())
    }
}

/// Adjoint contributions of one node to each of its tracked arguments.
fn backward<T: TensorOps>(node: &Node<T>, g: &T) -> Vec<(usize, T)> {
    let tracked = |k: usize| node.args.get(k).is_some_and(|a| a.index.is_some());
    let arg = |k: usize| &node.args[k].value;
    let y = &node.out;
    let mut out = Vec::with_capacity(node.args.len());
    let mut emit = |k: usize, f: &dyn Fn() -> T| {
        if tracked(k) {
            out.push((k, f()));
        }
    };
    match &node.op {
        Op::Leaf => {}
        Op::Add => {
            emit(0, &|| g.sum_to_shape(arg(0).shape()));
            emit(1, &|| g.sum_to_shape(arg(1).shape()));
        }
        Op::Sub => {
            emit(0, &|| g.sum_to_shape(arg(0).shape()));
            emit(1, &|| g.neg().sum_to_shape(arg(1).shape()));
        }
        Op::Mul => {
            emit(0, &|| g.mul(arg(1)).sum_to_shape(arg(0).shape()));
            emit(1, &|| g.mul(arg(0)).sum_to_shape(arg(1).shape()));
        }
        Op::Div => {
            emit(0, &|| g.div(arg(1)).sum_to_shape(arg(0).shape()));
            emit(1, &|| g.mul(y).div(arg(1)).neg().sum_to_shape(arg(1).shape()));
        }
        Op::Scale(c) => emit(0, &|| g.scale(*c)),
        Op::Offset => emit(0, &|| g.clone()),
        Op::Powf(p) => emit(0, &|| g.mul(&arg(0).powf(p - 1.0)).scale(*p)),
        Op::Exp => emit(0, &|| g.mul(y)),
        Op::Ln => emit(0, &|| g.div(arg(0))),
        Op::Sin => emit(0, &|| g.mul(&arg(0).cos())),
        Op::Cos => emit(0, &|| g.mul(&arg(0).sin()).neg()),
        Op::Tanh => emit(0, &|| g.mul(&y.square().neg().offset(1.0))),
        Op::Sigmoid => emit(0, &|| g.mul(&y.mul(&y.neg().offset(1.0)))),
        Op::Sqrt => emit(0, &|| g.div(y).scale(0.5)),
        Op::MatMul => {
            emit(0, &|| g.matmul(&arg(1).transpose()));
            emit(1, &|| arg(0).transpose().matmul(g));
        }
        Op::Transpose => emit(0, &|| g.transpose()),
        Op::Sum | Op::SumToShape => emit(0, &|| g.broadcast_to(arg(0).shape())),
        Op::BroadcastTo => emit(0, &|| g.sum_to_shape(arg(0).shape())),
        Op::Reshape => emit(0, &|| g.reshape(arg(0).shape())),
        Op::SliceLast { start, len } => emit(0, &|| {
            let shape = arg(0).shape();
            let width = *shape.last().unwrap();
            let pad = |w: usize| {
                let mut s = shape.to_vec();
                *s.last_mut().unwrap() = w;
                T::constant(Tensor::zeros(&s))
            };
            let mut parts = Vec::with_capacity(3);
            if *start > 0 {
                parts.push(pad(*start));
            }
            parts.push(g.clone());
            if start + len < width {
                parts.push(pad(width - start - len));
            }
            T::concat_last(&parts)
        }),
        Op::ConcatLast => {
            let mut offset = 0;
            for k in 0..node.args.len() {
                let w = *arg(k).shape().last().unwrap();
                emit(k, &|| g.slice_last(offset, w));
                offset += w;
            }
        }
    }
    out
}

impl<T: TensorOps> Rev<T> {
    pub fn constant(value: T) -> Self {
        Self {
            tape: None,
            index: 0,
            value,
        }
    }

    /// The value one level down.
    pub fn inner(&self) -> &T {
        &self.value
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_some()
    }

    fn record(op: Op, args: &[&Rev<T>], out: T) -> Rev<T> {
        let mut tape: Option<&Tape<T>> = None;
        for a in args {
            if let Some(t) = &a.tape {
                match tape {
                    None => tape = Some(t),
                    Some(prev) => assert!(
                        Rc::ptr_eq(&prev.nodes, &t.nodes),
                        "operands recorded on different tapes"
                    ),
                }
            }
        }
        match tape {
            None => Rev::constant(out),
            Some(tape) => {
                let args = args
                    .iter()
                    .map(|a| Arg {
                        index: a.tape.as_ref().map(|_| a.index),
                        value: a.value.clone(),
                    })
                    .collect();
                tape.push(op, args, out)
            }
        }
    }

    fn unary(&self, op: Op, out: T) -> Self {
        Self::record(op, &[self], out)
    }
}

impl<T: TensorOps> TensorOps for Rev<T> {
    fn constant(t: Tensor) -> Self {
        Rev::constant(T::constant(t))
    }

    fn value(&self) -> &Tensor {
        self.value.value()
    }

    fn is_constant(&self) -> bool {
        self.tape.is_none() && self.value.is_constant()
    }

    fn add(&self, rhs: &Self) -> Self {
        Self::record(Op::Add, &[self, rhs], self.value.add(&rhs.value))
    }

    fn sub(&self, rhs: &Self) -> Self {
        Self::record(Op::Sub, &[self, rhs], self.value.sub(&rhs.value))
    }

    fn mul(&self, rhs: &Self) -> Self {
        Self::record(Op::Mul, &[self, rhs], self.value.mul(&rhs.value))
    }

    fn div(&self, rhs: &Self) -> Self {
        Self::record(Op::Div, &[self, rhs], self.value.div(&rhs.value))
    }

    fn scale(&self, c: f64) -> Self {
        self.unary(Op::Scale(c), self.value.scale(c))
    }

    fn offset(&self, c: f64) -> Self {
        self.unary(Op::Offset, self.value.offset(c))
    }

    fn powf(&self, p: f64) -> Self {
        self.unary(Op::Powf(p), self.value.powf(p))
    }

    fn exp(&self) -> Self {
        self.unary(Op::Exp, self.value.exp())
    }

    fn ln(&self) -> Self {
        self.unary(Op::Ln, self.value.ln())
    }

    fn sin(&self) -> Self {
        self.unary(Op::Sin, self.value.sin())
    }

    fn cos(&self) -> Self {
        self.unary(Op::Cos, self.value.cos())
    }

    fn tanh(&self) -> Self {
        self.unary(Op::Tanh, self.value.tanh())
    }

    fn sigmoid(&self) -> Self {
        self.unary(Op::Sigmoid, self.value.sigmoid())
    }

    fn sqrt(&self) -> Self {
        self.unary(Op::Sqrt, self.value.sqrt())
    }

    fn matmul(&self, rhs: &Self) -> Self {
        Self::record(Op::MatMul, &[self, rhs], self.value.matmul(&rhs.value))
    }

    fn transpose(&self) -> Self {
        self.unary(Op::Transpose, self.value.transpose())
    }

    fn sum(&self) -> Self {
        self.unary(Op::Sum, self.value.sum())
    }

    fn sum_to_shape(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        self.unary(Op::SumToShape, self.value.sum_to_shape(shape))
    }

    fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        self.unary(Op::BroadcastTo, self.value.broadcast_to(shape))
    }

    fn reshape(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        self.unary(Op::Reshape, self.value.reshape(shape))
    }

    fn slice_last(&self, start: usize, len: usize) -> Self {
        if start == 0 && self.shape().last() == Some(&len) {
            return self.clone();
        }
        self.unary(Op::SliceLast { start, len }, self.value.slice_last(start, len))
    }

    fn concat_last(parts: &[Self]) -> Self {
        if parts.len() == 1 {
            return parts[0].clone();
        }
        let values: Vec<T> = parts.iter().map(|p| p.value.clone()).collect();
        let refs: Vec<&Rev<T>> = parts.iter().collect();
        Self::record(Op::ConcatLast, &refs, T::concat_last(&values))
    }
}
