//! Tape-based reverse-mode automatic differentiation.
//!
//! Every backward rule is written in terms of other tape operations, so when
//! [`Tape::grad`] runs with `create_graph = true` the gradients it returns are
//! ordinary tracked [`Var`]s and can be differentiated again. This is what lets
//! the meta-trainer differentiate through inner-loop gradient steps.

mod backward;
pub mod gradcheck;
mod tensor;

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub use gradcheck::{check_gradient, check_second_order, gradient_report, second_order_report, CheckReport};
pub use tensor::{broadcast_shape, Tensor};

pub(crate) use tensor::{sigmoid, softplus};

use crate::error::{structural, Error, Result};

/// Operation recorded on the tape, together with any non-tensor payload.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Neg,
    /// Elementwise product with trailing-dimension broadcasting.
    Mul,
    ScalarMul(f64),
    MatMul,
    Transpose,
    SumAll,
    SumAxis(usize),
    MeanAll,
    Square,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    LogSumExpRows,
    Detach,
    /// Concatenation along axis 0.
    Concat,
    /// Row gather along axis 0.
    IndexSelect(Rc<[usize]>),
    /// Adjoint of `IndexSelect`: scatter-add rows into a zero tensor with `rows` rows.
    ScatterRows { indices: Rc<[usize]>, rows: usize },
    Reshape(Vec<usize>),
    BroadcastTo(Vec<usize>),
    SumTo(Vec<usize>),
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf,
    Constant,
    Op(OpKind),
}

struct Node {
    kind: NodeKind,
    parents: Vec<usize>,
    value: Rc<Tensor>,
    requires_grad: bool,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Append-only record of a computation.
///
/// A tape is single-threaded; build one per episode (or per worker) and drop it
/// when the gradients have been extracted.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    grad_enabled: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("id", &self.id).field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value();
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &v.shape())
            .field("tracked", &self.is_tracked())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            grad_enabled: Cell::new(true),
        }
    }

    /// Generation counter distinguishing tapes within a process.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, kind: NodeKind, parents: Vec<usize>, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { kind, parents, value: Rc::new(value), requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Registers a tracked leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(NodeKind::Leaf, vec![], value, true)
    }

    /// Registers an untracked value; gradients never flow into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(NodeKind::Constant, vec![], value, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Builds a tensor from raw parts, tracked or not.
    pub fn tensor(&self, shape: Vec<usize>, data: Vec<f64>, track: bool) -> Result<Var<'_>> {
        let t = Tensor::new(shape, data)?;
        Ok(if track { self.leaf(t) } else { self.constant(t) })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        std::ptr::eq(self, v.tape) && v.id < self.len()
    }

    /// Computes the forward value of `op` and appends a node for it.
    pub fn apply<'t>(&'t self, op: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        for v in inputs {
            if !self.owns(v) {
                return structural("input tensor belongs to a different tape");
            }
        }
        let vals: Vec<Rc<Tensor>> = inputs.iter().map(|v| self.value_of(v.id)).collect();
        let arity = match op {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::MatMul => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if vals.len() != n {
                return structural(format!("{op:?} takes {n} inputs, got {}", vals.len()));
            }
        } else if vals.is_empty() {
            return structural("concat needs at least one input");
        }
        let a = &vals[0];
        let value = match &op {
            OpKind::Add => a.zip_broadcast(&vals[1], |x, y| x + y)?,
            OpKind::Sub => a.zip_broadcast(&vals[1], |x, y| x - y)?,
            OpKind::Mul => a.zip_broadcast(&vals[1], |x, y| x * y)?,
            OpKind::Neg => a.map(|x| -x),
            OpKind::ScalarMul(k) => {
                let k = *k;
                a.map(|x| k * x)
            }
            OpKind::MatMul => a.matmul(&vals[1])?,
            OpKind::Transpose => a.transpose()?,
            OpKind::SumAll => a.sum_all(),
            OpKind::SumAxis(axis) => a.sum_axis(*axis)?,
            OpKind::MeanAll => {
                if a.is_empty() {
                    return structural("mean of an empty tensor");
                }
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            OpKind::Square => a.map(|x| x * x),
            OpKind::Exp => a.map(f64::exp),
            OpKind::Log => {
                if let Some(bad) = a.data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                a.map(f64::ln)
            }
            OpKind::Tanh => a.map(f64::tanh),
            OpKind::Sigmoid => a.map(sigmoid),
            OpKind::Relu => a.map(|x| if x > 0.0 { x } else { 0.0 }),
            OpKind::Softplus => {
                if let Some(bad) = a.data().iter().find(|x| x.is_nan()) {
                    return Err(Error::Domain(format!("softplus of {bad}")));
                }
                a.map(softplus)
            }
            OpKind::LogSumExpRows => a.logsumexp_rows()?,
            OpKind::Detach => (**a).clone(),
            OpKind::Concat => {
                let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
                Tensor::concat_rows(&refs)?
            }
            OpKind::IndexSelect(idx) => a.index_select(idx)?,
            OpKind::ScatterRows { indices, rows } => a.scatter_rows(indices, *rows)?,
            OpKind::Reshape(shape) => a.reshape(shape)?,
            OpKind::BroadcastTo(shape) => a.broadcast_to(shape)?,
            OpKind::SumTo(shape) => a.sum_to(shape)?,
        };
        let requires_grad = !matches!(op, OpKind::Detach)
            && self.grad_enabled.get()
            && inputs.iter().any(|v| self.requires_grad(v.id));
        Ok(self.push(NodeKind::Op(op), inputs.iter().map(|v| v.id).collect(), value, requires_grad))
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned gradients are tracked nodes and can be
    /// differentiated again; otherwise they are constants.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
        if !self.owns(&output) {
            return structural("output tensor belongs to a different tape");
        }
        let out_val = output.value();
        if out_val.len() != 1 || out_val.rank() > 1 {
            return Err(Error::Contract(format!(
                "grad needs a scalar output, got shape {:?}",
                out_val.shape()
            )));
        }
        for w in wrt {
            if !self.owns(w) {
                return structural("gradient requested for a tensor that is not on this tape");
            }
            if !self.requires_grad(w.id) {
                return structural(format!("node {} is not tracked", w.id));
            }
        }

        let prev = self.grad_enabled.replace(create_graph);
        let result = self.backward_sweep(output, wrt);
        self.grad_enabled.set(prev);
        result
    }

    fn backward_sweep<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let n = output.id + 1;
        let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
        if self.requires_grad(output.id) {
            grads[output.id] = Some(self.constant(Tensor::ones(output.value().shape())));
        }
        let lowest = wrt.iter().map(|w| w.id).min().unwrap_or(0);
        for id in (lowest..n).rev() {
            let Some(g) = grads[id] else { continue };
            let (kind, parents) = {
                let nodes = self.nodes.borrow();
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                (node.kind.clone(), node.parents.clone())
            };
            let NodeKind::Op(op) = kind else { continue };
            let needs: Vec<bool> = parents.iter().map(|&p| self.requires_grad(p)).collect();
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let inputs: Vec<Var<'t>> = parents.iter().map(|&p| Var { tape: self, id: p }).collect();
            let out = Var { tape: self, id };
            let parent_grads = backward::rule(&op, &inputs, out, g, &needs)?;
            for ((p, pg), need) in parents.iter().zip(parent_grads).zip(&needs) {
                let (true, Some(pg)) = (*need, pg) else { continue };
                grads[*p] = Some(match grads[*p] {
                    Some(acc) => acc.add(pg)?,
                    None => pg,
                });
            }
        }
        wrt.iter()
            .map(|w| {
                Ok(match grads[w.id] {
                    Some(g) => g,
                    None => self.constant(Tensor::zeros(w.value().shape())),
                })
            })
            .collect()
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    /// Borrow of the underlying value; do not hold it across tape mutations.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes: Ref<'_, Vec<Node>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn item(&self) -> Result<f64> {
        self.with_value(Tensor::item)
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn un(self, op: OpKind) -> Result<Self> {
        self.tape.apply(op, &[self])
    }

    fn bin(self, op: OpKind, other: Self) -> Result<Self> {
        self.tape.apply(op, &[self, other])
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.bin(OpKind::Add, other)
    }
    pub fn sub(self, other: Self) -> Result<Self> {
        self.bin(OpKind::Sub, other)
    }
    pub fn mul(self, other: Self) -> Result<Self> {
        self.bin(OpKind::Mul, other)
    }
    pub fn matmul(self, other: Self) -> Result<Self> {
        self.bin(OpKind::MatMul, other)
    }
    pub fn neg(self) -> Result<Self> {
        self.un(OpKind::Neg)
    }
    pub fn scale(self, k: f64) -> Result<Self> {
        self.un(OpKind::ScalarMul(k))
    }
    pub fn transpose(self) -> Result<Self> {
        self.un(OpKind::Transpose)
    }
    pub fn sum(self) -> Result<Self> {
        self.un(OpKind::SumAll)
    }
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        self.un(OpKind::SumAxis(axis))
    }
    pub fn mean(self) -> Result<Self> {
        self.un(OpKind::MeanAll)
    }
    pub fn square(self) -> Result<Self> {
        self.un(OpKind::Square)
    }
    pub fn exp(self) -> Result<Self> {
        self.un(OpKind::Exp)
    }
    pub fn ln(self) -> Result<Self> {
        self.un(OpKind::Log)
    }
    pub fn tanh(self) -> Result<Self> {
        self.un(OpKind::Tanh)
    }
    pub fn sigmoid(self) -> Result<Self> {
        self.un(OpKind::Sigmoid)
    }
    pub fn relu(self) -> Result<Self> {
        self.un(OpKind::Relu)
    }
    pub fn softplus(self) -> Result<Self> {
        self.un(OpKind::Softplus)
    }
    pub fn logsumexp_rows(self) -> Result<Self> {
        self.un(OpKind::LogSumExpRows)
    }
    pub fn detach(self) -> Result<Self> {
        self.un(OpKind::Detach)
    }
    pub fn index_select(self, indices: &[usize]) -> Result<Self> {
        self.un(OpKind::IndexSelect(indices.into()))
    }
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        self.un(OpKind::Reshape(shape.to_vec()))
    }
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Self> {
        self.un(OpKind::BroadcastTo(shape.to_vec()))
    }
    pub fn sum_to(self, shape: &[usize]) -> Result<Self> {
        self.un(OpKind::SumTo(shape.to_vec()))
    }

    pub fn concat(parts: &[Var<'t>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Structural("concat of zero tensors".into()))?;
        first.tape.apply(OpKind::Concat, parts)
    }
}
