use std::cell::Cell;
use std::rc::Rc;
use std::sync::Arc;

use crate::kernels;
use crate::op::{Aux, Op, OpKind};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{AutogradError, Result};

/// Builder interface shared by the recording [`Tape`] and the
/// memory-lean [`Eager`] evaluator. Model code written against it runs
/// identically under both.
pub trait Graph<R: Real> {
    type Var: Clone;

    /// Non-differentiable input.
    fn constant(&mut self, t: Tensor<R>) -> Self::Var;
    /// Named differentiable leaf.
    fn param(&mut self, name: &str, t: &Tensor<R>) -> Self::Var;
    fn apply(&mut self, op: Op, inputs: &[&Self::Var]) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<R>;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        self.apply(Op::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        self.apply(Op::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        self.apply(Op::Mul, &[a, b])
    }
    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var {
        self.apply(Op::Scale(c), &[a])
    }
    fn add_scalar(&mut self, a: &Self::Var, c: f64) -> Self::Var {
        self.apply(Op::AddScalar(c), &[a])
    }
    fn add_row(&mut self, a: &Self::Var, row: &Self::Var) -> Self::Var {
        self.apply(Op::AddRow, &[a, row])
    }
    fn mul_row(&mut self, a: &Self::Var, row: &Self::Var) -> Self::Var {
        self.apply(Op::MulRow, &[a, row])
    }
    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        self.apply(Op::MatMul, &[a, b])
    }
    fn attention(&mut self, qkv: &Self::Var, heads: usize, group_len: usize) -> Self::Var {
        self.apply(Op::Attention { heads, group_len }, &[qkv])
    }
    fn softmax(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Softmax, &[a])
    }
    fn gelu(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Gelu, &[a])
    }
    fn square(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Square, &[a])
    }
    fn sqrt(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Sqrt, &[a])
    }
    fn magnitude(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Magnitude, &[a])
    }
    fn sum_last(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::SumLast, &[a])
    }
    fn sum(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Sum, &[a])
    }
    fn mean(&mut self, a: &Self::Var) -> Self::Var {
        self.apply(Op::Mean, &[a])
    }
    fn gather(&mut self, a: &Self::Var, index: Arc<[u32]>) -> Self::Var {
        self.apply(Op::Gather { index }, &[a])
    }
    fn reshape(&mut self, a: &Self::Var, shape: Vec<usize>) -> Self::Var {
        self.apply(Op::Reshape { shape }, &[a])
    }
    fn upsample2x(&mut self, a: &Self::Var, images: usize, height: usize, width: usize) -> Self::Var {
        self.apply(Op::Upsample2x { images, height, width }, &[a])
    }
    fn batch_norm(&mut self, a: &Self::Var, eps: f64) -> Self::Var {
        self.apply(Op::BatchNorm { eps }, &[a])
    }
    /// `x·W + b` for `x: [N, K]`, `W: [K, M]`, `b: [M]`.
    fn linear(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var) -> Self::Var {
        let y = self.matmul(x, w);
        self.add_row(&y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug)]
struct Node<R> {
    value: Tensor<R>,
    op: Op,
    inputs: Vec<NodeId>,
    aux: Aux<R>,
    requires_grad: bool,
    name: Option<String>,
}

/// Recorded computation supporting reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

thread_local! {
    static FAULT: Cell<Option<OpKind>> = const { Cell::new(None) };
}

/// Scales the backward output of every `kind` node by 1.5 on this thread.
/// Used to confirm the finite-difference check notices a broken derivative.
#[doc(hidden)]
pub fn inject_backward_fault(kind: Option<OpKind>) {
    FAULT.with(|f| f.set(kind));
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op, inputs: Vec<NodeId>, aux: Aux<R>, requires_grad: bool, name: Option<String>) -> NodeId {
        self.nodes.push(Node { value, op, inputs, aux, requires_grad, name });
        NodeId(self.nodes.len() - 1)
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn aux(&self, id: NodeId) -> &Aux<R> {
        &self.nodes[id.0].aux
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Vec<Tensor<R>> {
        let mut values: Vec<Tensor<R>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                _ => {
                    let ins: Vec<&Tensor<R>> = node.inputs.iter().map(|i| &values[i.0]).collect();
                    kernels::forward(&node.op, &ins).0
                }
            };
            values.push(v);
        }
        values
    }

    /// Gradients of the scalar node `loss` with respect to every node that
    /// requires them.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<R>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(AutogradError::NotScalar(root.value.shape().to_vec()));
        }
        let fault = FAULT.with(|f| f.get());
        let mut grads: Vec<Option<Tensor<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), R::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
            let ins: Vec<&Tensor<R>> = node.inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            let mut input_grads = kernels::backward(&node.op, &ins, &node.value, &node.aux, &g, &needs);
            if fault == Some(node.op.kind()) {
                for t in input_grads.iter_mut().flatten() {
                    t.data_mut().iter_mut().for_each(|v| *v = *v * R::of(1.5));
                }
            }
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.accumulate(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        let mut out = Gradients { grads };
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Some(name), Some(g)) = (&node.name, out.get(NodeId(id))) {
                if !g.is_finite() {
                    return Err(AutogradError::NonFinite(name.clone()));
                }
            }
        }
        out.grads.truncate(loss.0 + 1);
        Ok(out)
    }

    /// Named leaves in recording order.
    pub fn params(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.name.as_deref().map(|name| (name, NodeId(i))))
    }
}

impl<R: Real> Graph<R> for Tape<R> {
    type Var = NodeId;

    fn constant(&mut self, t: Tensor<R>) -> NodeId {
        self.push(t, Op::Leaf, Vec::new(), Aux::None, false, None)
    }

    fn param(&mut self, name: &str, t: &Tensor<R>) -> NodeId {
        self.push(t.clone(), Op::Leaf, Vec::new(), Aux::None, true, Some(name.to_string()))
    }

    fn apply(&mut self, op: Op, inputs: &[&NodeId]) -> NodeId {
        let (value, aux) = {
            let ins: Vec<&Tensor<R>> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            kernels::forward(&op, &ins)
        };
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let aux = if requires_grad { aux } else { Aux::None };
        let ids = inputs.iter().map(|i| **i).collect();
        self.push(value, op, ids, aux, requires_grad, None)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<R> {
        &self.nodes[v.0].value
    }
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// `None` when the node does not influence the loss or needs no gradient.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<R>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with zeros substituted for unreachable nodes.
    pub fn get_or_zeros(&self, tape: &Tape<R>, id: NodeId) -> Tensor<R> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(&id).shape().to_vec()))
    }
}

/// Evaluates eagerly and keeps nothing beyond what the caller holds.
#[derive(Debug, Default)]
pub struct Eager;

impl<R: Real> Graph<R> for Eager {
    type Var = Rc<Tensor<R>>;

    fn constant(&mut self, t: Tensor<R>) -> Self::Var {
        Rc::new(t)
    }

    fn param(&mut self, _name: &str, t: &Tensor<R>) -> Self::Var {
        Rc::new(t.clone())
    }

    fn apply(&mut self, op: Op, inputs: &[&Self::Var]) -> Self::Var {
        let ins: Vec<&Tensor<R>> = inputs.iter().map(|v| v.as_ref()).collect();
        Rc::new(kernels::forward(&op, &ins).0)
    }

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<R> {
        v
    }
}
