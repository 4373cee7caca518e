use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::ops::{self, OpKind};
use super::Tensor;

/// An executor for tensor programs.
///
/// Model code is written once against this trait and runs either on a
/// [`Tape`] (records every op for reverse-mode gradients) or on [`Eager`]
/// (computes values only). Both share the same kernels.
pub trait Graph {
    type Node: Clone;

    fn constant(&mut self, value: Tensor) -> Self::Node;

    fn apply(&mut self, kind: OpKind, inputs: &[&Self::Node]) -> Result<Self::Node>;

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor;

    /// A named input that is trainable when `trainable` is set and the
    /// executor records gradients; a plain constant otherwise.
    fn leaf(&mut self, name: &str, value: Tensor, trainable: bool) -> Self::Node {
        let _ = (name, trainable);
        self.constant(value)
    }

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    fn matmul_transb(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::MatMulTransB, &[a, b])
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::Add, &[a, b])
    }

    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::Mul, &[a, b])
    }

    fn bias_add(&mut self, x: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::BiasAdd, &[x, b])
    }

    fn concat(&mut self, parts: &[&Self::Node]) -> Result<Self::Node> {
        self.apply(OpKind::Concat, parts)
    }

    fn tanh(&mut self, x: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::Tanh, &[x])
    }

    fn relu(&mut self, x: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::Relu, &[x])
    }

    fn sigmoid(&mut self, x: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    fn softmax(&mut self, x: &Self::Node, lengths: Option<Vec<usize>>) -> Result<Self::Node> {
        self.apply(OpKind::Softmax { lengths }, &[x])
    }

    fn gather(&mut self, table: &Self::Node, indices: Vec<usize>) -> Result<Self::Node> {
        self.apply(OpKind::Gather { indices }, &[table])
    }

    fn mean(&mut self, x: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::ReduceMean, &[x])
    }

    fn sum(&mut self, x: &Self::Node) -> Result<Self::Node> {
        self.apply(OpKind::Sum, &[x])
    }

    fn scale(&mut self, x: &Self::Node, c: f64) -> Result<Self::Node> {
        self.apply(OpKind::Scale(c), &[x])
    }

    fn reshape(&mut self, x: &Self::Node, shape: Vec<usize>) -> Result<Self::Node> {
        self.apply(OpKind::Reshape(shape), &[x])
    }

    fn slice_cols(&mut self, x: &Self::Node, start: usize, end: usize) -> Result<Self::Node> {
        self.apply(OpKind::SliceCols { start, end }, &[x])
    }

    fn batched_vecmat(&mut self, x: &Self::Node, mats: &Self::Node, m: usize, n: usize) -> Result<Self::Node> {
        self.apply(OpKind::BatchedVecMat { m, n }, &[x, mats])
    }

    fn batched_matvec(&mut self, mats: &Self::Node, x: &Self::Node, n: usize, m: usize) -> Result<Self::Node> {
        self.apply(OpKind::BatchedMatVec { n, m }, &[mats, x])
    }

    fn bce_with_logits(&mut self, logits: &Self::Node, labels: Vec<f64>) -> Result<Self::Node> {
        self.apply(OpKind::BceWithLogits { labels }, &[logits])
    }

    fn kl_bernoulli(&mut self, logits: &Self::Node, teacher: Vec<f64>) -> Result<Self::Node> {
        self.apply(OpKind::KlBernoulliLogits { teacher }, &[logits])
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum NodeOp {
    Leaf { param: Option<String> },
    Op { kind: OpKind, inputs: Vec<Var> },
}

#[derive(Debug)]
struct TapeNode {
    value: Tensor,
    op: NodeOp,
    requires_grad: bool,
}

/// Reverse-mode recording executor.
///
/// Nodes are appended in evaluation order, so every input index is smaller
/// than the index of the node consuming it and the tape is acyclic.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
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

    /// Registers a trainable leaf. Gradients are reported under `name`; if the
    /// same name is registered twice the contributions are summed.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push(TapeNode {
            value,
            op: NodeOp::Leaf {
                param: Some(name.into()),
            },
            requires_grad: true,
        })
    }

    /// Op kinds recorded on this tape, in first-use order.
    pub fn op_kinds(&self) -> Vec<&'static str> {
        let mut seen = Vec::new();
        for node in &self.nodes {
            if let NodeOp::Op { kind, .. } = &node.op {
                if !seen.contains(&kind.name()) {
                    seen.push(kind.name());
                }
            }
        }
        seen
    }

    fn push(&mut self, node: TapeNode) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Gradients of a scalar `loss` with respect to every parameter leaf that
    /// the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut out = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                NodeOp::Leaf { param: Some(name) } => {
                    out.entry(name.clone())
                        .and_modify(|acc: &mut Tensor| acc.add_assign(&g))
                        .or_insert(g);
                }
                NodeOp::Leaf { param: None } => {}
                NodeOp::Op { kind, inputs } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                    let input_grads = ops::backward(kind, &values, &node.value, &g, &needs);
                    for (v, ig) in inputs.iter().zip(input_grads) {
                        if let Some(ig) = ig {
                            match &mut grads[v.0] {
                                Some(acc) => acc.add_assign(&ig),
                                slot => *slot = Some(ig),
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients(out))
    }
}

impl Graph for Tape {
    type Node = Var;

    fn constant(&mut self, value: Tensor) -> Var {
        self.push(TapeNode {
            value,
            op: NodeOp::Leaf { param: None },
            requires_grad: false,
        })
    }

    fn apply(&mut self, kind: OpKind, inputs: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = ops::forward(&kind, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(TapeNode {
            value,
            op: NodeOp::Op {
                kind,
                inputs: inputs.iter().map(|v| **v).collect(),
            },
            requires_grad,
        }))
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor {
        &self.nodes[node.0].value
    }

    fn leaf(&mut self, name: &str, value: Tensor, trainable: bool) -> Var {
        if trainable {
            self.param(name, value)
        } else {
            self.constant(value)
        }
    }
}

/// Value-only executor; nothing is recorded.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Node = Arc<Tensor>;

    fn constant(&mut self, value: Tensor) -> Arc<Tensor> {
        Arc::new(value)
    }

    fn apply(&mut self, kind: OpKind, inputs: &[&Arc<Tensor>]) -> Result<Arc<Tensor>> {
        let values: Vec<&Tensor> = inputs.iter().map(|t| t.as_ref()).collect();
        ops::forward(&kind, &values).map(Arc::new)
    }

    fn value<'a>(&'a self, node: &'a Arc<Tensor>) -> &'a Tensor {
        node
    }
}

/// Parameter name to gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Tensor::all_finite)
    }
}
