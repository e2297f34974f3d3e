use std::collections::BTreeMap;

use super::ops::{Cache, Op};
use super::tensor::Tensor;
use super::GradError;

/// Index of a node within its graph.
pub type NodeId = usize;

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    out: Tensor,
    cache: Cache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Built,
    Forwarded,
}

/// Recorded computation producing a scalar loss.
///
/// Nodes are appended in topological order by construction: an operation can
/// only reference ids that already exist. A graph instance is single-writer
/// during `forward`/`backward`; clone the graph to run several passes in
/// parallel over shared parameter values.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    names: BTreeMap<String, NodeId>,
    loss: Option<NodeId>,
    phase: Phase,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            names: BTreeMap::new(),
            loss: None,
            phase: Phase::Built,
        }
    }

    /// Differentiable leaf whose values are supplied at `forward` time.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, Tensor::zeros(shape), true)
    }

    /// Non-differentiable leaf (targets, masks); excluded from gradients.
    pub fn input_no_grad(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.leaf(name, Tensor::zeros(shape), false)
    }

    /// Differentiable leaf with persistent values (model parameters).
    pub fn param(&mut self, name: &str, tensor: Tensor) -> NodeId {
        self.leaf(name, tensor, true)
    }

    fn leaf(&mut self, name: &str, tensor: Tensor, differentiable: bool) -> NodeId {
        assert!(
            !self.names.contains_key(name),
            "duplicate leaf name '{name}'"
        );
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf {
                name: name.to_string(),
                differentiable,
            },
            inputs: Vec::new(),
            out: tensor,
            cache: Cache::None,
        });
        self.names.insert(name.to_string(), id);
        self.phase = Phase::Built;
        id
    }

    /// Record an operation over existing nodes.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, GradError> {
        let id = self.nodes.len();
        for &i in inputs {
            assert!(i < id, "op inputs must precede the node");
        }
        let in_shapes: Vec<&[usize]> = inputs
            .iter()
            .map(|&i| self.nodes[i].out.shape.as_slice())
            .collect();
        let shape = op
            .infer_shape(&in_shapes)
            .map_err(|detail| GradError::ShapeMismatch {
                node: id,
                op: op.name(),
                detail,
            })?;
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            out: Tensor::zeros(&shape),
            cache: Cache::None,
        });
        self.phase = Phase::Built;
        Ok(id)
    }

    /// Mark the scalar output that `backward` differentiates.
    pub fn set_loss(&mut self, id: NodeId) -> Result<(), GradError> {
        if !self.nodes[id].out.is_scalar() {
            return Err(GradError::ShapeMismatch {
                node: id,
                op: self.nodes[id].op.name(),
                detail: format!("loss must have shape [1], got {:?}", self.nodes[id].out.shape),
            });
        }
        self.loss = Some(id);
        Ok(())
    }

    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].out.shape
    }

    /// Output values of a node after `forward`.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].out.values
    }

    /// Gradient slot of a node after `backward`.
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].out.grad
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Replace a leaf's values in place (shape-checked).
    pub fn bind(&mut self, name: &str, values: &[f64]) -> Result<(), GradError> {
        let id = *self
            .names
            .get(name)
            .ok_or_else(|| GradError::UnknownLeaf(name.to_string()))?;
        let t = &mut self.nodes[id].out;
        if t.numel() != values.len() {
            return Err(GradError::ShapeMismatch {
                node: id,
                op: "leaf",
                detail: format!(
                    "binding '{}': expected {} values for shape {:?}, got {}",
                    name,
                    t.numel(),
                    t.shape,
                    values.len()
                ),
            });
        }
        t.values.copy_from_slice(values);
        self.phase = Phase::Built;
        Ok(())
    }

    /// Evaluate every node in order; returns the loss value.
    ///
    /// All free inputs must have been bound. Fails if any node produces a
    /// non-finite value.
    pub fn forward(&mut self) -> Result<f64, GradError> {
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &mut rest[0];
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &before[i].out).collect();
            node.cache = node.op.eval(&ins, &mut node.out.values);
            if !node.out.values.iter().all(|v| v.is_finite()) {
                self.phase = Phase::Built;
                return Err(GradError::NonFinite {
                    node: id,
                    op: node.op.name(),
                });
            }
        }
        self.phase = Phase::Forwarded;
        let loss = self.loss.ok_or(GradError::NoLoss)?;
        Ok(self.nodes[loss].out.values[0])
    }

    /// Convenience: bind a set of inputs, then run `forward`.
    pub fn forward_with(&mut self, bindings: &[(&str, &[f64])]) -> Result<f64, GradError> {
        for (name, values) in bindings {
            self.bind(name, values)?;
        }
        self.forward()
    }

    /// Reverse pass from the loss node. Returns gradients for every
    /// differentiable named leaf (inputs and parameters alike).
    pub fn backward(&mut self) -> Result<BTreeMap<String, Tensor>, GradError> {
        if self.phase != Phase::Forwarded {
            return Err(GradError::BackwardBeforeForward);
        }
        let loss = self.loss.ok_or(GradError::NoLoss)?;
        for node in &mut self.nodes {
            node.out.zero_grad();
        }
        self.nodes[loss].out.grad[0] = 1.0;
        for id in (0..self.nodes.len()).rev() {
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            let contributions = {
                let node = &self.nodes[id];
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].out).collect();
                node.op
                    .vjp(&ins, &node.out.values, &node.out.grad, &node.cache)
            };
            let inputs = self.nodes[id].inputs.clone();
            for (slot, contribution) in inputs.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                let dst = &mut self.nodes[*slot].out.grad;
                for (d, v) in dst.iter_mut().zip(&c) {
                    *d += v;
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !node.out.grad.iter().all(|g| g.is_finite()) {
                return Err(GradError::NonFinite {
                    node: id,
                    op: node.op.name(),
                });
            }
        }
        let mut grads = BTreeMap::new();
        for (name, &id) in &self.names {
            if let Op::Leaf {
                differentiable: true,
                ..
            } = self.nodes[id].op
            {
                let mut t = Tensor::zeros(&self.nodes[id].out.shape);
                t.values.copy_from_slice(&self.nodes[id].out.grad);
                grads.insert(name.clone(), t);
            }
        }
        Ok(grads)
    }

    // Builder shorthands -----------------------------------------------------

    pub fn frame(&mut self, x: NodeId, frame_len: usize) -> Result<NodeId, GradError> {
        self.apply(Op::Frame { frame_len }, &[x])
    }

    pub fn conv1d_same(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Conv1dSame, &[x, w, b])
    }

    pub fn max_pool(&mut self, x: NodeId, pool: usize) -> Result<NodeId, GradError> {
        self.apply(Op::MaxPool { pool }, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Relu, &[x])
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Square, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, GradError> {
        self.apply(Op::Scale(c), &[x])
    }

    pub fn concat_time(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::ConcatTime, &[x])
    }

    pub fn flatten_frames(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::FlattenFrames, &[x])
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Flatten, &[x])
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Dense, &[x, w, b])
    }

    pub fn lstm_last(
        &mut self,
        seq: NodeId,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
        units: usize,
    ) -> Result<NodeId, GradError> {
        self.apply(Op::LstmLast { units }, &[seq, wx, wh, b])
    }

    pub fn tanh_rnn_last(
        &mut self,
        seq: NodeId,
        u: NodeId,
        w: NodeId,
        units: usize,
    ) -> Result<NodeId, GradError> {
        self.apply(Op::TanhRnnLast { units }, &[seq, u, w])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Mean, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Sum, &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, GradError> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        onehot: NodeId,
    ) -> Result<NodeId, GradError> {
        self.apply(Op::SoftmaxCrossEntropy, &[logits, onehot])
    }
}
