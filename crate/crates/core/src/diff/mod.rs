//! Reverse-mode differentiation over dense [`Grid`]s.
//!
//! A [`Graph`] is built once with the builder methods, then evaluated any
//! number of times against [`Bindings`] for its leaves. Nodes are appended in
//! order, so every node's inputs precede it and the graph is acyclic by
//! construction. Shape rules are checked at evaluation time and reported with
//! the offending node index.
//!
//! ```
//! use uwseg::diff::{Bindings, Graph};
//! use uwseg::Grid;
//!
//! let mut g = Graph::new();
//! let w = g.leaf("w", &[]);
//! let sq = g.mul(w, w);
//! g.set_output(sq);
//!
//! let mut b = Bindings::new();
//! b.bind(w, Grid::scalar(3.0));
//! let (value, grads) = g.value_and_grad(&b, &[w]).unwrap();
//! assert_eq!(value, 9.0);
//! assert_eq!(grads[0].item(), 6.0);
//! ```

mod eval;
mod gradcheck;
mod kernels;

pub use gradcheck::{gradcheck, relative_error, tensor_relative_error, GradReport, LeafReport};

use crate::error::Result;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf { name: String, shape: Vec<usize> },
    Const(Grid),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// Constant factor times a grid.
    Scale(NodeId, f64),
    /// Single-element node expanded to `shape`.
    Broadcast { src: NodeId, shape: Vec<usize> },
    /// `x[c, ...] + bias[c]`.
    AddBias { x: NodeId, bias: NodeId },
    MatMul(NodeId, NodeId),
    /// Stride-1 zero-padded convolution, `x: [Cin,H,W]`, `w: [Cout,Cin,k,k]`, k ∈ {1,3}.
    Conv2d { x: NodeId, w: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Identity inside `[lo, hi]` (inclusive), constant outside.
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Sum(NodeId),
    Mean(NodeId),
    Reshape { x: NodeId, shape: Vec<usize> },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Broadcast { .. } => "broadcast",
            Op::AddBias { .. } => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Clamp { .. } => "clamp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape { .. } => "reshape",
        }
    }

    fn inputs(&self) -> Inputs {
        use Op::*;
        match *self {
            Leaf { .. } | Const(_) => Inputs::None,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) => Inputs::Two(a, b),
            AddBias { x, bias } => Inputs::Two(x, bias),
            Conv2d { x, w } => Inputs::Two(x, w),
            Scale(x, _)
            | Broadcast { src: x, .. }
            | Relu(x)
            | Sigmoid(x)
            | Exp(x)
            | Log(x)
            | Clamp { x, .. }
            | Sum(x)
            | Mean(x)
            | Reshape { x, .. } => Inputs::One(x),
        }
    }
}

#[derive(Clone, Copy)]
enum Inputs {
    None,
    One(NodeId),
    Two(NodeId, NodeId),
}

impl Inputs {
    fn iter(self) -> impl Iterator<Item = NodeId> {
        let (a, b) = match self {
            Inputs::None => (None, None),
            Inputs::One(a) => (Some(a), None),
            Inputs::Two(a, b) => (Some(a), Some(b)),
        };
        a.into_iter().chain(b)
    }
}

/// Ordered list of primitive operations with a single scalar output.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    fn push(&mut self, op: Op) -> NodeId {
        for input in op.inputs().iter() {
            assert!(input.0 < self.nodes.len(), "input node does not exist");
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a bindable leaf with a fixed shape.
    pub fn leaf(&mut self, name: impl Into<String>, shape: &[usize]) -> NodeId {
        self.push(Op::Leaf {
            name: name.into(),
            shape: shape.to_vec(),
        })
    }

    pub fn constant(&mut self, value: Grid) -> NodeId {
        self.push(Op::Const(value))
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Grid::scalar(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(x, factor))
    }

    pub fn broadcast(&mut self, src: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Broadcast {
            src,
            shape: shape.to_vec(),
        })
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias { x, bias })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.push(Op::Conv2d { x, w })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Log(x))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi, "clamp bounds out of order");
        self.push(Op::Clamp { x, lo, hi })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// `1 - x` for a single-element node.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let one = self.scalar(1.0);
        self.sub(one, x)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, &str, &[usize])> {
        self.nodes.iter().enumerate().filter_map(|(i, op)| match op {
            Op::Leaf { name, shape } => Some((NodeId(i), name.as_str(), shape.as_slice())),
            _ => None,
        })
    }

    /// Scalar value of the output for the given bindings.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<f64> {
        let trace = self.forward(bindings)?;
        Ok(trace.output_value())
    }

    /// Gradient of the output with respect to each node in `wrt`, in order.
    pub fn gradient(&self, bindings: &Bindings, wrt: &[NodeId]) -> Result<Vec<Grid>> {
        Ok(self.value_and_grad(bindings, wrt)?.1)
    }

    pub fn value_and_grad(&self, bindings: &Bindings, wrt: &[NodeId]) -> Result<(f64, Vec<Grid>)> {
        let trace = self.forward(bindings)?;
        let grads = self.backward(&trace, wrt)?;
        Ok((trace.output_value(), grads))
    }
}

/// Values bound to the leaves of a graph, keyed by leaf node.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    values: Vec<Option<Grid>>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, leaf: NodeId, value: Grid) {
        if self.values.len() <= leaf.0 {
            self.values.resize(leaf.0 + 1, None);
        }
        self.values[leaf.0] = Some(value);
    }

    pub fn with(mut self, leaf: NodeId, value: Grid) -> Self {
        self.bind(leaf, value);
        self
    }

    pub fn get(&self, leaf: NodeId) -> Option<&Grid> {
        self.values.get(leaf.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, leaf: NodeId) -> Option<&mut Grid> {
        self.values.get_mut(leaf.0).and_then(Option::as_mut)
    }
}

pub use eval::Trace;
pub(crate) use eval::sigmoid;
