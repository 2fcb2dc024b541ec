//! Minimal reverse-mode automatic differentiation over dense `f64` vectors.
//!
//! A [`Graph`] is an append-only arena of nodes; parents always precede
//! children, so [`Graph::forward`] is a single in-order sweep and
//! [`Graph::backward`] a single reverse sweep. Values are vectors; scalars
//! are length-1 vectors, and binary operations broadcast vector-scalar.
//!
//! Two primitives carry surrogate (straight-through) derivatives rather
//! than true ones: the rounded sigmoid, whose backward is the derivative
//! of the un-rounded sigmoid, and the threshold masks derived from it.
//! Sparsemax uses the exact Jacobian of the simplex projection on its
//! support. Everything else is plain chain rule.
//!
//! Accumulation order is fixed (left to right over indices, nodes in
//! reverse id order), so identical bindings produce bit-identical values
//! and adjoints.

use alloc::rc::Rc;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::matrix::Matrix;
use crate::projection;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Gradient of a scalar root with respect to one input node.
pub type Gradient = Vec<f64>;

/// Tie margin for the threshold masks: an entry exactly at the threshold
/// is classified as not exceeding it.
pub const MASK_EPSILON: f64 = 1e-16;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Abs(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Std(NodeId),
    Max(NodeId),
    MatVec { matrix: Rc<Matrix>, x: NodeId },
    Percentile { x: NodeId, q: f64 },
    RoundSigmoid { x: NodeId, decimals: u32 },
    MaskAbove { x: NodeId, threshold: f64 },
    MaskBelow { x: NodeId, threshold: f64 },
    Sparsemax(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Std(..) => "std",
            Op::Max(..) => "max",
            Op::MatVec { .. } => "matvec",
            Op::Percentile { .. } => "percentile",
            Op::RoundSigmoid { .. } => "round_sigmoid",
            Op::MaskAbove { .. } => "mask_above",
            Op::MaskBelow { .. } => "mask_below",
            Op::Sparsemax(..) => "sparsemax",
        }
    }
}

struct Node {
    op: Op,
    value: Vec<f64>,
    adjoint: Vec<f64>,
}

/// Errors raised while evaluating or differentiating a graph.
#[derive(Debug, Clone, PartialEq)]
pub enum TapeError {
    /// An input node was read before [`Graph::bind`] gave it a value.
    UnboundInput { node: usize },
    /// Evaluation produced a non-finite entry (overflow, log of a
    /// nonpositive value, division by zero).
    NonFinite { node: usize, op: &'static str },
    /// [`Graph::backward`] called without a matching prior forward pass.
    BackwardBeforeForward,
    /// The backward root is not a scalar.
    NonScalarRoot { node: usize, len: usize },
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::UnboundInput { node } => {
                write!(f, "input node {node} is unbound or bound to non-finite values")
            }
            TapeError::NonFinite { node, op } => {
                write!(f, "non-finite value at node {node} (op {op})")
            }
            TapeError::BackwardBeforeForward => {
                write!(f, "backward() requires a prior forward() on the same bindings")
            }
            TapeError::NonScalarRoot { node, len } => {
                write!(f, "backward root node {node} has length {len}, expected scalar")
            }
        }
    }
}

impl core::error::Error for TapeError {}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + Float::exp(-x))
    } else {
        let e = Float::exp(x);
        e / (1.0 + e)
    }
}

fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Linear-interpolation percentile on the sorted sample: rank
/// `q/100 * (n-1)` between order statistics. Returns the value and the
/// two bracketing positions in the (stable) sorted order with their
/// interpolation weights.
pub(crate) fn percentile_with_brackets(values: &[f64], q: f64) -> (f64, [(usize, f64); 2]) {
    debug_assert!(!values.is_empty());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = Float::floor(rank) as usize;
    let hi = Float::ceil(rank) as usize;
    let frac = rank - lo as f64;
    let value = values[order[lo]] * (1.0 - frac) + values[order[hi]] * frac;
    (value, [(order[lo], 1.0 - frac), (order[hi], frac)])
}

/// Append-only computation graph.
///
/// Build nodes with the operation methods, [`Graph::bind`] the inputs,
/// then [`Graph::forward`] and [`Graph::backward`]. Rebinding invalidates
/// the forward pass; the graph structure itself is reusable across
/// epochs.
pub struct Graph {
    nodes: Vec<Node>,
    forward_root: Option<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), forward_root: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Length of a node's value vector.
    pub fn node_len(&self, id: NodeId) -> usize {
        self.len_of(id)
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value: alloc::vec![f64::NAN; len], adjoint: alloc::vec![0.0; len] });
        id
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    /// Output length of a broadcasting binary op: equal lengths pass
    /// through, otherwise one side must be scalar.
    fn binary_len(&self, a: NodeId, b: NodeId) -> usize {
        let (la, lb) = (self.len_of(a), self.len_of(b));
        if la == lb {
            la
        } else if la == 1 {
            lb
        } else if lb == 1 {
            la
        } else {
            panic!("incompatible operand lengths {la} and {lb}");
        }
    }

    // ── Construction ──

    /// New unbound input vector of length `len`.
    pub fn input(&mut self, len: usize) -> NodeId {
        assert!(len > 0, "input length must be positive");
        self.push(Op::Input, len)
    }

    /// Constant vector.
    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        assert!(!values.is_empty(), "constant must be non-empty");
        let id = self.push(Op::Const, values.len());
        self.nodes[id.0].value.copy_from_slice(values);
        id
    }

    /// Constant scalar.
    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(&[value])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        self.push(Op::Add(a, b), len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        self.push(Op::Sub(a, b), len)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        self.push(Op::Mul(a, b), len)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        self.push(Op::Div(a, b), len)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Neg(x), len)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Exp(x), len)
    }

    /// Natural logarithm; evaluation fails on nonpositive entries.
    pub fn log(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Log(x), len)
    }

    /// Absolute value, subgradient 0 at the origin.
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Abs(x), len)
    }

    /// `max(0, x)`, subgradient 0 at the kink.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Relu(x), len)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Sigmoid(x), len)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x), 1)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x), 1)
    }

    /// Population standard deviation (divide by the sample count). The
    /// gradient is defined as 0 when the deviation is 0.
    pub fn std(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Std(x), 1)
    }

    /// Maximum entry; the subgradient goes to the first maximal index.
    pub fn max(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Max(x), 1)
    }

    /// `matrix * x`. The matrix is a constant; gradients flow to `x` only.
    pub fn matvec(&mut self, matrix: Rc<Matrix>, x: NodeId) -> NodeId {
        assert_eq!(matrix.cols(), self.len_of(x), "matvec dimension mismatch");
        let rows = matrix.rows();
        self.push(Op::MatVec { matrix, x }, rows)
    }

    /// Linear-interpolation percentile (`q` in percent, 0..=100). The
    /// gradient distributes onto the two bracketing order statistics by
    /// the interpolation weights.
    pub fn percentile(&mut self, x: NodeId, q: f64) -> NodeId {
        assert!((0.0..=100.0).contains(&q), "percentile q out of range");
        self.push(Op::Percentile { x, q }, 1)
    }

    /// `round(sigmoid(x) * 10^decimals) / 10^decimals`, rounding halves
    /// away from zero, with the un-rounded sigmoid derivative registered
    /// as the backward rule.
    pub fn round_sigmoid(&mut self, x: NodeId, decimals: u32) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::RoundSigmoid { x, decimals }, len)
    }

    /// Binary indicator of `x > threshold` (entries exactly at the
    /// threshold count as not above); straight-through backward
    /// `sigmoid'(x - threshold - eps)`.
    pub fn mask_above(&mut self, x: NodeId, threshold: f64) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::MaskAbove { x, threshold }, len)
    }

    /// Binary indicator of `x < threshold` (entries exactly at the
    /// threshold count as not below); straight-through backward
    /// `-sigmoid'(threshold + eps - x)`.
    pub fn mask_below(&mut self, x: NodeId, threshold: f64) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::MaskBelow { x, threshold }, len)
    }

    /// Projection of `x` onto the probability simplex, with the exact
    /// support-restricted Jacobian as the backward rule.
    pub fn sparsemax(&mut self, x: NodeId) -> NodeId {
        let len = self.len_of(x);
        self.push(Op::Sparsemax(x), len)
    }

    // ── Evaluation ──

    /// Binds an input node's value. Invalidates any previous forward pass.
    pub fn bind(&mut self, input: NodeId, values: &[f64]) {
        assert!(matches!(self.nodes[input.0].op, Op::Input), "bind target is not an input");
        assert_eq!(values.len(), self.len_of(input), "bind length mismatch");
        self.nodes[input.0].value.copy_from_slice(values);
        self.forward_root = None;
    }

    /// Value of a node after a forward pass.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Scalar value of a length-1 node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.len_of(id), 1);
        self.nodes[id.0].value[0]
    }

    /// Adjoint of a node after a backward pass.
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].adjoint
    }

    /// Evaluates every node up to and including `root` in id order and
    /// returns the root's value. All intermediate values stay cached.
    pub fn forward(&mut self, root: NodeId) -> Result<&[f64], TapeError> {
        self.forward_root = None;
        for idx in 0..=root.0 {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &mut rest[0];
            let value = |id: NodeId| -> &[f64] { &before[id.0].value };
            // Broadcast read: index i of a vector, or the single entry of
            // a scalar.
            let at = |v: &[f64], i: usize| -> f64 {
                if v.len() == 1 {
                    v[0]
                } else {
                    v[i]
                }
            };
            match &node.op {
                Op::Input => {
                    if node.value.iter().any(|v| !v.is_finite()) {
                        return Err(TapeError::UnboundInput { node: idx });
                    }
                }
                Op::Const => {}
                Op::Add(a, b) => {
                    let (a, b) = (value(*a), value(*b));
                    for i in 0..node.value.len() {
                        node.value[i] = at(a, i) + at(b, i);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (value(*a), value(*b));
                    for i in 0..node.value.len() {
                        node.value[i] = at(a, i) - at(b, i);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (value(*a), value(*b));
                    for i in 0..node.value.len() {
                        node.value[i] = at(a, i) * at(b, i);
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (value(*a), value(*b));
                    for i in 0..node.value.len() {
                        node.value[i] = at(a, i) / at(b, i);
                    }
                }
                Op::Neg(x) => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = -x[i];
                    }
                }
                Op::Exp(x) => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = Float::exp(x[i]);
                    }
                }
                Op::Log(x) => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = Float::ln(x[i]);
                    }
                }
                Op::Abs(x) => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = Float::abs(x[i]);
                    }
                }
                Op::Relu(x) => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = if x[i] > 0.0 { x[i] } else { 0.0 };
                    }
                }
                Op::Sigmoid(x) => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = sigmoid(x[i]);
                    }
                }
                Op::Sum(x) => {
                    let x = value(*x);
                    let mut acc = 0.0;
                    for v in x {
                        acc += v;
                    }
                    node.value[0] = acc;
                }
                Op::Mean(x) => {
                    let x = value(*x);
                    let mut acc = 0.0;
                    for v in x {
                        acc += v;
                    }
                    node.value[0] = acc / x.len() as f64;
                }
                Op::Std(x) => {
                    let x = value(*x);
                    node.value[0] = population_std(x);
                }
                Op::Max(x) => {
                    let x = value(*x);
                    let mut best = x[0];
                    for v in &x[1..] {
                        if *v > best {
                            best = *v;
                        }
                    }
                    node.value[0] = best;
                }
                Op::MatVec { matrix, x } => {
                    let y = matrix.matvec(value(*x));
                    node.value.copy_from_slice(&y);
                }
                Op::Percentile { x, q } => {
                    let (v, _) = percentile_with_brackets(value(*x), *q);
                    node.value[0] = v;
                }
                Op::RoundSigmoid { x, decimals } => {
                    let x = value(*x);
                    let scale = Float::powi(10.0f64, *decimals as i32);
                    for i in 0..node.value.len() {
                        node.value[i] = Float::round(sigmoid(x[i]) * scale) / scale;
                    }
                }
                Op::MaskAbove { x, threshold } => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = if x[i] > threshold + MASK_EPSILON { 1.0 } else { 0.0 };
                    }
                }
                Op::MaskBelow { x, threshold } => {
                    let x = value(*x);
                    for i in 0..node.value.len() {
                        node.value[i] = if x[i] < threshold - MASK_EPSILON { 1.0 } else { 0.0 };
                    }
                }
                Op::Sparsemax(x) => {
                    let w = projection::sparsemax(value(*x));
                    node.value.copy_from_slice(&w);
                }
            }
            if node.value.iter().any(|v| !v.is_finite()) {
                let op = node.op.name();
                return Err(TapeError::NonFinite { node: idx, op });
            }
        }
        self.forward_root = Some(root.0);
        Ok(&self.nodes[root.0].value)
    }

    /// Reverse sweep from a scalar `root`. Requires a forward pass over at
    /// least the same prefix on the current bindings. Adjoints of every
    /// node at or below `root` are (re)computed.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TapeError> {
        match self.forward_root {
            Some(fr) if fr >= root.0 => {}
            _ => return Err(TapeError::BackwardBeforeForward),
        }
        if self.len_of(root) != 1 {
            return Err(TapeError::NonScalarRoot { node: root.0, len: self.len_of(root) });
        }
        for node in self.nodes.iter_mut().take(root.0 + 1) {
            node.adjoint.iter_mut().for_each(|a| *a = 0.0);
        }
        self.nodes[root.0].adjoint[0] = 1.0;

        for idx in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let d = &node.adjoint;
            // Accumulate into a parent. Three shapes: elementwise (equal
            // lengths), broadcast scalar parent (reduce over the output),
            // and reduction/matvec (scatter over the parent; the closure
            // is indexed by parent coordinate).
            macro_rules! spread {
                ($parent:expr, $f:expr) => {{
                    let p = &mut before[$parent.0];
                    if p.value.len() == d.len() {
                        for i in 0..d.len() {
                            p.adjoint[i] += $f(i);
                        }
                    } else if p.value.len() == 1 {
                        for i in 0..d.len() {
                            p.adjoint[0] += $f(i);
                        }
                    } else {
                        for i in 0..p.value.len() {
                            p.adjoint[i] += $f(i);
                        }
                    }
                }};
            }
            let broadcast_at = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            match &node.op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    spread!(a, |i: usize| d[i]);
                    spread!(b, |i: usize| d[i]);
                }
                Op::Sub(a, b) => {
                    spread!(a, |i: usize| d[i]);
                    spread!(b, |i: usize| -d[i]);
                }
                Op::Mul(a, b) => {
                    let bv: Vec<f64> = before[b.0].value.clone();
                    let av: Vec<f64> = before[a.0].value.clone();
                    spread!(a, |i: usize| d[i] * broadcast_at(&bv, i));
                    spread!(b, |i: usize| d[i] * broadcast_at(&av, i));
                }
                Op::Div(a, b) => {
                    let bv: Vec<f64> = before[b.0].value.clone();
                    let av: Vec<f64> = before[a.0].value.clone();
                    spread!(a, |i: usize| d[i] / broadcast_at(&bv, i));
                    spread!(b, |i: usize| {
                        let den = broadcast_at(&bv, i);
                        -d[i] * broadcast_at(&av, i) / (den * den)
                    });
                }
                Op::Neg(x) => spread!(x, |i: usize| -d[i]),
                Op::Exp(x) => {
                    let out = &node.value;
                    spread!(x, |i: usize| d[i] * out[i]);
                }
                Op::Log(x) => {
                    let xv: Vec<f64> = before[x.0].value.clone();
                    spread!(x, |i: usize| d[i] / xv[i]);
                }
                Op::Abs(x) => {
                    let xv: Vec<f64> = before[x.0].value.clone();
                    spread!(x, |i: usize| {
                        d[i] * if xv[i] > 0.0 {
                            1.0
                        } else if xv[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                }
                Op::Relu(x) => {
                    let xv: Vec<f64> = before[x.0].value.clone();
                    spread!(x, |i: usize| if xv[i] > 0.0 { d[i] } else { 0.0 });
                }
                Op::Sigmoid(x) => {
                    let out = &node.value;
                    spread!(x, |i: usize| d[i] * out[i] * (1.0 - out[i]));
                }
                Op::Sum(x) => {
                    let d0 = d[0];
                    spread!(x, |_i: usize| d0);
                }
                Op::Mean(x) => {
                    let scale = d[0] / before[x.0].value.len() as f64;
                    spread!(x, |_i: usize| scale);
                }
                Op::Std(x) => {
                    let xv = &before[x.0].value;
                    let n = xv.len() as f64;
                    let mut mean = 0.0;
                    for v in xv.iter() {
                        mean += v;
                    }
                    mean /= n;
                    let s = node.value[0];
                    if s > 0.0 {
                        let d0 = d[0];
                        let xv: Vec<f64> = xv.clone();
                        spread!(x, |i: usize| d0 * (xv[i] - mean) / (n * s));
                    }
                }
                Op::Max(x) => {
                    let xv = &before[x.0].value;
                    let mut arg = 0;
                    for (i, v) in xv.iter().enumerate() {
                        if *v > xv[arg] {
                            arg = i;
                        }
                    }
                    let d0 = d[0];
                    spread!(x, |i: usize| if i == arg { d0 } else { 0.0 });
                }
                Op::MatVec { matrix, x } => {
                    let g = matrix.matvec_transpose(d);
                    spread!(x, |i: usize| g[i]);
                }
                Op::Percentile { x, q } => {
                    let (_, brackets) = percentile_with_brackets(&before[x.0].value, *q);
                    let d0 = d[0];
                    let p = &mut before[x.0];
                    for (pos, weight) in brackets {
                        p.adjoint[pos] += d0 * weight;
                    }
                }
                Op::RoundSigmoid { x, .. } => {
                    let xv: Vec<f64> = before[x.0].value.clone();
                    spread!(x, |i: usize| d[i] * sigmoid_derivative(xv[i]));
                }
                Op::MaskAbove { x, threshold } => {
                    let t = *threshold;
                    let xv: Vec<f64> = before[x.0].value.clone();
                    spread!(x, |i: usize| d[i] * sigmoid_derivative(xv[i] - t - MASK_EPSILON));
                }
                Op::MaskBelow { x, threshold } => {
                    let t = *threshold;
                    let xv: Vec<f64> = before[x.0].value.clone();
                    spread!(x, |i: usize| -d[i] * sigmoid_derivative(t + MASK_EPSILON - xv[i]));
                }
                Op::Sparsemax(x) => {
                    let g = projection::sparsemax_jvp_from_output(&node.value, d);
                    spread!(x, |i: usize| g[i]);
                }
            }
        }
        Ok(())
    }
}

/// Population standard deviation (normalized by the sample count).
pub(crate) fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for v in x {
        mean += v;
    }
    mean /= n;
    let mut acc = 0.0;
    for v in x {
        let dev = v - mean;
        acc += dev * dev;
    }
    Float::sqrt(acc / n)
}

/// Central-difference gradient estimate `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// per coordinate. Independent of the tape; used as the gradient oracle.
pub fn finite_difference<F, E>(mut f: F, at: &[f64], step: f64) -> Result<Gradient, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    assert!(step > 0.0, "finite difference step must be positive");
    let mut grad = Vec::with_capacity(at.len());
    let mut point = at.to_vec();
    for i in 0..at.len() {
        point[i] = at[i] + step;
        let up = f(&point)?;
        point[i] = at[i] - step;
        let down = f(&point)?;
        point[i] = at[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}
