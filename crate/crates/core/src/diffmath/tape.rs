use std::ops::Range;

use ndarray::{s, Array2, Axis};

use super::{DiffError, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-defined operation with a hand-written pullback.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; the tape only needs the vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradient contribution for each input given the upstream gradient.
    /// Must return one entry per input, `None` meaning "no contribution".
    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        output: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> Vec<Option<Array2<f64>>>;
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Affine {
        w: Var,
        x: Var,
        b: Var,
    },
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    ClampMin(Var, f64),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Affine { .. } => "affine",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSums(_) => "row_sums",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::ClampMin(..) => "clamp_min",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Affine { w, x, b } => vec![*w, *x, *b],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::ClampMin(a, _) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Slice { src, .. } | Op::GatherRows { src, .. } => vec![*src],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

/// A recorded value together with its provenance and gradient slot.
pub struct TensorNode {
    pub(crate) value: Array2<f64>,
    pub(crate) grad: Option<Array2<f64>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

impl TensorNode {
    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }

    /// Accumulated gradient; zeros when nothing has been propagated yet.
    pub fn grad(&self) -> Array2<f64> {
        match &self.grad {
            Some(g) => g.clone(),
            None => Array2::zeros(self.value.raw_dim()),
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }
}

/// Define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and parents always have smaller indices than children.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<TensorNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push_leaf(value, false)
    }

    pub fn scalar_param(&mut self, v: f64) -> Var {
        self.param(Array2::from_elem((1, 1), v))
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Row vector `1×n` leaf.
    pub fn row_param(&mut self, values: &[f64]) -> Var {
        self.param(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    pub fn row_constant(&mut self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    fn push_leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(TensorNode {
            value,
            grad: None,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(TensorNode {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn node(&self, v: Var) -> &TensorNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn grad(&self, v: Var) -> Array2<f64> {
        self.nodes[v.0].grad()
    }

    /// Registers an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Array2<f64>, op: Box<dyn CustomOp>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Clears the gradient slot of every node.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Propagates d(root)/d(node) to every leaf with `requires_grad`.
    ///
    /// Leaf gradients accumulate across calls until [`Tape::zero_grad`];
    /// intermediate gradients are recomputed from scratch on every call.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(DiffError::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => *acc += &g,
                    None => *slot = Some(g),
                }
                continue;
            }
            for (parent, contrib) in self.pullback(i, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn pullback(&self, i: usize, g: &Array2<f64>) -> Vec<(Var, Array2<f64>)> {
        let node = &self.nodes[i];
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, unbroadcast(g, val(a))), (*b, unbroadcast(g, val(b)))],
            Op::Sub(a, b) => vec![
                (*a, unbroadcast(g, val(a))),
                (*b, unbroadcast(&g.mapv(|x| -x), val(b))),
            ],
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let ga = if va.dim() == (1, 1) && vb.dim() != (1, 1) {
                    scalar_array((g * vb).sum())
                } else if vb.dim() == (1, 1) {
                    g * vb[[0, 0]]
                } else {
                    g * vb
                };
                let gb = if vb.dim() == (1, 1) && va.dim() != (1, 1) {
                    scalar_array((g * va).sum())
                } else if va.dim() == (1, 1) {
                    g * va[[0, 0]]
                } else {
                    g * va
                };
                vec![(*a, ga), (*b, gb)]
            }
            Op::MatMul(a, b) => vec![(*a, g.dot(&val(b).t())), (*b, val(a).t().dot(g))],
            Op::Affine { w, x, b } => {
                // y = x wᵀ + b
                vec![
                    (*w, g.t().dot(val(x))),
                    (*x, g.dot(val(w))),
                    (*b, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                ]
            }
            Op::AddRow(m, r) => vec![
                (*m, g.clone()),
                (*r, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            ],
            Op::Scale(a, c) => vec![(*a, g * *c)],
            Op::Tanh(a) => {
                let y = &node.value;
                vec![(
                    *a,
                    ndarray::Zip::from(g)
                        .and(y)
                        .map_collect(|&g, &y| g * (1.0 - y * y)),
                )]
            }
            Op::Relu(a) => vec![(
                *a,
                ndarray::Zip::from(g)
                    .and(val(a))
                    .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }),
            )],
            Op::Exp(a) => vec![(*a, g * &node.value)],
            Op::Log(a) => vec![(*a, g / val(a))],
            Op::Softplus(a) => vec![(
                *a,
                ndarray::Zip::from(g)
                    .and(val(a))
                    .map_collect(|&g, &x| g * sigmoid(x)),
            )],
            Op::Square(a) => vec![(
                *a,
                ndarray::Zip::from(g)
                    .and(val(a))
                    .map_collect(|&g, &x| 2.0 * g * x),
            )],
            Op::Sqrt(a) => vec![(
                *a,
                ndarray::Zip::from(g)
                    .and(&node.value)
                    .map_collect(|&g, &y| 0.5 * g / y),
            )],
            Op::Sum(a) => vec![(*a, Array2::from_elem(val(a).raw_dim(), g[[0, 0]]))],
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                vec![(*a, Array2::from_elem(val(a).raw_dim(), g[[0, 0]] / n))]
            }
            Op::RowSums(a) => {
                let (r, c) = val(a).dim();
                let mut out = Array2::zeros((r, c));
                for (mut row, gi) in out.rows_mut().into_iter().zip(g.column(0)) {
                    row.fill(*gi);
                }
                vec![(*a, out)]
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let (r, c) = val(p).dim();
                    let piece = if *axis == 0 {
                        g.slice(s![offset..offset + r, ..]).to_owned()
                    } else {
                        g.slice(s![.., offset..offset + c]).to_owned()
                    };
                    offset += if *axis == 0 { r } else { c };
                    out.push((*p, piece));
                }
                out
            }
            Op::Slice { src, rows, cols } => {
                let mut out = Array2::zeros(val(src).raw_dim());
                out.slice_mut(s![rows.clone(), cols.clone()]).assign(g);
                vec![(*src, out)]
            }
            Op::GatherRows { src, idx } => {
                let mut out = Array2::zeros(val(src).raw_dim());
                for (k, &j) in idx.iter().enumerate() {
                    let mut row = out.row_mut(j);
                    row += &g.row(k);
                }
                vec![(*src, out)]
            }
            Op::ClampMin(a, c) => vec![(
                *a,
                ndarray::Zip::from(g)
                    .and(val(a))
                    .map_collect(|&g, &x| if x > *c { g } else { 0.0 }),
            )],
            Op::Custom { inputs, op } => {
                let ins: Vec<&Array2<f64>> = inputs.iter().map(val).collect();
                let contribs = op.backward(&ins, &node.value, g);
                inputs
                    .iter()
                    .zip(contribs)
                    .filter_map(|(v, c)| c.map(|c| (*v, c)))
                    .collect()
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn scalar_array(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

/// Reduces a gradient to the shape of a scalar-broadcast operand.
fn unbroadcast(g: &Array2<f64>, operand: &Array2<f64>) -> Array2<f64> {
    if operand.dim() == g.dim() {
        g.clone()
    } else {
        scalar_array(g.sum())
    }
}
