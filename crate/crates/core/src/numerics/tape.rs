//! Matrix-valued reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the indices
//! of its operands. [`Tape::backward`] walks the nodes in reverse creation
//! order, which is a valid topological order because operands are always
//! created before their consumers. Parameters are bound by name so that
//! gradients can be routed back into a [`ParamStore`].

use std::collections::{BTreeMap, HashMap};

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ConcatCols(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    SoftmaxRows(Var),
    /// `softmax_rows(scale · (Q·Kᵀ) ⊙ gate)`; the gate is a constant.
    GatedAttention {
        q: Var,
        k: Var,
        gate: Var,
        scale: f64,
    },
    Sum(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    names: HashMap<usize, String>,
}

/// Gradients of one scalar with respect to every node that needed them.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not tied to a named parameter.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds parameter `name` from `store`. Repeated bindings share one node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        self.names.insert(v.0, name.to_string());
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulNt(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds the `1×c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(Error::shape(
                "add_row",
                format!("bias {:?} for {n}x{c}", self.shape(bias)),
            ));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        if c > 0 {
            for row in value.data_mut().chunks_mut(c) {
                for (v, bb) in row.iter_mut().zip(&b) {
                    *v += bb;
                }
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(a, bias), ng))
    }

    /// `scale·a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        let ng = self.needs(a);
        self.push(value, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let ng = parts.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.needs(a);
        self.push(value, Op::Square(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).softmax_rows();
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Attention weights `softmax_j(scale · ⟨q_i, k_j⟩ · gate_ij)`.
    pub fn gated_attention(&mut self, q: Var, k: Var, gate: Var, scale: f64) -> Result<Var> {
        let mut logits = self.value(q).matmul_nt(self.value(k))?;
        if logits.shape() != self.shape(gate) {
            return Err(Error::shape(
                "gated_attention",
                format!("scores {:?} vs gate {:?}", logits.shape(), self.shape(gate)),
            ));
        }
        for (l, g) in logits.data_mut().iter_mut().zip(self.value(gate).data()) {
            *l = scale * *l * g;
        }
        let value = logits.softmax_rows();
        let ng = self.needs(q) || self.needs(k);
        Ok(self.push(value, Op::GatedAttention { q, k, gate, scale }, ng))
    }

    /// Sum of all entries as a 1×1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", format!("loss is {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul_nt(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).matmul_tn(g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.matmul(self.value(*b))?);
                }
                if self.needs(*b) {
                    acc(*b, g.matmul_tn(self.value(*a))?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                acc(*bias, g.column_sums());
            }
            Op::Affine(a, s) => acc(*a, g.map(|x| x * s)),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice_cols(start, w));
                    start += w;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))),
            Op::Exp(a) => acc(*a, g.zip_map(y, |gv, yv| gv * yv)),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |gv, xv| 2.0 * gv * xv)),
            Op::SoftmaxRows(a) => acc(*a, softmax_backward(y, g)),
            Op::GatedAttention { q, k, gate, scale } => {
                let mut ds = softmax_backward(y, g);
                for (d, gv) in ds.data_mut().iter_mut().zip(self.value(*gate).data()) {
                    *d *= scale * gv;
                }
                if self.needs(*q) {
                    acc(*q, ds.matmul(self.value(*k))?);
                }
                if self.needs(*k) {
                    acc(*k, ds.matmul_tn(self.value(*q))?);
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Matrix::filled(r, c, g.data()[0]));
            }
        }
        Ok(())
    }

    /// Gradients of every bound parameter, keyed by name. Parameters that
    /// did not influence the loss get zero gradients.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = self.shape(v);
                    Matrix::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect()
    }

    /// Surfaces the first node whose value is not finite.
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.is_finite() {
                let what = self
                    .names
                    .get(&i)
                    .cloned()
                    .unwrap_or_else(|| format!("node {i} ({})", op_name(&node.op)));
                return Err(Error::NonFinite(what));
            }
        }
        Ok(())
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Affine(..) => "affine",
        Op::ConcatCols(..) => "concat_cols",
        Op::Relu(..) => "relu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Tanh(..) => "tanh",
        Op::Exp(..) => "exp",
        Op::Square(..) => "square",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::GatedAttention { .. } => "gated_attention",
        Op::Sum(..) => "sum",
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_backward(y: &Matrix, g: &Matrix) -> Matrix {
    let c = y.cols();
    let mut out = Matrix::zeros(y.rows(), c);
    if c == 0 {
        return out;
    }
    for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
        let (yr, gr) = (y.row(i), g.row(i));
        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in row.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - inner);
        }
    }
    out
}
