//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during a forward pass in
//! topological order. Each node keeps its forward value; [`Tape::backward`]
//! walks the record in reverse and accumulates exact gradients into one
//! matrix per parameter of the borrowed [`ParamSet`].
//!
//! Parameters are never copied onto the tape. A parameter node reads its
//! value straight from the set, so embedding tables of any size cost
//! nothing to reference.

#![allow(clippy::needless_range_loop)]

use std::collections::HashSet;

use super::ops::{masked_column_softmax, relu, rowwise_max, sigmoid, Mask};
use super::{Gradients, Matrix, ParamId, ParamSet};
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-30;

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node(usize);

impl Node {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for diagnostics and for the gradient-check
/// harness self-test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Input,
    Param,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddBias,
    Scale,
    Tanh,
    Sigmoid,
    Relu,
    HCat,
    VCat,
    SliceCols,
    RepeatCols,
    Gather,
    Softmax,
    MaxPool,
    Trilinear,
    Sum,
    SumSquares,
    NegLogPick,
}

/// Elementwise primitives addressable by kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Node, Node),
    Transpose(Node),
    Add(Node, Node),
    Sub(Node, Node),
    Mul(Node, Node),
    AddBias(Node, Node),
    Scale(Node, f64),
    Tanh(Node),
    Sigmoid(Node),
    Relu(Node),
    HCat(Vec<Node>),
    VCat(Vec<Node>),
    SliceCols(Node, usize, usize),
    RepeatCols(Node, usize),
    Gather(Node, Vec<usize>),
    Softmax(Node, Mask),
    MaxPool(Node),
    Trilinear {
        weights: Node,
        left: Node,
        right: Node,
        right_term: bool,
    },
    Sum(Node),
    SumSquares(Node),
    NegLogPick(Node, usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Scale(..) => OpKind::Scale,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::HCat(_) => OpKind::HCat,
            Op::VCat(_) => OpKind::VCat,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::RepeatCols(..) => OpKind::RepeatCols,
            Op::Gather(..) => OpKind::Gather,
            Op::Softmax(..) => OpKind::Softmax,
            Op::MaxPool(_) => OpKind::MaxPool,
            Op::Trilinear { .. } => OpKind::Trilinear,
            Op::Sum(_) => OpKind::Sum,
            Op::SumSquares(_) => OpKind::SumSquares,
            Op::NegLogPick(..) => OpKind::NegLogPick,
        }
    }

    fn inputs(&self) -> Vec<Node> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::SliceCols(a, ..)
            | Op::RepeatCols(a, _)
            | Op::Gather(a, _)
            | Op::Softmax(a, _)
            | Op::MaxPool(a)
            | Op::Sum(a)
            | Op::SumSquares(a)
            | Op::NegLogPick(a, _) => vec![*a],
            Op::HCat(parts) | Op::VCat(parts) => parts.clone(),
            Op::Trilinear {
                weights,
                left,
                right,
                ..
            } => vec![*weights, *left, *right],
        }
    }
}

/// Forward rule for every non-leaf primitive. Shared by recording and
/// replay so both produce the same bits.
fn compute<'a>(op: &Op, get: &dyn Fn(Node) -> &'a Matrix) -> Result<Matrix> {
    Ok(match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are not computed"),
        Op::MatMul(a, b) => get(*a).matmul(get(*b))?,
        Op::Transpose(a) => get(*a).transpose(),
        Op::Add(a, b) => get(*a).zip_map(get(*b), |x, y| x + y)?,
        Op::Sub(a, b) => get(*a).zip_map(get(*b), |x, y| x - y)?,
        Op::Mul(a, b) => get(*a).zip_map(get(*b), |x, y| x * y)?,
        Op::AddBias(a, b) => {
            let (m, bias) = (get(*a), get(*b));
            if bias.shape() != (m.rows(), 1) {
                return Err(Error::contract(
                    "add_bias",
                    format!("bias {:?} for matrix {:?}", bias.shape(), m.shape()),
                ));
            }
            let mut out = m.clone();
            for r in 0..m.rows() {
                let b = bias.get(r, 0);
                for c in 0..m.cols() {
                    out.set(r, c, m.get(r, c) + b);
                }
            }
            out
        }
        Op::Scale(a, s) => get(*a).map(|x| x * s),
        Op::Tanh(a) => get(*a).map(f64::tanh),
        Op::Sigmoid(a) => get(*a).map(sigmoid),
        Op::Relu(a) => get(*a).map(relu),
        Op::HCat(parts) => Matrix::hcat(&parts.iter().map(|&p| get(p)).collect::<Vec<_>>())?,
        Op::VCat(parts) => Matrix::vcat(&parts.iter().map(|&p| get(p)).collect::<Vec<_>>())?,
        Op::SliceCols(a, s, e) => get(*a).slice_cols(*s, *e)?,
        Op::RepeatCols(a, n) => {
            let col = get(*a);
            if col.cols() != 1 || *n == 0 {
                return Err(Error::contract(
                    "repeat_cols",
                    format!("need a column and n > 0, got {:?} x{n}", col.shape()),
                ));
            }
            let parts = vec![col; *n];
            Matrix::hcat(&parts)?
        }
        Op::Gather(table, columns) => {
            let t = get(*table);
            if columns.is_empty() {
                return Err(Error::contract("gather", "no columns requested"));
            }
            if let Some(&bad) = columns.iter().find(|&&c| c >= t.cols()) {
                return Err(Error::contract(
                    "gather",
                    format!("column {bad} outside table of width {}", t.cols()),
                ));
            }
            let mut out = Matrix::zeros(t.rows(), columns.len());
            for (j, &c) in columns.iter().enumerate() {
                for r in 0..t.rows() {
                    out.set(r, j, t.get(r, c));
                }
            }
            out
        }
        Op::Softmax(a, mask) => masked_column_softmax(get(*a), mask)?,
        Op::MaxPool(a) => rowwise_max(get(*a)).0,
        Op::Trilinear {
            weights,
            left,
            right,
            right_term,
        } => trilinear_forward(get(*weights), get(*left), get(*right), *right_term)?,
        Op::Sum(a) => Matrix::scalar(get(*a).sum()),
        Op::SumSquares(a) => Matrix::scalar(get(*a).sum_squares()),
        Op::NegLogPick(a, row) => {
            let p = get(*a);
            if p.cols() != 1 || *row >= p.rows() {
                return Err(Error::contract(
                    "neg_log_pick",
                    format!("row {row} of a {:?} matrix", p.shape()),
                ));
            }
            let x = p.get(*row, 0);
            if x < LOG_CLAMP {
                log::warn!("probability {x:e} at gold index clamped to {LOG_CLAMP:e}");
            }
            Matrix::scalar(-x.max(LOG_CLAMP).ln())
        }
    })
}

/// `s_ij = w1·u_i + w2·v_j + w3·(u_i ∘ v_j)` for `w = [w1; w2; w3]`.
/// Without `right_term` the `w2·v_j` part is left out.
fn trilinear_forward(w: &Matrix, u: &Matrix, v: &Matrix, right_term: bool) -> Result<Matrix> {
    let d = u.rows();
    if v.rows() != d || w.shape() != (3 * d, 1) {
        return Err(Error::contract(
            "trilinear",
            format!(
                "weights {:?}, left {:?}, right {:?}",
                w.shape(),
                u.shape(),
                v.shape()
            ),
        ));
    }
    let w = w.as_slice();
    let (w1, w2, w3) = (&w[..d], &w[d..2 * d], &w[2 * d..]);
    let left_terms: Vec<f64> = (0..u.cols())
        .map(|i| (0..d).map(|r| w1[r] * u.get(r, i)).sum())
        .collect();
    let right_terms: Vec<f64> = (0..v.cols())
        .map(|j| {
            if right_term {
                (0..d).map(|r| w2[r] * v.get(r, j)).sum()
            } else {
                0.0
            }
        })
        .collect();
    let mut scaled = u.clone();
    for r in 0..d {
        for i in 0..u.cols() {
            scaled.set(r, i, w3[r] * u.get(r, i));
        }
    }
    let mut s = scaled.t_matmul(v);
    for (i, a) in left_terms.iter().enumerate() {
        for (j, b) in right_terms.iter().enumerate() {
            s.set(i, j, s.get(i, j) + a + b);
        }
    }
    Ok(s)
}

/// The computation record of one forward pass.
pub struct Tape<'p> {
    params: &'p ParamSet,
    ops: Vec<Op>,
    values: Vec<Option<Matrix>>,
    param_nodes: Vec<Option<Node>>,
    faulty: Option<OpKind>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            ops: Vec::new(),
            values: Vec::new(),
            param_nodes: vec![None; params.len()],
            faulty: None,
        }
    }

    /// Test fixture: scales the backward contribution of every node of
    /// `kind` by 1.5, producing wrong gradients the checker must catch.
    pub fn with_faulty_rule(mut self, kind: Option<OpKind>) -> Self {
        self.faulty = kind;
        self
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, node: Node) -> &Matrix {
        match &self.ops[node.0] {
            Op::Param(id) => self.params.get(*id),
            _ => self.values[node.0].as_ref().expect("computed node"),
        }
    }

    pub fn shape(&self, node: Node) -> (usize, usize) {
        self.value(node).shape()
    }

    pub fn kind(&self, node: Node) -> OpKind {
        self.ops[node.0].kind()
    }

    pub fn inputs(&self, node: Node) -> Vec<Node> {
        self.ops[node.0].inputs()
    }

    /// Every node `node` transitively depends on, itself included.
    pub fn ancestors(&self, node: Node) -> HashSet<Node> {
        let mut seen = HashSet::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.ops[n.0].inputs());
            }
        }
        seen
    }

    fn push(&mut self, op: Op, value: Option<Matrix>) -> Node {
        self.ops.push(op);
        self.values.push(value);
        Node(self.ops.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Node> {
        let value = compute(&op, &|n| self.value(n))?;
        Ok(self.push(op, Some(value)))
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Matrix) -> Node {
        self.push(Op::Input, Some(value))
    }

    /// The leaf for parameter `id`; recorded once per tape.
    pub fn param(&mut self, id: ParamId) -> Node {
        if let Some(node) = self.param_nodes[id.0] {
            return node;
        }
        let node = self.push(Op::Param(id), None);
        self.param_nodes[id.0] = Some(node);
        node
    }

    pub fn matmul(&mut self, a: Node, b: Node) -> Result<Node> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Node) -> Result<Node> {
        self.record(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Result<Node> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Result<Node> {
        self.record(Op::Mul(a, b))
    }

    /// Adds the column `bias` to every column of `a`.
    pub fn add_bias(&mut self, a: Node, bias: Node) -> Result<Node> {
        self.record(Op::AddBias(a, bias))
    }

    pub fn scale(&mut self, a: Node, factor: f64) -> Result<Node> {
        self.record(Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Node) -> Result<Node> {
        self.record(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Node) -> Result<Node> {
        self.record(Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Node) -> Result<Node> {
        self.record(Op::Relu(a))
    }

    pub fn elementwise(&mut self, kind: Elementwise, args: &[Node]) -> Result<Node> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::contract(
                "elementwise",
                format!("{kind:?} takes {arity} arguments, got {}", args.len()),
            ));
        }
        match kind {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Relu => self.relu(args[0]),
        }
    }

    /// Side by side; column counts add up.
    pub fn hcat(&mut self, parts: &[Node]) -> Result<Node> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.record(Op::HCat(parts.to_vec()))
    }

    /// Stacked; row counts add up.
    pub fn vcat(&mut self, parts: &[Node]) -> Result<Node> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.record(Op::VCat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Node, start: usize, end: usize) -> Result<Node> {
        self.record(Op::SliceCols(a, start, end))
    }

    /// Repeats a single column `n` times.
    pub fn repeat_cols(&mut self, a: Node, n: usize) -> Result<Node> {
        self.record(Op::RepeatCols(a, n))
    }

    /// Picks columns of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Node, columns: Vec<usize>) -> Result<Node> {
        self.record(Op::Gather(table, columns))
    }

    pub fn masked_column_softmax(&mut self, a: Node, mask: Mask) -> Result<Node> {
        self.record(Op::Softmax(a, mask))
    }

    pub fn rowwise_max_pool(&mut self, a: Node) -> Result<Node> {
        self.record(Op::MaxPool(a))
    }

    /// Score matrix with entries `wᵀ[u_i; v_j; u_i ∘ v_j]`.
    pub fn trilinear(&mut self, weights: Node, left: Node, right: Node) -> Result<Node> {
        self.record(Op::Trilinear {
            weights,
            left,
            right,
            right_term: true,
        })
    }

    /// [`Tape::trilinear`] without the `w2·v_j` term. That term is constant
    /// down each column, so a column softmax of either score matrix is the
    /// same; leaving it out makes the `w2` block exactly inert.
    pub fn trilinear_for_columns(
        &mut self,
        weights: Node,
        left: Node,
        right: Node,
    ) -> Result<Node> {
        self.record(Op::Trilinear {
            weights,
            left,
            right,
            right_term: false,
        })
    }

    pub fn sum(&mut self, a: Node) -> Result<Node> {
        self.record(Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Node) -> Result<Node> {
        self.record(Op::SumSquares(a))
    }

    /// `-ln p[row]` for a probability column, clamped at [`LOG_CLAMP`].
    pub fn neg_log_pick(&mut self, probs: Node, row: usize) -> Result<Node> {
        self.record(Op::NegLogPick(probs, row))
    }

    /// Recomputes every node from the leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.ops.len());
        for (i, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Input => self.values[i].clone().expect("input value"),
                Op::Param(id) => self.params.get(*id).clone(),
                _ => compute(op, &|n: Node| &values[n.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Exact gradients of the scalar `seed` with respect to every
    /// parameter. Parameters not reached from `seed` get zeros.
    pub fn backward(&self, seed: Node) -> Result<Gradients> {
        if self.shape(seed) != (1, 1) {
            return Err(Error::contract(
                "backward",
                format!("seed must be 1x1, got {:?}", self.shape(seed)),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=seed.0).rev() {
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let op = &self.ops[i];
            if self.faulty == Some(op.kind()) {
                g.scale_in_place(1.5);
            }
            self.propagate(Node(i), op, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(
        &self,
        node: Node,
        op: &Op,
        g: Matrix,
        grads: &mut [Option<Matrix>],
        out: &mut Gradients,
    ) {
        let mut acc = |n: Node, m: Matrix| match &mut grads[n.0] {
            Some(existing) => existing.add_assign(&m),
            slot => *slot = Some(m),
        };
        match op {
            Op::Input => {}
            Op::Param(id) => out.get_mut(*id).add_assign(&g),
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(self.value(*b)));
                acc(*b, self.value(*a).t_matmul(&g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.map(|x| -x));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y).expect("shape");
                let gb = g.zip_map(self.value(*a), |x, y| x * y).expect("shape");
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddBias(a, bias) => {
                acc(*bias, g.row_sums());
                acc(*a, g);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Tanh(a) => {
                let y = self.value(node);
                acc(
                    *a,
                    g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)).expect("shape"),
                );
            }
            Op::Sigmoid(a) => {
                let y = self.value(node);
                acc(
                    *a,
                    g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)).expect("shape"),
                );
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 })
                        .expect("shape"),
                );
            }
            Op::HCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    acc(p, g.slice_cols(offset, offset + w).expect("in range"));
                    offset += w;
                }
            }
            Op::VCat(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    let data = g.as_slice()[offset * cols..(offset + h) * cols].to_vec();
                    acc(p, Matrix::new(h, cols, data).expect("in range"));
                    offset += h;
                }
            }
            Op::SliceCols(a, start, _) => {
                let (rows, cols) = self.shape(*a);
                let mut ga = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..g.cols() {
                        ga.set(r, start + c, g.get(r, c));
                    }
                }
                acc(*a, ga);
            }
            Op::RepeatCols(a, _) => acc(*a, g.row_sums()),
            Op::Gather(table, columns) => {
                let (rows, cols) = self.shape(*table);
                let mut gt = Matrix::zeros(rows, cols);
                for (j, &c) in columns.iter().enumerate() {
                    for r in 0..rows {
                        gt.set(r, c, gt.get(r, c) + g.get(r, j));
                    }
                }
                acc(*table, gt);
            }
            Op::Softmax(a, _) => {
                let y = self.value(node);
                let (rows, cols) = y.shape();
                let mut ga = Matrix::zeros(rows, cols);
                for c in 0..cols {
                    let dot: f64 = (0..rows).map(|r| y.get(r, c) * g.get(r, c)).sum();
                    for r in 0..rows {
                        ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                acc(*a, ga);
            }
            Op::MaxPool(a) => {
                let x = self.value(*a);
                let (_, argmax) = rowwise_max(x);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (r, &c) in argmax.iter().enumerate() {
                    ga.set(r, c, g.get(r, 0));
                }
                acc(*a, ga);
            }
            Op::Trilinear {
                weights,
                left,
                right,
                right_term,
            } => {
                let (gw, gu, gv) = trilinear_backward(
                    &g,
                    self.value(*weights),
                    self.value(*left),
                    self.value(*right),
                    *right_term,
                );
                acc(*weights, gw);
                acc(*left, gu);
                acc(*right, gv);
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                acc(*a, Matrix::filled(rows, cols, g.item()));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.item();
                acc(*a, self.value(*a).map(|x| s * x));
            }
            Op::NegLogPick(a, row) => {
                let p = self.value(*a);
                let mut ga = Matrix::zeros(p.rows(), 1);
                let x = p.get(*row, 0);
                if x >= LOG_CLAMP {
                    ga.set(*row, 0, -g.item() / x);
                }
                acc(*a, ga);
            }
        }
    }
}

fn trilinear_backward(
    g: &Matrix,
    w: &Matrix,
    u: &Matrix,
    v: &Matrix,
    right_term: bool,
) -> (Matrix, Matrix, Matrix) {
    let d = u.rows();
    let (n, m) = g.shape();
    let w = w.as_slice();
    let zeros = vec![0.0; d];
    let (w1, w3) = (&w[..d], &w[2 * d..]);
    let w2 = if right_term { &w[d..2 * d] } else { &zeros[..] };
    // row_sum[i] = Σ_j g_ij, col_sum[j] = Σ_i g_ij
    let row_sum: Vec<f64> = (0..n).map(|i| g.row(i).iter().sum()).collect();
    let col_sum: Vec<f64> = (0..m).map(|j| (0..n).map(|i| g.get(i, j)).sum()).collect();
    // v_weighted[:, i] = Σ_j g_ij v_j ; u_weighted[:, j] = Σ_i g_ij u_i
    let v_weighted = v.matmul_t(g);
    let u_weighted = u.matmul(g).expect("shape");

    let mut gw = Matrix::zeros(3 * d, 1);
    for r in 0..d {
        let a: f64 = (0..n).map(|i| u.get(r, i) * row_sum[i]).sum();
        let b: f64 = if right_term {
            (0..m).map(|j| v.get(r, j) * col_sum[j]).sum()
        } else {
            0.0
        };
        let c: f64 = (0..n).map(|i| u.get(r, i) * v_weighted.get(r, i)).sum();
        gw.set(r, 0, a);
        gw.set(d + r, 0, b);
        gw.set(2 * d + r, 0, c);
    }
    let mut gu = Matrix::zeros(d, n);
    for r in 0..d {
        for i in 0..n {
            gu.set(r, i, w1[r] * row_sum[i] + w3[r] * v_weighted.get(r, i));
        }
    }
    let mut gv = Matrix::zeros(d, m);
    for r in 0..d {
        for j in 0..m {
            gv.set(r, j, w2[r] * col_sum[j] + w3[r] * u_weighted.get(r, j));
        }
    }
    (gw, gu, gv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with(values: &[(&str, Matrix)]) -> ParamSet {
        let mut p = ParamSet::new();
        for (n, m) in values {
            p.insert(*n, m.clone(), true);
        }
        p
    }

    #[test]
    fn sum_gradient_is_ones() {
        let params = set_with(&[("w", Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap())]);
        let id = params.id_of("w").unwrap();
        let mut t = Tape::new(&params);
        let w = t.param(id);
        let j = t.sum(w).unwrap();
        let g = t.backward(j).unwrap();
        assert_eq!(g.get(id), &Matrix::ones(2, 2));
    }

    #[test]
    fn unreached_param_gets_zeros() {
        let params = set_with(&[("w", Matrix::ones(2, 2)), ("unused", Matrix::ones(3, 1))]);
        let mut t = Tape::new(&params);
        let w = t.param(params.id_of("w").unwrap());
        let j = t.sum_squares(w).unwrap();
        let g = t.backward(j).unwrap();
        assert_eq!(g.get(params.id_of("unused").unwrap()), &Matrix::zeros(3, 1));
    }

    #[test]
    fn non_scalar_seed_rejected() {
        let params = set_with(&[("w", Matrix::ones(2, 2))]);
        let mut t = Tape::new(&params);
        let w = t.param(params.id_of("w").unwrap());
        let y = t.tanh(w).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract { .. })));
    }

    #[test]
    fn elementwise_values() {
        let params = ParamSet::new();
        let mut t = Tape::new(&params);
        let z = t.input(Matrix::zeros(2, 3));
        let th = t.elementwise(Elementwise::Tanh, &[z]).unwrap();
        assert_eq!(t.value(th), &Matrix::zeros(2, 3));
        let sg = t.elementwise(Elementwise::Sigmoid, &[z]).unwrap();
        assert!(t.value(sg).as_slice().iter().all(|&x| x == 0.5));
        let x = t.input(Matrix::from_rows(&[[-1.0, 2.0]]).unwrap());
        let r = t.elementwise(Elementwise::Relu, &[x]).unwrap();
        assert_eq!(t.value(r).as_slice(), &[0.0, 2.0]);
        assert!(t.elementwise(Elementwise::Add, &[x]).is_err());
        assert!(t.add(x, z).is_err());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let params = set_with(&[("x", Matrix::from_rows(&[[0.0, 1.0, -1.0]]).unwrap())]);
        let id = params.id_of("x").unwrap();
        let mut t = Tape::new(&params);
        let x = t.param(id);
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(id).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn max_pool_routes_to_first_argmax() {
        let params = set_with(&[(
            "x",
            Matrix::from_rows(&[[2.0, 2.0, 2.0], [1.0, 5.0, 5.0]]).unwrap(),
        )]);
        let id = params.id_of("x").unwrap();
        let mut t = Tape::new(&params);
        let x = t.param(id);
        let p = t.rowwise_max_pool(x).unwrap();
        assert_eq!(t.value(p).as_slice(), &[2.0, 5.0]);
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(id).as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_part_concat_is_identity() {
        let params = ParamSet::new();
        let mut t = Tape::new(&params);
        let a = t.input(Matrix::ones(2, 2));
        assert_eq!(t.hcat(&[a]).unwrap(), a);
        assert_eq!(t.vcat(&[a]).unwrap(), a);
    }

    #[test]
    fn gather_checks_range() {
        let params = set_with(&[("e", Matrix::ones(2, 3))]);
        let mut t = Tape::new(&params);
        let e = t.param(params.id_of("e").unwrap());
        assert!(t.gather(e, vec![0, 3]).is_err());
        let g = t.gather(e, vec![2, 2, 0, 1]).unwrap();
        assert_eq!(t.shape(g), (2, 4));
    }

    #[test]
    fn replay_is_bit_identical() {
        let params = set_with(&[
            ("a", Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.7]]).unwrap()),
            (
                "v",
                Matrix::column(&[0.1, -0.4, 0.9, 1.1, -0.2, 0.5]).unwrap(),
            ),
        ]);
        let mut t = Tape::new(&params);
        let a = t.param(params.id_of("a").unwrap());
        let v = t.param(params.id_of("v").unwrap());
        let s = t.trilinear(v, a, a).unwrap();
        let p = t.masked_column_softmax(s, Mask::all(2)).unwrap();
        let h = t.matmul(a, p).unwrap();
        let th = t.tanh(h).unwrap();
        let j = t.sum(th).unwrap();
        let first = t.replay().unwrap();
        let second = t.replay().unwrap();
        for i in 0..t.len() {
            assert_eq!(&first[i], t.value(Node(i)));
            assert_eq!(first[i], second[i]);
        }
        assert_eq!(
            first[j.index()].item().to_bits(),
            t.value(j).item().to_bits()
        );
    }

    #[test]
    fn ancestors_follow_inputs() {
        let params = ParamSet::new();
        let mut t = Tape::new(&params);
        let a = t.input(Matrix::ones(1, 1));
        let b = t.input(Matrix::ones(1, 1));
        let c = t.add(a, a).unwrap();
        let anc = t.ancestors(c);
        assert!(anc.contains(&a) && anc.contains(&c) && !anc.contains(&b));
    }
}
