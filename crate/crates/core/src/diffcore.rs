//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as it executes. Nodes are appended in
//! creation order, so each node's parents always sit at lower indices and a
//! reverse sweep over the node list is a valid reverse topological order:
//! every node is visited exactly once, after all of its consumers.
//!
//! [`Var`] is a cheap copyable handle into one tape. Handles from different
//! tapes must not be mixed.
//!
//! ```
//! use mixbt::diffcore::Tape;
//! use mixbt::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let theta = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
//! let sq = tape.pow2(theta).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(theta).unwrap().data(), &[2.0, -4.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variance floor under the square root in [`Tape::batch_std`].
pub const STD_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    DivRow(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Pow2(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sum(Var),
    SumAxis0(Var),
    SumAxis1(Var),
    BatchMean(Var),
    BatchStd(Var),
    Diag(Var),
    LogSumExpRows { x: Var, exclude_diag: bool },
    SelectRows(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Elementwise binary op allowing only identical shapes or scalar-vs-tensor.
fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        a.zip_map(b, f)
    } else if b.is_scalar() {
        let s = b.data()[0];
        Ok(a.map(|x| f(x, s)))
    } else if a.is_scalar() {
        let s = a.data()[0];
        Ok(b.map(|x| f(s, x)))
    } else {
        Err(Error::dim(
            op,
            format!("{:?} vs {:?} (only scalar broadcast)", a.shape(), b.shape()),
        ))
    }
}

/// Reduces a gradient computed at the broadcast output shape back to an
/// operand's own shape.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        Tensor::new(target.shape().to_vec(), vec![g.sum()]).expect("scalar operand")
    }
}

fn expect_row_vector(op: &'static str, x: &Tensor, row: &Tensor) -> Result<(usize, usize)> {
    let (n, d) = x.expect_matrix(op)?;
    if row.shape() != [d] {
        return Err(Error::dim(
            op,
            format!("row vector {:?} against [{n}x{d}]", row.shape()),
        ));
    }
    Ok((n, d))
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

    /// Trainable input: gradients are accumulated for it on `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last `backward`, if `v` is trainable.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Clears accumulated gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        let value = check_finite(op_name, value)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose()?;
        self.push("transpose", v, Op::Transpose(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        let v = broadcast_binary("div", self.value(a), self.value(b), |x, y| x / y)?;
        self.push("div", v, Op::Div(a, b), &[a, b])
    }

    /// `x[N×d] + row[d]` broadcast over rows (bias add).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("add_row", x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    /// `x[N×d] - row[d]` broadcast over rows (batch centering).
    pub fn sub_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("sub_row", x, row, |a, b| a - b, Op::SubRow(x, row))
    }

    /// `x[N×d] / row[d]` broadcast over rows (batch scaling).
    pub fn div_row(&mut self, x: Var, row: Var) -> Result<Var> {
        if self.value(row).data().contains(&0.0) {
            return Err(Error::domain("div_row", "division by zero"));
        }
        self.row_op("div_row", x, row, |a, b| a / b, Op::DivRow(x, row))
    }

    fn row_op(
        &mut self,
        name: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let xv = self.value(x);
        let rv = self.value(row);
        let (n, d) = expect_row_vector(name, xv, rv)?;
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend(xv.row(i).iter().zip(rv.data()).map(|(&a, &b)| f(a, b)));
        }
        let v = Tensor::new(vec![n, d], out)?;
        self.push(name, v, op, &[x, row])
    }

    /// `x[N×d] / col[N]`, each row divided by its own scalar.
    pub fn div_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let xv = self.value(x);
        let cv = self.value(col);
        let (n, d) = xv.expect_matrix("div_col")?;
        if cv.shape() != [n] {
            return Err(Error::dim(
                "div_col",
                format!("column vector {:?} against [{n}x{d}]", cv.shape()),
            ));
        }
        if cv.data().contains(&0.0) {
            return Err(Error::domain("div_col", "division by zero"));
        }
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let c = cv.data()[i];
            out.extend(xv.row(i).iter().map(|&a| a / c));
        }
        let v = Tensor::new(vec![n, d], out)?;
        self.push("div_col", v, Op::DivCol(x, col), &[x, col])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let v = self.value(x).scale(k);
        self.push("scale", v, Op::Scale(x, k), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + c);
        self.push("add_const", v, Op::AddConst(x), &[x])
    }

    pub fn pow2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a * a);
        self.push("pow2", v, Op::Pow2(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push("relu", v, Op::Relu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::exp);
        self.push("exp", v, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&a| a <= 0.0) {
            return Err(Error::domain("log", "argument must be positive"));
        }
        let v = self.value(x).map(f64::ln);
        self.push("log", v, Op::Log(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&a| a <= 0.0) {
            return Err(Error::domain("sqrt", "argument must be positive"));
        }
        let v = self.value(x).map(f64::sqrt);
        self.push("sqrt", v, Op::Sqrt(x), &[x])
    }

    /// Sum of all elements, returned as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push("sum", v, Op::Sum(x), &[x])
    }

    /// Column sums of a matrix: `[N×d] -> [d]`.
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).sum_axis0()?;
        self.push("sum_axis0", v, Op::SumAxis0(x), &[x])
    }

    /// Row sums of a matrix: `[N×d] -> [N]`.
    pub fn sum_axis1(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).sum_axis1()?;
        self.push("sum_axis1", v, Op::SumAxis1(x), &[x])
    }

    /// Per-column mean over the batch axis.
    pub fn batch_mean(&mut self, z: Var) -> Result<Var> {
        let (n, _) = self.value(z).expect_matrix("batch_mean")?;
        if n < 2 {
            return Err(Error::DegenerateBatch {
                op: "batch_mean",
                rows: n,
            });
        }
        let v = self.value(z).sum_axis0()?.scale(1.0 / n as f64);
        self.push("batch_mean", v, Op::BatchMean(z), &[z])
    }

    /// Per-column population standard deviation, `sqrt(max(var, STD_EPS))`.
    ///
    /// The floor only engages for (near-)constant columns, so an already
    /// unit-variance column is scaled by exactly 1.
    pub fn batch_std(&mut self, z: Var) -> Result<Var> {
        let v = batch_std_value(self.value(z), STD_EPS)?;
        self.push("batch_std", v, Op::BatchStd(z), &[z])
    }

    /// Main diagonal of a square matrix.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.expect_matrix("diag")?;
        if r != c {
            return Err(Error::dim("diag", format!("non-square [{r}x{c}]")));
        }
        let v = Tensor::vector((0..r).map(|i| xv.get2(i, i)).collect());
        self.push("diag", v, Op::Diag(x), &[x])
    }

    /// Row-wise `log Σ_j exp(x_ij)` with max subtraction. With
    /// `exclude_diag` the `j == i` term is left out (square input only).
    pub fn logsumexp_rows(&mut self, x: Var, exclude_diag: bool) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.expect_matrix("logsumexp_rows")?;
        if exclude_diag && (r != c || c < 2) {
            return Err(Error::dim(
                "logsumexp_rows",
                format!("diagonal exclusion needs a square matrix with n>=2, got [{r}x{c}]"),
            ));
        }
        if c == 0 {
            return Err(Error::dim("logsumexp_rows", "empty rows"));
        }
        let mut out = Vec::with_capacity(r);
        for i in 0..r {
            let terms = xv
                .row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| !exclude_diag || *j != i)
                .map(|(_, &v)| v);
            let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = terms.map(|v| (v - m).exp()).sum();
            out.push(m + s.ln());
        }
        let v = Tensor::vector(out);
        self.push(
            "logsumexp_rows",
            v,
            Op::LogSumExpRows { x, exclude_diag },
            &[x],
        )
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x).select_rows(idx)?;
        self.push("select_rows", v, Op::SelectRows(x, idx.to_vec()), &[x])
    }

    /// Mean of all elements.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Populates gradients of `loss` for every trainable leaf. Leaves that do
    /// not influence `loss` get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without reset_grads".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::new(
                self.value(loss).shape().to_vec(),
                vec![1.0],
            )?);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            for (parent, pg) in self.local_grads(id, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                node.grad = Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape())));
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each parent, given the
    /// upstream gradient `g`.
    fn local_grads(&self, id: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()?)?;
                let gb = val(*a).transpose()?.matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(x) => vec![(*x, g.transpose()?)],
            Op::Add(a, b) => vec![
                (*a, unbroadcast(g.clone(), val(*a))),
                (*b, unbroadcast(g.clone(), val(*b))),
            ],
            Op::Sub(a, b) => vec![
                (*a, unbroadcast(g.clone(), val(*a))),
                (*b, unbroadcast(g.scale(-1.0), val(*b))),
            ],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = broadcast_binary("mul", g, bv, |x, y| x * y)?;
                let gb = broadcast_binary("mul", g, av, |x, y| x * y)?;
                vec![(*a, unbroadcast(ga, av)), (*b, unbroadcast(gb, bv))]
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = broadcast_binary("div", g, bv, |x, y| x / y)?;
                // d(a/b)/db = -out/b
                let go = g.zip_map(out, |x, o| -x * o)?;
                let gb = broadcast_binary("div", &go, bv, |x, y| x / y)?;
                vec![(*a, unbroadcast(ga, av)), (*b, unbroadcast(gb, bv))]
            }
            Op::AddRow(x, r) => vec![(*x, g.clone()), (*r, g.sum_axis0()?)],
            Op::SubRow(x, r) => vec![(*x, g.clone()), (*r, g.sum_axis0()?.scale(-1.0))],
            Op::DivRow(x, r) => {
                let rv = val(*r);
                let (n, d) = g.expect_matrix("div_row")?;
                let mut gx = Vec::with_capacity(n * d);
                let mut gr = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        let gij = g.data()[i * d + j];
                        gx.push(gij / rv.data()[j]);
                        gr[j] -= gij * out.data()[i * d + j] / rv.data()[j];
                    }
                }
                vec![
                    (*x, Tensor::new(vec![n, d], gx)?),
                    (*r, Tensor::vector(gr)),
                ]
            }
            Op::DivCol(x, c) => {
                let cv = val(*c);
                let (n, d) = g.expect_matrix("div_col")?;
                let mut gx = Vec::with_capacity(n * d);
                let mut gc = vec![0.0; n];
                for i in 0..n {
                    let ci = cv.data()[i];
                    for j in 0..d {
                        let gij = g.data()[i * d + j];
                        gx.push(gij / ci);
                        gc[i] -= gij * out.data()[i * d + j] / ci;
                    }
                }
                vec![
                    (*x, Tensor::new(vec![n, d], gx)?),
                    (*c, Tensor::vector(gc)),
                ]
            }
            Op::Scale(x, k) => vec![(*x, g.scale(*k))],
            Op::AddConst(x) => vec![(*x, g.clone())],
            Op::Pow2(x) => vec![(*x, g.zip_map(val(*x), |gi, xi| 2.0 * xi * gi)?)],
            Op::Relu(x) => vec![(
                *x,
                g.zip_map(val(*x), |gi, xi| if xi > 0.0 { gi } else { 0.0 })?,
            )],
            Op::Exp(x) => vec![(*x, g.zip_map(out, |gi, oi| gi * oi)?)],
            Op::Log(x) => vec![(*x, g.zip_map(val(*x), |gi, xi| gi / xi)?)],
            Op::Sqrt(x) => vec![(*x, g.zip_map(out, |gi, oi| gi / (2.0 * oi))?)],
            Op::Sum(x) => vec![(*x, Tensor::full(val(*x).shape(), g.data()[0]))],
            Op::SumAxis0(x) => {
                let (n, d) = val(*x).expect_matrix("sum_axis0")?;
                let mut gx = Vec::with_capacity(n * d);
                for _ in 0..n {
                    gx.extend_from_slice(g.data());
                }
                vec![(*x, Tensor::new(vec![n, d], gx)?)]
            }
            Op::SumAxis1(x) => {
                let (n, d) = val(*x).expect_matrix("sum_axis1")?;
                let mut gx = Vec::with_capacity(n * d);
                for i in 0..n {
                    gx.extend(std::iter::repeat_n(g.data()[i], d));
                }
                vec![(*x, Tensor::new(vec![n, d], gx)?)]
            }
            Op::BatchMean(x) => {
                let (n, d) = val(*x).expect_matrix("batch_mean")?;
                let inv = 1.0 / n as f64;
                let mut gx = Vec::with_capacity(n * d);
                for _ in 0..n {
                    gx.extend(g.data().iter().map(|v| v * inv));
                }
                vec![(*x, Tensor::new(vec![n, d], gx)?)]
            }
            Op::BatchStd(x) => {
                let xv = val(*x);
                let (n, d) = xv.expect_matrix("batch_std")?;
                let mean = xv.sum_axis0()?.scale(1.0 / n as f64);
                let var = column_variance(xv, &mean);
                let mut gx = Vec::with_capacity(n * d);
                for i in 0..n {
                    for j in 0..d {
                        if var[j] < STD_EPS {
                            gx.push(0.0);
                            continue;
                        }
                        let centered = xv.data()[i * d + j] - mean.data()[j];
                        gx.push(g.data()[j] * centered / (n as f64 * out.data()[j]));
                    }
                }
                vec![(*x, Tensor::new(vec![n, d], gx)?)]
            }
            Op::Diag(x) => {
                let n = g.numel();
                let mut gx = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    gx.data_mut()[i * n + i] = g.data()[i];
                }
                vec![(*x, gx)]
            }
            Op::LogSumExpRows { x, exclude_diag } => {
                let xv = val(*x);
                let (r, c) = xv.expect_matrix("logsumexp_rows")?;
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let lse = out.data()[i];
                    for j in 0..c {
                        if *exclude_diag && i == j {
                            continue;
                        }
                        gx[i * c + j] = g.data()[i] * (xv.data()[i * c + j] - lse).exp();
                    }
                }
                vec![(*x, Tensor::new(vec![r, c], gx)?)]
            }
            Op::SelectRows(x, idx) => {
                let xv = val(*x);
                let (_, c) = xv.expect_matrix("select_rows")?;
                let mut gx = Tensor::zeros(xv.shape());
                for (k, &i) in idx.iter().enumerate() {
                    let dst = &mut gx.data_mut()[i * c..(i + 1) * c];
                    for (d, s) in dst.iter_mut().zip(&g.data()[k * c..(k + 1) * c]) {
                        *d += s;
                    }
                }
                vec![(*x, gx)]
            }
        })
    }
}

fn column_variance(z: &Tensor, mean: &Tensor) -> Vec<f64> {
    let (n, d) = (z.rows(), z.cols());
    let mut var = vec![0.0; d];
    for i in 0..n {
        for (j, v) in var.iter_mut().enumerate() {
            let c = z.data()[i * d + j] - mean.data()[j];
            *v += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    var
}

/// Population standard deviation per column, `sqrt(max(var, eps))`.
pub fn batch_std_value(z: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, _) = z.expect_matrix("batch_std")?;
    if n < 2 {
        return Err(Error::DegenerateBatch {
            op: "batch_std",
            rows: n,
        });
    }
    let mean = z.sum_axis0()?.scale(1.0 / n as f64);
    Ok(Tensor::vector(
        column_variance(z, &mean)
            .into_iter()
            .map(|v| v.max(eps).sqrt())
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_backward_matches_hand_values() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[[1.0, 2.0]]));
        let b = t.leaf(Tensor::from_rows(&[[3.0], [4.0]]));
        let p = t.matmul(a, b).unwrap();
        let s = t.sum(p).unwrap();
        assert_eq!(t.value(s).item().unwrap(), 11.0);
        t.backward(s).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn batch_stats_hand_cases() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::from_rows(&[[1.0], [-1.0]]));
        let m = t.batch_mean(z).unwrap();
        assert_eq!(t.value(m).data(), &[0.0]);
        let s = batch_std_value(t.value(z), 0.0).unwrap();
        assert_eq!(s.data(), &[1.0]);

        let z2 = t.constant(Tensor::from_rows(&[[2.0, 0.0], [4.0, 0.0]]));
        let m2 = t.batch_mean(z2).unwrap();
        assert_eq!(t.value(m2).data(), &[3.0, 0.0]);

        let c = t.constant(Tensor::from_rows(&[[5.0], [5.0], [5.0]]));
        let sc = t.batch_std(c).unwrap();
        assert!(close(t.value(sc).data()[0], STD_EPS.sqrt(), 1e-18));
    }

    #[test]
    fn batch_stats_reject_single_row() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::from_rows(&[[1.0, 2.0]]));
        assert!(matches!(t.batch_mean(z), Err(Error::DegenerateBatch { .. })));
        assert!(matches!(t.batch_std(z), Err(Error::DegenerateBatch { .. })));
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);

        let y = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let y2 = t.pow2(y).unwrap();
        let s = t.sum(y2).unwrap();
        assert_eq!(t.value(s).item().unwrap(), 5.0);

        let three = t.constant(Tensor::vector(vec![3.0]));
        let l = t.log(three).unwrap();
        let e = t.exp(l).unwrap();
        assert!(close(t.value(e).data()[0], 3.0, 1e-12));
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 0.0]));
        let y = t.constant(Tensor::vector(vec![-1.0, 2.0]));
        assert!(matches!(t.div(y, x), Err(Error::NumericDomain { .. })));
        assert!(matches!(t.log(y), Err(Error::NumericDomain { .. })));
        assert!(matches!(t.log(x), Err(Error::NumericDomain { .. })));
    }

    #[test]
    fn overflow_is_caught_at_op_boundary() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1000.0]));
        assert!(matches!(t.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn broadcast_only_scalar() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, b), Err(Error::Dimension { .. })));
        let s = t.leaf(Tensor::scalar(2.0));
        let p = t.mul(a, s).unwrap();
        assert_eq!(t.value(p).data(), &[2.0, 4.0]);
        let l = t.sum(p).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(s).unwrap().data(), &[3.0]);
    }

    #[test]
    fn square_loss_gradient() {
        let mut t = Tape::new();
        let th = t.leaf(Tensor::vector(vec![1.0, -2.0]));
        let sq = t.pow2(th).unwrap();
        let l = t.sum(sq).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(th).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut t = Tape::new();
        let th = t.leaf(Tensor::vector(vec![1.0, -2.0]));
        let c = t.constant(Tensor::scalar(7.0));
        let l = t.scale(c, 2.0).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(th).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.5, -3.0, 2.0]));
        let s1 = t.sum(x).unwrap();
        let s2 = t.sum(x).unwrap();
        let l = t.add(s1, s2).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_twice_requires_reset() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0]));
        let l = t.sum(x).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::Contract(_))));
        t.reset_grads();
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let mut empty = Tape::new();
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
        let other = t.leaf(Tensor::scalar(1.0));
        assert!(matches!(empty.backward(other), Err(Error::Contract(_))));
    }

    #[test]
    fn logsumexp_excluding_diagonal() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[[100.0, 0.0], [0.0, 100.0]]));
        let l = t.logsumexp_rows(x, true).unwrap();
        assert_eq!(t.value(l).data(), &[0.0, 0.0]);
        let full = t.logsumexp_rows(x, false).unwrap();
        assert!(close(t.value(full).data()[0], 100.0, 1e-12));
    }
}
