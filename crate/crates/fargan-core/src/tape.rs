//! Taped reverse-mode automatic differentiation with second-order support.
//!
//! A `Tape` records eagerly-evaluated ops in topological order. `backward`
//! does not run a hand-rolled accumulation pass: it *records the adjoint
//! computation as more tape ops* and reads the resulting values. Because the
//! gradient of a variable is itself a tape node, `input_gradient_graph`
//! (needed for the zero-centered gradient penalty) is the same machinery,
//! and differentiating through a gradient is just running the builder again.
//!
//! A tape is single-threaded; distinct tapes are independent.

use crate::numerics::{ln_sigmoid, sigmoid};
use crate::tensor::{pairwise_sum, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shapes {lhs:?} and {rhs:?} do not conform")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: expects {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: input must be non-empty")]
    EmptyInput { op: &'static str },
    #[error("backward target must be scalar, got shape {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("input-gradient target must be a leaf variable, got a {op} node")]
    NotLeaf { op: &'static str },
}

/// Handle to a node on a tape. Cheap to copy; only valid for the tape that
/// issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarRef {
    id: usize,
    rows: usize,
    cols: usize,
}

impl VarRef {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

/// Recorded operation. The variants after `ConcatRows` are only emitted by
/// the adjoint builder, never by user-facing record calls.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// matrix + row vector, broadcast over rows (bias addition)
    AddRow(usize, usize),
    Sub(usize, usize),
    ScalarMul(f64, usize),
    Relu(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Log(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    L2NormSq(usize),
    ConcatRows(usize, usize),
    Transpose(usize),
    Hadamard(usize, usize),
    /// 1 where the input is > 0, else 0; the relu mask. Its own derivative
    /// is defined as 0 everywhere, including at 0.
    Heaviside(usize),
    SliceRows {
        src: usize,
        r0: usize,
        r1: usize,
    },
    PadRows {
        src: usize,
        r0: usize,
        total: usize,
    },
    SumRows(usize),
    BroadcastRows {
        src: usize,
        rows: usize,
    },
    BroadcastFull {
        src: usize,
        rows: usize,
        cols: usize,
    },
    Reciprocal(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add",
            Op::Sub(..) => "sub",
            Op::ScalarMul(..) => "scalar-mul",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log-sigmoid",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::L2NormSq(..) => "l2-norm-squared",
            Op::ConcatRows(..) => "concat-rows",
            Op::Transpose(..) => "transpose",
            Op::Hadamard(..) => "hadamard",
            Op::Heaviside(..) => "heaviside",
            Op::SliceRows { .. } => "slice-rows",
            Op::PadRows { .. } => "pad-rows",
            Op::SumRows(..) => "sum-rows",
            Op::BroadcastRows { .. } => "broadcast-rows",
            Op::BroadcastFull { .. } => "broadcast-full",
            Op::Reciprocal(..) => "reciprocal",
        }
    }
}

/// Public op kinds accepted by [`Tape::record`].
#[derive(Clone, Copy, Debug)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    ScalarMul(f64),
    Relu,
    Sigmoid,
    LogSigmoid,
    Log,
    Square,
    Sum,
    Mean,
    L2NormSquared,
    ConcatRows,
}

/// Recorded computation graph. Ops and their cached forward values live in
/// parallel vectors indexed by node id; parents always have smaller ids.
#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Cached forward value of a node.
    pub fn value(&self, v: VarRef) -> &Tensor {
        &self.values[v.id]
    }

    fn var(&self, id: usize) -> VarRef {
        let (rows, cols) = self.values[id].shape();
        VarRef { id, rows, cols }
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarRef {
        let id = self.ops.len();
        let (rows, cols) = value.shape();
        self.ops.push(op);
        self.values.push(value);
        VarRef { id, rows, cols }
    }

    fn push_op(&mut self, op: Op) -> VarRef {
        let value = eval_op(&op, &self.values);
        self.push(op, value)
    }

    /// Inserts an input variable holding `value`.
    pub fn leaf(&mut self, value: Tensor) -> VarRef {
        self.push(Op::Leaf, value)
    }

    /// Generic record entry point; the typed methods below are equivalent.
    pub fn record(&mut self, kind: OpKind, inputs: &[VarRef]) -> Result<VarRef, TapeError> {
        let unary = |op: &'static str| -> Result<VarRef, TapeError> {
            match inputs {
                [a] => Ok(*a),
                _ => Err(TapeError::Arity {
                    op,
                    expected: 1,
                    got: inputs.len(),
                }),
            }
        };
        let binary = |op: &'static str| -> Result<(VarRef, VarRef), TapeError> {
            match inputs {
                [a, b] => Ok((*a, *b)),
                _ => Err(TapeError::Arity {
                    op,
                    expected: 2,
                    got: inputs.len(),
                }),
            }
        };
        match kind {
            OpKind::Matmul => {
                let (a, b) = binary("matmul")?;
                self.matmul(a, b)
            }
            OpKind::Add => {
                let (a, b) = binary("add")?;
                self.add(a, b)
            }
            OpKind::Sub => {
                let (a, b) = binary("sub")?;
                self.sub(a, b)
            }
            OpKind::ScalarMul(c) => Ok(self.scalar_mul(c, unary("scalar-mul")?)),
            OpKind::Relu => Ok(self.relu(unary("relu")?)),
            OpKind::Sigmoid => Ok(self.sigmoid(unary("sigmoid")?)),
            OpKind::LogSigmoid => Ok(self.log_sigmoid(unary("log-sigmoid")?)),
            OpKind::Log => Ok(self.log(unary("log")?)),
            OpKind::Square => Ok(self.square(unary("square")?)),
            OpKind::Sum => self.sum(unary("sum")?),
            OpKind::Mean => self.mean(unary("mean")?),
            OpKind::L2NormSquared => self.l2_norm_squared(unary("l2-norm-squared")?),
            OpKind::ConcatRows => {
                let (a, b) = binary("concat-rows")?;
                self.concat_rows(a, b)
            }
        }
    }

    pub fn matmul(&mut self, a: VarRef, b: VarRef) -> Result<VarRef, TapeError> {
        if a.cols != b.rows {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(self.push_op(Op::MatMul(a.id, b.id)))
    }

    /// Elementwise addition; a 1xN right operand broadcasts over rows.
    pub fn add(&mut self, a: VarRef, b: VarRef) -> Result<VarRef, TapeError> {
        if a.shape() == b.shape() {
            Ok(self.push_op(Op::Add(a.id, b.id)))
        } else if b.rows == 1 && b.cols == a.cols {
            Ok(self.push_op(Op::AddRow(a.id, b.id)))
        } else {
            Err(TapeError::ShapeMismatch {
                op: "add",
                lhs: a.shape(),
                rhs: b.shape(),
            })
        }
    }

    pub fn sub(&mut self, a: VarRef, b: VarRef) -> Result<VarRef, TapeError> {
        if a.shape() != b.shape() {
            return Err(TapeError::ShapeMismatch {
                op: "sub",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(self.push_op(Op::Sub(a.id, b.id)))
    }

    pub fn scalar_mul(&mut self, c: f64, a: VarRef) -> VarRef {
        self.push_op(Op::ScalarMul(c, a.id))
    }

    pub fn relu(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Relu(a.id))
    }

    pub fn sigmoid(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Sigmoid(a.id))
    }

    /// log(sigmoid(x)) in softplus form; the stable path for all objectives.
    pub fn log_sigmoid(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::LogSigmoid(a.id))
    }

    pub fn log(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Log(a.id))
    }

    pub fn square(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Square(a.id))
    }

    pub fn sum(&mut self, a: VarRef) -> Result<VarRef, TapeError> {
        if a.rows * a.cols == 0 {
            return Err(TapeError::EmptyInput { op: "sum" });
        }
        Ok(self.push_op(Op::Sum(a.id)))
    }

    pub fn mean(&mut self, a: VarRef) -> Result<VarRef, TapeError> {
        if a.rows * a.cols == 0 {
            return Err(TapeError::EmptyInput { op: "mean" });
        }
        Ok(self.push_op(Op::Mean(a.id)))
    }

    /// Sum of squares of every entry.
    pub fn l2_norm_squared(&mut self, a: VarRef) -> Result<VarRef, TapeError> {
        if a.rows * a.cols == 0 {
            return Err(TapeError::EmptyInput { op: "l2-norm-squared" });
        }
        Ok(self.push_op(Op::L2NormSq(a.id)))
    }

    pub fn concat_rows(&mut self, a: VarRef, b: VarRef) -> Result<VarRef, TapeError> {
        if a.cols != b.cols {
            return Err(TapeError::ShapeMismatch {
                op: "concat-rows",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(self.push_op(Op::ConcatRows(a.id, b.id)))
    }

    /// Rows `r0..r1` of a node.
    pub fn slice_rows(&mut self, a: VarRef, r0: usize, r1: usize) -> Result<VarRef, TapeError> {
        if r0 > r1 || r1 > a.rows {
            return Err(TapeError::ShapeMismatch {
                op: "slice-rows",
                lhs: a.shape(),
                rhs: (r0, r1),
            });
        }
        Ok(self.push_op(Op::SliceRows { src: a.id, r0, r1 }))
    }

    // ---- internal ops used by the adjoint builder ----

    fn transpose(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Transpose(a.id))
    }

    fn hadamard(&mut self, a: VarRef, b: VarRef) -> VarRef {
        debug_assert_eq!(a.shape(), b.shape());
        self.push_op(Op::Hadamard(a.id, b.id))
    }

    fn heaviside(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Heaviside(a.id))
    }

    fn pad_rows(&mut self, a: VarRef, r0: usize, total: usize) -> VarRef {
        self.push_op(Op::PadRows {
            src: a.id,
            r0,
            total,
        })
    }

    fn sum_rows(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::SumRows(a.id))
    }

    fn broadcast_rows(&mut self, a: VarRef, rows: usize) -> VarRef {
        self.push_op(Op::BroadcastRows { src: a.id, rows })
    }

    fn broadcast_full(&mut self, a: VarRef, rows: usize, cols: usize) -> VarRef {
        self.push_op(Op::BroadcastFull {
            src: a.id,
            rows,
            cols,
        })
    }

    fn reciprocal(&mut self, a: VarRef) -> VarRef {
        self.push_op(Op::Reciprocal(a.id))
    }

    fn ones_like(&mut self, a: VarRef) -> VarRef {
        self.leaf(Tensor::filled(a.rows, a.cols, 1.0))
    }

    // ---- differentiation ----

    /// Gradients of a scalar `output` with respect to each entry of `wrt`.
    /// Contributions along all paths are summed; variables with no path to
    /// the output get zero gradients.
    pub fn backward(&mut self, output: VarRef, wrt: &[VarRef]) -> Result<Vec<Tensor>, TapeError> {
        let adj = self.adjoint_graph(output)?;
        Ok(wrt
            .iter()
            .map(|w| match adj[w.id] {
                Some(id) => self.values[id].clone(),
                None => Tensor::zeros(w.rows, w.cols),
            })
            .collect())
    }

    /// Records the gradient of scalar `output` with respect to the leaf
    /// `input` as a new node, so that `backward` can differentiate through
    /// it (double backprop).
    pub fn input_gradient_graph(
        &mut self,
        output: VarRef,
        input: VarRef,
    ) -> Result<VarRef, TapeError> {
        if !matches!(self.ops[input.id], Op::Leaf) {
            return Err(TapeError::NotLeaf {
                op: self.ops[input.id].name(),
            });
        }
        let adj = self.adjoint_graph(output)?;
        Ok(match adj[input.id] {
            Some(id) => self.var(id),
            None => self.leaf(Tensor::zeros(input.rows, input.cols)),
        })
    }

    /// Builds adjoint nodes for every ancestor of `output`, returning the
    /// per-node adjoint ids. Nodes are visited in descending id order, so
    /// all contributions to a node are accumulated before its own rule runs.
    fn adjoint_graph(&mut self, output: VarRef) -> Result<Vec<Option<usize>>, TapeError> {
        if !output.is_scalar() {
            return Err(TapeError::NotScalar {
                shape: output.shape(),
            });
        }
        let n = output.id + 1;
        let mut adj: Vec<Option<usize>> = vec![None; n];
        adj[output.id] = Some(self.leaf(Tensor::scalar(1.0)).id);

        for id in (0..n).rev() {
            let Some(g_id) = adj[id] else { continue };
            let g = self.var(g_id);
            let op = self.ops[id].clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (self.var(a), self.var(b));
                    let bt = self.transpose(b);
                    let ga = self.matmul(g, bt).expect("adjoint shapes conform");
                    contribute(self, &mut adj, a.id, ga);
                    let at = self.transpose(a);
                    let gb = self.matmul(at, g).expect("adjoint shapes conform");
                    contribute(self, &mut adj, b.id, gb);
                }
                Op::Add(a, b) => {
                    contribute(self, &mut adj, a, g);
                    contribute(self, &mut adj, b, g);
                }
                Op::AddRow(a, b) => {
                    contribute(self, &mut adj, a, g);
                    let gb = self.sum_rows(g);
                    contribute(self, &mut adj, b, gb);
                }
                Op::Sub(a, b) => {
                    contribute(self, &mut adj, a, g);
                    let gb = self.scalar_mul(-1.0, g);
                    contribute(self, &mut adj, b, gb);
                }
                Op::ScalarMul(c, a) => {
                    let ga = self.scalar_mul(c, g);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Relu(a) => {
                    let av = self.var(a);
                    let mask = self.heaviside(av);
                    let ga = self.hadamard(g, mask);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.var(id);
                    let ones = self.ones_like(y);
                    let one_minus = self.sub(ones, y).expect("same shape");
                    let dydx = self.hadamard(y, one_minus);
                    let ga = self.hadamard(g, dydx);
                    contribute(self, &mut adj, a, ga);
                }
                Op::LogSigmoid(a) => {
                    let av = self.var(a);
                    let neg = self.scalar_mul(-1.0, av);
                    let dydx = self.sigmoid(neg);
                    let ga = self.hadamard(g, dydx);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Log(a) => {
                    let av = self.var(a);
                    let inv = self.reciprocal(av);
                    let ga = self.hadamard(g, inv);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Square(a) => {
                    let av = self.var(a);
                    let two_a = self.scalar_mul(2.0, av);
                    let ga = self.hadamard(g, two_a);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Sum(a) => {
                    let av = self.var(a);
                    let ga = self.broadcast_full(g, av.rows, av.cols);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Mean(a) => {
                    let av = self.var(a);
                    let full = self.broadcast_full(g, av.rows, av.cols);
                    let ga = self.scalar_mul(1.0 / (av.rows * av.cols) as f64, full);
                    contribute(self, &mut adj, a, ga);
                }
                Op::L2NormSq(a) => {
                    let av = self.var(a);
                    let full = self.broadcast_full(g, av.rows, av.cols);
                    let two_a = self.scalar_mul(2.0, av);
                    let ga = self.hadamard(full, two_a);
                    contribute(self, &mut adj, a, ga);
                }
                Op::ConcatRows(a, b) => {
                    let (av, bv) = (self.var(a), self.var(b));
                    let ga = self
                        .slice_rows(g, 0, av.rows)
                        .expect("adjoint shapes conform");
                    contribute(self, &mut adj, a, ga);
                    let gb = self
                        .slice_rows(g, av.rows, av.rows + bv.rows)
                        .expect("adjoint shapes conform");
                    contribute(self, &mut adj, b, gb);
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g);
                    contribute(self, &mut adj, a, ga);
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (self.var(a), self.var(b));
                    let ga = self.hadamard(g, bv);
                    contribute(self, &mut adj, a, ga);
                    let gb = self.hadamard(g, av);
                    contribute(self, &mut adj, b, gb);
                }
                // The relu mask is piecewise constant; its derivative is
                // defined as 0 everywhere, so nothing propagates.
                Op::Heaviside(_) => {}
                Op::SliceRows { src, r0, .. } => {
                    let sv = self.var(src);
                    let ga = self.pad_rows(g, r0, sv.rows);
                    contribute(self, &mut adj, src, ga);
                }
                Op::PadRows { src, r0, .. } => {
                    let sv = self.var(src);
                    let ga = self
                        .slice_rows(g, r0, r0 + sv.rows)
                        .expect("adjoint shapes conform");
                    contribute(self, &mut adj, src, ga);
                }
                Op::SumRows(a) => {
                    let av = self.var(a);
                    let ga = self.broadcast_rows(g, av.rows);
                    contribute(self, &mut adj, a, ga);
                }
                Op::BroadcastRows { src, .. } => {
                    let ga = self.sum_rows(g);
                    contribute(self, &mut adj, src, ga);
                }
                Op::BroadcastFull { src, .. } => {
                    let ga = self.sum(g).expect("broadcast source non-empty");
                    contribute(self, &mut adj, src, ga);
                }
                Op::Reciprocal(a) => {
                    let y = self.var(id);
                    let y2 = self.square(y);
                    let gy2 = self.hadamard(g, y2);
                    let ga = self.scalar_mul(-1.0, gy2);
                    contribute(self, &mut adj, a, ga);
                }
            }
        }
        Ok(adj)
    }

    /// Sign pattern (input > 0) of every relu input element on the tape,
    /// in recording order. Finite-difference checks use this to detect
    /// perturbations that cross a kink, where difference quotients are
    /// meaningless.
    pub fn relu_input_signs(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for op in &self.ops {
            if let Op::Relu(a) = op {
                signs.extend(self.values[*a].data().iter().map(|&v| v > 0.0));
            }
        }
        signs
    }

    /// Recomputes every node from the leaves and checks the cached values
    /// bit-for-bit. Tape integrity diagnostic used by tests.
    pub fn replay_matches(&self) -> bool {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.ops.len());
        for (op, cached) in self.ops.iter().zip(&self.values) {
            let v = match op {
                Op::Leaf => cached.clone(),
                other => eval_op(other, &values),
            };
            if v != *cached {
                return false;
            }
            values.push(v);
        }
        true
    }
}

fn contribute(tape: &mut Tape, adj: &mut [Option<usize>], parent: usize, grad: VarRef) {
    adj[parent] = Some(match adj[parent] {
        None => grad.id,
        Some(prev) => {
            let prev = tape.var(prev);
            tape.add(prev, grad).expect("adjoint shapes conform").id
        }
    });
}

fn map2(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_raw(a.rows(), a.cols(), data)
}

fn map1(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_raw(a.rows(), a.cols(), a.data().iter().map(|&x| f(x)).collect())
}

/// Forward evaluation of one op against already-computed values. `record`
/// and `replay_matches` share this, so replay is bit-exact by construction.
fn eval_op(op: &Op, values: &[Tensor]) -> Tensor {
    match *op {
        Op::Leaf => unreachable!("leaves carry their value"),
        Op::MatMul(a, b) => values[a].matmul(&values[b]),
        Op::Add(a, b) => map2(&values[a], &values[b], |x, y| x + y),
        Op::AddRow(a, b) => values[a].add_row(&values[b]),
        Op::Sub(a, b) => map2(&values[a], &values[b], |x, y| x - y),
        Op::ScalarMul(c, a) => map1(&values[a], |x| c * x),
        Op::Relu(a) => values[a].relu(),
        Op::Sigmoid(a) => map1(&values[a], sigmoid),
        Op::LogSigmoid(a) => map1(&values[a], ln_sigmoid),
        Op::Log(a) => map1(&values[a], f64::ln),
        Op::Square(a) => map1(&values[a], |x| x * x),
        Op::Sum(a) => Tensor::scalar(pairwise_sum(values[a].data())),
        Op::Mean(a) => {
            let v = &values[a];
            Tensor::scalar(pairwise_sum(v.data()) / v.len() as f64)
        }
        Op::L2NormSq(a) => {
            let sq: Vec<f64> = values[a].data().iter().map(|&x| x * x).collect();
            Tensor::scalar(pairwise_sum(&sq))
        }
        Op::ConcatRows(a, b) => values[a]
            .concat_rows(&values[b])
            .expect("shape checked at record time"),
        Op::Transpose(a) => {
            let v = &values[a];
            let (m, n) = v.shape();
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = v.get(i, j);
                }
            }
            Tensor::from_raw(n, m, data)
        }
        Op::Hadamard(a, b) => map2(&values[a], &values[b], |x, y| x * y),
        Op::Heaviside(a) => map1(&values[a], |x| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::SliceRows { src, r0, r1 } => values[src].slice_rows(r0, r1),
        Op::PadRows { src, r0, total } => {
            let v = &values[src];
            let cols = v.cols();
            let mut data = vec![0.0; total * cols];
            data[r0 * cols..r0 * cols + v.len()].copy_from_slice(v.data());
            Tensor::from_raw(total, cols, data)
        }
        Op::SumRows(a) => {
            let v = &values[a];
            let (m, n) = v.shape();
            let mut data = vec![0.0; n];
            // Per-column pairwise sums keep reductions consistent crate-wide.
            let mut col = vec![0.0; m];
            for (j, d) in data.iter_mut().enumerate() {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = v.get(i, j);
                }
                *d = pairwise_sum(&col);
            }
            Tensor::from_raw(1, n, data)
        }
        Op::BroadcastRows { src, rows } => {
            let v = &values[src];
            let mut data = Vec::with_capacity(rows * v.cols());
            for _ in 0..rows {
                data.extend_from_slice(v.data());
            }
            Tensor::from_raw(rows, v.cols(), data)
        }
        Op::BroadcastFull { src, rows, cols } => {
            Tensor::filled(rows, cols, values[src].scalar_value())
        }
        Op::Reciprocal(a) => map1(&values[a], |x| 1.0 / x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(tape: &mut Tape, v: f64) -> VarRef {
        tape.leaf(Tensor::scalar(v))
    }

    #[test]
    fn sigmoid_of_scalar_zero_is_half() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 0.0);
        let y = tape.record(OpKind::Sigmoid, &[x]).unwrap();
        assert_eq!(tape.value(y).scalar_value(), 0.5);
        assert_eq!(tape.len(), 2);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.leaf(Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.leaf(Tensor::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = tape.record(OpKind::Matmul, &[eye, m]).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn l2_norm_squared_of_three_four_is_twenty_five() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![3.0, 4.0]).unwrap());
        let y = tape.record(OpKind::L2NormSquared, &[x]).unwrap();
        assert_eq!(tape.value(y).scalar_value(), 25.0);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("(2, 3)"), "{msg}");
        let before = tape.len();
        assert_eq!(before, 2, "rejected op must not grow the tape");
    }

    #[test]
    fn derivative_of_square_at_three_is_six() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 3.0);
        let y = tape.square(x);
        let grads = tape.backward(y, &[x]).unwrap();
        assert_eq!(grads[0].scalar_value(), 6.0);
    }

    #[test]
    fn derivative_of_log_sigmoid_at_zero_is_half() {
        // Both the composite log(sigmoid(x)) and the fused op agree.
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 0.0);
        let s = tape.sigmoid(x);
        let y = tape.log(s);
        let g = tape.backward(y, &[x]).unwrap();
        assert_eq!(g[0].scalar_value(), 0.5);

        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 0.0);
        let y = tape.log_sigmoid(x);
        let g = tape.backward(y, &[x]).unwrap();
        assert_eq!(g[0].scalar_value(), 0.5);
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        let y = tape.relu(x);
        let err = tape.backward(y, &[x]).unwrap_err();
        assert!(matches!(err, TapeError::NotScalar { shape: (2, 2) }));
    }

    #[test]
    fn paths_are_summed() {
        // y = x + x  =>  dy/dx = 2
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 1.5);
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y, &[x]).unwrap();
        assert_eq!(g[0].scalar_value(), 2.0);
    }

    #[test]
    fn unused_variable_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 1.0);
        let z = scalar_leaf(&mut tape, 4.0);
        let y = tape.square(x);
        let g = tape.backward(y, &[z]).unwrap();
        assert_eq!(g[0].scalar_value(), 0.0);
    }

    #[test]
    fn input_gradient_of_dot_product_is_weight() {
        // output = w . x  =>  d(output)/dx = w^T
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(1, 2, vec![2.0, -3.0]).unwrap());
        let x = tape.leaf(Tensor::new(2, 1, vec![5.0, 7.0]).unwrap());
        let y = tape.matmul(w, x).unwrap();
        let gx = tape.input_gradient_graph(y, x).unwrap();
        assert_eq!(tape.value(gx).data(), &[2.0, -3.0]);
        assert_eq!(gx.shape(), (2, 1));
    }

    #[test]
    fn input_gradient_of_quadratic() {
        // output = ||x||^2 at x = [1, 2]  =>  gradient [2, 4]
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]).unwrap());
        let y = tape.l2_norm_squared(x).unwrap();
        let gx = tape.input_gradient_graph(y, x).unwrap();
        assert_eq!(tape.value(gx).data(), &[2.0, 4.0]);
    }

    #[test]
    fn input_gradient_rejects_non_leaf() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 2.0);
        let y = tape.square(x);
        let z = tape.square(y);
        let err = tape.input_gradient_graph(z, y).unwrap_err();
        assert!(matches!(err, TapeError::NotLeaf { op: "square" }));
    }

    #[test]
    fn second_order_through_recorded_gradient() {
        // y = x^2, g = dy/dx = 2x; z = g^2 + y = 4x^2 + x^2 = 5x^2,
        // so dz/dx = 10x = 30 at x = 3.
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 3.0);
        let y = tape.square(x);
        let g = tape.input_gradient_graph(y, x).unwrap();
        assert_eq!(tape.value(g).scalar_value(), 6.0);
        let g2 = tape.square(g);
        let z = tape.add(g2, y).unwrap();
        let dz = tape.backward(z, &[x]).unwrap();
        assert_eq!(dz[0].scalar_value(), 30.0);
    }

    #[test]
    fn concat_rows_routes_gradients_to_both_parents() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat_rows(a, b).unwrap();
        let sq = tape.square(c);
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s, &[a, b]).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0]);
        assert_eq!(g[1].data(), &[6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn bias_row_broadcast_gradient_sums_over_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(3, 2, vec![1.0; 6]).unwrap());
        let b = tape.leaf(Tensor::new(1, 2, vec![0.5, -0.5]).unwrap());
        let y = tape.add(x, b).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s, &[b]).unwrap();
        assert_eq!(g[0].data(), &[3.0, 3.0]);
    }

    #[test]
    fn replay_reproduces_cached_values_bit_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(2, 3, vec![0.3, -1.7, 2.9, 0.01, -4.0, 5.5]).unwrap());
        let w = tape.leaf(Tensor::new(3, 2, vec![0.11, 0.2, -0.5, 1.4, 2.2, -0.9]).unwrap());
        let h = tape.matmul(x, w).unwrap();
        let r = tape.relu(h);
        let s = tape.sigmoid(r);
        let l = tape.log_sigmoid(s);
        let m = tape.mean(l).unwrap();
        let _ = tape.backward(m, &[x, w]).unwrap();
        assert!(tape.replay_matches());
    }

    #[test]
    fn linearity_of_backward() {
        // backward(a*f + b*g) == a*backward(f) + b*backward(g)
        let (a, b) = (2.5, -1.25);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(1, 3, vec![0.4, -0.2, 1.1]).unwrap());
        let f = tape.l2_norm_squared(x).unwrap();
        let sg = tape.sigmoid(x);
        let g = tape.sum(sg).unwrap();
        let gf = tape.backward(f, &[x]).unwrap()[0].clone();
        let gg = tape.backward(g, &[x]).unwrap()[0].clone();

        let af = tape.scalar_mul(a, f);
        let bg = tape.scalar_mul(b, g);
        let combo = tape.add(af, bg).unwrap();
        let gc = tape.backward(combo, &[x]).unwrap()[0].clone();

        for i in 0..3 {
            let expect = a * gf.data()[i] + b * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn record_arity_is_checked() {
        let mut tape = Tape::new();
        let x = scalar_leaf(&mut tape, 1.0);
        let err = tape.record(OpKind::Add, &[x]).unwrap_err();
        assert!(matches!(err, TapeError::Arity { op: "add", .. }));
    }
}
