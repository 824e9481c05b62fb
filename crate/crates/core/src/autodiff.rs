//! A small reverse-mode gradient tape over dense matrices.
//!
//! Values are computed eagerly when a node is recorded; [`Tape::backward`]
//! walks the nodes in reverse creation order accumulating vector-Jacobian
//! products. Only the handful of operations the transport-map networks need
//! are provided.

use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `x · wᵀ + b`, with `b` a `1 x out` row broadcast over rows.
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    /// `Σ_r weights[r] · x[r, :]` as a `1 x cols` row.
    WeightedSumRows { x: Var, weights: Vec<f64> },
    BroadcastRows { x: Var, rows: usize },
    ConcatCols(Var, Var),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut y = self.value(x).matmul_t(self.value(w));
        let bias = self.value(b);
        assert_eq!(bias.shape(), (1, y.cols()), "bias shape mismatch");
        let bias = bias.as_slice().to_vec();
        for r in 0..y.rows() {
            for (o, bb) in y.row_mut(r).iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    /// Weighted sum over rows in fixed index order.
    pub fn weighted_sum_rows(&mut self, x: Var, weights: &[f64]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), weights.len(), "pooling weight count mismatch");
        let mut out = Matrix::zeros(1, xv.cols());
        for (r, &w) in weights.iter().enumerate() {
            for (o, v) in out.as_mut_slice().iter_mut().zip(xv.row(r)) {
                *o += w * v;
            }
        }
        self.push(out, Op::WeightedSumRows { x, weights: weights.to_vec() })
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1, "broadcast needs a single row");
        let mut out = Matrix::zeros(rows, xv.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(xv.row(0));
        }
        self.push(out, Op::BroadcastRows { x, rows })
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat row mismatch");
        let mut out = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let o = out.row_mut(r);
            o[..av.cols()].copy_from_slice(av.row(r));
            o[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Propagates `seed = ∂L/∂output` back to every node.
    pub fn backward(&self, output: Var, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.values.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    accumulate(&mut grads, *x, g.matmul(self.value(*w)));
                    accumulate(&mut grads, *w, g.t_matmul(self.value(*x)));
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let mut gx = g.clone();
                    for (o, &v) in gx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                        if v <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::WeightedSumRows { x, weights } => {
                    let mut gx = Matrix::zeros(weights.len(), g.cols());
                    for (r, &w) in weights.iter().enumerate() {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = w * v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BroadcastRows { x, rows } => {
                    let mut gx = Matrix::zeros(1, g.cols());
                    for r in 0..*rows {
                        for (o, v) in gx.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let mut ga = Matrix::zeros(g.rows(), ca);
                    let mut gb = Matrix::zeros(g.rows(), g.cols() - ca);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
            }
            // keep leaf gradients for the caller
            if matches!(self.ops[idx], Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of leaf nodes after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}
