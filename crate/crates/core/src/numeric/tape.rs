//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records every primitive evaluated through it together with its
//! value. [`Tape::backward`] walks the record in reverse and returns a
//! [`Gradients`] holding one buffer per registered parameter, of the same shape.

use crate::error::{DotError, Result};

use super::matrix::{row_softmax_unchecked, Matrix};

/// Floor applied inside logarithms of probabilities.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    RowSoftmax(usize, f64),
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
    },
    Entropy(usize),
    /// Sum over edges (i, j) with i < j of 2‖x_i − x_j‖².
    Lpp {
        x: usize,
        edges: Vec<(usize, usize)>,
    },
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Single-writer record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable parameter. Parameters are reported by
    /// [`Gradients::params`] in registration order.
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.params.push(v.0);
        v
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    /// Adds the 1×n row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(b))?;
        Ok(self.push(out, Op::AddRow(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a.0, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a.0))
    }

    /// Row-wise softmax of `a / scale`.
    pub fn row_softmax(&mut self, a: Var, scale: f64) -> Result<Var> {
        if !(scale > 0.0) {
            return Err(DotError::Parameter(format!(
                "softmax scale must be positive, got {scale}"
            )));
        }
        let out = row_softmax_unchecked(self.value(a), scale);
        Ok(self.push(out, Op::RowSoftmax(a.0, scale)))
    }

    /// Mean cross-entropy between `softmax(logits)` rows and integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != labels.len() {
            return Err(DotError::shape(
                "softmax_cross_entropy",
                z.shape_str(),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= z.cols()) {
            return Err(DotError::Label {
                label: bad as i64,
                classes: z.cols(),
            });
        }
        let mut total = 0.0;
        for (row, &y) in z.row_iter().zip(labels) {
            total += log_sum_exp(row) - row[y];
        }
        let out = Matrix::scalar(total / labels.len() as f64);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Mean row entropy `-(1/n) Σ p log max(p, LOG_FLOOR)` of a probability matrix.
    pub fn entropy(&mut self, p: Var) -> Var {
        let pm = self.value(p);
        let total: f64 = pm
            .as_slice()
            .iter()
            .map(|&v| -v * v.max(LOG_FLOOR).ln())
            .sum();
        let out = Matrix::scalar(total / pm.rows() as f64);
        self.push(out, Op::Entropy(p.0))
    }

    /// `Σ_{i,j} w_ij ‖x_i − x_j‖²` for a symmetric 0/1 graph given by its
    /// undirected edge list (`i < j`); both orientations are counted.
    pub fn lpp(&mut self, x: Var, edges: &[(usize, usize)]) -> Result<Var> {
        let xm = self.value(x);
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i.max(j) >= xm.rows()) {
            return Err(DotError::shape(
                "lpp",
                xm.shape_str(),
                format!("edge ({i}, {j})"),
            ));
        }
        let total: f64 = edges
            .iter()
            .map(|&(i, j)| 2.0 * super::matrix::sq_dist(xm.row(i), xm.row(j)))
            .sum();
        Ok(self.push(
            Matrix::scalar(total),
            Op::Lpp {
                x: x.0,
                edges: edges.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a.0))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(DotError::shape("backward", lv.shape_str(), "1x1"));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(&self.nodes[*b].value)?;
                    let gb = self.nodes[*a].value.matmul_at(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = g.matmul(&self.nodes[*b].value)?;
                    let gb = g.matmul_at(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(&self.nodes[*b].value)?;
                    let gb = g.hadamard(&self.nodes[*a].value)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let gb = Matrix::from_vec(1, g.cols(), g.col_sums());
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::RowSoftmax(a, scale) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - inner) / scale;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let up = g.item() / labels.len() as f64;
                    let mut ga = row_softmax_unchecked(&self.nodes[*logits].value, 1.0);
                    for (i, &y) in labels.iter().enumerate() {
                        let r = ga.row_mut(i);
                        r[y] -= 1.0;
                        r.iter_mut().for_each(|v| *v *= up);
                    }
                    accumulate(&mut grads, *logits, ga);
                }
                Op::Entropy(p) => {
                    let pm = &self.nodes[*p].value;
                    let up = g.item() / pm.rows() as f64;
                    let ga = pm.map(|v| {
                        let d = if v >= LOG_FLOOR {
                            v.ln() + 1.0
                        } else {
                            LOG_FLOOR.ln()
                        };
                        -d * up
                    });
                    accumulate(&mut grads, *p, ga);
                }
                Op::Lpp { x, edges } => {
                    let xm = &self.nodes[*x].value;
                    let up = 4.0 * g.item();
                    let mut ga = Matrix::zeros(xm.rows(), xm.cols());
                    for &(i, j) in edges {
                        for k in 0..xm.cols() {
                            let d = up * (xm.get(i, k) - xm.get(j, k));
                            ga.set(i, k, ga.get(i, k) + d);
                            ga.set(j, k, ga.get(j, k) - d);
                        }
                    }
                    accumulate(&mut grads, *x, ga);
                }
                Op::Sum(a) => {
                    let am = &self.nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        Matrix::filled(am.rows(), am.cols(), g.item()),
                    );
                }
            }
        }

        let params = self
            .params
            .iter()
            .map(|&p| {
                grads[p].take().unwrap_or_else(|| {
                    let v = &self.nodes[p].value;
                    Matrix::zeros(v.rows(), v.cols())
                })
            })
            .collect();
        Ok(Gradients { params })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign_scaled(&g, 1.0),
        slot => *slot = Some(g),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Parameter gradients from one backward pass, in registration order.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Matrix>,
}

impl Gradients {
    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Matrix> {
        self.params
    }
}

impl Matrix {
    pub(crate) fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        debug_assert_eq!(self.shape(), other.shape());
        let data = self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix::from_vec(self.rows(), self.cols(), data)
    }
}
