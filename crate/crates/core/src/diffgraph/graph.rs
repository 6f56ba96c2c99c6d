//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a dense `rows × cols` value. Batches run through the
//! graph as row-stacked matrices, so a node is "one layer for the whole
//! minibatch" rather than one scalar, which keeps the tape short.

use ndarray::{concatenate, s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Exp(Var),
    Log(Var),
    Square(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Columns(Var, usize, usize),
    RepeatRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    /// False for constants and anything computed only from constants.
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let tracked = op.parents().iter().any(|p| self.nodes[p.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (parameters, or anything a gradient is wanted for).
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient, such as a data batch.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a (n×k) + row (1×k)`, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// `a (n×k) ⊙ col (n×1)`, broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let value = self.value(a) * self.value(col);
        self.push(value, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a) + shift;
        self.push(value, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Row sums: `n×k → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Column-wise concatenation of equally tall blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(value, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn columns(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(value, Op::Columns(a, start, end))
    }

    /// Tile a `1×k` row into `n×k`.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Var {
        let r = self.value(row);
        let value = r
            .broadcast((n, r.ncols()))
            .expect("repeat_rows expects a single row")
            .to_owned();
        self.push(value, Op::RepeatRows(row))
    }

    /// Reverse sweep from a scalar `loss`; returns one gradient slot per node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones(self.value(loss).dim()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.tracked(*a) {
                        accumulate(&self.nodes, &mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.tracked(*b) {
                        accumulate(&self.nodes, &mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&self.nodes, &mut grads, *row, grow);
                    accumulate(&self.nodes, &mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&self.nodes, &mut grads, *b, g.clone());
                    accumulate(&self.nodes, &mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&self.nodes, &mut grads, *b, -&g);
                    accumulate(&self.nodes, &mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&self.nodes, &mut grads, *a, ga);
                    accumulate(&self.nodes, &mut grads, *b, gb);
                }
                Op::MulCol(a, col) => {
                    let ga = &g * self.value(*col);
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&self.nodes, &mut grads, *a, ga);
                    accumulate(&self.nodes, &mut grads, *col, gc);
                }
                Op::Scale(a, f) => accumulate(&self.nodes, &mut grads, *a, g * *f),
                Op::Offset(a) => accumulate(&self.nodes, &mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g *= gelu_grad(x));
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &s| *g *= s * (1.0 - s));
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = 0.0
                        }
                    });
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&self.nodes, &mut grads, *a, g * &node.value),
                Op::Log(a) => accumulate(&self.nodes, &mut grads, *a, g / self.value(*a)),
                Op::Square(a) => accumulate(&self.nodes, &mut grads, *a, g * self.value(*a) * 2.0),
                Op::SumCols(a) => {
                    let ga = g
                        .broadcast(self.value(*a).dim())
                        .expect("sum_cols grad")
                        .to_owned();
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]] / n);
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = g.slice(s![.., start..start + w]).to_owned();
                        accumulate(&self.nodes, &mut grads, *p, gp);
                        start += w;
                    }
                }
                Op::Columns(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&self.nodes, &mut grads, *a, ga);
                }
                Op::RepeatRows(row) => {
                    accumulate(&self.nodes, &mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
        }
        Gradients { grads }
    }
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Clamp(a, _, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Columns(a, _, _)
            | Op::RepeatRows(a) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Array2<f64>>], target: Var, g: Array2<f64>) {
    if !nodes[target.0].tracked {
        return;
    }
    match &mut grads[target.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros if the loss does not depend on it.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

/// Evaluate a scalar loss built on a fresh graph and its gradient with respect
/// to `params`.
///
/// The closure receives the graph and one leaf per parameter block (in order)
/// and must return a `1×1` node.
pub fn value_and_grad<F>(params: &[Array2<f64>], build: F) -> Result<(f64, Vec<Array2<f64>>)>
where
    F: FnOnce(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = params.iter().map(|p| g.input(p.clone())).collect();
    let loss = build(&mut g, &leaves);
    if g.shape(loss) != (1, 1) {
        return Err(Error::Dimension {
            context: "loss must be scalar",
            expected: 1,
            actual: g.value(loss).len(),
        });
    }
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {value}")));
    }
    let mut grads = g.backward(loss);
    let out = leaves
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take_or_zeros(*v, p.dim()))
        .collect();
    Ok((value, out))
}
