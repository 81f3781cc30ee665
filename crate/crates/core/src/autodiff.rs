//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is applied. Nodes are appended
//! in evaluation order, so the node list is already a topological order and
//! [`Graph::backward`] walks it once in reverse. Graphs are cheap and are
//! rebuilt for every training step.
//!
//! Only the operations needed by three-layer perceptrons and the CaSN losses
//! exist; there is no general broadcasting. Every forward result is checked
//! for finiteness and an overflow surfaces as [`Error::NonFinite`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MulScalar(Var, Var),
    Elu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Relu(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
    RepeatRows(Var, usize),
    PairwiseDist(Var, Var),
    /// Second field indexes `Graph::index_lists`.
    SelectRows(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    trainable: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    index_lists: Vec<Vec<usize>>,
}

/// Gradients of a scalar with respect to every trainable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Leaves that received a gradient.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.grads.iter().enumerate().filter(|(_, g)| g.is_some()).map(|(i, _)| Var(i))
    }
}

#[inline]
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn row_operand(op: &'static str, a: &Tensor, r: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || r.len() != a.cols() {
        return Err(Error::dim(op, format!("{:?} with row {:?}", a.shape(), r.shape())));
    }
    Ok(())
}

fn col_sums(t: &Tensor) -> Vec<f64> {
    let c = t.cols();
    let mut out = vec![0.0; c];
    for i in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(i)) {
            *o += v;
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Whether gradients flow into `v` from some trainable leaf.
    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, parents: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
            trainable: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: trainable,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// `x W + b` for `x: [n,in]`, `W: [in,out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || bv.len() != wv.shape()[1] {
            return Err(Error::dim(
                "affine",
                format!("W {:?} with b {:?}", wv.shape(), bv.shape()),
            ));
        }
        let mut y = xv.matmul(wv).map_err(|_| {
            Error::dim("affine", format!("x {:?} with W {:?}", xv.shape(), wv.shape()))
        })?;
        let out = wv.shape()[1];
        for row in y.data_mut().chunks_mut(out) {
            for (o, bias) in row.iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        self.push("affine", y, Op::Affine { x, w, b }, &[x, w, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        self.push("matmul", y, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let y = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push("mul", y, Op::Mul(a, b), &[a, b])
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        row_operand("add_row", av, rv)?;
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv.data()[i % c])
            .collect();
        let y = Tensor::from_parts(av.shape().to_vec(), data);
        self.push("add_row", y, Op::AddRow(a, r), &[a, r])
    }

    /// Multiplies every row of a matrix elementwise by a row vector.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        row_operand("mul_row", av, rv)?;
        let c = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * rv.data()[i % c])
            .collect();
        let y = Tensor::from_parts(av.shape().to_vec(), data);
        self.push("mul_row", y, Op::MulRow(a, r), &[a, r])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let y = self.value(a).map(|v| v * c);
        self.push("scale", y, Op::Scale(a, c), &[a])
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        let y = self.value(a).map(|v| v + c);
        self.push("shift", y, Op::Shift(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// Multiplies a tensor by a one-element node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let y = self.value(a).map(|v| v * sv);
        self.push("mul_scalar", y, Op::MulScalar(a, s), &[a, s])
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        self.push("elu", y, Op::Elu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(stable_sigmoid);
        self.push("sigmoid", y, Op::Sigmoid(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(stable_softplus);
        self.push("softplus", y, Op::Softplus(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(f64::exp);
        self.push("exp", y, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of a non-positive value".into()));
        }
        let y = self.value(a).map(f64::ln);
        self.push("log", y, Op::Log(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(|v| v * v);
        self.push("square", y, Op::Square(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).map(|v| v.max(0.0));
        self.push("relu", y, Op::Relu(a), &[a])
    }

    /// Row sums of a matrix, as a `[n,1]` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        let y = Tensor::from_parts(vec![av.rows(), 1], data);
        self.push("sum_rows", y, Op::SumRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(a).sum());
        self.push("sum", y, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let y = Tensor::scalar(av.sum() / av.len() as f64);
        self.push("mean", y, Op::Mean(a), &[a])
    }

    /// Euclidean norm of every row, as a `[n,1]` column. The subgradient at a
    /// zero row is taken to be zero.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = (0..av.rows())
            .map(|i| av.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let y = Tensor::from_parts(vec![av.rows(), 1], data);
        self.push("row_norm", y, Op::RowNorm(a), &[a])
    }

    /// Repeats every row `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::Contract("repeat_rows needs times >= 1".into()));
        }
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.len() * times);
        for i in 0..av.rows() {
            for _ in 0..times {
                data.extend_from_slice(av.row(i));
            }
        }
        let mut shape = av.shape().to_vec();
        shape[0] *= times;
        let y = Tensor::from_parts(shape, data);
        self.push("repeat_rows", y, Op::RepeatRows(a, times), &[a])
    }

    /// Matrix of Euclidean distances between rows of `a: [n,k]` and
    /// `b: [m,k]`.
    pub fn pairwise_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::dim(
                "pairwise_dist",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let (n, m) = (av.rows(), bv.rows());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let d2: f64 = av.row(i).iter().zip(bv.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                data.push(d2.sqrt());
            }
        }
        let y = Tensor::from_parts(vec![n, m], data);
        self.push("pairwise_dist", y, Op::PairwiseDist(a, b), &[a, b])
    }

    /// Rows `idx` of a matrix, in the given order (repeats allowed).
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.is_empty() || idx.iter().any(|&i| i >= av.rows()) {
            return Err(Error::dim("select_rows", format!("indices out of range for {:?}", av.shape())));
        }
        let y = av.select_rows(idx);
        self.index_lists.push(idx.to_vec());
        let list = self.index_lists.len() - 1;
        self.push("select_rows", y, Op::SelectRows(a, list), &[a])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if node.trainable {
                leaf_grads[i] = Some(dy);
                continue;
            }
            self.propagate(node, &dy, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                if self.wants(x) {
                    let dx = dy.matmul_t(wv);
                    self.accumulate(grads, x, Tensor::from_parts(xv.shape().to_vec(), dx.into_data()));
                }
                if self.wants(w) {
                    self.accumulate(grads, w, xv.t_matmul(dy));
                }
                if self.wants(b) {
                    let db = col_sums(dy);
                    self.accumulate(grads, b, Tensor::from_parts(self.value(b).shape().to_vec(), db));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(a) {
                    self.accumulate(grads, a, dy.matmul_t(bv));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, av.t_matmul(dy));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, zip_map(dy, self.value(b), |g, v| g * v));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, zip_map(dy, self.value(a), |g, v| g * v));
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, a, dy.clone());
                if self.wants(r) {
                    let shape = self.value(r).shape().to_vec();
                    self.accumulate(grads, r, Tensor::from_parts(shape, col_sums(dy)));
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(a), self.value(r));
                let c = av.cols();
                if self.wants(a) {
                    let data = dy.data().iter().enumerate().map(|(i, g)| g * rv.data()[i % c]).collect();
                    self.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), data));
                }
                if self.wants(r) {
                    let prod = zip_map(dy, av, |g, v| g * v);
                    self.accumulate(grads, r, Tensor::from_parts(rv.shape().to_vec(), col_sums(&prod)));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, a, dy.map(|g| g * c)),
            Op::Shift(a) => self.accumulate(grads, a, dy.clone()),
            Op::MulScalar(a, s) => {
                let sv = self.value(s).data()[0];
                if self.wants(a) {
                    self.accumulate(grads, a, dy.map(|g| g * sv));
                }
                if self.wants(s) {
                    let ds: f64 = dy.data().iter().zip(self.value(a).data()).map(|(g, v)| g * v).sum();
                    self.accumulate(grads, s, Tensor::from_parts(self.value(s).shape().to_vec(), vec![ds]));
                }
            }
            Op::Elu(a) => {
                let g = zip_map(dy, self.value(a), |g, x| if x > 0.0 { g } else { g * x.exp() });
                self.accumulate(grads, a, g);
            }
            Op::Sigmoid(a) => self.accumulate(grads, a, zip_map(dy, y, |g, s| g * s * (1.0 - s))),
            Op::Softplus(a) => {
                self.accumulate(grads, a, zip_map(dy, self.value(a), |g, x| g * stable_sigmoid(x)))
            }
            Op::Exp(a) => self.accumulate(grads, a, zip_map(dy, y, |g, e| g * e)),
            Op::Log(a) => self.accumulate(grads, a, zip_map(dy, self.value(a), |g, x| g / x)),
            Op::Square(a) => self.accumulate(grads, a, zip_map(dy, self.value(a), |g, x| 2.0 * g * x)),
            Op::Relu(a) => {
                self.accumulate(grads, a, zip_map(dy, self.value(a), |g, x| if x > 0.0 { g } else { 0.0 }))
            }
            Op::SumRows(a) => {
                let av = self.value(a);
                let c = av.cols();
                let data = (0..av.len()).map(|i| dy.data()[i / c]).collect();
                self.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::Sum(a) => {
                let g = dy.data()[0];
                self.accumulate(grads, a, Tensor::full(self.value(a).shape(), g));
            }
            Op::Mean(a) => {
                let av = self.value(a);
                let g = dy.data()[0] / av.len() as f64;
                self.accumulate(grads, a, Tensor::full(av.shape(), g));
            }
            Op::RowNorm(a) => {
                let av = self.value(a);
                let c = av.cols();
                let data = av
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let norm = y.data()[i / c];
                        if norm > 0.0 {
                            dy.data()[i / c] * v / norm
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::RepeatRows(a, times) => {
                let av = self.value(a);
                let c = av.cols();
                let mut data = vec![0.0; av.len()];
                for (r, chunk) in dy.data().chunks(c).enumerate() {
                    let src = r / times;
                    for (o, g) in data[src * c..(src + 1) * c].iter_mut().zip(chunk) {
                        *o += g;
                    }
                }
                self.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::PairwiseDist(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, m, c) = (av.rows(), bv.rows(), av.cols());
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for i in 0..n {
                    for j in 0..m {
                        let d = y.data()[i * m + j];
                        if d <= 0.0 {
                            continue;
                        }
                        let g = dy.data()[i * m + j] / d;
                        for k in 0..c {
                            let diff = av.data()[i * c + k] - bv.data()[j * c + k];
                            da[i * c + k] += g * diff;
                            db[j * c + k] -= g * diff;
                        }
                    }
                }
                if self.wants(a) {
                    self.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::SelectRows(a, list) => {
                let av = self.value(a);
                let c = av.cols();
                let mut data = vec![0.0; av.len()];
                for (r, &src) in self.index_lists[list].iter().enumerate() {
                    for (o, g) in data[src * c..(src + 1) * c].iter_mut().zip(dy.row(r)) {
                        *o += g;
                    }
                }
                self.accumulate(grads, a, Tensor::from_parts(av.shape().to_vec(), data));
            }
        }
    }
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` receives a fresh graph and one trainable leaf per entry of
/// `params` and must return a scalar loss. Returns the largest
/// `|ad - fd| / max(1, |ad|, |fd|)` over all coordinates.
pub fn check_gradients<F>(build: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::Contract(format!("finite-difference step {step} outside (0, 1e-3]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let ad = grads.get_or_zeros(vars[pi], p.shape());
        for j in 0..p.len() {
            let orig = p.data()[j];
            work[pi].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = ad.data()[j];
            let rel = (a - fd).abs() / 1f64.max(a.abs()).max(fd.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normals, Key};

    fn rand_tensor(key: Key, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), normals(key, n)).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at(i, p) * b.at(p, j);
                }
                out[i * m + j] = s;
            }
        }
        out
    }

    #[test]
    fn affine_identity_and_hand_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let w = g.constant(Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap());
        let b = g.constant(Tensor::vector(vec![1.0]).unwrap());
        let y = g.affine(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }

    #[test]
    fn affine_matches_naive_triple_loop() {
        let key = Key::new(42);
        let a = rand_tensor(key.fold(0), &[3, 4]);
        let w = rand_tensor(key.fold(1), &[4, 2]);
        let mut g = Graph::new();
        let (xa, xw) = (g.constant(a.clone()), g.constant(w.clone()));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.affine(xa, xw, b).unwrap();
        for (got, want) in g.value(y).data().iter().zip(naive_matmul(&a, &w)) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn affine_shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.affine(x, w, b), Err(Error::Dimension { .. })));
        let w = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.affine(x, w, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn elu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 2.0, -1.0]).unwrap());
        let y = g.elu(x).unwrap();
        assert_eq!(g.value(y).data()[0], 0.0);
        assert_eq!(g.value(y).data()[1], 2.0);
        assert!((g.value(y).data()[2] - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert!((g.value(y).data()[2] + 0.6321).abs() < 1e-4);

        let x = g.constant(Tensor::vector(vec![0.0, 1.0, 800.0, -800.0]).unwrap());
        let s = g.sigmoid(x).unwrap();
        let v = g.value(s).data();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(v[2], 1.0);
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn exp_overflow_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1000.0]).unwrap());
        assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = g.square(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let w = g.param(rand_tensor(Key::new(3), &[3, 2]));
        let l = g.sum(w).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(w).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn squared_norm_gradient_matches_analytic() {
        // loss = ||xW||² ⇒ dW = 2 xᵀ x W
        let key = Key::new(9);
        let x = rand_tensor(key.fold(0), &[5, 3]);
        let w = rand_tensor(key.fold(1), &[3, 2]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.param(w.clone());
        let y = g.matmul(xv, wv).unwrap();
        let sq = g.square(y).unwrap();
        let l = g.sum(sq).unwrap();
        let grads = g.backward(l).unwrap();
        let xtx = x.t_matmul(&x);
        let want = xtx.matmul(&w).unwrap().map(|v| 2.0 * v);
        for (a, b) in grads.get(wv).unwrap().data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let build = |g: &mut Graph| {
            let a = g.param(rand_tensor(Key::new(5), &[4, 3]));
            let e = g.elu(a).unwrap();
            let s = g.sigmoid(e).unwrap();
            let l = g.mean(s).unwrap();
            (a, g.backward(l).unwrap())
        };
        let (mut g1, mut g2) = (Graph::new(), Graph::new());
        let (a1, r1) = build(&mut g1);
        let (a2, r2) = build(&mut g2);
        assert_eq!(r1.get(a1).unwrap().data(), r2.get(a2).unwrap().data());
    }

    #[test]
    fn linear_loss_is_exact_under_finite_differences() {
        let c = rand_tensor(Key::new(77), &[2, 3]);
        let err = check_gradients(
            |g, v| {
                let cv = g.constant(c.clone());
                let p = g.mul(v[0], cv)?;
                g.sum(p)
            },
            &[rand_tensor(Key::new(78), &[2, 3])],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let r = check_gradients(|g, v| g.sum(v[0]), &[Tensor::scalar(1.0)], 0.1);
        assert!(r.is_err());
    }

    #[test]
    fn every_op_matches_finite_differences() {
        for seed in 0..100u64 {
            let key = Key::new(seed);
            let a = rand_tensor(key.fold(0), &[3, 4]);
            let b = rand_tensor(key.fold(1), &[3, 4]);
            let r = rand_tensor(key.fold(2), &[4]);
            let w = rand_tensor(key.fold(3), &[4, 2]);
            let bias = rand_tensor(key.fold(4), &[2]);
            let s = rand_tensor(key.fold(5), &[1]);
            let err = check_gradients(
                |g, v| {
                    let (a, b, r, w, bias, s) = (v[0], v[1], v[2], v[3], v[4], v[5]);
                    let t = g.add(a, b)?;
                    let t = g.mul(t, b)?;
                    let t = g.sub(t, a)?;
                    let t = g.add_row(t, r)?;
                    let t = g.mul_row(t, r)?;
                    let t = g.elu(t)?;
                    let t = g.mul_scalar(t, s)?;
                    let t = g.repeat_rows(t, 2)?;
                    let h = g.affine(t, w, bias)?;
                    let sg = g.sigmoid(h)?;
                    let sp = g.softplus(h)?;
                    let e = g.scale(h, 0.3)?;
                    let e = g.exp(e)?;
                    let lg = g.shift(e, 1.0)?;
                    let lg = g.log(lg)?;
                    let rl = g.relu(h)?;
                    let sq = g.square(rl)?;
                    let nrm = g.row_norm(sp)?;
                    let rs = g.sum_rows(sg)?;
                    let pd = g.pairwise_dist(a, b)?;
                    let mm = g.matmul(a, w)?;
                    let sel = g.select_rows(b, &[2, 0, 2])?;
                    let sel = g.square(sel)?;
                    let parts = [
                        g.mean(sel)?,
                        g.mean(sg)?,
                        g.sum(lg)?,
                        g.mean(sq)?,
                        g.sum(nrm)?,
                        g.mean(rs)?,
                        g.mean(pd)?,
                        g.mean(mm)?,
                    ];
                    let mut total = parts[0];
                    for p in &parts[1..] {
                        total = g.add(total, *p)?;
                    }
                    Ok(total)
                },
                &[a, b, r, w, bias, s],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let p = g.param(Tensor::vector(vec![3.0, 4.0]).unwrap());
        let m = g.mul(c, p).unwrap();
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
        assert!(!g.needs_grad(c));
    }
}
