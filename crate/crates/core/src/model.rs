//! Gaussian encoders, the linear head, priors, and the differentiable
//! surrogates of the indicator losses.
//!
//! Parameters live in plain [`Tensor`]s. For a training step they are bound
//! into a fresh [`Graph`] as leaves (trainable or constant), the loss is built,
//! and gradients come back keyed by the bound [`Var`]s in the same order as
//! [`GaussianEncoder::tensors_mut`] / [`LinearHead::tensors_mut`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::autodiff::{stable_sigmoid, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{normals, Key};
use crate::tensor::Tensor;

/// Hidden widths of the mean network.
pub const HIDDEN: [usize; 2] = [128, 32];
/// Representation width used on the synthetic benchmark.
pub const REP_DIM: usize = 64;
/// Variance of the fixed-variance mode.
pub const FIXED_VARIANCE: f64 = 0.001;

/// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
fn uniform_layer(key: Key, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut rng = key.rng();
    let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    let b = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    (
        Tensor::from_parts(vec![fan_in, fan_out], w),
        Tensor::from_parts(vec![fan_out], b),
    )
}

/// Fully connected network with ELU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    pub fn new(key: Key, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let (weights, biases) = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| uniform_layer(key.fold(i as u64), w[0], w[1]))
            .unzip();
        Mlp { weights, biases }
    }

    pub fn from_layers(weights: Vec<Tensor>, biases: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::dim("mlp", "need matching, non-empty weight and bias lists"));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
                return Err(Error::dim("mlp", format!("layer {i}: W {:?}, b {:?}", w.shape(), b.shape())));
            }
            if i > 0 && weights[i - 1].shape()[1] != w.shape()[0] {
                return Err(Error::dim("mlp", format!("layer {i} input does not match previous output")));
            }
        }
        Ok(Mlp { weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map(|w| w.shape()[1]).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn layer(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.weights[i], &self.biases[i])
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut Tensor, &mut Tensor) {
        (&mut self.weights[i], &mut self.biases[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Variance {
    /// Same constant variance on every dimension.
    Fixed(f64),
    /// Input-independent learned log-variance, one entry per dimension.
    Learned(Tensor),
}

/// Diagonal Gaussian `N(mean_net(x), diag(variance))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianEncoder {
    mean_net: Mlp,
    variance: Variance,
}

/// Graph handles for one encoder.
#[derive(Clone, Debug)]
pub struct BoundEncoder {
    layers: Vec<(Var, Var)>,
    logvar: Var,
    trainable_logvar: bool,
}

impl GaussianEncoder {
    pub fn new(mean_net: Mlp, variance: Variance) -> Result<Self> {
        match &variance {
            Variance::Fixed(v) if !(*v > 0.0 && v.is_finite()) => {
                return Err(Error::Domain(format!("variance {v} must be positive")))
            }
            Variance::Learned(lv) if lv.shape() != [mean_net.output_dim()] => {
                return Err(Error::dim("encoder", "log-variance must have one entry per dimension"))
            }
            _ => {}
        }
        Ok(GaussianEncoder { mean_net, variance })
    }

    /// Randomly initialised encoder with the default widths.
    pub fn init(key: Key, input: usize, rep_dim: usize, learned_variance: bool) -> Self {
        let mean_net = Mlp::new(key, input, &HIDDEN, rep_dim);
        let variance = if learned_variance {
            Variance::Learned(Tensor::full(&[rep_dim], 0.1f64.ln()))
        } else {
            Variance::Fixed(FIXED_VARIANCE)
        };
        GaussianEncoder { mean_net, variance }
    }

    /// Copy with every parameter perturbed by `N(0, scale²)` noise.
    pub fn perturbed(&self, key: Key, scale: f64) -> Self {
        let mut out = self.clone();
        for (i, t) in out.tensors_mut().into_iter().enumerate() {
            let noise = normals(key.fold(i as u64), t.len());
            for (v, n) in t.data_mut().iter_mut().zip(noise) {
                *v += scale * n;
            }
        }
        out
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn variance_mode(&self) -> &Variance {
        &self.variance
    }

    pub fn input_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn rep_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    /// Per-dimension variance.
    pub fn variance(&self) -> Vec<f64> {
        match &self.variance {
            Variance::Fixed(v) => vec![*v; self.rep_dim()],
            Variance::Learned(lv) => lv.data().iter().map(|v| v.exp()).collect(),
        }
    }

    fn logvar_tensor(&self) -> Tensor {
        match &self.variance {
            Variance::Fixed(v) => Tensor::full(&[self.rep_dim()], v.ln()),
            Variance::Learned(lv) => lv.clone(),
        }
    }

    /// Parameter tensors in binding order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for (w, b) in self.mean_net.weights.iter_mut().zip(self.mean_net.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        if let Variance::Learned(lv) = &mut self.variance {
            out.push(lv);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for (w, b) in self.mean_net.weights.iter().zip(&self.mean_net.biases) {
            out.push(w);
            out.push(b);
        }
        if let Variance::Learned(lv) = &self.variance {
            out.push(lv);
        }
        out
    }

    /// Adds the parameters to `g`. With `trainable = false` they are
    /// constants and receive no gradient.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundEncoder {
        let leaf = |g: &mut Graph, t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let layers = self
            .mean_net
            .weights
            .iter()
            .zip(&self.mean_net.biases)
            .map(|(w, b)| (leaf(g, w), leaf(g, b)))
            .collect();
        let learned = matches!(self.variance, Variance::Learned(_));
        let logvar = if learned {
            leaf(g, &self.logvar_tensor())
        } else {
            g.constant(self.logvar_tensor())
        };
        BoundEncoder {
            layers,
            logvar,
            trainable_logvar: learned && trainable,
        }
    }

    /// Wraps leaves that already hold this encoder's parameters, in the order
    /// of [`GaussianEncoder::tensors`].
    pub fn attach(&self, g: &mut Graph, vars: &[Var]) -> Result<BoundEncoder> {
        let learned = matches!(self.variance, Variance::Learned(_));
        let want = 2 * self.mean_net.depth() + usize::from(learned);
        if vars.len() != want {
            return Err(Error::dim("attach", format!("expected {want} leaves, got {}", vars.len())));
        }
        let layers = vars[..2 * self.mean_net.depth()].chunks(2).map(|p| (p[0], p[1])).collect();
        let logvar = if learned { vars[want - 1] } else { g.constant(self.logvar_tensor()) };
        Ok(BoundEncoder {
            layers,
            logvar,
            trainable_logvar: learned,
        })
    }

    /// Mean and per-dimension variance for every row of `x`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mean = bound.mean(&mut g, xv)?;
        Ok((g.value(mean).clone(), self.variance()))
    }

    /// Reparameterised draws `mean + sqrt(var) ⊙ ε`, one per row of `x`, with
    /// `ε` taken from `key.fold(row)`.
    pub fn sample(&self, x: &Tensor, key: Key) -> Result<Tensor> {
        let (mean, var) = self.encode(x)?;
        let eps = row_noise(key, mean.rows(), self.rep_dim(), |i| i as u64);
        let std: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
        let d = self.rep_dim();
        let data = mean
            .data()
            .iter()
            .zip(eps.data())
            .enumerate()
            .map(|(i, (m, e))| m + std[i % d] * e)
            .collect();
        Ok(Tensor::from_parts(mean.shape().to_vec(), data))
    }
}

/// `[rows, dim]` standard normals, row `i` drawn from `key.fold(addr(i))`.
pub fn row_noise(key: Key, rows: usize, dim: usize, addr: impl Fn(usize) -> u64) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for i in 0..rows {
        data.extend(normals(key.fold(addr(i)), dim));
    }
    Tensor::from_parts(vec![rows, dim], data)
}

impl BoundEncoder {
    /// Trainable leaves in the same order as [`GaussianEncoder::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        if self.trainable_logvar {
            out.push(self.logvar);
        }
        out
    }

    pub fn mean(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.affine(h, w, b)?;
            if i + 1 < self.layers.len() {
                h = g.elu(h)?;
            }
        }
        Ok(h)
    }

    /// `mean + exp(logvar / 2) ⊙ eps` with `eps` a constant `[n, rep]` block.
    pub fn sample(&self, g: &mut Graph, mean: Var, eps: Tensor) -> Result<Var> {
        let half = g.scale(self.logvar, 0.5)?;
        let std = g.exp(half)?;
        let e = g.constant(eps);
        let spread = g.mul_row(e, std)?;
        g.add(mean, spread)
    }

    /// Batch mean of `KL(N(mean_i, var) ‖ prior)`.
    pub fn kl(&self, g: &mut Graph, mean: Var, prior: &Prior) -> Result<Var> {
        let n = g.value(mean).rows() as f64;
        let inv_var = Tensor::from_parts(vec![prior.var.len()], prior.var.iter().map(|v| 1.0 / v).collect());
        let neg_mu0 = Tensor::from_parts(vec![prior.mean.len()], prior.mean.iter().map(|m| -m).collect());
        let constant: f64 = prior.var.iter().map(|v| v.ln() - 1.0).sum();

        let nm = g.constant(neg_mu0);
        let diff = g.add_row(mean, nm)?;
        let sq = g.square(diff)?;
        let iv_row = g.constant(inv_var.clone());
        let weighted = g.mul_row(sq, iv_row)?;
        let quad = g.sum(weighted)?;
        let quad = g.scale(quad, 1.0 / n)?;

        let var = g.exp(self.logvar)?;
        let iv = g.constant(inv_var);
        let ratio = g.mul(var, iv)?;
        let trace = g.sum(ratio)?;
        let logdet = g.sum(self.logvar)?;
        let neg_logdet = g.neg(logdet)?;
        let tail = g.add(trace, neg_logdet)?;
        let total = g.add(quad, tail)?;
        let total = g.shift(total, constant)?;
        g.scale(total, 0.5)
    }
}

/// `y = wᵀc + b` with labels read off the sign.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    /// `[rep, 1]`
    w: Tensor,
    /// `[1]`
    b: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    w: Var,
    b: Var,
}

impl LinearHead {
    pub fn new(w: Vec<f64>, b: f64) -> Result<Self> {
        let n = w.len();
        Ok(LinearHead {
            w: Tensor::new(vec![n, 1], w)?,
            b: Tensor::new(vec![1], vec![b])?,
        })
    }

    pub fn init(key: Key, rep_dim: usize) -> Self {
        let (w, b) = uniform_layer(key, rep_dim, 1);
        LinearHead { w, b }
    }

    pub fn weights(&self) -> &[f64] {
        self.w.data()
    }

    pub fn bias(&self) -> f64 {
        self.b.data()[0]
    }

    pub fn rep_dim(&self) -> usize {
        self.w.len()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundHead {
        if trainable {
            BoundHead {
                w: g.param(self.w.clone()),
                b: g.param(self.b.clone()),
            }
        } else {
            BoundHead {
                w: g.constant(self.w.clone()),
                b: g.constant(self.b.clone()),
            }
        }
    }

    /// Wraps existing `[w, b]` leaves.
    pub fn attach(vars: &[Var]) -> Result<BoundHead> {
        match vars {
            [w, b] => Ok(BoundHead { w: *w, b: *b }),
            _ => Err(Error::dim("attach", "a head has two leaves")),
        }
    }

    pub fn logit(&self, c: &[f64]) -> f64 {
        c.iter().zip(self.w.data()).map(|(a, b)| a * b).sum::<f64>() + self.bias()
    }

    /// Label of one representation; a zero logit maps to 1.
    pub fn label(&self, c: &[f64]) -> u8 {
        u8::from(self.logit(c) >= 0.0)
    }
}

impl BoundHead {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w, self.b]
    }

    /// `[n, 1]` logits.
    pub fn logits(&self, g: &mut Graph, c: Var) -> Result<Var> {
        g.affine(c, self.w, self.b)
    }
}

/// Predicted labels from the encoder mean; the expectation of a linear form
/// is the form of the mean. Ties go to label 1.
pub fn predict(head: &LinearHead, enc: &GaussianEncoder, x: &Tensor) -> Result<Vec<u8>> {
    if head.rep_dim() != enc.rep_dim() {
        return Err(Error::dim("predict", "head and encoder widths differ"));
    }
    let (mean, _) = enc.encode(x)?;
    Ok((0..mean.rows()).map(|i| head.label(mean.row(i))).collect())
}

/// Fixed Gaussian reference distribution for the KL regulariser.
#[derive(Clone, Debug, PartialEq)]
pub struct Prior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Prior {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim("prior", "mean and variance lengths differ"));
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("prior variances must be positive".into()));
        }
        Ok(Prior { mean, var })
    }

    pub fn standard(dim: usize) -> Self {
        Prior {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }
}

/// `[n,1]` column of `±1` from binary labels.
pub fn signed_labels(y: &[u8]) -> Result<Tensor> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Domain("labels must be 0 or 1".into()));
    }
    let data = y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect();
    Tensor::new(vec![y.len(), 1], data)
}

/// Mean of `softplus(−ỹ z)` over logits `z: [n,1]` with `ỹ = 2y − 1`.
/// Dividing by `ln 2` gives a pointwise upper bound on the 0/1 error.
pub fn surrogate_sf_node(g: &mut Graph, logits: Var, y: &[u8]) -> Result<Var> {
    let mut neg = signed_labels(y)?;
    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
    if neg.shape() != g.value(logits).shape() {
        return Err(Error::dim("surrogate_sf", "labels and logits differ in length"));
    }
    let s = g.constant(neg);
    let margin = g.mul(logits, s)?;
    let loss = g.softplus(margin)?;
    g.mean(loss)
}

/// Mean over aligned pairs of `p q + (1 − p)(1 − q)` with `p = σ(z)`,
/// `q = σ(z̄)`. Saturated logits recover the agreement indicator.
pub fn surrogate_m_node(g: &mut Graph, logits: Var, logits_bar: Var) -> Result<Var> {
    let p = g.sigmoid(logits)?;
    let q = g.sigmoid(logits_bar)?;
    let pq = g.mul(p, q)?;
    let two_pq = g.scale(pq, 2.0)?;
    let a = g.sub(two_pq, p)?;
    let b = g.sub(a, q)?;
    let agree = g.shift(b, 1.0)?;
    g.mean(agree)
}

/// Value of the sufficiency surrogate on plain representations `c: [n, rep]`.
pub fn surrogate_sf(w: &LinearHead, c: &Tensor, y: &[u8]) -> Result<f64> {
    let mut g = Graph::new();
    let h = w.bind(&mut g, false);
    let cv = g.constant(c.clone());
    let z = h.logits(&mut g, cv)?;
    let l = surrogate_sf_node(&mut g, z, y)?;
    g.value(l).item()
}

/// Value of the monotonicity surrogate on paired representations.
pub fn surrogate_m(w: &LinearHead, c: &Tensor, c_bar: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let h = w.bind(&mut g, false);
    let cv = g.constant(c.clone());
    let cb = g.constant(c_bar.clone());
    let z = h.logits(&mut g, cv)?;
    let zb = h.logits(&mut g, cb)?;
    let l = surrogate_m_node(&mut g, z, zb)?;
    g.value(l).item()
}

/// Indicator version of the monotonicity measurement on aligned pairs.
pub fn indicator_m(w: &LinearHead, c: &Tensor, c_bar: &Tensor) -> f64 {
    let n = c.rows();
    let agree = (0..n).filter(|&i| w.label(c.row(i)) == w.label(c_bar.row(i))).count();
    agree as f64 / n as f64
}

/// Closed-form `p·q + (1−p)(1−q)` for one pair of logits, used by tests.
pub fn agreement_prob(z: f64, z_bar: f64) -> f64 {
    let (p, q) = (stable_sigmoid(z), stable_sigmoid(z_bar));
    p * q + (1.0 - p) * (1.0 - q)
}

/// The pair of encoders and the classifier trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct CasnModel {
    pub enc_c: GaussianEncoder,
    pub enc_cbar: GaussianEncoder,
    pub head: LinearHead,
    pub prior_c: Prior,
    pub prior_cbar: Prior,
}

impl CasnModel {
    /// φ at random, ξ a perturbed copy of φ, head at random.
    pub fn init(key: Key, input: usize, rep_dim: usize, learned_variance: bool, xi_perturbation: f64) -> Self {
        let enc_c = GaussianEncoder::init(key.fold_str("phi"), input, rep_dim, learned_variance);
        let enc_cbar = enc_c.perturbed(key.fold_str("xi"), xi_perturbation);
        CasnModel {
            enc_c,
            enc_cbar,
            head: LinearHead::init(key.fold_str("head"), rep_dim),
            prior_c: Prior::standard(rep_dim),
            prior_cbar: Prior::standard(rep_dim),
        }
    }

    pub fn to_checkpoint(&self, meta: &BTreeMap<String, String>) -> Checkpoint {
        let mut cp = Checkpoint {
            meta: meta.clone(),
            tensors: Vec::new(),
        };
        for (name, enc) in [("phi", &self.enc_c), ("xi", &self.enc_cbar)] {
            let net = enc.mean_net();
            for i in 0..net.depth() {
                let (w, b) = net.layer(i);
                cp.tensors.push((format!("{name}.w{i}"), w.clone()));
                cp.tensors.push((format!("{name}.b{i}"), b.clone()));
            }
            match enc.variance_mode() {
                Variance::Fixed(v) => cp.tensors.push((format!("{name}.fixed_var"), Tensor::scalar(*v))),
                Variance::Learned(lv) => cp.tensors.push((format!("{name}.logvar"), lv.clone())),
            }
        }
        cp.tensors.push(("head.w".into(), self.head.w.clone()));
        cp.tensors.push(("head.b".into(), self.head.b.clone()));
        for (name, p) in [("prior_c", &self.prior_c), ("prior_cbar", &self.prior_cbar)] {
            let d = p.mean.len();
            cp.tensors.push((format!("{name}.mean"), Tensor::from_parts(vec![d], p.mean.clone())));
            cp.tensors.push((format!("{name}.var"), Tensor::from_parts(vec![d], p.var.clone())));
        }
        cp
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            cp.get(name)
                .cloned()
                .ok_or_else(|| Error::Contract(format!("checkpoint lacks tensor `{name}`")))
        };
        let encoder = |name: &str| -> Result<GaussianEncoder> {
            let (mut ws, mut bs) = (Vec::new(), Vec::new());
            let mut i = 0;
            while let Some(w) = cp.get(&format!("{name}.w{i}")) {
                ws.push(w.clone());
                bs.push(get(&format!("{name}.b{i}"))?);
                i += 1;
            }
            let net = Mlp::from_layers(ws, bs)?;
            let variance = match cp.get(&format!("{name}.logvar")) {
                Some(lv) => Variance::Learned(lv.clone()),
                None => Variance::Fixed(get(&format!("{name}.fixed_var"))?.item()?),
            };
            GaussianEncoder::new(net, variance)
        };
        let prior = |name: &str| -> Result<Prior> {
            Prior::new(
                get(&format!("{name}.mean"))?.into_data(),
                get(&format!("{name}.var"))?.into_data(),
            )
        };
        let w = get("head.w")?;
        let b = get("head.b")?;
        Ok(CasnModel {
            enc_c: encoder("phi")?,
            enc_cbar: encoder("xi")?,
            head: LinearHead::new(w.into_data(), b.item()?)?,
            prior_c: prior("prior_c")?,
            prior_cbar: prior("prior_cbar")?,
        })
    }
}

/// Named tensors plus string metadata.
///
/// Text layout, one record per line:
///
/// ```text
/// casn-checkpoint v1
/// meta <key> <value>
/// tensor <name> <dim> <dim> ...
/// <value> <value> ...        (row-major, shortest round-trip decimal)
/// ```
///
/// Values are printed with Rust's shortest representation that parses back
/// to the same bits, so save/load is exact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

const MAGIC: &str = "casn-checkpoint v1";

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected `{MAGIC}`"),
                })
            }
        }
        let mut cp = Checkpoint::default();
        while let Some((i, line)) = lines.next() {
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            if line.trim().is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("meta") => {
                    let key = words.next().ok_or_else(|| err("meta needs a key".into()))?;
                    let rest = line.trim_start()["meta".len()..].trim_start()[key.len()..].trim();
                    cp.meta.insert(key.to_owned(), rest.to_owned());
                }
                Some("tensor") => {
                    let name = words.next().ok_or_else(|| err("tensor needs a name".into()))?;
                    let shape = words
                        .map(|w| w.parse::<usize>().map_err(|_| err(format!("bad dimension `{w}`"))))
                        .collect::<Result<Vec<_>>>()?;
                    let (j, vals) = lines.next().ok_or_else(|| err(format!("tensor `{name}` has no values")))?;
                    let data = vals
                        .split_whitespace()
                        .map(|w| {
                            w.parse::<f64>().map_err(|_| Error::Parse {
                                line: j + 1,
                                msg: format!("bad value `{w}`"),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let t = Tensor::new(shape, data).map_err(|e| Error::Parse {
                        line: j + 1,
                        msg: e.to_string(),
                    })?;
                    cp.tensors.push((name.to_owned(), t));
                }
                Some(other) => return Err(err(format!("unknown record `{other}`"))),
                None => {}
            }
        }
        Ok(cp)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text)
    }
}
