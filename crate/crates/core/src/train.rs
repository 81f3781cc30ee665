//! Alternating min-max training of (φ, w) against the intervention encoder ξ.
//!
//! The min player descends
//!
//! ```text
//! SF~ + λ KL_φ                               (casn_minus_m)
//! M~ + SF~ + λ (KL_φ + KL_ξ) + sep · hinge   (casn, plus an IRM or MMD term)
//! ```
//!
//! where `SF~`, `M~` are the logistic / product surrogates and
//! `hinge = mean max(0, δ − ‖c − c̄‖)²` stands in for the separation
//! constraint `‖c − c̄‖ > δ`. Every `max_every` steps the adversary runs a
//! short phase of descent on `−(M~ + λ KL_ξ) + sep · hinge` over ξ only: it
//! pushes the intervened representation towards agreement with `c` while
//! respecting the separation constraint.
//!
//! The IRM variant adds `irm_weight · L_irm` once `irm_anneal_iters` steps
//! have passed (weight 1 before). A weight above 1 also divides the whole
//! loss by that weight, as in the reference IRM code, so plain SGD does not
//! blow up when the weight jumps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::model::{row_noise, surrogate_m_node, surrogate_sf_node, BoundEncoder, BoundHead, CasnModel, REP_DIM};
use crate::risk::{estimate_risk_with_priors, LabeledBatch, RiskReport};
use crate::rng::Key;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Casn,
    CasnMinusM,
    CasnIrm,
    CasnMmd,
}

impl Variant {
    /// Whether the monotonicity term, the separation hinge and the adversary
    /// take part.
    pub fn has_adversary(self) -> bool {
        self != Variant::CasnMinusM
    }

    pub const ALL: [Variant; 4] = [Variant::Casn, Variant::CasnMinusM, Variant::CasnIrm, Variant::CasnMmd];
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "casn" => Ok(Variant::Casn),
            "casn_minus_m" => Ok(Variant::CasnMinusM),
            "casn_irm" => Ok(Variant::CasnIrm),
            "casn_mmd" => Ok(Variant::CasnMmd),
            other => Err(Error::Domain(format!(
                "unknown variant `{other}` (casn | casn_minus_m | casn_irm | casn_mmd)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Casn => "casn",
            Variant::CasnMinusM => "casn_minus_m",
            Variant::CasnIrm => "casn_irm",
            Variant::CasnMmd => "casn_mmd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub delta: f64,
    pub lambda: f64,
    pub sep_weight: f64,
    /// Step size of the (φ, w) player.
    pub lr_min: f64,
    /// Step size of the ξ player.
    pub lr_max: f64,
    pub momentum: f64,
    pub max_every: usize,
    pub max_steps_per_phase: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Representation draws per input within a training step.
    pub mc_samples: usize,
    pub variant: Variant,
    pub irm_weight: f64,
    pub irm_anneal_iters: usize,
    pub mmd_weight: f64,
    /// Include `λ KL_ξ` in the adversary's objective.
    pub adversary_kl: bool,
    pub learned_variance: bool,
    pub rep_dim: usize,
    /// Scale of the noise that separates the initial ξ from φ.
    pub xi_init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            delta: 1.1,
            lambda: 0.01,
            sep_weight: 0.1,
            lr_min: 1e-4,
            lr_max: 1e-5,
            momentum: 0.0,
            max_every: 500,
            max_steps_per_phase: 10,
            total_steps: 5000,
            batch_size: 32,
            mc_samples: 1,
            variant: Variant::Casn,
            irm_weight: 10.0,
            irm_anneal_iters: 1000,
            mmd_weight: 1.0,
            adversary_kl: true,
            learned_variance: true,
            rep_dim: REP_DIM,
            xi_init_scale: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_min", self.lr_min), ("lr_max", self.lr_max)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("delta", self.delta),
            ("lambda", self.lambda),
            ("sep_weight", self.sep_weight),
            ("irm_weight", self.irm_weight),
            ("mmd_weight", self.mmd_weight),
            ("xi_init_scale", self.xi_init_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be nonnegative")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain("momentum must lie in [0,1)".into()));
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.rep_dim == 0 || self.max_every == 0 {
            return Err(Error::Domain(
                "batch_size, mc_samples, rep_dim and max_every must be positive".into(),
            ));
        }
        Ok(())
    }

    fn irm_multiplier(&self, step: usize) -> f64 {
        if step < self.irm_anneal_iters {
            1.0
        } else {
            self.irm_weight
        }
    }
}

/// Training inputs with a domain index per row.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub batch: LabeledBatch,
    pub domains: Vec<usize>,
}

impl TrainData {
    pub fn single_domain(batch: LabeledBatch) -> Self {
        let domains = vec![0; batch.len()];
        TrainData { batch, domains }
    }

    pub fn new(batch: LabeledBatch, domains: Vec<usize>) -> Result<Self> {
        if domains.len() != batch.len() {
            return Err(Error::dim("train data", "one domain index per row"));
        }
        Ok(TrainData { batch, domains })
    }
}

/// Everything random in one objective evaluation, fixed up front.
#[derive(Clone, Debug)]
pub struct StepInputs {
    pub x: Tensor,
    /// Labels repeated once per representation draw.
    pub y: Vec<u8>,
    pub domains: Vec<usize>,
    pub eps_c: Tensor,
    pub eps_cbar: Tensor,
    pub draws: usize,
}

impl StepInputs {
    /// Draws a batch with replacement and the representation noise for it.
    pub fn sample(data: &TrainData, cfg: &TrainConfig, key: Key) -> Result<Self> {
        let n = data.batch.len();
        if n == 0 {
            return Err(Error::Contract("empty training set".into()));
        }
        let mut rng = key.fold_str("rows").rng();
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..n)).collect();
        let x = data.batch.x.select_rows(&idx);
        let rows = idx.len() * cfg.mc_samples;
        let y = idx
            .iter()
            .flat_map(|&i| std::iter::repeat(data.batch.y[i]).take(cfg.mc_samples))
            .collect();
        let domains = idx
            .iter()
            .flat_map(|&i| std::iter::repeat(data.domains[i]).take(cfg.mc_samples))
            .collect();
        Ok(StepInputs {
            x,
            y,
            domains,
            eps_c: row_noise(key.fold_str("eps_c"), rows, cfg.rep_dim, |i| i as u64),
            eps_cbar: row_noise(key.fold_str("eps_cbar"), rows, cfg.rep_dim, |i| i as u64),
            draws: cfg.mc_samples,
        })
    }
}

/// Which parameters are bound as trainable leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Player {
    /// φ and w trainable, ξ constant.
    Min,
    /// ξ trainable, φ and w constant.
    Max,
    /// Everything trainable (gradient checks).
    Both,
}

#[derive(Clone, Debug)]
pub struct BoundModel {
    pub phi: BoundEncoder,
    /// Absent when the variant never touches ξ.
    pub xi: Option<BoundEncoder>,
    pub head: BoundHead,
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    pub sf: Var,
    pub kl_c: Var,
    pub m: Option<Var>,
    pub kl_cbar: Option<Var>,
    pub hinge: Option<Var>,
    pub irm: Option<Var>,
    pub mmd: Option<Var>,
    pub min_loss: Var,
    pub max_loss: Option<Var>,
}

fn total(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// `mean max(0, δ − ‖c_i − c̄_i‖)²` over aligned rows.
pub fn separation_hinge(g: &mut Graph, c: Var, c_bar: Var, delta: f64) -> Result<Var> {
    let diff = g.sub(c, c_bar)?;
    let norm = g.row_norm(diff)?;
    let neg = g.neg(norm)?;
    let gap = g.shift(neg, delta)?;
    let gap = g.relu(gap)?;
    let sq = g.square(gap)?;
    g.mean(sq)
}

fn domain_groups(domains: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &d) in domains.iter().enumerate() {
        groups.entry(d).or_default().push(i);
    }
    groups.into_iter().collect()
}

/// Sum over domain pairs of the mean Euclidean distance between their
/// representations. Zero (with a warning) when only one domain is present.
pub fn mmd_penalty(g: &mut Graph, reps: Var, domains: &[usize]) -> Result<Var> {
    if domains.len() != g.value(reps).rows() {
        return Err(Error::dim("mmd_penalty", "one domain index per row"));
    }
    let groups = domain_groups(domains);
    if groups.len() < 2 {
        log::warn!("distribution penalty needs at least two domains; using 0");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let parts: Vec<Var> = groups
        .iter()
        .map(|(_, idx)| g.select_rows(reps, idx))
        .collect::<Result<_>>()?;
    let mut terms = Vec::new();
    for i in 0..parts.len() {
        for j in (i + 1)..parts.len() {
            let d = g.pairwise_dist(parts[i], parts[j])?;
            terms.push(g.mean(d)?);
        }
    }
    total(g, &terms)
}

/// Sum over domains of the squared derivative, at scale 1, of the domain's
/// logistic loss with logits multiplied by a dummy scale. The derivative is
/// `mean(u σ(u))` with `u = −ỹ z`, built directly so no second-order pass is
/// needed.
pub fn irm_penalty(g: &mut Graph, logits: Var, y: &[u8], domains: &[usize]) -> Result<Var> {
    let n = g.value(logits).rows();
    if y.len() != n || domains.len() != n {
        return Err(Error::dim("irm_penalty", "labels and domains must match the logits"));
    }
    let mut neg = crate::model::signed_labels(y)?;
    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
    let s = g.constant(neg);
    let u = g.mul(logits, s)?;
    let sig = g.sigmoid(u)?;
    let prod = g.mul(u, sig)?;
    let mut terms = Vec::new();
    for (_, idx) in domain_groups(domains) {
        let mut mask = vec![0.0; n];
        for &i in &idx {
            mask[i] = 1.0;
        }
        let m = g.constant(Tensor::from_parts(vec![n, 1], mask));
        let masked = g.mul(prod, m)?;
        let sum = g.sum(masked)?;
        let grad = g.scale(sum, 1.0 / idx.len() as f64)?;
        terms.push(g.square(grad)?);
    }
    total(g, &terms)
}

/// Binds `model` for `player` and builds the objective for one step.
pub fn casn_objective(
    g: &mut Graph,
    inputs: &StepInputs,
    model: &CasnModel,
    cfg: &TrainConfig,
    step: usize,
    player: Player,
) -> Result<(ObjectiveNodes, BoundModel)> {
    let min_trainable = player != Player::Max;
    let bound = BoundModel {
        phi: model.enc_c.bind(g, min_trainable),
        xi: cfg
            .variant
            .has_adversary()
            .then(|| model.enc_cbar.bind(g, player != Player::Min)),
        head: model.head.bind(g, min_trainable),
    };
    let nodes = objective_on(g, inputs, &bound, model, cfg, step)?;
    Ok((nodes, bound))
}

/// The objective over already bound parameters; `model` supplies the priors.
pub fn objective_on(
    g: &mut Graph,
    inputs: &StepInputs,
    bound: &BoundModel,
    model: &CasnModel,
    cfg: &TrainConfig,
    step: usize,
) -> Result<ObjectiveNodes> {
    let (phi, head) = (&bound.phi, &bound.head);
    let x = g.constant(inputs.x.clone());

    let mu = phi.mean(g, x)?;
    let kl_c = phi.kl(g, mu, &model.prior_c)?;
    let mu_rep = if inputs.draws > 1 { g.repeat_rows(mu, inputs.draws)? } else { mu };
    let c = phi.sample(g, mu_rep, inputs.eps_c.clone())?;
    let z = head.logits(g, c)?;
    let sf = surrogate_sf_node(g, z, &inputs.y)?;
    let kl_term = g.scale(kl_c, cfg.lambda)?;
    let mut min_terms = vec![sf, kl_term];

    let mut nodes = ObjectiveNodes {
        sf,
        kl_c,
        m: None,
        kl_cbar: None,
        hinge: None,
        irm: None,
        mmd: None,
        min_loss: sf,
        max_loss: None,
    };

    if let Some(xi) = &bound.xi {
        let mub = xi.mean(g, x)?;
        let kl_b = xi.kl(g, mub, &model.prior_cbar)?;
        let mub_rep = if inputs.draws > 1 { g.repeat_rows(mub, inputs.draws)? } else { mub };
        let cb = xi.sample(g, mub_rep, inputs.eps_cbar.clone())?;
        let zb = head.logits(g, cb)?;
        let m = surrogate_m_node(g, z, zb)?;
        let hinge = separation_hinge(g, c, cb, cfg.delta)?;
        let kl_b_term = g.scale(kl_b, cfg.lambda)?;
        let hinge_term = g.scale(hinge, cfg.sep_weight)?;
        min_terms.extend([m, kl_b_term, hinge_term]);

        let gain = if cfg.adversary_kl { g.add(m, kl_b_term)? } else { m };
        let neg_gain = g.neg(gain)?;
        nodes.max_loss = Some(g.add(neg_gain, hinge_term)?);
        nodes.m = Some(m);
        nodes.kl_cbar = Some(kl_b);
        nodes.hinge = Some(hinge);
    }

    match cfg.variant {
        Variant::CasnIrm => {
            let p = irm_penalty(g, z, &inputs.y, &inputs.domains)?;
            let weight = cfg.irm_multiplier(step);
            min_terms.push(g.scale(p, weight)?);
            nodes.irm = Some(p);
            if weight > 1.0 {
                // keep the gradient scale when the penalty weight jumps
                let sum = total(g, &min_terms)?;
                nodes.min_loss = g.scale(sum, 1.0 / weight)?;
                return Ok(nodes);
            }
        }
        Variant::CasnMmd => {
            let p = mmd_penalty(g, c, &inputs.domains)?;
            min_terms.push(g.scale(p, cfg.mmd_weight)?);
            nodes.mmd = Some(p);
        }
        Variant::Casn | Variant::CasnMinusM => {}
    }
    nodes.min_loss = total(g, &min_terms)?;
    Ok(nodes)
}

/// Plain SGD with optional heavy-ball momentum (`v ← μv + g; p ← p − lr·v`).
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Applies one update; `grads[i]` pairs with `params[i]`, `None` meaning
    /// the parameter did not influence the loss.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Option<&Tensor>]) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(self.velocity.iter_mut()) {
            let Some(g) = g else { continue };
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub sf: f64,
    pub m: Option<f64>,
    pub kl_c: f64,
    pub kl_cbar: Option<f64>,
    pub hinge: Option<f64>,
    /// Mean adversary objective of the phase that ran after this step.
    pub adversary: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    pub adversary_steps: usize,
    pub final_report: Option<RiskReport>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut out = String::from("step,sf,m,kl_c,kl_cbar,hinge\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:?},{},{:?},{},{}\n",
                r.step,
                r.sf,
                opt(r.m),
                r.kl_c,
                opt(r.kl_cbar),
                opt(r.hinge)
            ));
        }
        out
    }
}

/// Rows and draws used for the indicator report at the end of training.
pub const REPORT_ROWS: usize = 1000;
pub const REPORT_MC_SAMPLES: usize = 16;

fn value(g: &Graph, v: Var) -> f64 {
    g.value(v).data()[0]
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { step },
        other => other,
    }
}

/// Gradients for `params` in order, after checking that nothing outside
/// `params` received one.
fn partitioned<'a>(grads: &'a Gradients, params: &[Var]) -> Result<Vec<Option<&'a Tensor>>> {
    if let Some(stray) = grads.vars().find(|v| !params.contains(v)) {
        return Err(Error::Contract(format!(
            "parameter partition violated: node {} received a gradient",
            stray.index()
        )));
    }
    Ok(params.iter().map(|&v| grads.get(v)).collect())
}

/// The parameters training starts from.
pub fn initial_model(input_dim: usize, cfg: &TrainConfig) -> CasnModel {
    CasnModel::init(
        Key::new(cfg.seed).fold_str("train").fold_str("init"),
        input_dim,
        cfg.rep_dim,
        cfg.learned_variance,
        cfg.xi_init_scale,
    )
}

/// Key of the indicator report computed after training.
pub fn report_key(cfg: &TrainConfig) -> Key {
    Key::new(cfg.seed).fold_str("train").fold_str("report")
}

/// Trains from a fresh initialisation.
pub fn train(data: &TrainData, cfg: &TrainConfig) -> Result<(CasnModel, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let model = train_with_trace(data, cfg, &mut trace)?;
    Ok((model, trace))
}

/// As [`train`], filling `trace` as it goes so a caller keeps the records
/// up to a divergence.
pub fn train_with_trace(data: &TrainData, cfg: &TrainConfig, trace: &mut TrainTrace) -> Result<CasnModel> {
    cfg.validate()?;
    if data.batch.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let key = Key::new(cfg.seed).fold_str("train");
    let mut model = initial_model(data.batch.x.cols(), cfg);
    let mut opt_min = Sgd::new(cfg.lr_min, cfg.momentum);
    let mut opt_max = Sgd::new(cfg.lr_max, cfg.momentum);

    for step in 0..cfg.total_steps {
        let inputs = StepInputs::sample(data, cfg, key.fold_str("min").fold(step as u64))?;
        let mut g = Graph::new();
        let (nodes, bound) = casn_objective(&mut g, &inputs, &model, cfg, step, Player::Min).map_err(diverged(step))?;
        if !cfg.variant.has_adversary() && bound.xi.is_some() {
            return Err(Error::Contract("ablation bound the intervention encoder".into()));
        }
        let loss = value(&g, nodes.min_loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = g.backward(nodes.min_loss)?;
        let mut vars = bound.phi.vars();
        vars.extend(bound.head.vars());
        let gs = partitioned(&grads, &vars)?;
        let mut params = model.enc_c.tensors_mut();
        params.extend(model.head.tensors_mut());
        opt_min.step(params, &gs);

        let mut record = StepRecord {
            step,
            sf: value(&g, nodes.sf),
            m: nodes.m.map(|v| value(&g, v)),
            kl_c: value(&g, nodes.kl_c),
            kl_cbar: nodes.kl_cbar.map(|v| value(&g, v)),
            hinge: nodes.hinge.map(|v| value(&g, v)),
            adversary: None,
        };

        if cfg.variant.has_adversary() && (step + 1) % cfg.max_every == 0 && cfg.max_steps_per_phase > 0 {
            let mut acc = 0.0;
            for k in 0..cfg.max_steps_per_phase {
                let inputs = StepInputs::sample(data, cfg, key.fold_str("max").fold(step as u64).fold(k as u64))?;
                let mut g = Graph::new();
                let (nodes, bound) =
                    casn_objective(&mut g, &inputs, &model, cfg, step, Player::Max).map_err(diverged(step))?;
                let max_loss = nodes.max_loss.expect("adversarial variant");
                acc += value(&g, max_loss);
                let grads = g.backward(max_loss)?;
                let xi = bound.xi.expect("adversarial variant");
                let gs = partitioned(&grads, &xi.vars())?;
                opt_max.step(model.enc_cbar.tensors_mut(), &gs);
                trace.adversary_steps += 1;
            }
            record.adversary = Some(acc / cfg.max_steps_per_phase as f64);
        }
        trace.records.push(record);

        let finite = model
            .enc_c
            .tensors()
            .into_iter()
            .chain(model.enc_cbar.tensors())
            .chain(model.head.tensors())
            .all(Tensor::all_finite);
        if !finite {
            return Err(Error::Diverged { step });
        }
    }

    let rows: Vec<usize> = (0..data.batch.len().min(REPORT_ROWS)).collect();
    let report_batch = LabeledBatch::with_ids(
        data.batch.x.select_rows(&rows),
        rows.iter().map(|&i| data.batch.y[i]).collect(),
        rows.iter().map(|&i| data.batch.ids[i]).collect(),
    )?;
    trace.final_report = Some(estimate_risk_with_priors(
        &report_batch,
        &model.enc_c,
        &model.enc_cbar,
        &model.head,
        (&model.prior_c, &model.prior_cbar),
        REPORT_MC_SAMPLES,
        report_key(cfg),
    )?);
    Ok(model)
}
