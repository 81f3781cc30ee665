//! Indicator risks of a (φ, ξ, w) triple and the bounds that relate them
//! across domains and sample sizes.
//!
//! Per data point, with `S` draws `c_k ~ P^φ(C|x)` and `S` draws
//! `c̄_k ~ P^ξ(C̄|x)`:
//!
//! * `sf = mean_k I[label(c_k) ≠ y]`
//! * `nc = mean_k I[label(c̄_k) = y]`
//! * `m  = mean_{j,k} I[label(c_j) = label(c̄_k)]`
//!
//! Because both sides of `m` come from the same draws, `m = sf(1 − nc) +
//! (1 − sf) nc` holds exactly per point and `sf + nc = m + 2 sf nc`.

use std::collections::HashMap;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{GaussianEncoder, LinearHead, Prior};
use crate::rng::{normals, Key};
use crate::tensor::Tensor;

/// Inputs and labels with a stable identity per row (drives the noise
/// addresses, so results do not depend on batch order).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub x: Tensor,
    pub y: Vec<u8>,
    pub ids: Vec<u64>,
}

impl LabeledBatch {
    pub fn new(x: Tensor, y: Vec<u8>) -> Result<Self> {
        let ids = (0..y.len() as u64).collect();
        LabeledBatch::with_ids(x, y, ids)
    }

    pub fn with_ids(x: Tensor, y: Vec<u8>, ids: Vec<u64>) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() || ids.len() != y.len() {
            return Err(Error::dim("batch", "inputs, labels and ids must align"));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::Domain("labels must be 0 or 1".into()));
        }
        Ok(LabeledBatch { x, y, ids })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointRisk {
    pub sf: f64,
    pub nc: f64,
    pub m: f64,
}

impl PointRisk {
    pub fn r(&self) -> f64 {
        self.sf + self.nc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub sf: f64,
    pub nc: f64,
    pub m: f64,
    pub r: f64,
    pub per_sample: Vec<PointRisk>,
    pub kl_c: f64,
    pub kl_cbar: f64,
    pub mc_samples: usize,
}

impl RiskReport {
    fn aggregate(per_sample: Vec<PointRisk>, kl_c: f64, kl_cbar: f64, mc_samples: usize) -> Self {
        let n = per_sample.len() as f64;
        let mean = |f: fn(&PointRisk) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        RiskReport {
            sf: mean(|p| p.sf),
            nc: mean(|p| p.nc),
            m: mean(|p| p.m),
            r: mean(|p| p.sf + p.nc),
            kl_c,
            kl_cbar,
            mc_samples,
            per_sample,
        }
    }
}

/// Monte Carlo risk of one point. Draws for `c` come from `key.fold(0)`,
/// draws for `c̄` from `key.fold(1)`, draw `k` from a further `.fold(k)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_point_risk(
    head: &LinearHead,
    mean_c: &[f64],
    std_c: &[f64],
    mean_cbar: &[f64],
    std_cbar: &[f64],
    y: u8,
    samples: usize,
    key: Key,
) -> PointRisk {
    let count_ones = |mean: &[f64], std: &[f64], k: Key| -> usize {
        (0..samples as u64)
            .filter(|&j| {
                let eps = normals(k.fold(j), mean.len());
                let c: Vec<f64> = mean.iter().zip(std).zip(eps).map(|((m, s), e)| m + s * e).collect();
                head.label(&c) == 1
            })
            .count()
    };
    let a = count_ones(mean_c, std_c, key.fold(0));
    let b = count_ones(mean_cbar, std_cbar, key.fold(1));
    let s = samples as f64;
    let (a, b) = (a as f64, b as f64);
    let (sf, nc) = if y == 1 { ((s - a) / s, b / s) } else { (a / s, (s - b) / s) };
    PointRisk {
        sf,
        nc,
        m: (a * b + (s - a) * (s - b)) / (s * s),
    }
}

/// `P(wᵀc + b ≥ 0)` for `c ~ N(mean, diag(var))`.
pub fn prob_label_one(head: &LinearHead, mean: &[f64], var: &[f64]) -> f64 {
    let mu = head.logit(mean);
    let sd = head
        .weights()
        .iter()
        .zip(var)
        .map(|(w, v)| w * w * v)
        .sum::<f64>()
        .sqrt();
    if sd == 0.0 {
        return if mu >= 0.0 { 1.0 } else { 0.0 };
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    std_normal.cdf(mu / sd)
}

/// The infinite-sample limit of [`mc_point_risk`].
pub fn exact_point_risk(
    head: &LinearHead,
    mean_c: &[f64],
    var_c: &[f64],
    mean_cbar: &[f64],
    var_cbar: &[f64],
    y: u8,
) -> PointRisk {
    let p = prob_label_one(head, mean_c, var_c);
    let q = prob_label_one(head, mean_cbar, var_cbar);
    let (sf, nc) = if y == 1 { (1.0 - p, q) } else { (p, 1.0 - q) };
    PointRisk {
        sf,
        nc,
        m: p * q + (1.0 - p) * (1.0 - q),
    }
}

/// Closed-form `KL(N(q_mean, q_var) ‖ N(p_mean, p_var))` for diagonal
/// Gaussians, summed over dimensions.
pub fn gaussian_kl(q_mean: &[f64], q_var: &[f64], p_mean: &[f64], p_var: &[f64]) -> Result<f64> {
    let d = q_mean.len();
    if q_var.len() != d || p_mean.len() != d || p_var.len() != d {
        return Err(Error::dim("gaussian_kl", "all four vectors must share a length"));
    }
    if q_var.iter().chain(p_var).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("variances must be strictly positive".into()));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let diff = q_mean[i] - p_mean[i];
        kl += (p_var[i] / q_var[i]).ln() + (q_var[i] + diff * diff) / p_var[i] - 1.0;
    }
    Ok((0.5 * kl).max(0.0))
}

/// Indicator risk with Monte Carlo over the representation draws, and the
/// batch-mean KL of each encoder to a standard normal prior.
pub fn estimate_risk(
    data: &LabeledBatch,
    enc_c: &GaussianEncoder,
    enc_cbar: &GaussianEncoder,
    w: &LinearHead,
    mc_samples: usize,
    key: Key,
) -> Result<RiskReport> {
    let d = enc_c.rep_dim();
    estimate_risk_with_priors(
        data,
        enc_c,
        enc_cbar,
        w,
        (&Prior::standard(d), &Prior::standard(d)),
        mc_samples,
        key,
    )
}

pub fn estimate_risk_with_priors(
    data: &LabeledBatch,
    enc_c: &GaussianEncoder,
    enc_cbar: &GaussianEncoder,
    w: &LinearHead,
    priors: (&Prior, &Prior),
    mc_samples: usize,
    key: Key,
) -> Result<RiskReport> {
    if mc_samples == 0 {
        return Err(Error::Contract("need at least one Monte Carlo sample".into()));
    }
    if data.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if data.y.iter().any(|&v| v > 1) {
        return Err(Error::Domain("labels must be 0 or 1".into()));
    }
    let (mc, var_c) = enc_c.encode(&data.x)?;
    let (mb, var_b) = enc_cbar.encode(&data.x)?;
    let std_c: Vec<f64> = var_c.iter().map(|v| v.sqrt()).collect();
    let std_b: Vec<f64> = var_b.iter().map(|v| v.sqrt()).collect();
    let mut per_sample = Vec::with_capacity(data.len());
    let (mut kl_c, mut kl_b) = (0.0, 0.0);
    for i in 0..data.len() {
        per_sample.push(mc_point_risk(
            w,
            mc.row(i),
            &std_c,
            mb.row(i),
            &std_b,
            data.y[i],
            mc_samples,
            key.fold(data.ids[i]),
        ));
        kl_c += gaussian_kl(mc.row(i), &var_c, &priors.0.mean, &priors.0.var)?;
        kl_b += gaussian_kl(mb.row(i), &var_b, &priors.1.mean, &priors.1.var)?;
    }
    let n = data.len() as f64;
    Ok(RiskReport::aggregate(per_sample, kl_c / n, kl_b / n, mc_samples))
}

/// Finite set of labelled points with probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDomain {
    pub points: Vec<(Vec<f64>, u8)>,
    pub probs: Vec<f64>,
}

type PointKey = (Vec<u64>, u8);

fn point_key(x: &[f64], y: u8) -> PointKey {
    (x.iter().map(|v| v.to_bits()).collect(), y)
}

impl DiscreteDomain {
    pub fn new(points: Vec<(Vec<f64>, u8)>, probs: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(Error::MalformedDomain("points and probabilities must align and be non-empty".into()));
        }
        let dim = points[0].0.len();
        if points.iter().any(|(x, y)| x.len() != dim || *y > 1) {
            return Err(Error::MalformedDomain("points must share a width and carry binary labels".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::MalformedDomain("probabilities must lie in [0,1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::MalformedDomain(format!("probabilities sum to {total}")));
        }
        let mut seen = std::collections::HashSet::new();
        if !points.iter().all(|(x, y)| seen.insert(point_key(x, *y))) {
            return Err(Error::MalformedDomain("duplicate support point".into()));
        }
        Ok(DiscreteDomain { points, probs })
    }

    pub fn dim(&self) -> usize {
        self.points[0].0.len()
    }

    fn table(&self) -> HashMap<PointKey, f64> {
        self.points
            .iter()
            .zip(&self.probs)
            .map(|((x, y), &p)| (point_key(x, *y), p))
            .collect()
    }

    pub fn inputs(&self) -> Tensor {
        Tensor::from_rows(&self.points.iter().map(|(x, _)| x.clone()).collect::<Vec<_>>())
            .expect("validated widths")
    }
}

/// `[Σ_{supp S} S (T/S)^k]^{1/k}`; `k = ∞` gives the largest ratio.
pub fn beta_divergence(t: &DiscreteDomain, s: &DiscreteDomain, k: f64) -> Result<f64> {
    if !(k >= 1.0) {
        return Err(Error::Domain(format!("order k = {k} must be at least 1")));
    }
    if s.probs.iter().any(|&p| p == 0.0) {
        return Err(Error::MalformedDomain("source lists a point with zero probability".into()));
    }
    let tt = t.table();
    let ratios = s
        .points
        .iter()
        .zip(&s.probs)
        .map(|((x, y), &sp)| (sp, tt.get(&point_key(x, *y)).copied().unwrap_or(0.0) / sp));
    if k.is_infinite() {
        return Ok(ratios.map(|(_, r)| r).fold(0.0, f64::max));
    }
    let total: f64 = ratios.map(|(sp, r)| sp * r.powf(k)).sum();
    Ok(total.powf(1.0 / k))
}

/// Orders reported in [`BoundReport::k_trace`].
pub const K_TRACE: [f64; 6] = [2.0, 4.0, 8.0, 16.0, 64.0, f64::INFINITY];

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub beta_inf: f64,
    pub eta: f64,
    pub holds: bool,
    pub k_trace: Vec<(f64, f64)>,
}

/// Per-point risks on every point of `T ∪ S`, computed once so both sides
/// of a bound see identical values.
struct UnionRisks {
    risk: HashMap<PointKey, PointRisk>,
}

fn union_risks(
    t: &DiscreteDomain,
    s: &DiscreteDomain,
    enc_c: &GaussianEncoder,
    enc_cbar: &GaussianEncoder,
    w: &LinearHead,
    mc_samples: usize,
    key: Key,
) -> Result<UnionRisks> {
    if t.dim() != s.dim() {
        return Err(Error::dim("bound", "domains have different input widths"));
    }
    let mut pts: Vec<(Vec<f64>, u8)> = Vec::new();
    let mut index: HashMap<PointKey, usize> = HashMap::new();
    for (x, y) in s.points.iter().chain(&t.points) {
        let k = point_key(x, *y);
        if !index.contains_key(&k) {
            index.insert(k, pts.len());
            pts.push((x.clone(), *y));
        }
    }
    let x = Tensor::from_rows(&pts.iter().map(|(x, _)| x.clone()).collect::<Vec<_>>())?;
    let y = pts.iter().map(|(_, y)| *y).collect();
    let batch = LabeledBatch::new(x, y)?;
    let report = estimate_risk(&batch, enc_c, enc_cbar, w, mc_samples, key)?;
    let risk = index
        .into_iter()
        .map(|(k, i)| (k, report.per_sample[i]))
        .collect();
    Ok(UnionRisks { risk })
}

struct BoundParts {
    beta_inf: f64,
    eta: f64,
    k_trace: Vec<(f64, f64)>,
    /// Expectations under T and S of the per-point terms.
    t_r: f64,
    t_m: f64,
    s_m: f64,
    s_sf: f64,
}

fn bound_parts(t: &DiscreteDomain, s: &DiscreteDomain, risks: &UnionRisks) -> Result<BoundParts> {
    let k_trace = K_TRACE
        .iter()
        .map(|&k| beta_divergence(t, s, k).map(|b| (k, b)))
        .collect::<Result<Vec<_>>>()?;
    let beta_inf = k_trace.last().map(|p| p.1).unwrap_or(1.0);
    let st = s.table();
    let r = |x: &[f64], y: u8| risks.risk[&point_key(x, y)];
    let (mut out_mass, mut out_sup) = (0.0, 0.0f64);
    let (mut t_r, mut t_m) = (0.0, 0.0);
    for ((x, y), &p) in t.points.iter().zip(&t.probs) {
        let pr = r(x, *y);
        t_r += p * pr.r();
        t_m += p * pr.m;
        if !st.contains_key(&point_key(x, *y)) && p > 0.0 {
            out_mass += p;
            out_sup = out_sup.max(pr.r());
        }
    }
    let (mut s_m, mut s_sf) = (0.0, 0.0);
    for ((x, y), &p) in s.points.iter().zip(&s.probs) {
        let pr = r(x, *y);
        s_m += p * pr.m;
        s_sf += p * pr.sf;
    }
    Ok(BoundParts {
        beta_inf,
        eta: out_mass * out_sup,
        k_trace,
        t_r,
        t_m,
        s_m,
        s_sf,
    })
}

/// Test-domain risk against `β_∞ (M_s + 2 SF_s) + η`, where `η` is the test
/// mass outside the source support times the largest per-point risk there.
pub fn check_shift_bound(
    t: &DiscreteDomain,
    s: &DiscreteDomain,
    enc_c: &GaussianEncoder,
    enc_cbar: &GaussianEncoder,
    w: &LinearHead,
    mc_samples: usize,
    key: Key,
) -> Result<BoundReport> {
    let risks = union_risks(t, s, enc_c, enc_cbar, w, mc_samples, key)?;
    let p = bound_parts(t, s, &risks)?;
    let rhs = p.beta_inf * (p.s_m + 2.0 * p.s_sf) + p.eta;
    Ok(BoundReport {
        lhs: p.t_r,
        rhs,
        beta_inf: p.beta_inf,
        eta: p.eta,
        holds: p.t_r <= rhs + 1e-9,
        k_trace: p.k_trace,
    })
}

/// Adaptation variant: the monotonicity term is measured on the test inputs,
/// `R_t ≤ M_t + 2 β_∞ SF_s + η`.
pub fn check_adaptation_bound(
    t: &DiscreteDomain,
    s: &DiscreteDomain,
    enc_c: &GaussianEncoder,
    enc_cbar: &GaussianEncoder,
    w: &LinearHead,
    mc_samples: usize,
    key: Key,
) -> Result<BoundReport> {
    let risks = union_risks(t, s, enc_c, enc_cbar, w, mc_samples, key)?;
    let p = bound_parts(t, s, &risks)?;
    let rhs = p.t_m + 2.0 * p.beta_inf * p.s_sf + p.eta;
    Ok(BoundReport {
        lhs: p.t_r,
        rhs,
        beta_inf: p.beta_inf,
        eta: p.eta,
        holds: p.t_r <= rhs + 1e-9,
        k_trace: p.k_trace,
    })
}

/// `kl + ln(n/ε) / (4(n−1)) + C`, plus `1/2` with `slack_half`.
pub fn pac_bound_rhs(kl_empirical: f64, n: usize, epsilon: f64, c_const: f64, slack_half: bool) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("sample size {n} must be at least 2")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("confidence ε = {epsilon} must be in (0,1]")));
    }
    if kl_empirical < 0.0 || c_const < 0.0 {
        return Err(Error::Domain("KL and C must be nonnegative".into()));
    }
    let n = n as f64;
    let mut rhs = kl_empirical + (n / epsilon).ln() / (4.0 * (n - 1.0)) + c_const;
    if slack_half {
        rhs += 0.5;
    }
    Ok(rhs)
}

/// A random bound instance: two domains and a small model.
pub struct BoundInstance {
    pub t: DiscreteDomain,
    pub s: DiscreteDomain,
    pub enc_c: GaussianEncoder,
    pub enc_cbar: GaussianEncoder,
    pub head: LinearHead,
}

fn random_probs(rng: &mut impl Rng, n: usize, zero_frac: f64) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < zero_frac { 0.0 } else { 0.05 + rng.gen::<f64>() })
        .collect();
    if raw.iter().all(|&v| v == 0.0) {
        raw[0] = 1.0;
    }
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Fixes the last positive entry so the table sums to 1 to the last bit.
fn renormalise(p: &mut [f64]) {
    let last = p.iter().rposition(|&v| v > 0.0).unwrap_or(0);
    let rest: f64 = p.iter().enumerate().filter(|&(i, _)| i != last).map(|(_, v)| v).sum();
    p[last] = 1.0 - rest;
}

/// Source and test over shared inputs with labels from one fixed rule, so
/// `P(Y|X)` is invariant and only the input marginal moves. With
/// `out_of_support`, the test puts 30% of its mass on fresh points.
pub fn random_bound_instance(key: Key, out_of_support: bool) -> BoundInstance {
    let mut rng = key.fold_str("domains").rng();
    let dim = 3;
    let n_shared = rng.gen_range(4..10);
    let rule: Vec<f64> = normals(key.fold_str("rule"), dim);
    let point = |k: u64| {
        let x = normals(key.fold_str("points").fold(k), dim);
        let y = u8::from(x.iter().zip(&rule).map(|(a, b)| a * b).sum::<f64>() >= 0.0);
        (x, y)
    };
    let shared: Vec<(Vec<f64>, u8)> = (0..n_shared as u64).map(point).collect();

    let mut s_probs = random_probs(&mut rng, n_shared, 0.0);
    renormalise(&mut s_probs);
    let mut t_in = random_probs(&mut rng, n_shared, 0.2);
    let (mut t_points, mut t_probs) = (shared.clone(), Vec::new());
    if out_of_support {
        let n_out = rng.gen_range(1..4);
        t_points.extend((0..n_out as u64).map(|k| point(1000 + k)));
        let t_out = random_probs(&mut rng, n_out, 0.0);
        t_probs.extend(t_in.iter().map(|p| 0.7 * p));
        t_probs.extend(t_out.iter().map(|p| 0.3 * p));
    } else {
        t_probs.append(&mut t_in);
    }
    renormalise(&mut t_probs);

    let learned = rng.gen::<bool>();
    let enc_c = GaussianEncoder::init(key.fold_str("phi"), dim, 4, learned);
    let enc_cbar = GaussianEncoder::init(key.fold_str("xi"), dim, 4, learned);
    BoundInstance {
        s: DiscreteDomain::new(shared, s_probs).expect("valid source"),
        t: DiscreteDomain::new(t_points, t_probs).expect("valid test"),
        enc_c,
        enc_cbar,
        head: LinearHead::init(key.fold_str("head"), 4),
    }
}

/// One row of a bound suite.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub instance_id: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Absent for rows that involve no domain shift.
    pub beta_inf: Option<f64>,
    pub eta: Option<f64>,
    pub holds: bool,
}

/// Shift-bound instances; every third one has out-of-support test mass.
pub fn shift_bound_suite(key: Key, instances: usize, mc_samples: usize) -> Result<Vec<BoundRow>> {
    (0..instances)
        .map(|i| {
            let inst = random_bound_instance(key.fold(i as u64), i % 3 == 2);
            let rep = check_shift_bound(
                &inst.t,
                &inst.s,
                &inst.enc_c,
                &inst.enc_cbar,
                &inst.head,
                mc_samples,
                key.fold(i as u64).fold_str("mc"),
            )?;
            Ok(BoundRow {
                instance_id: format!("shift-{i}"),
                lhs: rep.lhs,
                rhs: rep.rhs,
                beta_inf: Some(rep.beta_inf),
                eta: Some(rep.eta),
                holds: rep.holds,
            })
        })
        .collect()
}

/// A population of labelled points with exact per-point sufficiency risk and
/// KL to the prior, for resampling experiments.
pub struct PacPopulation {
    pub probs: Vec<f64>,
    pub sf: Vec<f64>,
    pub kl: Vec<f64>,
}

impl PacPopulation {
    pub fn random(key: Key, points: usize) -> Result<Self> {
        let mut rng = key.fold_str("population").rng();
        let dim = 3;
        let enc = GaussianEncoder::init(key.fold_str("phi"), dim, 4, true);
        let head = LinearHead::init(key.fold_str("head"), 4);
        let rows: Vec<Vec<f64>> = (0..points as u64).map(|k| normals(key.fold_str("x").fold(k), dim)).collect();
        let x = Tensor::from_rows(&rows)?;
        let (mean, var) = enc.encode(&x)?;
        let prior = Prior::standard(4);
        let mut sf = Vec::with_capacity(points);
        let mut kl = Vec::with_capacity(points);
        for i in 0..points {
            let y: u8 = rng.gen_range(0..2);
            let p1 = prob_label_one(&head, mean.row(i), &var);
            sf.push(if y == 1 { 1.0 - p1 } else { p1 });
            kl.push(gaussian_kl(mean.row(i), &var, &prior.mean, &prior.var)?);
        }
        let mut probs = random_probs(&mut rng, points, 0.0);
        renormalise(&mut probs);
        Ok(PacPopulation { probs, sf, kl })
    }

    pub fn sf_expected(&self) -> f64 {
        self.probs.iter().zip(&self.sf).map(|(p, v)| p * v).sum()
    }

    pub fn kl_expected(&self) -> f64 {
        self.probs.iter().zip(&self.kl).map(|(p, v)| p * v).sum()
    }

    /// Indices of `n` i.i.d. draws.
    pub fn draw(&self, key: Key, n: usize) -> Vec<usize> {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let mut rng = key.rng();
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen::<f64>() * acc;
                cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1)
            })
            .collect()
    }
}

/// Resampling trials of `|SF_s − ŜF_s|` against the PAC right-hand side.
/// `C` is the population-expected KL, the smallest constant the bound allows.
pub fn pac_suite(key: Key, trials: usize, n: usize, epsilon: f64, slack_half: bool) -> Result<Vec<BoundRow>> {
    let pop = PacPopulation::random(key, 50)?;
    let sf_true = pop.sf_expected();
    let c_const = pop.kl_expected();
    (0..trials)
        .map(|i| {
            let idx = pop.draw(key.fold_str("trial").fold(i as u64), n);
            let sf_hat = idx.iter().map(|&j| pop.sf[j]).sum::<f64>() / n as f64;
            let kl_hat = idx.iter().map(|&j| pop.kl[j]).sum::<f64>() / n as f64;
            let lhs = (sf_true - sf_hat).abs();
            let rhs = pac_bound_rhs(kl_hat, n, epsilon, c_const, slack_half)?;
            Ok(BoundRow {
                instance_id: format!("pac-{i}"),
                lhs,
                rhs,
                beta_inf: None,
                eta: None,
                holds: lhs <= rhs,
            })
        })
        .collect()
}

/// CSV with header `instance_id,lhs,rhs,beta_inf,eta,holds`.
pub fn bound_rows_csv(rows: &[BoundRow]) -> String {
    let mut out = String::from("instance_id,lhs,rhs,beta_inf,eta,holds\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{},{},{}\n",
            r.instance_id,
            r.lhs,
            r.rhs,
            opt(r.beta_inf),
            opt(r.eta),
            r.holds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mlp, Variance};

    fn small_setup(key: Key, n: usize) -> (LabeledBatch, GaussianEncoder, GaussianEncoder, LinearHead) {
        let x = Tensor::new(vec![n, 3], normals(key.fold(0), n * 3)).unwrap();
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        (
            LabeledBatch::new(x, y).unwrap(),
            GaussianEncoder::init(key.fold(1), 3, 4, true),
            GaussianEncoder::init(key.fold(2), 3, 4, true),
            LinearHead::init(key.fold(3), 4),
        )
    }

    /// Straight double loop over the draws.
    fn naive(
        data: &LabeledBatch,
        enc_c: &GaussianEncoder,
        enc_cbar: &GaussianEncoder,
        w: &LinearHead,
        s: usize,
        key: Key,
    ) -> Vec<(f64, f64, f64)> {
        let (mc, vc) = enc_c.encode(&data.x).unwrap();
        let (mb, vb) = enc_cbar.encode(&data.x).unwrap();
        let draw = |mean: &[f64], var: &[f64], k: Key| -> Vec<f64> {
            let e = normals(k, mean.len());
            (0..mean.len()).map(|d| mean[d] + var[d].sqrt() * e[d]).collect()
        };
        let sign = |c: &[f64]| {
            let z: f64 = c.iter().zip(w.weights()).map(|(a, b)| a * b).sum::<f64>() + w.bias();
            if z >= 0.0 { 1u8 } else { 0u8 }
        };
        (0..data.len())
            .map(|i| {
                let k = key.fold(data.ids[i]);
                let cs: Vec<u8> = (0..s as u64).map(|j| sign(&draw(mc.row(i), &vc, k.fold(0).fold(j)))).collect();
                let cb: Vec<u8> = (0..s as u64).map(|j| sign(&draw(mb.row(i), &vb, k.fold(1).fold(j)))).collect();
                let y = data.y[i];
                let sf = cs.iter().filter(|&&l| l != y).count() as f64 / s as f64;
                let nc = cb.iter().filter(|&&l| l == y).count() as f64 / s as f64;
                let mut agree = 0usize;
                for a in &cs {
                    for b in &cb {
                        agree += usize::from(a == b);
                    }
                }
                (sf, nc, agree as f64 / (s * s) as f64)
            })
            .collect()
    }

    #[test]
    fn matches_naive_double_loop() {
        let (data, ec, eb, w) = small_setup(Key::new(1), 7);
        let rep = estimate_risk(&data, &ec, &eb, &w, 9, Key::new(2)).unwrap();
        for (p, (sf, nc, m)) in rep.per_sample.iter().zip(naive(&data, &ec, &eb, &w, 9, Key::new(2))) {
            assert!((p.sf - sf).abs() <= 1e-12 && (p.nc - nc).abs() <= 1e-12 && (p.m - m).abs() <= 1e-12);
        }
    }

    #[test]
    fn ideal_representation_has_zero_risk() {
        // mean = identity of the first input, tiny variance; c̄ flips sign
        let eye = |sign: f64| {
            let net = Mlp::from_layers(
                vec![Tensor::matrix(1, 1, vec![sign]).unwrap()],
                vec![Tensor::vector(vec![0.0]).unwrap()],
            )
            .unwrap();
            GaussianEncoder::new(net, Variance::Fixed(1e-12)).unwrap()
        };
        let x = Tensor::matrix(4, 1, vec![1.0, -1.0, 2.0, -3.0]).unwrap();
        let data = LabeledBatch::new(x, vec![1, 0, 1, 0]).unwrap();
        let w = LinearHead::new(vec![1.0], 0.0).unwrap();
        let rep = estimate_risk(&data, &eye(1.0), &eye(-1.0), &w, 16, Key::new(3)).unwrap();
        assert_eq!((rep.sf, rep.nc, rep.m, rep.r), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn identical_deterministic_encoders_give_m_one() {
        let (data, ec, _, w) = small_setup(Key::new(4), 6);
        let det = GaussianEncoder::new(ec.mean_net().clone(), Variance::Fixed(1e-300)).unwrap();
        let rep = estimate_risk(&data, &det, &det, &w, 5, Key::new(5)).unwrap();
        assert_eq!(rep.m, 1.0);
        for p in &rep.per_sample {
            assert_eq!(p.r(), p.m + 2.0 * p.sf * p.nc);
        }
    }

    #[test]
    fn rejects_empty_and_zero_samples() {
        let (data, ec, eb, w) = small_setup(Key::new(6), 3);
        assert!(estimate_risk(&data, &ec, &eb, &w, 0, Key::new(0)).is_err());
        assert!(LabeledBatch::new(data.x.clone(), vec![0, 1, 2]).is_err());
    }

    #[test]
    fn converges_to_exact_risk() {
        let (data, ec, eb, w) = small_setup(Key::new(7), 1);
        let (mc, vc) = ec.encode(&data.x).unwrap();
        let (mb, vb) = eb.encode(&data.x).unwrap();
        let exact = exact_point_risk(&w, mc.row(0), &vc, mb.row(0), &vb, data.y[0]);
        let mut last = f64::INFINITY;
        for s in [10, 100, 1000] {
            let est = estimate_risk(&data, &ec, &eb, &w, s, Key::new(8)).unwrap().sf;
            let se = (exact.sf * (1.0 - exact.sf) / s as f64).sqrt().max(1.0 / s as f64);
            let err = (est - exact.sf).abs();
            assert!(err <= 3.0 * se, "S={s}: {err} > 3·{se}");
            last = last.min(err);
        }
        assert!(last.is_finite());
    }

    #[test]
    fn kl_values() {
        assert_eq!(gaussian_kl(&[0.3], &[2.0], &[0.3], &[2.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let (qm, qv, pm, pv) = ([0.4, -1.0], [0.5, 2.0], [0.0, 0.5], [1.0, 1.5]);
        let exact = gaussian_kl(&qm, &qv, &pm, &pv).unwrap();
        let log_density = |x: &[f64], m: &[f64], v: &[f64]| -> f64 {
            (0..2)
                .map(|d| -0.5 * ((2.0 * std::f64::consts::PI * v[d]).ln() + (x[d] - m[d]).powi(2) / v[d]))
                .sum()
        };
        let n = 100_000;
        let mut rng = Key::new(9).rng();
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e: Vec<f64> = (0..2).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let x: Vec<f64> = (0..2).map(|d| qm[d] + qv[d].sqrt() * e[d]).collect();
            let lr = log_density(&x, &qm, &qv) - log_density(&x, &pm, &pv);
            s1 += lr;
            s2 += lr * lr;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    fn two_point(p: [f64; 2]) -> DiscreteDomain {
        DiscreteDomain::new(vec![(vec![0.0], 0), (vec![1.0], 1)], p.to_vec()).unwrap()
    }

    #[test]
    fn beta_values() {
        let s = two_point([0.5, 0.5]);
        for k in K_TRACE {
            assert!((beta_divergence(&s, &s, k).unwrap() - 1.0).abs() < 1e-12);
        }
        let t = two_point([0.75, 0.25]);
        assert_eq!(beta_divergence(&t, &s, f64::INFINITY).unwrap(), 1.5);
        let zero = DiscreteDomain::new(vec![(vec![0.0], 0), (vec![1.0], 1)], vec![1.0, 0.0]).unwrap();
        assert!(matches!(beta_divergence(&t, &zero, 2.0), Err(Error::MalformedDomain(_))));
        assert!(beta_divergence(&t, &s, 0.5).is_err());
    }

    #[test]
    fn beta_is_nondecreasing_in_k() {
        for i in 0..100 {
            let inst = random_bound_instance(Key::new(i), i % 2 == 0);
            let mut prev = 0.0;
            for k in [1.0, 2.0, 3.0, 4.0, 8.0, 16.0, 64.0, f64::INFINITY] {
                let b = beta_divergence(&inst.t, &inst.s, k).unwrap();
                assert!(b >= prev - 1e-12, "instance {i}, k {k}");
                prev = b;
            }
        }
    }

    #[test]
    fn same_domain_bound_has_no_eta() {
        let inst = random_bound_instance(Key::new(10), false);
        let rep = check_shift_bound(&inst.s, &inst.s, &inst.enc_c, &inst.enc_cbar, &inst.head, 32, Key::new(1)).unwrap();
        assert_eq!(rep.eta, 0.0);
        assert!((rep.beta_inf - 1.0).abs() < 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn out_of_support_mass_gives_eta() {
        let inst = random_bound_instance(Key::new(11), true);
        let rep = check_shift_bound(&inst.t, &inst.s, &inst.enc_c, &inst.enc_cbar, &inst.head, 32, Key::new(1)).unwrap();
        assert!(rep.eta > 0.0 && rep.holds);
        let ad = check_adaptation_bound(&inst.t, &inst.s, &inst.enc_c, &inst.enc_cbar, &inst.head, 32, Key::new(1)).unwrap();
        assert!(ad.holds);
    }

    #[test]
    fn pac_rhs_values() {
        // n = 2, ε = 1 leaves only ln(2)/4
        let base = 2f64.ln() / 4.0;
        assert_eq!(pac_bound_rhs(0.0, 2, 1.0, 0.0, false).unwrap(), base);
        assert_eq!(pac_bound_rhs(0.0, 2, 1.0, 0.0, true).unwrap(), base + 0.5);
        let want = 0.3 + 5000f64.ln() / 1996.0;
        assert!((pac_bound_rhs(0.3, 500, 0.1, 0.0, false).unwrap() - want).abs() < 1e-15);
        assert!(pac_bound_rhs(0.0, 1, 0.5, 0.0, false).is_err());
    }

    #[test]
    fn csv_has_header_and_blank_optionals() {
        let rows = vec![BoundRow {
            instance_id: "pac-0".into(),
            lhs: 0.25,
            rhs: 1.0,
            beta_inf: None,
            eta: None,
            holds: true,
        }];
        assert_eq!(bound_rows_csv(&rows), "instance_id,lhs,rhs,beta_inf,eta,holds\npac-0,0.25,1.0,,,true\n");
    }
}
