//! Exact counterfactual probabilities on finite structural causal models.
//!
//! A [`DiscreteScm`] has a finite cause `C`, finite exogenous noise `U`, and
//! a binary outcome `Y = f(C, U)`. Counterfactuals use the response-function
//! view: fix `u`, force `C = c`, read `f(c, u)`. Conditioning on an observed
//! `(C, Y)` restricts the joint `P(C, U)` to the event and renormalises.
//!
//! Two families of quantities are reported side by side:
//!
//! * exact counterfactual probabilities obtained by enumerating `U`;
//! * the observational formulas that identify them under exogeneity and
//!   monotonicity, including the ratio forms of PN and PS, which are reported
//!   raw and may leave `[0, 1]` when their premises fail.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Key;

/// Absolute tolerance for probability-table sums and identity checks.
pub const PROB_TOL: f64 = 1e-12;

/// How the cause is drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum CauseModel {
    /// `P(C = c)`, independent of the noise.
    Independent(Vec<f64>),
    /// `P(C = c | U = u)`, one row per noise value. Lets a test build a
    /// confounded cause on purpose.
    GivenNoise(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteScm {
    cause_labels: Vec<String>,
    noise_labels: Vec<String>,
    noise_probs: Vec<f64>,
    cause: CauseModel,
    /// `outcome[c][u] = f(c, u)`
    outcome: Vec<Vec<u8>>,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain(format!("{what}: probabilities must lie in [0,1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::Domain(format!("{what}: probabilities sum to {total}, not 1")));
    }
    Ok(())
}

impl DiscreteScm {
    pub fn new(
        cause_labels: Vec<String>,
        noise_labels: Vec<String>,
        noise_probs: Vec<f64>,
        cause: CauseModel,
        outcome: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let (nc, nu) = (cause_labels.len(), noise_labels.len());
        if nc < 2 || nu == 0 {
            return Err(Error::Domain("need at least two cause values and one noise value".into()));
        }
        if noise_probs.len() != nu {
            return Err(Error::Domain("noise probability table has the wrong length".into()));
        }
        check_distribution("P(U)", &noise_probs)?;
        match &cause {
            CauseModel::Independent(p) => {
                if p.len() != nc {
                    return Err(Error::Domain("cause table has the wrong length".into()));
                }
                check_distribution("P(C)", p)?;
            }
            CauseModel::GivenNoise(rows) => {
                if rows.len() != nu || rows.iter().any(|r| r.len() != nc) {
                    return Err(Error::Domain("P(C|U) table has the wrong shape".into()));
                }
                for (u, r) in rows.iter().enumerate() {
                    check_distribution(&format!("P(C|U={})", noise_labels[u]), r)?;
                }
            }
        }
        if outcome.len() != nc || outcome.iter().any(|r| r.len() != nu) {
            return Err(Error::Domain("structural table must cover every (c, u)".into()));
        }
        if outcome.iter().flatten().any(|&y| y > 1) {
            return Err(Error::Domain("structural outcomes must be 0 or 1".into()));
        }
        Ok(DiscreteScm {
            cause_labels,
            noise_labels,
            noise_probs,
            cause,
            outcome,
        })
    }

    /// Convenience constructor with numeric labels `0..n`.
    pub fn independent(p_cause: Vec<f64>, p_noise: Vec<f64>, outcome: Vec<Vec<u8>>) -> Result<Self> {
        let causes = (0..p_cause.len()).map(|i| i.to_string()).collect();
        let noise = (0..p_noise.len()).map(|i| format!("u{i}")).collect();
        DiscreteScm::new(causes, noise, p_noise, CauseModel::Independent(p_cause), outcome)
    }

    pub fn cause_labels(&self) -> &[String] {
        &self.cause_labels
    }

    pub fn noise_labels(&self) -> &[String] {
        &self.noise_labels
    }

    pub fn cause_model(&self) -> &CauseModel {
        &self.cause
    }

    pub fn cause_index(&self, label: &str) -> Option<usize> {
        self.cause_labels.iter().position(|l| l == label)
    }

    pub fn f(&self, c: usize, u: usize) -> u8 {
        self.outcome[c][u]
    }

    fn check_cause(&self, c: usize) -> Result<()> {
        if c >= self.cause_labels.len() {
            return Err(Error::Domain(format!("cause index {c} out of range")));
        }
        Ok(())
    }

    fn check_label(y: u8) -> Result<()> {
        if y > 1 {
            return Err(Error::Domain(format!("label {y} is not binary")));
        }
        Ok(())
    }

    /// `P(C = c, U = u)`.
    pub fn joint(&self, c: usize, u: usize) -> f64 {
        let pc = match &self.cause {
            CauseModel::Independent(p) => p[c],
            CauseModel::GivenNoise(rows) => rows[u][c],
        };
        self.noise_probs[u] * pc
    }

    pub fn p_cause(&self, c: usize) -> f64 {
        (0..self.noise_probs.len()).map(|u| self.joint(c, u)).sum()
    }

    /// `P(C = c, Y = y)`.
    pub fn p_cause_outcome(&self, c: usize, y: u8) -> f64 {
        (0..self.noise_probs.len())
            .filter(|&u| self.f(c, u) == y)
            .map(|u| self.joint(c, u))
            .sum()
    }

    pub fn p_outcome(&self, y: u8) -> f64 {
        (0..self.cause_labels.len()).map(|c| self.p_cause_outcome(c, y)).sum()
    }

    /// `P(Y = y | C = c)`.
    pub fn conditional(&self, c: usize, y: u8) -> Result<f64> {
        let pc = self.p_cause(c);
        if pc <= 0.0 {
            return Err(Error::UndefinedConditional { term: "observational" });
        }
        Ok(self.p_cause_outcome(c, y) / pc)
    }

    /// `P(Y_do(C=c) = y)`: noise marginalised freely.
    pub fn interventional(&self, c: usize, y: u8) -> f64 {
        self.noise_probs
            .iter()
            .enumerate()
            .filter(|&(u, _)| self.f(c, u) == y)
            .map(|(_, p)| p)
            .sum()
    }

    /// `P(Y_do(C=a) = ya, Y_do(C=b) = yb)`.
    pub fn counterfactual_joint(&self, a: usize, ya: u8, b: usize, yb: u8) -> f64 {
        self.noise_probs
            .iter()
            .enumerate()
            .filter(|&(u, _)| self.f(a, u) == ya && self.f(b, u) == yb)
            .map(|(_, p)| p)
            .sum()
    }

    /// Serialises to the plain-text table format read by [`DiscreteScm::parse`].
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("causes = {}\n", self.cause_labels.join(" ")));
        out.push_str(&format!("noise = {}\n", self.noise_labels.join(" ")));
        out.push_str(&format!("p_noise = {}\n", join_f64(&self.noise_probs)));
        match &self.cause {
            CauseModel::Independent(p) => out.push_str(&format!("p_cause = {}\n", join_f64(p))),
            CauseModel::GivenNoise(rows) => {
                for (u, r) in rows.iter().enumerate() {
                    out.push_str(&format!("p_cause[{}] = {}\n", self.noise_labels[u], join_f64(r)));
                }
            }
        }
        for (c, row) in self.outcome.iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("outcome[{}] = {}\n", self.cause_labels[c], vals.join(" ")));
        }
        out
    }

    /// Parses the plain-text table format.
    ///
    /// ```text
    /// # comments start with '#'
    /// causes  = 0 1              # cause value labels
    /// noise   = a b              # noise value labels
    /// p_noise = 0.5 0.5          # P(U), in noise order; fractions like 1/3 allowed
    /// p_cause = 0.5 0.5          # P(C), in cause order
    /// p_cause[a] = 1 0           # ... or P(C | U=a), one line per noise value
    /// outcome[0] = 0 1           # f(C=0, u) for every u, in noise order
    /// outcome[1] = 1 1
    /// query = 1 0 1              # optional: c c_bar y
    /// ```
    pub fn parse(text: &str) -> Result<(DiscreteScm, Option<PnsQuery>)> {
        let mut causes: Option<Vec<String>> = None;
        let mut noise: Option<Vec<String>> = None;
        let mut p_noise: Option<Vec<f64>> = None;
        let mut p_cause: Option<Vec<f64>> = None;
        let mut p_cause_rows: Vec<(String, Vec<f64>, usize)> = Vec::new();
        let mut outcomes: Vec<(String, Vec<u8>, usize)> = Vec::new();
        let mut query: Option<(Vec<String>, usize)> = None;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let words: Vec<String> = value.split_whitespace().map(str::to_owned).collect();
            let probs = || -> Result<Vec<f64>> { words.iter().map(|w| parse_prob(w, line_no)).collect() };
            let (base, arg) = match key.split_once('[') {
                Some((b, rest)) => {
                    let arg = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("unterminated index in `{key}`"),
                    })?;
                    (b.trim(), Some(arg.trim().to_owned()))
                }
                None => (key, None),
            };
            match (base, arg) {
                ("causes", None) => causes = Some(words.clone()),
                ("noise", None) => noise = Some(words.clone()),
                ("p_noise", None) => p_noise = Some(probs()?),
                ("p_cause", None) => p_cause = Some(probs()?),
                ("p_cause", Some(u)) => p_cause_rows.push((u, probs()?, line_no)),
                ("outcome", Some(c)) => {
                    let ys = words
                        .iter()
                        .map(|w| match w.as_str() {
                            "0" => Ok(0u8),
                            "1" => Ok(1u8),
                            _ => Err(Error::Parse {
                                line: line_no,
                                msg: format!("outcome `{w}` is not 0 or 1"),
                            }),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    outcomes.push((c, ys, line_no));
                }
                ("query", None) => query = Some((words.clone(), line_no)),
                _ => {
                    return Err(Error::UnknownKey {
                        key: key.to_owned(),
                        line: line_no,
                    })
                }
            }
        }

        let missing = |what: &str| Error::Parse {
            line: 0,
            msg: format!("missing `{what}`"),
        };
        let causes = causes.ok_or_else(|| missing("causes"))?;
        let noise = noise.ok_or_else(|| missing("noise"))?;
        let p_noise = p_noise.ok_or_else(|| missing("p_noise"))?;
        let lookup = |labels: &[String], l: &str, line: usize| {
            labels.iter().position(|x| x == l).ok_or_else(|| Error::Parse {
                line,
                msg: format!("unknown label `{l}`"),
            })
        };

        let cause = match (p_cause, p_cause_rows.is_empty()) {
            (Some(p), true) => CauseModel::Independent(p),
            (None, false) => {
                let mut rows = vec![Vec::new(); noise.len()];
                for (u, r, line) in p_cause_rows {
                    rows[lookup(&noise, &u, line)?] = r;
                }
                CauseModel::GivenNoise(rows)
            }
            (Some(_), false) => {
                return Err(Error::Parse {
                    line: 0,
                    msg: "give either `p_cause` or `p_cause[u]` rows, not both".into(),
                })
            }
            (None, true) => return Err(missing("p_cause")),
        };

        let mut table = vec![Vec::new(); causes.len()];
        for (c, ys, line) in outcomes {
            table[lookup(&causes, &c, line)?] = ys;
        }

        let scm = DiscreteScm::new(causes.clone(), noise, p_noise, cause, table)?;
        let query = match query {
            None => None,
            Some((w, line)) => {
                if w.len() != 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "query needs `c c_bar y`".into(),
                    });
                }
                let y = match w[2].as_str() {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("label `{other}` is not 0 or 1"),
                        })
                    }
                };
                Some(PnsQuery {
                    c: lookup(&causes, &w[0], line)?,
                    c_bar: lookup(&causes, &w[1], line)?,
                    y,
                })
            }
        };
        Ok((scm, query))
    }
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_prob(w: &str, line: usize) -> Result<f64> {
    let bad = || Error::Parse {
        line,
        msg: format!("`{w}` is not a probability"),
    };
    match w.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.parse().map_err(|_| bad())?;
            let b: f64 = b.parse().map_err(|_| bad())?;
            if b == 0.0 {
                return Err(bad());
            }
            Ok(a / b)
        }
        None => w.parse().map_err(|_| bad()),
    }
}

/// A `(c, c̄, y)` question about a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PnsQuery {
    pub c: usize,
    pub c_bar: usize,
    pub y: u8,
}

fn distinct(c: usize, c_bar: usize) -> Result<()> {
    if c == c_bar {
        return Err(Error::Contract("c and c_bar must differ".into()));
    }
    Ok(())
}

/// Counterfactual sufficiency and necessity masses, each a joint probability
/// `P(counterfactual, factual event)`, plus the two conditioning masses.
struct Masses {
    suff_joint: f64,
    suff_event: f64,
    nec_joint: f64,
    nec_event: f64,
}

fn masses(scm: &DiscreteScm, c: usize, c_bar: usize, y: u8) -> Masses {
    let nu = scm.noise_probs.len();
    let mut m = Masses {
        suff_joint: 0.0,
        suff_event: 0.0,
        nec_joint: 0.0,
        nec_event: 0.0,
    };
    for u in 0..nu {
        // sufficiency: observed C = c̄, Y ≠ y; counterfactual Y_do(c) = y
        let j = scm.joint(c_bar, u);
        if scm.f(c_bar, u) != y {
            m.suff_event += j;
            if scm.f(c, u) == y {
                m.suff_joint += j;
            }
        }
        // necessity: observed C = c, Y = y; counterfactual Y_do(c̄) ≠ y
        let j = scm.joint(c, u);
        if scm.f(c, u) == y {
            m.nec_event += j;
            if scm.f(c_bar, u) != y {
                m.nec_joint += j;
            }
        }
    }
    m
}

fn require_events(m: &Masses) -> Result<()> {
    if m.suff_event <= 0.0 {
        return Err(Error::UndefinedConditional { term: "sufficiency" });
    }
    if m.nec_event <= 0.0 {
        return Err(Error::UndefinedConditional { term: "necessity" });
    }
    Ok(())
}

/// PNS by enumeration of the noise:
/// `P(Y_c = y | C = c̄, Y ≠ y) P(C = c̄, Y ≠ y) + P(Y_c̄ ≠ y | C = c, Y = y) P(C = c, Y = y)`.
pub fn pns_exact(scm: &DiscreteScm, c: usize, c_bar: usize, y: u8) -> Result<f64> {
    scm.check_cause(c)?;
    scm.check_cause(c_bar)?;
    DiscreteScm::check_label(y)?;
    distinct(c, c_bar)?;
    let m = masses(scm, c, c_bar, y);
    require_events(&m)?;
    Ok(m.suff_joint + m.nec_joint)
}

/// The observational difference `P(Y = y | C = c) − P(Y = y | C = c̄)`.
pub fn pns_identified(scm: &DiscreteScm, c: usize, c_bar: usize, y: u8) -> Result<f64> {
    scm.check_cause(c)?;
    scm.check_cause(c_bar)?;
    DiscreteScm::check_label(y)?;
    Ok(scm.conditional(c, y)? - scm.conditional(c_bar, y)?)
}

/// Which flip of the outcome has zero counterfactual probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonotoneDirection {
    /// `P(Y_c ≠ y, Y_c̄ = y) = 0`: raising `c̄ → c` never destroys `y`.
    /// This is the direction under which the observational formula identifies PNS.
    Forward,
    /// `P(Y_c = y, Y_c̄ ≠ y) = 0` only.
    Reverse,
    /// Both flips have zero probability (outcome unaffected by the swap).
    Both,
    /// Neither is zero.
    None,
}

pub fn monotone_direction(scm: &DiscreteScm, c: usize, c_bar: usize, y: u8) -> MonotoneDirection {
    let flip_up = scm.counterfactual_joint(c, y, c_bar, 1 - y);
    let flip_down = scm.counterfactual_joint(c, 1 - y, c_bar, y);
    match (flip_down <= PROB_TOL, flip_up <= PROB_TOL) {
        (true, true) => MonotoneDirection::Both,
        (true, false) => MonotoneDirection::Forward,
        (false, true) => MonotoneDirection::Reverse,
        (false, false) => MonotoneDirection::None,
    }
}

/// True iff one of the two joint counterfactual flips has probability zero.
pub fn check_monotonicity(scm: &DiscreteScm, c: usize, c_bar: usize, y: u8) -> bool {
    monotone_direction(scm, c, c_bar, y) != MonotoneDirection::None
}

/// True iff `P(Y_do(C=c) = y) = P(Y = y | C = c)`. A cause value with zero
/// probability has no conditional and is reported as not exogenous.
pub fn check_exogeneity(scm: &DiscreteScm, c: usize, y: u8) -> bool {
    match scm.conditional(c, y) {
        Ok(cond) => (scm.interventional(c, y) - cond).abs() <= PROB_TOL,
        Err(_) => false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnsReport {
    /// Ratio form `[P(y) − P(Y_c̄ = y)] / P(c, y)`; raw, may exceed 1.
    pub pn: f64,
    /// Ratio form `[P(Y_c = y) − P(y)] / P(c̄, y')`; raw, may exceed 1.
    pub ps: f64,
    /// `P(Y_c̄ ≠ y | C = c, Y = y)` by enumeration.
    pub pn_exact: f64,
    /// `P(Y_c = y | C = c̄, Y ≠ y)` by enumeration.
    pub ps_exact: f64,
    pub pns: f64,
    pub identified_pns: f64,
    /// `pn · P(c, y) + ps · P(c̄, y')` with the ratio forms plugged in.
    pub plugin_pns: f64,
    pub monotone: bool,
    pub direction: MonotoneDirection,
    /// Exogeneity holds for both `c` and `c̄`.
    pub exogenous: bool,
    /// `pn` or `ps` fell outside `[0, 1]`.
    pub out_of_range: bool,
}

pub fn pns_report(scm: &DiscreteScm, c: usize, c_bar: usize, y: u8) -> Result<PnsReport> {
    let pns = pns_exact(scm, c, c_bar, y)?;
    let identified_pns = pns_identified(scm, c, c_bar, y)?;
    let m = masses(scm, c, c_bar, y);
    let pn = (scm.p_outcome(y) - scm.interventional(c_bar, y)) / m.nec_event;
    let ps = (scm.interventional(c, y) - scm.p_outcome(y)) / m.suff_event;
    let direction = monotone_direction(scm, c, c_bar, y);
    let exogenous = [c, c_bar]
        .iter()
        .all(|&v| check_exogeneity(scm, v, y) && check_exogeneity(scm, v, 1 - y));
    let unit = |v: f64| (-PROB_TOL..=1.0 + PROB_TOL).contains(&v);
    Ok(PnsReport {
        pn,
        ps,
        pn_exact: m.nec_joint / m.nec_event,
        ps_exact: m.suff_joint / m.suff_event,
        pns,
        identified_pns,
        plugin_pns: pn * m.nec_event + ps * m.suff_event,
        monotone: direction != MonotoneDirection::None,
        direction,
        exogenous,
        out_of_range: !(unit(pn) && unit(ps)),
    })
}

impl fmt::Display for PnsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pn={}", self.pn)?;
        writeln!(f, "ps={}", self.ps)?;
        writeln!(f, "pn_exact={}", self.pn_exact)?;
        writeln!(f, "ps_exact={}", self.ps_exact)?;
        writeln!(f, "pns={}", self.pns)?;
        writeln!(f, "identified_pns={}", self.identified_pns)?;
        writeln!(f, "plugin_pns={}", self.plugin_pns)?;
        writeln!(f, "monotone={}", self.monotone)?;
        writeln!(f, "direction={:?}", self.direction)?;
        writeln!(f, "exogenous={}", self.exogenous)?;
        write!(f, "out_of_range={}", self.out_of_range)
    }
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // absorb rounding so the table sums to 1 to machine precision
    let rest: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - rest;
    p
}

/// Random binary-cause model with query `(c=1, c̄=0, y)`.
///
/// With `forward_monotone` the structural table never contains the pattern
/// `f(1,u) ≠ y, f(0,u) = y`. With `confounded` the cause depends on the
/// noise through a random `P(C|U)`. Both conditioning events of the query
/// are guaranteed to have positive mass.
pub fn random_binary_scm(
    key: Key,
    noise_values: usize,
    forward_monotone: bool,
    confounded: bool,
) -> (DiscreteScm, PnsQuery) {
    let mut rng = key.rng();
    loop {
        let y: u8 = rng.gen_range(0..2);
        let mut table = vec![vec![0u8; noise_values]; 2];
        for u in 0..noise_values {
            let (f1, f0) = loop {
                let f1: u8 = rng.gen_range(0..2);
                let f0: u8 = rng.gen_range(0..2);
                if !(forward_monotone && f1 != y && f0 == y) {
                    break (f1, f0);
                }
            };
            table[1][u] = f1;
            table[0][u] = f0;
        }
        let p_noise = random_simplex(&mut rng, noise_values);
        let cause = if confounded {
            CauseModel::GivenNoise((0..noise_values).map(|_| random_simplex(&mut rng, 2)).collect())
        } else {
            CauseModel::Independent(random_simplex(&mut rng, 2))
        };
        let causes = vec!["0".to_owned(), "1".to_owned()];
        let noise = (0..noise_values).map(|i| format!("u{i}")).collect();
        let scm = DiscreteScm::new(causes, noise, p_noise, cause, table)
            .expect("random tables are valid by construction");
        let m = masses(&scm, 1, 0, y);
        if m.suff_event > 0.0 && m.nec_event > 0.0 {
            return (scm, PnsQuery { c: 1, c_bar: 0, y });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    fn identity_scm() -> DiscreteScm {
        DiscreteScm::independent(vec![0.5, 0.5], vec![1.0], vec![vec![0], vec![1]]).unwrap()
    }

    fn xor_scm() -> DiscreteScm {
        // Y = C xor U, U ~ B(0.5)
        DiscreteScm::independent(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0, 1], vec![1, 0]]).unwrap()
    }

    #[test]
    fn identity_cause_is_perfect() {
        let scm = identity_scm();
        assert!(close(pns_exact(&scm, 1, 0, 1).unwrap(), 1.0));
        assert!(close(pns_identified(&scm, 1, 0, 1).unwrap(), 1.0));
        assert!(check_monotonicity(&scm, 1, 0, 1));
        assert!(check_exogeneity(&scm, 1, 1));
    }

    #[test]
    fn xor_is_not_monotone() {
        let scm = xor_scm();
        assert!(close(scm.counterfactual_joint(1, 1, 0, 0), 0.5));
        assert!(close(scm.counterfactual_joint(1, 0, 0, 1), 0.5));
        assert!(!check_monotonicity(&scm, 1, 0, 1));
        assert_eq!(monotone_direction(&scm, 1, 0, 1), MonotoneDirection::None);
    }

    #[test]
    fn constant_outcome_is_trivially_monotone() {
        let scm = DiscreteScm::independent(vec![0.5, 0.5], vec![0.3, 0.7], vec![vec![1, 0], vec![1, 0]]).unwrap();
        assert!(check_monotonicity(&scm, 1, 0, 1));
        assert_eq!(monotone_direction(&scm, 1, 0, 1), MonotoneDirection::Both);
    }

    #[test]
    fn fully_confounded_cause_is_not_exogenous() {
        // C = U, Y = U
        let scm = DiscreteScm::new(
            vec!["0".into(), "1".into()],
            vec!["0".into(), "1".into()],
            vec![0.5, 0.5],
            CauseModel::GivenNoise(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            vec![vec![0, 1], vec![0, 1]],
        )
        .unwrap();
        assert!(close(scm.conditional(1, 1).unwrap(), 1.0));
        assert!(close(scm.interventional(1, 1), 0.5));
        assert!(!check_exogeneity(&scm, 1, 1));
    }

    #[test]
    fn independent_cause_is_exogenous() {
        let scm = xor_scm();
        for c in 0..2 {
            for y in 0..2 {
                assert!(check_exogeneity(&scm, c, y));
            }
        }
    }

    #[test]
    fn zero_mass_conditioning_is_an_error() {
        // Y = 1 always: the event C = c̄, Y ≠ 1 is empty.
        let scm = DiscreteScm::independent(vec![0.5, 0.5], vec![1.0], vec![vec![1], vec![1]]).unwrap();
        assert!(matches!(
            pns_exact(&scm, 1, 0, 1),
            Err(Error::UndefinedConditional { term: "sufficiency" })
        ));
        let never = DiscreteScm::independent(vec![1.0, 0.0], vec![1.0], vec![vec![0], vec![1]]).unwrap();
        assert!(pns_identified(&never, 1, 0, 1).is_err());
        assert!(!check_exogeneity(&never, 1, 1));
    }

    #[test]
    fn equal_causes_rejected() {
        assert!(matches!(pns_exact(&identity_scm(), 1, 1, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_tables_rejected() {
        assert!(DiscreteScm::independent(vec![0.5, 0.6], vec![1.0], vec![vec![0], vec![1]]).is_err());
        assert!(DiscreteScm::independent(vec![0.5, 0.5], vec![1.0], vec![vec![0], vec![2]]).is_err());
        assert!(DiscreteScm::independent(vec![0.5, 0.5], vec![1.0], vec![vec![0]]).is_err());
    }

    #[test]
    fn reverse_monotone_breaks_the_observational_formula() {
        // f(1,u) = 0, f(0,u) = u: raising the cause only ever removes y = 1.
        let scm = DiscreteScm::independent(vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0, 1], vec![0, 0]]).unwrap();
        assert_eq!(monotone_direction(&scm, 1, 0, 1), MonotoneDirection::Reverse);
        assert!(check_monotonicity(&scm, 1, 0, 1));
        assert!(pns_exact(&scm, 1, 0, 1).is_err() || pns_identified(&scm, 1, 0, 1).unwrap() < 0.0);
        assert!(close(pns_identified(&scm, 1, 0, 1).unwrap(), -0.5));
    }

    #[test]
    fn table_round_trip() {
        let scm = DiscreteScm::new(
            vec!["lo".into(), "hi".into()],
            vec!["a".into(), "b".into()],
            vec![0.25, 0.75],
            CauseModel::GivenNoise(vec![vec![0.5, 0.5], vec![0.1, 0.9]]),
            vec![vec![0, 1], vec![1, 1]],
        )
        .unwrap();
        let (back, q) = DiscreteScm::parse(&scm.to_table()).unwrap();
        assert_eq!(back, scm);
        assert!(q.is_none());
    }

    #[test]
    fn parse_reports_unknown_keys_and_lines() {
        let err = DiscreteScm::parse("causes = 0 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::UnknownKey { ref key, line: 2 } if key == "bogus"));
        let err = DiscreteScm::parse("causes 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_fractions_and_query() {
        let text = "causes = 0 0.5 1\nnoise = a b\np_noise = 1/2 1/2\np_cause = 1/3 1/3 1/3\n\
                    outcome[0] = 0 0\noutcome[0.5] = 0 1\noutcome[1] = 1 1\nquery = 1 0 1\n";
        let (scm, q) = DiscreteScm::parse(text).unwrap();
        let q = q.unwrap();
        assert_eq!((q.c, q.c_bar, q.y), (2, 0, 1));
        assert!(close(pns_identified(&scm, q.c, q.c_bar, q.y).unwrap(), 1.0));
    }

    #[test]
    fn random_generator_respects_flags() {
        for i in 0..200 {
            let (scm, q) = random_binary_scm(Key::new(i), 4, true, false);
            assert!(matches!(
                monotone_direction(&scm, q.c, q.c_bar, q.y),
                MonotoneDirection::Forward | MonotoneDirection::Both
            ));
            assert!(check_exogeneity(&scm, q.c, q.y) && check_exogeneity(&scm, q.c_bar, q.y));
            let exact = pns_exact(&scm, q.c, q.c_bar, q.y).unwrap();
            assert!((0.0..=1.0).contains(&exact));
        }
    }
}
