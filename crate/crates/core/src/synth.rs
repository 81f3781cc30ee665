//! Synthetic benchmark with planted sufficient-and-necessary (SN),
//! sufficient-only (SF), necessary-only (NC) and spurious (SP) factors.
//!
//! Per sample:
//!
//! ```text
//! sn ~ B(0.5)            y  = sn xor B(label_noise)
//! sf = sn ? 1 : B(sf_flip)
//! nc = sn · B(nc_keep)
//! sp = s·sn·1_d + (1 − s)·N(0, I_d)
//! t  = [sn·1_d, sf·1_d, nc·1_d, sp] + N(0, noise_scale²)
//! x  = sigmoid(κ₁(t)·κ₁(t))      (or κ₁(t)·κ₂(t) with the `k1k2` mixer)
//! ```
//!
//! with `κ₁(t) = t − 0.5` for `t > 0` (else 0) and `κ₂(t) = t + 0.5` for
//! `t < 0` (else 0). Every sample is drawn from its own key, so datasets do
//! not depend on generation order.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::risk::LabeledBatch;
use crate::rng::Key;
use crate::scm::{CauseModel, DiscreteScm};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixer {
    /// `sigmoid(κ₁ ⊙ κ₁)`
    AsWritten,
    /// `sigmoid(κ₁ ⊙ κ₂)`. The two branches never overlap, so every entry
    /// is `sigmoid(0) = 0.5`; kept for completeness.
    K1K2,
}

impl FromStr for Mixer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(Mixer::AsWritten),
            "k1k2" => Ok(Mixer::K1K2),
            other => Err(Error::Domain(format!("unknown mixer `{other}` (as_written | k1k2)"))),
        }
    }
}

impl std::fmt::Display for Mixer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mixer::AsWritten => "as_written",
            Mixer::K1K2 => "k1k2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub s: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub label_noise: f64,
    pub sf_flip: f64,
    pub nc_keep: f64,
    /// Standard deviation of the additive jitter on `t`.
    pub noise_scale: f64,
    pub mixer: Mixer,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 5,
            s: 0.1,
            n_train: 20_000,
            n_eval: 500,
            label_noise: 0.15,
            sf_flip: 0.1,
            nc_keep: 0.9,
            noise_scale: 0.3,
            mixer: Mixer::AsWritten,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Domain("block dimension d must be at least 1".into()));
        }
        for (name, p) in [
            ("s", self.s),
            ("label_noise", self.label_noise),
            ("sf_flip", self.sf_flip),
            ("nc_keep", self.nc_keep),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("{name} = {p} must lie in [0,1]")));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Domain("noise_scale must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        4 * self.d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub x: Vec<f64>,
    pub y: u8,
    pub sn: u8,
    pub sf: u8,
    pub nc: u8,
    pub sp: Vec<f64>,
}

fn kappa1(t: f64) -> f64 {
    if t > 0.0 {
        t - 0.5
    } else {
        0.0
    }
}

fn kappa2(t: f64) -> f64 {
    if t < 0.0 {
        t + 0.5
    } else {
        0.0
    }
}

fn sigmoid(v: f64) -> f64 {
    crate::autodiff::stable_sigmoid(v)
}

/// One sample at address `key`.
pub fn sample_one(cfg: &SynthConfig, key: Key) -> SynthSample {
    let mut rng = key.rng();
    let coin = |rng: &mut rand_chacha::ChaCha8Rng, p: f64| u8::from(rng.gen::<f64>() < p);
    let sn = coin(&mut rng, 0.5);
    let y = sn ^ coin(&mut rng, cfg.label_noise);
    let flip = coin(&mut rng, cfg.sf_flip);
    let sf = if sn == 1 { 1 } else { flip };
    let nc = sn * coin(&mut rng, cfg.nc_keep);
    let sp: Vec<f64> = (0..cfg.d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            cfg.s * f64::from(sn) + (1.0 - cfg.s) * z
        })
        .collect();
    let mut t = Vec::with_capacity(4 * cfg.d);
    for v in [sn, sf, nc] {
        t.extend(std::iter::repeat(f64::from(v)).take(cfg.d));
    }
    t.extend_from_slice(&sp);
    let x = t
        .into_iter()
        .map(|ti| {
            let z: f64 = rng.sample(StandardNormal);
            let ti = ti + cfg.noise_scale * z;
            let k1 = kappa1(ti);
            match cfg.mixer {
                Mixer::AsWritten => sigmoid(k1 * k1),
                Mixer::K1K2 => sigmoid(k1 * kappa2(ti)),
            }
        })
        .collect();
    SynthSample { x, y, sn, sf, nc, sp }
}

/// Samples with indices `start..start + n`, sample `i` drawn from `key.fold(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub d: usize,
    pub start: u64,
    pub samples: Vec<SynthSample>,
}

pub fn generate_range(cfg: &SynthConfig, key: Key, start: u64, n: usize) -> Result<SynthDataset> {
    cfg.validate()?;
    let samples = (start..start + n as u64).map(|i| sample_one(cfg, key.fold(i))).collect();
    Ok(SynthDataset { d: cfg.d, start, samples })
}

/// Training set at indices `0..n_train`, evaluation set right after it.
pub fn generate(cfg: &SynthConfig, key: Key) -> Result<(SynthDataset, SynthDataset)> {
    let train = generate_range(cfg, key, 0, cfg.n_train)?;
    let eval = generate_range(cfg, key, cfg.n_train as u64, cfg.n_eval)?;
    Ok((train, eval))
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Result<Tensor> {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.x.as_slice()).collect();
        Tensor::from_rows(&rows)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn batch(&self) -> Result<LabeledBatch> {
        let ids = (self.start..self.start + self.len() as u64).collect();
        LabeledBatch::with_ids(self.inputs()?, self.labels(), ids)
    }

    /// `[n, 4]`: sn, sf, nc, and the mean of the spurious block.
    pub fn factor_table(&self) -> Result<Tensor> {
        let rows: Vec<[f64; 4]> = self
            .samples
            .iter()
            .map(|s| {
                let sp = s.sp.iter().sum::<f64>() / s.sp.len() as f64;
                [f64::from(s.sn), f64::from(s.sf), f64::from(s.nc), sp]
            })
            .collect();
        Tensor::from_rows(&rows)
    }

    pub fn csv_header(d: usize) -> String {
        let mut cols: Vec<String> = (0..4 * d).map(|i| format!("x_{i}")).collect();
        cols.extend(["y", "sn", "sf", "nc"].iter().map(|s| s.to_string()));
        cols.extend((0..d).map(|i| format!("sp_{i}")));
        cols.join(",")
    }

    /// Header row then one row per sample; reals in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.d);
        out.push('\n');
        for s in &self.samples {
            let mut fields: Vec<String> = s.x.iter().map(|v| format!("{v:?}")).collect();
            fields.extend([s.y, s.sn, s.sf, s.nc].iter().map(|v| v.to_string()));
            fields.extend(s.sp.iter().map(|v| format!("{v:?}")));
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    /// Parses the layout written by [`SynthDataset::to_csv`]. Sample indices
    /// restart at `start`.
    pub fn from_csv(text: &str, start: u64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols = header.split(',').count();
        if cols < 9 || (cols - 4) % 5 != 0 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("{cols} columns do not match the synthetic layout"),
            });
        }
        let d = (cols - 4) / 5;
        if header != Self::csv_header(d) {
            return Err(Error::Parse {
                line: 1,
                msg: "unexpected header".into(),
            });
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {cols} fields, found {}", f.len()),
                });
            }
            let real = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("`{s}` is not a number"),
                })
            };
            let bit = |s: &str| match s {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                _ => Err(Error::Parse {
                    line: line_no,
                    msg: format!("`{s}` is not 0 or 1"),
                }),
            };
            let x = f[..4 * d].iter().map(|s| real(s)).collect::<Result<Vec<_>>>()?;
            let sp = f[4 * d + 4..].iter().map(|s| real(s)).collect::<Result<Vec<_>>>()?;
            samples.push(SynthSample {
                x,
                y: bit(f[4 * d])?,
                sn: bit(f[4 * d + 1])?,
                sf: bit(f[4 * d + 2])?,
                nc: bit(f[4 * d + 3])?,
                sp,
            });
        }
        Ok(SynthDataset { d, start, samples })
    }
}

/// The binary factors that can stand in for the cause of `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Factor {
    Sn,
    Sf,
    Nc,
}

/// Literal SCM of the generator with one factor as the cause.
///
/// Noise is `(sn, feature coin, label coin)`; the cause is a deterministic
/// function of the noise (so `P(C|U)` is 0/1), and `y = sn xor coin` is read
/// through the cause only when the cause is `sn` itself.
pub fn factor_scm(cfg: &SynthConfig, factor: Factor) -> Result<DiscreteScm> {
    cfg.validate()?;
    let coin_p = match factor {
        Factor::Sn => 0.0,
        Factor::Sf => cfg.sf_flip,
        Factor::Nc => cfg.nc_keep,
    };
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    let mut cause_rows = Vec::new();
    let mut outcome = vec![Vec::new(), Vec::new()];
    for sn in 0..2u8 {
        for coin in 0..2u8 {
            for flip in 0..2u8 {
                let p_coin = if coin == 1 { coin_p } else { 1.0 - coin_p };
                let p_flip = if flip == 1 { cfg.label_noise } else { 1.0 - cfg.label_noise };
                labels.push(format!("sn{sn}.b{coin}.e{flip}"));
                probs.push(0.5 * p_coin * p_flip);
                let c = match factor {
                    Factor::Sn => sn,
                    Factor::Sf => {
                        if sn == 1 {
                            1
                        } else {
                            coin
                        }
                    }
                    Factor::Nc => sn * coin,
                };
                cause_rows.push(if c == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] });
                for (cv, row) in outcome.iter_mut().enumerate() {
                    let driver = if factor == Factor::Sn { cv as u8 } else { sn };
                    row.push(driver ^ flip);
                }
            }
        }
    }
    DiscreteScm::new(
        vec!["0".into(), "1".into()],
        labels,
        probs,
        CauseModel::GivenNoise(cause_rows),
        outcome,
    )
}

/// SCM for an intervention on SF carried out through SN: setting `SF = c`
/// redraws `SN` from `P(SN | SF = c)` and then produces `y` as usual.
/// The cause is drawn independently of the noise.
pub fn sf_functional_scm(cfg: &SynthConfig) -> Result<DiscreteScm> {
    cfg.validate()?;
    let p_sf1 = 0.5 + 0.5 * cfg.sf_flip;
    if p_sf1 <= 0.0 {
        return Err(Error::Domain("SF = 1 has zero probability".into()));
    }
    let p_sn1_given_sf1 = 0.5 / p_sf1;
    // r picks SN: r0 with mass P(SN=1|SF=1), r1 with the rest. Under SF = 0,
    // SN is 0 whatever r is.
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    let mut outcome = vec![Vec::new(), Vec::new()];
    for (r, pr) in [(0u8, p_sn1_given_sf1), (1u8, 1.0 - p_sn1_given_sf1)] {
        for flip in 0..2u8 {
            let pf = if flip == 1 { cfg.label_noise } else { 1.0 - cfg.label_noise };
            labels.push(format!("r{r}.e{flip}"));
            probs.push(pr * pf);
            outcome[0].push(flip);
            outcome[1].push(u8::from(r == 0) ^ flip);
        }
    }
    let total: f64 = probs.iter().sum();
    let last = probs.len() - 1;
    probs[last] += 1.0 - total;
    DiscreteScm::new(
        vec!["0".into(), "1".into()],
        labels,
        probs,
        CauseModel::Independent(vec![1.0 - p_sf1, p_sf1]),
        outcome,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{check_exogeneity, pns_identified};

    fn cfg(n: usize) -> SynthConfig {
        SynthConfig {
            n_train: n,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn label_noise_rate() {
        let (train, _) = generate(&cfg(20_000), Key::new(1)).unwrap();
        let flips = train.samples.iter().filter(|s| s.y != s.sn).count();
        assert!((flips as f64 / 20_000.0 - 0.15).abs() <= 0.01);
    }

    #[test]
    fn sufficiency_factor_rates() {
        let (train, _) = generate(&cfg(20_000), Key::new(2)).unwrap();
        let (zero, one): (Vec<_>, Vec<_>) = train.samples.iter().partition(|s| s.sn == 0);
        let rate = zero.iter().filter(|s| s.sf == 1).count() as f64 / zero.len() as f64;
        assert!((rate - 0.1).abs() <= 0.01);
        assert!(one.iter().all(|s| s.sf == 1));
    }

    #[test]
    fn full_spurious_degree_copies_sn() {
        let c = SynthConfig {
            s: 1.0,
            noise_scale: 0.0,
            ..cfg(200)
        };
        let (train, _) = generate(&c, Key::new(3)).unwrap();
        for s in &train.samples {
            assert!(s.sp.iter().all(|&v| v == f64::from(s.sn)));
        }
    }

    #[test]
    fn factor_table_shape_and_structure() {
        let (train, _) = generate(&cfg(5000), Key::new(4)).unwrap();
        let f = train.factor_table().unwrap();
        assert_eq!(f.rows(), 5000);
        let mean_sn = (0..5000).map(|i| f.at(i, 0)).sum::<f64>() / 5000.0;
        assert!((mean_sn - 0.5).abs() <= 0.02);
        assert!((0..5000).all(|i| f.at(i, 2) <= f.at(i, 0)));
    }

    #[test]
    fn inputs_are_open_unit_interval() {
        let (train, _) = generate(&cfg(2000), Key::new(5)).unwrap();
        assert!(train.samples.iter().flat_map(|s| &s.x).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn cross_mixer_is_constant() {
        let c = SynthConfig {
            mixer: Mixer::K1K2,
            ..cfg(100)
        };
        let (train, _) = generate(&c, Key::new(6)).unwrap();
        assert!(train.samples.iter().flat_map(|s| &s.x).all(|&v| v == 0.5));
    }

    #[test]
    fn generation_is_order_independent() {
        let c = cfg(50);
        let whole = generate_range(&c, Key::new(7), 0, 50).unwrap();
        let tail = generate_range(&c, Key::new(7), 30, 20).unwrap();
        assert_eq!(&whole.samples[30..], &tail.samples[..]);
    }

    #[test]
    fn csv_round_trip() {
        let (train, _) = generate(&cfg(40), Key::new(8)).unwrap();
        let text = train.to_csv();
        assert!(text.starts_with("x_0,x_1,"));
        let back = SynthDataset::from_csv(&text, 0).unwrap();
        assert_eq!(back, train);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn sn_has_the_highest_identified_pns() {
        let c = SynthConfig::default();
        let pns = |f| pns_identified(&factor_scm(&c, f).unwrap(), 1, 0, 1).unwrap();
        let (sn, sf, nc) = (pns(Factor::Sn), pns(Factor::Sf), pns(Factor::Nc));
        assert!((sn - 0.7).abs() < 1e-12);
        assert!(sn > sf && sn > nc, "{sn} {sf} {nc}");
    }

    #[test]
    fn functional_intervention_on_sf_matches_conditional() {
        let c = SynthConfig::default();
        let literal = factor_scm(&c, Factor::Sf).unwrap();
        let functional = sf_functional_scm(&c).unwrap();
        for sf in 0..2 {
            for y in 0..2 {
                let cond = literal.conditional(sf, y).unwrap();
                assert!((functional.interventional(sf, y) - cond).abs() <= 1e-12);
                assert!(check_exogeneity(&functional, sf, y));
            }
        }
    }
}
