//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # comments run to the end of the line
//! name = s01
//! seed = 0
//!
//! [synth]
//! n_train = 5000
//!
//! [train]
//! lr_min = 0.1
//!
//! [grid]
//! variant = casn, casn_minus_m
//! seeds = 0, 1, 2, 3, 4
//!
//! [checks]
//! dcor_sn_min = 0.75
//! ```
//!
//! Keys before the first header belong to `[experiment]`. Parsing is strict:
//! unknown sections or keys, repeated keys and unparsable values are errors
//! carrying the line number. Every key is optional and defaults to the
//! matching field of [`ExperimentSpec::default`]. [`ExperimentSpec::serialize`]
//! writes every key in a fixed order, so `serialize ∘ parse` normalises a file.
//!
//! Sections and keys:
//!
//! * `[experiment]`: `name`, `seed` (the run seed when `[grid] seeds` is
//!   absent), `out_dir`.
//! * `[synth]`: every [`SynthConfig`] field except `seed`, which each run
//!   takes from the grid.
//! * `[train]`: every [`TrainConfig`] field. `variant`, `delta`, `lambda`
//!   and `seed` act as single-value defaults for the grid.
//! * `[grid]`: comma-separated lists `variant`, `delta`, `lambda`, `s`,
//!   `seeds`. An empty value is an empty axis and so an empty grid.
//! * `[checks]`: `dcor_sn_min`, `dcor_gap_min`, `ablation_margin`,
//!   `ablation_hard`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::synth::SynthConfig;
use crate::train::{TrainConfig, Variant};

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn lex(text: &str, default_section: &str) -> Result<Vec<Entry>> {
    let mut section = default_section.to_owned();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("unterminated section header `{body}`"),
                })?
                .trim();
            section = name.to_owned();
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, found `{body}`"),
        })?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line,
                msg: format!("bad key `{key}`"),
            });
        }
        if !seen.insert((section.clone(), key.to_owned())) {
            return Err(Error::Parse {
                line,
                msg: format!("`{key}` repeated in [{section}]"),
            });
        }
        out.push(Entry {
            section: section.clone(),
            key: key.to_owned(),
            value: value.trim().to_owned(),
            line,
        });
    }
    Ok(out)
}

/// Why a single assignment failed; the caller adds the line.
enum SetError {
    Unknown,
    Bad(String),
}

type SetResult = std::result::Result<(), SetError>;

fn val<T: FromStr>(v: &str) -> std::result::Result<T, SetError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| SetError::Bad(format!("`{v}`: {e}")))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, SetError>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| val(p.trim())).collect()
}

fn apply(entry: &Entry, set: impl FnOnce(&str, &str) -> SetResult) -> Result<()> {
    set(&entry.key, &entry.value).map_err(|e| match e {
        SetError::Unknown => Error::UnknownKey {
            key: format!("{}.{}", entry.section, entry.key),
            line: entry.line,
        },
        SetError::Bad(msg) => Error::Parse {
            line: entry.line,
            msg: format!("{}: {msg}", entry.key),
        },
    })
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn set_train(cfg: &mut TrainConfig, key: &str, v: &str) -> SetResult {
    match key {
        "delta" => cfg.delta = val(v)?,
        "lambda" => cfg.lambda = val(v)?,
        "sep_weight" => cfg.sep_weight = val(v)?,
        "lr_min" => cfg.lr_min = val(v)?,
        "lr_max" => cfg.lr_max = val(v)?,
        "momentum" => cfg.momentum = val(v)?,
        "max_every" => cfg.max_every = val(v)?,
        "max_steps_per_phase" => cfg.max_steps_per_phase = val(v)?,
        "total_steps" => cfg.total_steps = val(v)?,
        "batch_size" => cfg.batch_size = val(v)?,
        "mc_samples" => cfg.mc_samples = val(v)?,
        "variant" => cfg.variant = v.parse().map_err(|e: Error| SetError::Bad(e.to_string()))?,
        "irm_weight" => cfg.irm_weight = val(v)?,
        "irm_anneal_iters" => cfg.irm_anneal_iters = val(v)?,
        "mmd_weight" => cfg.mmd_weight = val(v)?,
        "adversary_kl" => cfg.adversary_kl = val(v)?,
        "learned_variance" => cfg.learned_variance = val(v)?,
        "rep_dim" => cfg.rep_dim = val(v)?,
        "xi_init_scale" => cfg.xi_init_scale = val(v)?,
        "seed" => cfg.seed = val(v)?,
        _ => return Err(SetError::Unknown),
    }
    Ok(())
}

fn train_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("delta", f(cfg.delta)),
        ("lambda", f(cfg.lambda)),
        ("sep_weight", f(cfg.sep_weight)),
        ("lr_min", f(cfg.lr_min)),
        ("lr_max", f(cfg.lr_max)),
        ("momentum", f(cfg.momentum)),
        ("max_every", cfg.max_every.to_string()),
        ("max_steps_per_phase", cfg.max_steps_per_phase.to_string()),
        ("total_steps", cfg.total_steps.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("mc_samples", cfg.mc_samples.to_string()),
        ("variant", cfg.variant.to_string()),
        ("irm_weight", f(cfg.irm_weight)),
        ("irm_anneal_iters", cfg.irm_anneal_iters.to_string()),
        ("mmd_weight", f(cfg.mmd_weight)),
        ("adversary_kl", cfg.adversary_kl.to_string()),
        ("learned_variance", cfg.learned_variance.to_string()),
        ("rep_dim", cfg.rep_dim.to_string()),
        ("xi_init_scale", f(cfg.xi_init_scale)),
        ("seed", cfg.seed.to_string()),
    ]
}

fn set_synth(cfg: &mut SynthConfig, key: &str, v: &str, allow_seed: bool) -> SetResult {
    match key {
        "d" => cfg.d = val(v)?,
        "s" => cfg.s = val(v)?,
        "n_train" => cfg.n_train = val(v)?,
        "n_eval" => cfg.n_eval = val(v)?,
        "label_noise" => cfg.label_noise = val(v)?,
        "sf_flip" => cfg.sf_flip = val(v)?,
        "nc_keep" => cfg.nc_keep = val(v)?,
        "noise_scale" => cfg.noise_scale = val(v)?,
        "mixer" => cfg.mixer = v.parse().map_err(|e: Error| SetError::Bad(e.to_string()))?,
        "seed" if allow_seed => cfg.seed = val(v)?,
        _ => return Err(SetError::Unknown),
    }
    Ok(())
}

fn synth_entries(cfg: &SynthConfig, with_seed: bool) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("d", cfg.d.to_string()),
        ("s", f(cfg.s)),
        ("n_train", cfg.n_train.to_string()),
        ("n_eval", cfg.n_eval.to_string()),
        ("label_noise", f(cfg.label_noise)),
        ("sf_flip", f(cfg.sf_flip)),
        ("nc_keep", f(cfg.nc_keep)),
        ("noise_scale", f(cfg.noise_scale)),
        ("mixer", cfg.mixer.to_string()),
    ];
    if with_seed {
        out.push(("seed", cfg.seed.to_string()));
    }
    out
}

fn write_section(out: &mut String, name: &str, entries: &[(&'static str, String)]) {
    if !out.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "[{name}]");
    for (k, v) in entries {
        if v.is_empty() {
            let _ = writeln!(out, "{k} =");
        } else {
            let _ = writeln!(out, "{k} = {v}");
        }
    }
}

/// Parses a training configuration: [`TrainConfig`] keys, optionally under
/// a `[train]` header.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for e in lex(text, "train")? {
        if e.section != "train" {
            return Err(Error::Parse {
                line: e.line,
                msg: format!("unexpected section [{}]", e.section),
            });
        }
        apply(&e, |k, v| set_train(&mut cfg, k, v))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical text of a training configuration.
pub fn train_config_text(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    write_section(&mut out, "train", &train_entries(cfg));
    out
}

/// Canonical text of a generator configuration, seed included.
pub fn synth_config_text(cfg: &SynthConfig) -> String {
    let mut out = String::new();
    write_section(&mut out, "synth", &synth_entries(cfg, true));
    out
}

/// Hex SHA-256 of a canonical configuration text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Grid axes. An absent axis falls back to the single base value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grid {
    pub variant: Option<Vec<Variant>>,
    pub delta: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

/// Pass conditions evaluated on the summary. Unset thresholds are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checks {
    /// Minimum median `dcor_sn` of every full-method row.
    pub dcor_sn_min: Option<f64>,
    /// Minimum median `dcor_sn − dcor_sp` of every full-method row.
    pub dcor_gap_min: Option<f64>,
    /// The full method's median `dcor_sn` may trail the ablation's by at most
    /// this much at equal coordinates.
    pub ablation_margin: Option<f64>,
    /// Whether an ablation failure fails the run.
    pub ablation_hard: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub seed: u64,
    pub out_dir: String,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub grid: Grid,
    pub checks: Checks,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            seed: 0,
            out_dir: "out".into(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            grid: Grid::default(),
            checks: Checks::default(),
        }
    }
}

/// One fully determined run.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub variant: Variant,
    pub delta: f64,
    pub lambda: f64,
    pub s: f64,
    pub seed: u64,
}

impl GridPoint {
    /// Collision-free label, also usable as a directory name.
    pub fn label(&self) -> String {
        format!(
            "{}_delta{:?}_lambda{:?}_s{:?}_seed{}",
            self.variant, self.delta, self.lambda, self.s, self.seed
        )
    }
}

fn no_duplicates<T: PartialEq + std::fmt::Debug>(axis: &str, items: &[T]) -> Result<()> {
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(Error::Domain(format!("grid axis {axis} repeats {a:?}")));
        }
    }
    Ok(())
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        for e in lex(text, "experiment")? {
            match e.section.as_str() {
                "experiment" => apply(&e, |k, v| {
                    match k {
                        "name" => spec.name = v.to_owned(),
                        "seed" => spec.seed = val(v)?,
                        "out_dir" => spec.out_dir = v.to_owned(),
                        _ => return Err(SetError::Unknown),
                    }
                    Ok(())
                })?,
                "synth" => apply(&e, |k, v| set_synth(&mut spec.synth, k, v, false))?,
                "train" => apply(&e, |k, v| set_train(&mut spec.train, k, v))?,
                "grid" => apply(&e, |k, v| {
                    let g = &mut spec.grid;
                    match k {
                        "variant" => {
                            g.variant = Some(if v.is_empty() {
                                Vec::new()
                            } else {
                                v.split(',')
                                    .map(|p| p.trim().parse::<Variant>())
                                    .collect::<Result<_>>()
                                    .map_err(|e| SetError::Bad(e.to_string()))?
                            })
                        }
                        "delta" => g.delta = Some(list(v)?),
                        "lambda" => g.lambda = Some(list(v)?),
                        "s" => g.s = Some(list(v)?),
                        "seeds" => g.seeds = Some(list(v)?),
                        _ => return Err(SetError::Unknown),
                    }
                    Ok(())
                })?,
                "checks" => apply(&e, |k, v| {
                    let c = &mut spec.checks;
                    match k {
                        "dcor_sn_min" => c.dcor_sn_min = Some(val(v)?),
                        "dcor_gap_min" => c.dcor_gap_min = Some(val(v)?),
                        "ablation_margin" => c.ablation_margin = Some(val(v)?),
                        "ablation_hard" => c.ablation_hard = val(v)?,
                        _ => return Err(SetError::Unknown),
                    }
                    Ok(())
                })?,
                other => {
                    return Err(Error::Parse {
                        line: e.line,
                        msg: format!("unknown section [{other}]"),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['#', '\n']) {
            return Err(Error::Domain("name must be nonempty without `#` or newlines".into()));
        }
        if self.out_dir.contains(['#', '\n']) {
            return Err(Error::Domain("out_dir must not contain `#` or newlines".into()));
        }
        self.synth.validate()?;
        self.train.validate()?;
        let g = &self.grid;
        if let Some(v) = &g.variant {
            no_duplicates("variant", v)?;
        }
        for (axis, items) in [("delta", &g.delta), ("lambda", &g.lambda), ("s", &g.s)] {
            if let Some(items) = items {
                no_duplicates(axis, items)?;
                if items.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Domain(format!("grid axis {axis} needs finite nonnegative values")));
                }
            }
        }
        if let Some(s) = &g.s {
            if s.iter().any(|v| *v > 1.0) {
                return Err(Error::Domain("grid axis s must lie in [0,1]".into()));
            }
        }
        if let Some(seeds) = &g.seeds {
            no_duplicates("seeds", seeds)?;
        }
        Ok(())
    }

    /// Canonical text: every section and key in a fixed order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        write_section(
            &mut out,
            "experiment",
            &[
                ("name", self.name.clone()),
                ("seed", self.seed.to_string()),
                ("out_dir", self.out_dir.clone()),
            ],
        );
        write_section(&mut out, "synth", &synth_entries(&self.synth, false));
        write_section(&mut out, "train", &train_entries(&self.train));
        let g = &self.grid;
        let mut grid = Vec::new();
        if let Some(v) = &g.variant {
            grid.push(("variant", join(v)));
        }
        let floats = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ");
        for (k, axis) in [("delta", &g.delta), ("lambda", &g.lambda), ("s", &g.s)] {
            if let Some(v) = axis {
                grid.push((k, floats(v)));
            }
        }
        if let Some(v) = &g.seeds {
            grid.push(("seeds", join(v)));
        }
        write_section(&mut out, "grid", &grid);
        let c = &self.checks;
        let mut checks = Vec::new();
        for (k, v) in [
            ("dcor_sn_min", c.dcor_sn_min),
            ("dcor_gap_min", c.dcor_gap_min),
            ("ablation_margin", c.ablation_margin),
        ] {
            if let Some(v) = v {
                checks.push((k, f(v)));
            }
        }
        checks.push(("ablation_hard", c.ablation_hard.to_string()));
        write_section(&mut out, "checks", &checks);
        out
    }

    pub fn hash(&self) -> String {
        config_hash(&self.serialize())
    }

    /// Every grid point, sorted by (variant, delta, lambda, s, seed).
    pub fn points(&self) -> Vec<GridPoint> {
        let g = &self.grid;
        let variants = g.variant.clone().unwrap_or_else(|| vec![self.train.variant]);
        let mut deltas = g.delta.clone().unwrap_or_else(|| vec![self.train.delta]);
        let mut lambdas = g.lambda.clone().unwrap_or_else(|| vec![self.train.lambda]);
        let mut ss = g.s.clone().unwrap_or_else(|| vec![self.synth.s]);
        let mut seeds = g.seeds.clone().unwrap_or_else(|| vec![self.seed]);
        let mut variants = variants;
        variants.sort();
        for axis in [&mut deltas, &mut lambdas, &mut ss] {
            axis.sort_by(f64::total_cmp);
        }
        seeds.sort_unstable();
        let mut out = Vec::new();
        for &variant in &variants {
            for &delta in &deltas {
                for &lambda in &lambdas {
                    for &s in &ss {
                        for &seed in &seeds {
                            out.push(GridPoint {
                                variant,
                                delta,
                                lambda,
                                s,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Generator configuration of one run.
    pub fn synth_for(&self, p: &GridPoint) -> SynthConfig {
        SynthConfig {
            s: p.s,
            seed: p.seed,
            ..self.synth.clone()
        }
    }

    /// Training configuration of one run.
    pub fn train_for(&self, p: &GridPoint) -> TrainConfig {
        TrainConfig {
            variant: p.variant,
            delta: p.delta,
            lambda: p.lambda,
            seed: p.seed,
            ..self.train.clone()
        }
    }
}

/// Reads and parses an experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentSpec::parse(&text)
}
