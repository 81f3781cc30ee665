//! Grid runner: generate, train, evaluate, aggregate medians over seeds, and
//! check the summary against the configured thresholds.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{config_hash, ExperimentSpec, GridPoint};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::rng::Key;
use crate::synth::generate;
use crate::train::{train, TrainData, Variant};

/// Metrics of one completed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub dcor_sn: f64,
    pub dcor_sf: f64,
    pub dcor_nc: f64,
    pub dcor_sp: f64,
    pub accuracy: f64,
    pub sf: f64,
    pub nc: f64,
    /// Absent for variants without an intervention encoder.
    pub m: Option<f64>,
    pub r: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub point: GridPoint,
    pub outcome: std::result::Result<RunMetrics, String>,
}

/// Runs one grid point end to end.
pub fn run_point(spec: &ExperimentSpec, point: &GridPoint) -> Result<RunMetrics> {
    let sc = spec.synth_for(point);
    let tc = spec.train_for(point);
    let (train_set, eval_set) = generate(&sc, Key::new(sc.seed))?;
    let (model, trace) = train(&TrainData::single_domain(train_set.batch()?), &tc)?;
    let (dc, accuracy) = evaluate(&eval_set, &model.enc_c, &model.head, tc.delta, sc.s)?;
    let report = trace
        .final_report
        .ok_or_else(|| Error::Contract("training returned no risk report".into()))?;
    Ok(RunMetrics {
        dcor_sn: dc.dcor_sn,
        dcor_sf: dc.dcor_sf,
        dcor_nc: dc.dcor_nc,
        dcor_sp: dc.dcor_sp,
        accuracy,
        sf: report.sf,
        nc: report.nc,
        m: tc.variant.has_adversary().then_some(report.m),
        r: report.r,
    })
}

/// Medians over the completed seeds of one (variant, delta, lambda, s) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub delta: f64,
    pub lambda: f64,
    pub s: f64,
    pub runs: usize,
    pub failed: usize,
    /// `None` when every seed failed.
    pub median: Option<RunMetrics>,
}

/// Median with the even case averaged.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn same_cell(a: &GridPoint, b: &GridPoint) -> bool {
    a.variant == b.variant && a.delta == b.delta && a.lambda == b.lambda && a.s == b.s
}

/// Groups records (already in grid order) into per-cell medians.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let head = &records[start].point;
        let end = start + records[start..].iter().take_while(|r| same_cell(&r.point, head)).count();
        let ok: Vec<&RunMetrics> = records[start..end].iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let med = |f: fn(&RunMetrics) -> f64| median(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
        let median_metrics = (!ok.is_empty()).then(|| RunMetrics {
            dcor_sn: med(|m| m.dcor_sn).unwrap_or_default(),
            dcor_sf: med(|m| m.dcor_sf).unwrap_or_default(),
            dcor_nc: med(|m| m.dcor_nc).unwrap_or_default(),
            dcor_sp: med(|m| m.dcor_sp).unwrap_or_default(),
            accuracy: med(|m| m.accuracy).unwrap_or_default(),
            sf: med(|m| m.sf).unwrap_or_default(),
            nc: med(|m| m.nc).unwrap_or_default(),
            m: median(&ok.iter().filter_map(|m| m.m).collect::<Vec<_>>()),
            r: med(|m| m.r).unwrap_or_default(),
        });
        rows.push(SummaryRow {
            variant: head.variant,
            delta: head.delta,
            lambda: head.lambda,
            s: head.s,
            runs: end - start,
            failed: end - start - ok.len(),
            median: median_metrics,
        });
        start = end;
    }
    rows
}

const METRIC_HEADER: &str = "dcor_sn,dcor_sf,dcor_nc,dcor_sp,accuracy,sf,nc,m,r";

fn metric_cells(m: Option<&RunMetrics>) -> String {
    match m {
        None => ",,,,,,,,".into(),
        Some(m) => format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?}",
            m.dcor_sn,
            m.dcor_sf,
            m.dcor_nc,
            m.dcor_sp,
            m.accuracy,
            m.sf,
            m.nc,
            m.m.map(|v| format!("{v:?}")).unwrap_or_default(),
            m.r
        ),
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("variant,delta,lambda,s,runs,failed,{METRIC_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{},{},{}",
            r.variant,
            r.delta,
            r.lambda,
            r.s,
            r.runs,
            r.failed,
            metric_cells(r.median.as_ref())
        );
    }
    out
}

/// One row per run; failed runs carry their error with commas replaced.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = format!("variant,delta,lambda,s,seed,{METRIC_HEADER},error\n");
    for r in records {
        let p = &r.point;
        let (cells, err) = match &r.outcome {
            Ok(m) => (metric_cells(Some(m)), String::new()),
            Err(e) => (metric_cells(None), e.replace([',', '\n'], ";")),
        };
        let _ = writeln!(out, "{},{:?},{:?},{:?},{},{cells},{err}", p.variant, p.delta, p.lambda, p.s, p.seed);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    /// Soft checks are reported but never fail the run.
    pub hard: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}{}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            if self.hard { "" } else { " (soft)" },
            self.detail
        )
    }
}

fn cell_name(r: &SummaryRow) -> String {
    format!("delta={:?} lambda={:?} s={:?}", r.delta, r.lambda, r.s)
}

/// Checks configured in `spec` applied to `rows`.
pub fn run_checks(spec: &ExperimentSpec, records: &[RunRecord], rows: &[SummaryRow]) -> Vec<CheckLine> {
    let c = &spec.checks;
    let failed = records.iter().filter(|r| r.outcome.is_err()).count();
    let mut out = vec![CheckLine {
        name: "runs_complete".into(),
        pass: failed == 0,
        hard: true,
        detail: format!("{} of {} runs completed", records.len() - failed, records.len()),
    }];
    let full = rows.iter().filter(|r| r.variant == Variant::Casn);
    if c.dcor_sn_min.is_some() || c.dcor_gap_min.is_some() {
        for r in full.clone() {
            let (pass, detail) = match &r.median {
                None => (false, "no completed runs".to_owned()),
                Some(m) => {
                    let gap = m.dcor_sn - m.dcor_sp;
                    let ok = c.dcor_sn_min.map_or(true, |t| m.dcor_sn >= t) && c.dcor_gap_min.map_or(true, |t| gap >= t);
                    (
                        ok,
                        format!("median dcor_sn {:.4}, dcor_sp {:.4}, gap {gap:.4}", m.dcor_sn, m.dcor_sp),
                    )
                }
            };
            out.push(CheckLine {
                name: format!("separation[{}]", cell_name(r)),
                pass,
                hard: true,
                detail,
            });
        }
    }
    if let Some(margin) = c.ablation_margin {
        for r in full {
            let Some(abl) = rows.iter().find(|a| {
                a.variant == Variant::CasnMinusM && a.delta == r.delta && a.lambda == r.lambda && a.s == r.s
            }) else {
                continue;
            };
            let (pass, detail) = match (&r.median, &abl.median) {
                (Some(f), Some(a)) => (
                    f.dcor_sn >= a.dcor_sn - margin,
                    format!("median dcor_sn {:.4} vs ablation {:.4}, margin {margin}", f.dcor_sn, a.dcor_sn),
                ),
                _ => (false, "no completed runs".to_owned()),
            };
            out.push(CheckLine {
                name: format!("ablation[{}]", cell_name(r)),
                pass,
                hard: c.ablation_hard,
                detail,
            });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ReproOutcome {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub checks: Vec<CheckLine>,
}

impl ReproOutcome {
    /// True iff every hard check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.hard)
    }
}

/// Runs the grid without touching the filesystem. A failing run is recorded
/// and the remaining points still run.
pub fn execute(spec: &ExperimentSpec) -> ReproOutcome {
    let records: Vec<RunRecord> = spec
        .points()
        .into_iter()
        .map(|point| {
            let outcome = run_point(spec, &point).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("run {} failed: {e}", point.label());
            } else {
                log::info!("run {} done", point.label());
            }
            RunRecord { point, outcome }
        })
        .collect();
    let summary = summarize(&records);
    let checks = run_checks(spec, &records, &summary);
    ReproOutcome {
        records,
        summary,
        checks,
    }
}

/// Writes `name` under `dir` plus a `name.sha256` sidecar holding the hash
/// of the configuration that produced it.
pub fn write_with_hash(dir: &Path, name: &str, contents: &str, config_text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    let side = dir.join(format!("{name}.sha256"));
    std::fs::write(&side, format!("{}\n", config_hash(config_text))).map_err(|e| Error::io(&side, e))
}

/// Runs the grid and writes `summary.csv`, `runs.csv`, their hash sidecars,
/// the normalised config and `checks.txt` under `out_dir`.
pub fn run_repro(spec: &ExperimentSpec, out_dir: &Path) -> Result<ReproOutcome> {
    spec.validate()?;
    let outcome = execute(spec);
    let text = spec.serialize();
    write_with_hash(out_dir, "summary.csv", &summary_csv(&outcome.summary), &text)?;
    write_with_hash(out_dir, "runs.csv", &runs_csv(&outcome.records), &text)?;
    let cfg = out_dir.join("config.txt");
    std::fs::write(&cfg, &text).map_err(|e| Error::io(&cfg, e))?;
    let lines: String = outcome.checks.iter().map(|c| format!("{c}\n")).collect();
    let checks = out_dir.join("checks.txt");
    std::fs::write(&checks, lines).map_err(|e| Error::io(&checks, e))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(extra: &str) -> ExperimentSpec {
        let text = format!(
            "name = tiny\n[synth]\nn_train = 200\nn_eval = 40\n[train]\ntotal_steps = 30\nmax_every = 10\nrep_dim = 4\nlr_min = 0.1\nlr_max = 0.005\n{extra}"
        );
        ExperimentSpec::parse(&text).unwrap()
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn empty_grid_passes() {
        let spec = tiny("[grid]\nvariant =\n");
        let out = execute(&spec);
        assert!(out.summary.is_empty() && out.passed());
        assert_eq!(summary_csv(&out.summary).lines().count(), 1);
    }

    #[test]
    fn ablation_row_has_no_m() {
        let spec = tiny("[grid]\nvariant = casn_minus_m\n");
        let out = execute(&spec);
        assert_eq!(out.summary.len(), 1);
        let m = out.summary[0].median.as_ref().unwrap();
        assert!(m.m.is_none());
        let csv = summary_csv(&out.summary);
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        let mi = header.iter().position(|h| *h == "m").unwrap();
        assert_eq!(row[mi], "");
    }

    #[test]
    fn failures_are_recorded_and_fail_the_run() {
        let mut spec = tiny("[grid]\nseeds = 0, 1\n");
        spec.train.lr_min = 1e200;
        let out = execute(&spec);
        assert_eq!(out.records.len(), 2);
        assert!(out.records.iter().all(|r| r.outcome.is_err()));
        assert!(!out.passed());
        assert_eq!(out.summary[0].failed, 2);
    }
}
