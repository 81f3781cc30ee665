//! Command-line front end. Every subcommand writes under `--out`; each CSV
//! gets a `.sha256` sidecar with the hash of the configuration behind it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use casn::config::{parse_config, parse_train_config, synth_config_text, train_config_text};
use casn::eval::evaluate;
use casn::model::{CasnModel, Checkpoint};
use casn::repro::{run_repro, write_with_hash};
use casn::risk::{bound_rows_csv, pac_suite, shift_bound_suite};
use casn::rng::Key;
use casn::scm::{pns_report, DiscreteScm, PnsQuery};
use casn::synth::{generate_range, Mixer, SynthConfig, SynthDataset};
use casn::train::{train_with_trace, TrainData, TrainTrace};
use casn::{Error, Result};

#[derive(Parser)]
#[command(name = "casn", about = "Sufficient and necessary cause representations", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the synthetic benchmark to <out>/synth.csv.
    Synth {
        #[arg(long, default_value_t = 5)]
        d: usize,
        #[arg(long, default_value_t = 0.1)]
        s: f64,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "as_written")]
        mixer: Mixer,
        /// Index of the first sample; draws are keyed per index, so an
        /// evaluation set is a later range under the same seed.
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a synthetic CSV; writes checkpoint.txt, trace.csv, risk.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance correlations and accuracy of a checkpoint; writes eval.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Spurious degree of the data, copied into the report.
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the PNS report of a discrete SCM table.
    Oracle {
        file: PathBuf,
        /// Query override: cause labels and the outcome value.
        #[arg(long, requires_all = ["c_bar", "y"])]
        c: Option<String>,
        #[arg(long)]
        c_bar: Option<String>,
        #[arg(long)]
        y: Option<u8>,
    },
    /// Run the domain-shift and sample-size bound suites; writes bounds.csv.
    Bounds {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 256)]
        mc: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid; exit status 0 iff every hard check passes.
    Repro {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the file's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn load_data(path: &Path) -> Result<SynthDataset> {
    SynthDataset::from_csv(&read(path)?, 0)
}

fn cmd_synth(cfg: SynthConfig, n: usize, start: u64, out: &Path) -> Result<()> {
    let data = generate_range(&cfg, Key::new(cfg.seed), start, n)?;
    let text = format!("{}start = {start}\nn = {n}\n", synth_config_text(&cfg));
    write_with_hash(out, "synth.csv", &data.to_csv(), &text)?;
    println!("wrote {} samples to {}", n, out.join("synth.csv").display());
    Ok(())
}

fn risk_csv(trace: &TrainTrace) -> String {
    let mut out = String::from("sf,nc,m,r,kl_c,kl_cbar,mc_samples\n");
    if let Some(r) = &trace.final_report {
        let _ = writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.sf, r.nc, r.m, r.r, r.kl_c, r.kl_cbar, r.mc_samples
        );
    }
    out
}

fn cmd_train(config: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = parse_train_config(&read(config)?)?;
    let text = train_config_text(&cfg);
    let set = load_data(data)?;
    let mut trace = TrainTrace::default();
    let result = train_with_trace(&TrainData::single_domain(set.batch()?), &cfg, &mut trace);
    // the trace is written even when training aborts
    write_with_hash(out, "trace.csv", &trace.to_csv(), &text)?;
    let model = result?;
    let mut meta = BTreeMap::new();
    for line in text.lines().filter_map(|l| l.split_once(" = ")) {
        meta.insert(line.0.to_owned(), line.1.to_owned());
    }
    model.to_checkpoint(&meta).save(&out.join("checkpoint.txt"))?;
    write_with_hash(out, "risk.csv", &risk_csv(&trace), &text)?;
    if let Some(r) = &trace.final_report {
        println!("sf={:.4} nc={:.4} m={:.4} r={:.4}", r.sf, r.nc, r.m, r.r);
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &Path, s: Option<f64>, out: &Path) -> Result<()> {
    let cp = Checkpoint::load(checkpoint)?;
    let model = CasnModel::from_checkpoint(&cp)?;
    let meta = |k: &str| cp.meta.get(k).cloned().unwrap_or_default();
    let delta: f64 = meta("delta").parse().unwrap_or(f64::NAN);
    let set = load_data(data)?;
    let (rep, acc) = evaluate(&set, &model.enc_c, &model.head, delta, s.unwrap_or(f64::NAN))?;
    let s_cell = s.map(|v| format!("{v:?}")).unwrap_or_default();
    let csv = format!(
        "delta,s,seed,dcor_sn,dcor_sf,dcor_nc,dcor_sp,accuracy\n{},{s_cell},{},{:?},{:?},{:?},{:?},{:?}\n",
        meta("delta"),
        meta("seed"),
        rep.dcor_sn,
        rep.dcor_sf,
        rep.dcor_nc,
        rep.dcor_sp,
        acc
    );
    let config: String = cp.meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write_with_hash(out, "eval.csv", &csv, &format!("[train]\n{config}"))?;
    print!("{}", csv.lines().nth(1).map(|l| format!("{l}\n")).unwrap_or_default());
    Ok(())
}

fn cmd_oracle(file: &Path, c: Option<String>, c_bar: Option<String>, y: Option<u8>) -> Result<()> {
    let (scm, query): (DiscreteScm, Option<PnsQuery>) = DiscreteScm::parse(&read(file)?)?;
    let index = |l: &str| {
        scm.cause_index(l)
            .ok_or_else(|| Error::Domain(format!("unknown cause label `{l}`")))
    };
    let q = match (c, c_bar, y, query) {
        (Some(c), Some(c_bar), Some(y), _) => PnsQuery {
            c: index(&c)?,
            c_bar: index(&c_bar)?,
            y,
        },
        (_, _, _, Some(q)) => q,
        _ => return Err(Error::Contract("no query: add a `query` line or pass --c --c-bar --y".into())),
    };
    println!("{}", pns_report(&scm, q.c, q.c_bar, q.y)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bounds(seed: u64, instances: usize, mc: usize, trials: usize, n: usize, epsilon: f64, out: &Path) -> Result<()> {
    let key = Key::new(seed);
    let shift = shift_bound_suite(key.fold_str("shift"), instances, mc)?;
    let pac = pac_suite(key.fold_str("pac"), trials, n, epsilon, true)?;
    let shift_ok = shift.iter().filter(|r| r.holds).count();
    let pac_viol = pac.iter().filter(|r| !r.holds).count();
    let mut rows = shift;
    rows.extend(pac);
    let text = format!(
        "seed = {seed}\ninstances = {instances}\nmc = {mc}\ntrials = {trials}\nn = {n}\nepsilon = {epsilon:?}\n"
    );
    write_with_hash(out, "bounds.csv", &bound_rows_csv(&rows), &text)?;
    println!("shift bound held in {shift_ok} of {instances} instances");
    println!(
        "sample bound violated in {pac_viol} of {trials} trials (allowed fraction {epsilon})"
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Synth {
            d,
            s,
            n,
            seed,
            mixer,
            start,
            out,
        } => {
            let cfg = SynthConfig {
                d,
                s,
                n_train: n,
                n_eval: 0,
                mixer,
                seed,
                ..SynthConfig::default()
            };
            cmd_synth(cfg, n, start, &out)?;
        }
        Cmd::Train { config, data, out } => cmd_train(&config, &data, &out)?,
        Cmd::Eval {
            checkpoint,
            data,
            s,
            out,
        } => cmd_eval(&checkpoint, &data, s, &out)?,
        Cmd::Oracle { file, c, c_bar, y } => cmd_oracle(&file, c, c_bar, y)?,
        Cmd::Bounds {
            seed,
            instances,
            mc,
            trials,
            n,
            epsilon,
            out,
        } => cmd_bounds(seed, instances, mc, trials, n, epsilon, &out)?,
        Cmd::Repro { config, out } => {
            let spec = parse_config(&config)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&spec.out_dir));
            let outcome = run_repro(&spec, &dir)?;
            for c in &outcome.checks {
                println!("{c}");
            }
            return Ok(if outcome.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
