//! The synthetic benchmark: samples, factor table, CSV, and the PNS of each
//! planted factor.
//!
//! `cargo run --example synth_data`

use casn::rng::Key;
use casn::scm::pns_identified;
use casn::synth::{factor_scm, generate, Factor, SynthConfig, SynthDataset};

fn main() -> casn::Result<()> {
    let cfg = SynthConfig {
        n_train: 2000,
        n_eval: 200,
        s: 0.7,
        ..SynthConfig::default()
    };
    let (train, eval) = generate(&cfg, Key::new(cfg.seed))?;
    println!("{} train rows, {} eval rows, {} inputs each", train.len(), eval.len(), cfg.input_dim());

    let agree = |f: fn(&casn::synth::SynthSample) -> u8| {
        train.samples.iter().filter(|s| f(s) == s.y).count() as f64 / train.len() as f64
    };
    println!(
        "label agreement: sn {:.3}  sf {:.3}  nc {:.3}",
        agree(|s| s.sn),
        agree(|s| s.sf),
        agree(|s| s.nc)
    );

    for factor in [Factor::Sn, Factor::Sf, Factor::Nc] {
        let scm = factor_scm(&cfg, factor)?;
        println!("{factor:?}: identified PNS(1,0) for y=1 is {:.4}", pns_identified(&scm, 1, 0, 1)?);
    }

    let csv = eval.to_csv();
    let back = SynthDataset::from_csv(&csv, eval.start)?;
    println!("CSV header: {}", csv.lines().next().unwrap_or(""));
    println!("CSV round trip exact: {}", back == eval);
    Ok(())
}
