//! Serialising a parsed experiment file is a normal form.

use casn::config::{ExperimentSpec, Grid};
use casn::synth::Mixer;
use casn::train::Variant;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = ExperimentSpec> {
    (
        (any::<u64>(), 1usize..9, 0.0f64..1.0, 1usize..5000, 0.0f64..1e3, 1e-6f64..1.0),
        (any::<bool>(), any::<bool>(), proptest::option::of(proptest::sample::subsequence(Variant::ALL.to_vec(), 0..4))),
        proptest::option::of(proptest::collection::btree_set(0u64..100, 0..5)),
        proptest::option::of(proptest::collection::btree_set(0u32..1000, 1..4)),
        proptest::option::of(0.0f64..1.0),
        "[a-z][a-z0-9_]{0,12}",
    )
        .prop_map(|((seed, d, s, n, delta, lr), (kl, mixer, variants), seeds, deltas, sn_min, name)| {
            let mut spec = ExperimentSpec {
                name,
                seed,
                ..ExperimentSpec::default()
            };
            spec.synth.d = d;
            spec.synth.s = s;
            spec.synth.n_train = n;
            spec.synth.mixer = if mixer { Mixer::K1K2 } else { Mixer::AsWritten };
            spec.train.delta = delta;
            spec.train.lr_min = lr;
            spec.train.adversary_kl = kl;
            spec.grid = Grid {
                variant: variants,
                delta: deltas.map(|v| v.into_iter().map(|x| f64::from(x) / 7.0).collect()),
                seeds: seeds.map(|v| v.into_iter().collect()),
                ..Grid::default()
            };
            spec.checks.dcor_sn_min = sn_min;
            spec
        })
}

/// Scatters comments, blank lines and spacing through a canonical file.
fn mess_up(text: &str) -> String {
    text.lines()
        .enumerate()
        .map(|(i, l)| match l.split_once(" = ") {
            Some((k, v)) if i % 2 == 0 => format!("  {k}={v}   # note {i}\n\n"),
            _ => format!("{l}\n"),
        })
        .collect()
}

proptest! {
    #[test]
    fn parse_inverts_serialize(spec in spec_strategy()) {
        let text = spec.serialize();
        prop_assert_eq!(ExperimentSpec::parse(&text).unwrap(), spec);
    }

    #[test]
    fn serialize_normalises_formatting(spec in spec_strategy()) {
        let canon = spec.serialize();
        let messy = mess_up(&canon);
        prop_assert_eq!(ExperimentSpec::parse(&messy).unwrap().serialize(), canon);
    }
}

#[test]
fn shipped_configs_parse() {
    for name in ["repro_s01.cfg", "ablation_s07.cfg", "delta_sweep.cfg"] {
        let path = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
        let spec = casn::config::parse_config(&path).unwrap();
        assert!(!spec.points().is_empty(), "{name}");
    }
}
