//! Training on the synthetic benchmark: risk identities after training,
//! progress from the initial parameters, and the parameter partition.

use casn::autodiff::Graph;
use casn::risk::estimate_risk_with_priors;
use casn::rng::Key;
use casn::synth::{generate, SynthConfig};
use casn::train::{
    casn_objective, initial_model, report_key, train, Player, StepInputs, TrainConfig, TrainData, Variant, REPORT_MC_SAMPLES,
    REPORT_ROWS,
};

fn data(seed: u64) -> TrainData {
    let sc = SynthConfig {
        n_train: 2000,
        n_eval: 0,
        seed,
        ..SynthConfig::default()
    };
    let (tr, _) = generate(&sc, Key::new(seed)).unwrap();
    TrainData::single_domain(tr.batch().unwrap())
}

fn cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        total_steps: 2000,
        lr_min: 0.1,
        lr_max: 0.005,
        ..TrainConfig::default()
    }
}

#[test]
fn full_method_reduces_sufficiency_risk_over_five_seeds() {
    let mut finals = Vec::new();
    let mut before = Vec::new();
    for seed in 0..5 {
        let d = data(seed);
        let c = cfg(seed);
        let init = initial_model(d.batch.x.cols(), &c);
        let rows = d.batch.len().min(REPORT_ROWS);
        assert_eq!(rows, REPORT_ROWS);
        let head_rows: Vec<usize> = (0..rows).collect();
        let sub = casn::risk::LabeledBatch::with_ids(
            d.batch.x.select_rows(&head_rows),
            d.batch.y[..rows].to_vec(),
            d.batch.ids[..rows].to_vec(),
        )
        .unwrap();
        let r0 = estimate_risk_with_priors(
            &sub,
            &init.enc_c,
            &init.enc_cbar,
            &init.head,
            (&init.prior_c, &init.prior_cbar),
            REPORT_MC_SAMPLES,
            report_key(&c),
        )
        .unwrap();
        let (_, trace) = train(&d, &c).unwrap();
        let r = trace.final_report.unwrap();
        assert!(r.r <= r.m + 2.0 * r.sf + 1e-12, "seed {seed}");
        before.push(r0.sf);
        finals.push(r);
    }
    finals.sort_by(|a, b| a.r.total_cmp(&b.r));
    let med = &finals[2];
    assert!(med.r <= med.m + 2.0 * med.sf + 1e-12);
    let mut sf_after: Vec<f64> = finals.iter().map(|r| r.sf).collect();
    sf_after.sort_by(f64::total_cmp);
    before.sort_by(f64::total_cmp);
    assert!(sf_after[2] < before[2], "median sf {} not below initial {}", sf_after[2], before[2]);
}

#[test]
fn players_only_touch_their_own_parameters() {
    let d = data(9);
    let c = TrainConfig {
        rep_dim: 8,
        ..cfg(9)
    };
    let model = initial_model(d.batch.x.cols(), &c);
    let inputs = StepInputs::sample(&d, &c, Key::new(1)).unwrap();
    for variant in Variant::ALL {
        let c = TrainConfig { variant, ..c.clone() };
        let mut g = Graph::new();
        let (nodes, bound) = casn_objective(&mut g, &inputs, &model, &c, 0, Player::Min).unwrap();
        let grads = g.backward(nodes.min_loss).unwrap();
        let mut own = bound.phi.vars();
        own.extend(bound.head.vars());
        assert!(grads.vars().all(|v| own.contains(&v)), "{variant}");
        if nodes.max_loss.is_some() {
            let mut g = Graph::new();
            let (nodes, bound) = casn_objective(&mut g, &inputs, &model, &c, 0, Player::Max).unwrap();
            let grads = g.backward(nodes.max_loss.unwrap()).unwrap();
            let xi = bound.xi.unwrap().vars();
            assert!(!xi.is_empty());
            assert!(grads.vars().all(|v| xi.contains(&v)), "{variant}");
        } else {
            assert_eq!(variant, Variant::CasnMinusM);
            assert!(bound.xi.is_none());
        }
    }
}
