//! Indicator risks, their decomposition, and the two bound suites.
//!
//! `cargo run --example risk_bounds`

use casn::model::{GaussianEncoder, LinearHead, Mlp, Variance};
use casn::risk::{
    beta_divergence, check_shift_bound, estimate_risk, pac_bound_rhs, pac_suite, random_bound_instance,
    shift_bound_suite, LabeledBatch, K_TRACE,
};
use casn::rng::{normals, Key};
use casn::Tensor;

fn main() -> casn::Result<()> {
    let key = Key::new(3);
    let x = Tensor::new(vec![200, 6], normals(key.fold_str("x"), 1200))?;
    let y = (0..200).map(|i| u8::from(x.at(i, 0) > 0.0)).collect();
    let batch = LabeledBatch::new(x, y)?;
    // unit variance keeps the predicted label uncertain, so every term is nontrivial
    let enc_c = GaussianEncoder::new(Mlp::new(key.fold_str("phi"), 6, &[8], 4), Variance::Fixed(1.0))?;
    let enc_cbar = GaussianEncoder::new(Mlp::new(key.fold_str("xi"), 6, &[8], 4), Variance::Fixed(1.0))?;
    let head = LinearHead::init(key.fold_str("w"), 4);

    let r = estimate_risk(&batch, &enc_c, &enc_cbar, &head, 64, key.fold_str("mc"))?;
    println!("sf {:.4}  nc {:.4}  m {:.4}  r {:.4}", r.sf, r.nc, r.m, r.r);
    let worst = r
        .per_sample
        .iter()
        .map(|p| (p.m - (p.sf * (1.0 - p.nc) + (1.0 - p.sf) * p.nc)).abs())
        .fold(0.0, f64::max);
    println!("per-point decomposition residual {worst:.1e}; r <= m + 2 sf: {}", r.r <= r.m + 2.0 * r.sf);

    let inst = random_bound_instance(key.fold_str("instance"), true);
    let trace: Vec<String> = K_TRACE
        .iter()
        .map(|&k| Ok(format!("{:.3}", beta_divergence(&inst.t, &inst.s, k)?)))
        .collect::<casn::Result<_>>()?;
    println!("beta_k over k = 2, 4, 8, 16, 64, inf: {}", trace.join(" "));
    let b = check_shift_bound(&inst.t, &inst.s, &inst.enc_c, &inst.enc_cbar, &inst.head, 256, key)?;
    println!("shift bound: lhs {:.4} <= rhs {:.4} (eta {:.4}): {}", b.lhs, b.rhs, b.eta, b.holds);

    let rows = shift_bound_suite(key.fold_str("suite"), 200, 128)?;
    println!("shift suite: {} of {} hold", rows.iter().filter(|r| r.holds).count(), rows.len());

    println!("sample bound at kl 0.3, n 500, eps 0.1: {:.6}", pac_bound_rhs(0.3, 500, 0.1, 0.0, false)?);
    let pac = pac_suite(key.fold_str("pac"), 200, 500, 0.1, true)?;
    let gaps: Vec<f64> = pac.iter().map(|r| r.lhs).collect();
    println!(
        "sample suite: {} violations in {} trials, largest |SF - SF_hat| {:.4}, smallest rhs {:.4}",
        pac.iter().filter(|r| !r.holds).count(),
        pac.len(),
        gaps.iter().copied().fold(0.0, f64::max),
        pac.iter().map(|r| r.rhs).fold(f64::INFINITY, f64::min)
    );
    Ok(())
}
