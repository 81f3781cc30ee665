//! Gaussian encoders, the linear head, and checkpoint round trips.
//!
//! `cargo run --example encoder`

use std::collections::BTreeMap;

use casn::model::{predict, CasnModel, Checkpoint};
use casn::risk::gaussian_kl;
use casn::rng::{normals, Key};
use casn::Tensor;

fn main() -> casn::Result<()> {
    let key = Key::new(5);
    let model = CasnModel::init(key, 20, 64, true, 0.01);
    let x = Tensor::new(vec![3, 20], normals(key.fold_str("x"), 60))?;

    let (mean, var) = model.enc_c.encode(&x)?;
    println!("representation shape {:?}, variance[0] {:.4}", mean.shape(), var[0]);
    let draw = model.enc_c.sample(&x, key.fold_str("draw"))?;
    println!("one draw, first row head: {:?}", &draw.row(0)[..4]);
    println!("labels: {:?}", predict(&model.head, &model.enc_c, &x)?);

    let kl = gaussian_kl(mean.row(0), &var, &model.prior_c.mean, &model.prior_c.var)?;
    println!("KL of the first row to the prior: {kl:.4}");

    let mut meta = BTreeMap::new();
    meta.insert("note".to_owned(), "example".to_owned());
    let text = model.to_checkpoint(&meta).to_text();
    let back = CasnModel::from_checkpoint(&Checkpoint::parse(&text)?)?;
    println!("checkpoint is {} bytes; round trip exact: {}", text.len(), back == model);
    Ok(())
}
