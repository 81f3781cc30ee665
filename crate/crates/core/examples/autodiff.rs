//! Reverse-mode differentiation on a small network, checked against
//! central differences.
//!
//! `cargo run --example autodiff`

use casn::autodiff::{check_gradients, Graph};
use casn::rng::{normals, Key};
use casn::Tensor;

fn main() -> casn::Result<()> {
    let key = Key::new(1);
    let x = Tensor::new(vec![4, 3], normals(key.fold(0), 12))?;
    let w = Tensor::new(vec![3, 2], normals(key.fold(1), 6))?;
    let b = Tensor::vector(vec![0.1, -0.2])?;

    // loss = mean(softplus(elu(x w + b)))
    let build = |g: &mut Graph, p: &[casn::autodiff::Var]| {
        let xv = g.constant(x.clone());
        let h = g.affine(xv, p[0], p[1])?;
        let h = g.elu(h)?;
        let s = g.softplus(h)?;
        g.mean(s)
    };

    let mut g = Graph::new();
    let wv = g.param(w.clone());
    let bv = g.param(b.clone());
    let loss = build(&mut g, &[wv, bv])?;
    let grads = g.backward(loss)?;
    println!("loss      = {:.6}", g.value(loss).item()?);
    println!("dloss/dw  = {:?}", grads.get(wv).map(Tensor::data));
    println!("dloss/db  = {:?}", grads.get(bv).map(Tensor::data));

    let err = check_gradients(build, &[w, b], 1e-6)?;
    println!("max relative error against finite differences: {err:.2e}");
    Ok(())
}
