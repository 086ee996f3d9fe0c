//! Reverse-mode gradients on a small expression, then the per-operator
//! finite-difference report.
//!
//! cargo run --release --example autodiff_gradcheck

use vidsal::gradcheck::op_gradient_errors;
use vidsal::{Graph, Tensor};

fn main() -> anyhow::Result<()> {
    // f(x) = sum(sigmoid(x) * x)
    let mut g = Graph::new();
    let x = g.variable(Tensor::new([4], vec![-2.0, -0.5, 0.5, 2.0])?)?;
    let s = g.sigmoid(x)?;
    let p = g.mul(s, x)?;
    let f = g.sum(p)?;
    let grads = g.backward(f)?;
    println!("f = {:.6}", g.value(f).item());
    for (xi, gi) in g.value(x).data().iter().zip(grads.get(x).unwrap().data()) {
        let sig = 1.0 / (1.0 + (-xi).exp());
        println!("x = {xi:+.2}  df/dx = {gi:+.6}  closed form {:+.6}", sig + xi * sig * (1.0 - sig));
    }

    println!("\nrelative error, worst over 20 seeds, eps 1e-3:");
    for (op, err) in op_gradient_errors(20) {
        println!("  {op:<22} {err:.2e}");
    }
    Ok(())
}
