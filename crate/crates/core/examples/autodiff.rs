//! Builds a small graph, backpropagates, and compares the gradient with
//! central finite differences evaluated in f64.

use evf::autodiff::{finite_difference_gradient, Graph};
use evf::Tensor;

fn main() -> evf::Result<()> {
    let mut g = Graph::new();
    let x = g.param("x", Tensor::matrix(2, 3, vec![0.5, -1.0, 0.3, 1.2, 0.1, -0.7])?);
    let w = g.param("w", Tensor::matrix(3, 2, vec![0.2, -0.4, 0.9, 0.1, -0.3, 0.6])?);
    let h = g.matmul(x, w)?;
    let t = g.tanh(h)?;
    let s = g.square(t)?;
    let loss = g.mean(s)?;
    let grads = g.backward(loss)?;
    for name in ["x", "w"] {
        let (_, id) = g.param_ids().find(|(n, _)| *n == name).expect("param exists");
        let analytic = grads.param(name).expect("gradient exists");
        let numeric = finite_difference_gradient(&g, loss, id, 1e-4)?;
        println!("d loss / d {name}");
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            println!("  backprop {a:+.6}  finite diff {n:+.6}");
        }
    }
    Ok(())
}
