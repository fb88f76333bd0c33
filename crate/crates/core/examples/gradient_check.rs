//! Finite-difference verification of the analytic gradients.
//!
//! cargo run --example gradient_check

use deeprain::autodiff::{grad_check, Graph, DEFAULT_STEP, DEFAULT_TOLERANCE};
use deeprain::model::ModelKind;
use deeprain::verify::gradcheck_model;
use deeprain::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a hand-built graph: loss = (w·|x| + b − 1)²
    let mut g = Graph::new();
    let x = g.param("x", Tensor::from_vec(vec![0.0, -1.5, 2.0]))?;
    let w = g.param("w", Tensor::new(&[1, 3], vec![0.3, -0.2, 0.5])?)?;
    let b = g.param("b", Tensor::scalar(0.1))?;
    let ax = g.abs(x);
    let y = g.affine(ax, w, b)?;
    let t = g.constant(Tensor::scalar(1.0));
    g.squared_error(y, t)?;
    println!("loss {:.6}", g.forward()?);
    for (name, grad) in g.backward()? {
        println!("  d/d{name} = {:?}", grad.values());
    }
    // x[0] sits on the kink of |x|, so it is reported as unreliable
    print!("{}", grad_check(&mut g, DEFAULT_STEP, DEFAULT_TOLERANCE)?);

    for (kind, stacks) in
        [(ModelKind::Linear, 1), (ModelKind::FcLstm, 1), (ModelKind::ConvLstm, 1), (ModelKind::ConvLstm, 2)]
    {
        let report = gradcheck_model(kind, stacks, 0)?;
        println!(
            "{kind:>9} x{stacks}: {} parameters, max rel error {:.2e}, {}",
            report.params.len(),
            report.max_rel_error(),
            if report.passed() { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}
