use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, ModelKind, ModelSpec, NamedTensors};
use crate::tensor::Tensor;

/// Initial value of every forget-gate bias element.
pub const FORGET_BIAS: f64 = 1.0;

/// Glorot/Xavier uniform limit `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Fans of a weight tensor: `[out, in]` or `[out, in, K, K]` with the
/// receptive field folded into both.
fn fans(spec: &ModelSpec, shape: &[usize]) -> (usize, usize) {
    match (spec.kind, shape) {
        (ModelKind::ConvLstm, [o, i, kh, kw]) => (i * kh * kw, o * kh * kw),
        (_, [o, i]) => (*i, *o),
        _ => unreachable!("weights are rank 2 or 4"),
    }
}

/// Weights uniform in `(−a, a)` with the Glorot limit, biases zero except
/// forget-gate biases, which start at [`FORGET_BIAS`]. Parameters are drawn
/// in [`ModelSpec::param_shapes`] order from a generator seeded by `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<NamedTensors, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = NamedTensors::new();
    for (name, shape) in spec.param_shapes() {
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        let t = if leaf.starts_with("b_") || leaf == "bias" {
            let v = if leaf == "b_f" { FORGET_BIAS } else { 0.0 };
            Tensor::full(&shape, v)
        } else {
            let (fi, fo) = fans(spec, &shape);
            let a = glorot_limit(fi, fo);
            let n = shape.iter().product();
            let values = (0..n).map(|_| rng.random_range(-a..a)).collect();
            Tensor::new(&shape, values)?
        };
        out.insert(name, t);
    }
    Ok(out)
}
