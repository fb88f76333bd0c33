//! Independent reference implementations shared by the integration tests.
//! Everything here works on raw slices with explicit index arithmetic and
//! deliberately avoids the crate's kernels.

#![allow(dead_code)]

use deeprain::model::{CellState, ConvLstmCellParams, Gate, LstmGates};
use deeprain::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Zero-padded "same" cross-correlation written as a plain loop nest.
/// `x` is `[ci, h, w]`, `k` is `[co, ci, kh, kw]`, output `[co, h, w]`.
pub fn brute_conv(x: &[f64], ci: usize, h: usize, w: usize, k: &[f64], co: usize, kh: usize, kw: usize) -> Vec<f64> {
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for c in 0..ci {
                    for u in 0..kh {
                        for v in 0..kw {
                            let sy = y as i64 + u as i64 - (kh / 2) as i64;
                            let sx = xx as i64 + v as i64 - (kw / 2) as i64;
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                acc += x[(c * h + sy as usize) * w + sx as usize] * k[((o * ci + c) * kh + u) * kw + v];
                            }
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One ConvLSTM step transcribed gate by gate:
///
/// i = σ(Wxi*x + Whi*h + bi), f = σ(…), o = σ(…), g = tanh(…)
/// C' = f∘C + i∘g, H' = o∘tanh(C')
pub fn ref_convlstm_step(p: &ConvLstmCellParams, x: &Tensor, h: &Tensor, c: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (ci, hh, ww) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hid = h.shape()[0];
    let k = p.gates.input.w_x.shape()[2];
    let pre = |g: &Gate| -> Vec<f64> {
        let a = brute_conv(x.values(), ci, hh, ww, g.w_x.values(), hid, k, k);
        let b = brute_conv(h.values(), hid, hh, ww, g.w_h.values(), hid, k, k);
        (0..hid * hh * ww).map(|j| a[j] + b[j] + g.bias.values()[j / (hh * ww)]).collect()
    };
    let i: Vec<f64> = pre(&p.gates.input).into_iter().map(sig).collect();
    let f: Vec<f64> = pre(&p.gates.forget).into_iter().map(sig).collect();
    let o: Vec<f64> = pre(&p.gates.output).into_iter().map(sig).collect();
    let g: Vec<f64> = pre(&p.gates.candidate).into_iter().map(f64::tanh).collect();
    let c_new: Vec<f64> = (0..c.len()).map(|j| f[j] * c.values()[j] + i[j] * g[j]).collect();
    let h_new: Vec<f64> = (0..c.len()).map(|j| o[j] * c_new[j].tanh()).collect();
    (h_new, c_new)
}

pub fn rand_conv_cell(rng: &mut impl Rng, cin: usize, hidden: usize, k: usize, scale: f64) -> ConvLstmCellParams {
    let mut gate = || Gate {
        w_x: rand_tensor(rng, &[hidden, cin, k, k], scale),
        w_h: rand_tensor(rng, &[hidden, hidden, k, k], scale),
        bias: rand_tensor(rng, &[hidden], scale),
    };
    ConvLstmCellParams { gates: LstmGates { input: gate(), forget: gate(), output: gate(), candidate: gate() } }
}

pub fn rand_state(rng: &mut impl Rng, shape: &[usize]) -> CellState {
    CellState { h: rand_tensor(rng, shape, 1.0), c: rand_tensor(rng, shape, 2.0) }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
