mod common;

use common::*;
use deeprain::autodiff::{grad_check, Graph, DEFAULT_STEP, DEFAULT_TOLERANCE};
use deeprain::data::{central_mean, synth_generate, synth_label, Dims, RadarRecord, SynthConfig};
use deeprain::model::{
    convlstm_cell_step, encode_sequence, regression_head, CellState, ConvLstmCellParams, LstmGates, Model, ModelSpec,
    RegressionHeadParams,
};
use deeprain::tensor::{avg_pool2d, conv2d};
use deeprain::train::{evaluate, rmse};
use deeprain::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn odd() -> impl Strategy<Value = usize> {
    prop_oneof![Just(1usize), Just(3), Just(5), Just(7), Just(9)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_loop_nest(ci in 1usize..=8, co in 1usize..=4, kh in odd(), kw in odd(),
                              h in 1usize..=9, w in 1usize..=9, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, &[ci, h, w], 1.0);
        let k = rand_tensor(&mut r, &[co, ci, kh, kw], 1.0);
        let got = conv2d(&x, &k, None).unwrap();
        let want = brute_conv(x.values(), ci, h, w, k.values(), co, kh, kw);
        prop_assert!(max_diff(got.values(), &want) <= 1e-12);
    }

    #[test]
    fn conv_is_linear_in_input(ci in 1usize..=3, co in 1usize..=3, k in odd(), h in 1usize..=7,
                               w in 1usize..=7, a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = rand_tensor(&mut r, &[ci, h, w], 1.0);
        let y = rand_tensor(&mut r, &[ci, h, w], 1.0);
        let kern = rand_tensor(&mut r, &[co, ci, k, k], 1.0);
        let mix = Tensor::new(&[ci, h, w], x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv2d(&mix, &kern, None).unwrap();
        let (cx, cy) = (conv2d(&x, &kern, None).unwrap(), conv2d(&y, &kern, None).unwrap());
        let rhs: Vec<f64> = cx.values().iter().zip(cy.values()).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_diff(lhs.values(), &rhs) <= 1e-12);
    }

    #[test]
    fn pool_preserves_mean_of_constant(c in 1usize..=3, h in 1usize..=12, w in 1usize..=12, f in 1usize..=5, v in 0.0f64..1.0) {
        let y = avg_pool2d(&Tensor::full(&[c, h, w], v), f).unwrap();
        prop_assert_eq!(y.shape(), &[c, h.div_ceil(f), w.div_ceil(f)][..]);
        prop_assert!(y.values().iter().all(|&p| (p - v).abs() <= 1e-15));
    }
}

#[test]
fn conv_bias_is_added_per_channel() {
    let mut r = rng(3);
    let x = rand_tensor(&mut r, &[2, 4, 5], 1.0);
    let k = rand_tensor(&mut r, &[3, 2, 3, 3], 1.0);
    let b = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
    let with = conv2d(&x, &k, Some(&b)).unwrap();
    let without = conv2d(&x, &k, None).unwrap();
    for (i, (p, q)) in with.values().iter().zip(without.values()).enumerate() {
        assert!((p - q - b.values()[i / 20]).abs() <= 1e-15);
    }
}

/// Gradients of `mean((conv(x, k) − t)²)` written out by hand.
#[test]
fn conv_gradients_match_hand_derivation() {
    for seed in 0..20 {
        let mut r = rng(500 + seed);
        let (ci, co, h, w) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let kk = [1, 3, 5][r.random_range(0..3)];
        let x = rand_tensor(&mut r, &[ci, h, w], 1.0);
        let k = rand_tensor(&mut r, &[co, ci, kk, kk], 1.0);
        let t = rand_tensor(&mut r, &[co, h, w], 1.0);

        let mut g = Graph::new();
        let xn = g.param("x", x.clone()).unwrap();
        let kn = g.param("k", k.clone()).unwrap();
        let tn = g.constant(t.clone());
        let y = g.conv2d(xn, kn, None).unwrap();
        g.squared_error(y, tn).unwrap();
        g.forward().unwrap();
        let grads = g.backward().unwrap();

        let out = brute_conv(x.values(), ci, h, w, k.values(), co, kk, kk);
        let n = out.len() as f64;
        let resid: Vec<f64> = out.iter().zip(t.values()).map(|(o, t)| 2.0 * (o - t) / n).collect();
        let p = (kk / 2) as i64;
        let mut dk = vec![0.0; k.len()];
        let mut dx = vec![0.0; x.len()];
        for o in 0..co {
            for yy in 0..h {
                for xx in 0..w {
                    let g_out = resid[(o * h + yy) * w + xx];
                    for c in 0..ci {
                        for u in 0..kk {
                            for v in 0..kk {
                                let (sy, sx) = (yy as i64 + u as i64 - p, xx as i64 + v as i64 - p);
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                                    continue;
                                }
                                let xi = (c * h + sy as usize) * w + sx as usize;
                                let ki = ((o * ci + c) * kk + u) * kk + v;
                                dk[ki] += g_out * x.values()[xi];
                                dx[xi] += g_out * k.values()[ki];
                            }
                        }
                    }
                }
            }
        }
        assert!(max_diff(grads["k"].values(), &dk) <= 1e-12, "seed {seed}");
        assert!(max_diff(grads["x"].values(), &dx) <= 1e-12, "seed {seed}");
    }
}

/// Random small graphs over every differentiable primitive.
#[test]
fn grad_check_primitives() {
    for seed in 0..24 {
        let mut r = rng(900 + seed);
        let (c, h, w) = (r.random_range(1..3), r.random_range(2..5), r.random_range(2..5));
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut r, &[c, h, w], 1.0));
        let k = g.param("k", rand_tensor(&mut r, &[2, c, 3, 3], 0.5)).unwrap();
        let b = g.param("b", rand_tensor(&mut r, &[2], 0.5)).unwrap();
        let m = g.param("m", rand_tensor(&mut r, &[2, h, w], 1.0)).unwrap();
        let wt = g.param("w", rand_tensor(&mut r, &[1, 2], 1.0)).unwrap();
        let bias = g.param("bias", rand_tensor(&mut r, &[1], 1.0)).unwrap();
        let y = g.conv2d(x, k, Some(b)).unwrap();
        let s = g.sigmoid(y);
        let t = g.tanh(m);
        let prod = g.hadamard(s, t).unwrap();
        let sum = g.add(prod, m).unwrap();
        let pooled = g.avg_pool2d(sum, 2).unwrap();
        let feat = g.global_avg_pool(pooled).unwrap();
        let out = g.affine(feat, wt, bias).unwrap();
        let target = g.constant(Tensor::scalar(r.random_range(-1.0..1.0)));
        g.squared_error(out, target).unwrap();
        let report = grad_check(&mut g, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
        assert!(report.passed(), "seed {seed}\n{report}");
    }
}

/// Backward is linear in the loss: scaling the residual by α scales every
/// gradient by α.
#[test]
fn gradients_scale_with_residual() {
    let mut r = rng(77);
    let x = rand_tensor(&mut r, &[6], 1.0);
    let wv = rand_tensor(&mut r, &[1, 6], 1.0);
    let bv = Tensor::scalar(0.3);
    let grads = |target: f64| {
        let mut g = Graph::new();
        let xn = g.constant(x.clone());
        let wn = g.param("w", wv.clone()).unwrap();
        let bn = g.param("b", bv.clone()).unwrap();
        let y = g.affine(xn, wn, bn).unwrap();
        let t = g.constant(Tensor::scalar(target));
        g.squared_error(y, t).unwrap();
        g.forward().unwrap();
        g.backward().unwrap()
    };
    let pred = deeprain::tensor::affine(&x, &wv, &bv).unwrap().values()[0];
    let base = grads(pred - 1.0);
    let scaled = grads(pred - 3.5);
    for name in ["w", "b"] {
        for (a, b) in base[name].values().iter().zip(scaled[name].values()) {
            assert!((3.5 * a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn encode_equals_manual_unrolling() {
    let mut r = rng(12);
    let (c, h, w, hid) = (2, 4, 3, 3);
    let stack = vec![rand_conv_cell(&mut r, c, hid, 3, 0.5), rand_conv_cell(&mut r, hid, hid, 3, 0.5)];
    let seq: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut r, &[c, h, w], 1.0)).collect();
    let got = encode_sequence(&stack, &seq).unwrap();

    let zero = || CellState { h: Tensor::zeros(&[hid, h, w]), c: Tensor::zeros(&[hid, h, w]) };
    let (mut s0, mut s1) = (zero(), zero());
    for x in &seq {
        s0 = convlstm_cell_step(&stack[0], x, &s0).unwrap();
        s1 = convlstm_cell_step(&stack[1], &s0.h, &s1).unwrap();
    }
    assert_eq!(got, s1.h);
}

#[test]
fn predict_matches_hand_trace() {
    let d = Dims::new(3, 2, 5, 4);
    let model = Model::init(ModelSpec::conv_lstm(d).with_stacks(1).with_hidden(3).with_pool(2), 21).unwrap();
    let mut r = rng(21);
    let rec = RadarRecord::new(d, 1.0, (0..d.values()).map(|_| r.random()).collect()).unwrap();

    let p = |n: &str| model.param(n).unwrap().clone();
    let cell = ConvLstmCellParams { gates: LstmGates::try_build(|s| Ok::<_, ()>(p(&format!("layer0.{s}")))).unwrap() };
    let (ph, pw) = (3, 2);
    let (mut hs, mut cs) = (vec![0.0; 3 * ph * pw], vec![0.0; 3 * ph * pw]);
    for t in 0..d.t {
        // normalize and 2×2 average-pool by hand
        let mut x = vec![0.0; d.c * ph * pw];
        for c in 0..d.c {
            for py in 0..ph {
                for px in 0..pw {
                    let (mut s, mut n) = (0.0, 0.0);
                    for y in 2 * py..(2 * py + 2).min(d.h) {
                        for xx in 2 * px..(2 * px + 2).min(d.w) {
                            s += rec.value(t, c, y, xx) as f64 / 255.0;
                            n += 1.0;
                        }
                    }
                    x[(c * ph + py) * pw + px] = s / n;
                }
            }
        }
        let xt = Tensor::new(&[d.c, ph, pw], x).unwrap();
        let (h_new, c_new) = ref_convlstm_step(
            &cell,
            &xt,
            &Tensor::new(&[3, ph, pw], hs).unwrap(),
            &Tensor::new(&[3, ph, pw], cs).unwrap(),
        );
        hs = h_new;
        cs = c_new;
    }
    let area = (ph * pw) as f64;
    let feats: Vec<f64> = (0..3).map(|k| hs[k * ph * pw..(k + 1) * ph * pw].iter().sum::<f64>() / area).collect();
    let wv = p("head.weight");
    let want = feats.iter().zip(wv.values()).map(|(f, w)| f * w).sum::<f64>() + p("head.bias").values()[0];
    let got = model.predict(&rec).unwrap();
    assert!((got - want).abs() <= 1e-12, "{got} vs {want}");

    let via_head = regression_head(
        &RegressionHeadParams { weight: wv, bias: p("head.bias") },
        &Tensor::new(&[3, ph, pw], hs).unwrap(),
    )
    .unwrap();
    assert!((via_head - want).abs() <= 1e-12);
}

#[test]
fn evaluate_recomposes_per_sample_predictions() {
    let cfg = SynthConfig { count: 40, dims: Dims::new(3, 2, 6, 6), seed: 8, ..SynthConfig::default() };
    let data = synth_generate(&cfg).unwrap();
    let model = Model::init(ModelSpec::fc_lstm(cfg.dims).with_hidden(4), 8).unwrap();
    let sq: f64 = data.iter().map(|r| (model.predict(r).unwrap() - r.label()).powi(2)).sum();
    let want = (sq / data.len() as f64).sqrt();
    let got = evaluate(&model, &data).unwrap();
    assert!((got - want).abs() <= 1e-12);

    let mut rev = data.clone();
    rev.reverse();
    rev.swap(3, 17);
    assert_eq!(evaluate(&model, &rev).unwrap(), got);
    let preds: Vec<f64> = data.iter().map(|r| model.predict(r).unwrap()).collect();
    let truths: Vec<f64> = data.iter().map(RadarRecord::label).collect();
    assert_eq!(rmse(&preds, &truths).unwrap(), got);
}

#[test]
fn synthetic_labels_follow_closed_form() {
    let cfg = SynthConfig {
        count: 60,
        noise: 0.0,
        dims: Dims::new(7, 3, 9, 10),
        a: 0.8,
        b: 1.7,
        seed: 4,
        ..SynthConfig::default()
    };
    let data = synth_generate(&cfg).unwrap();
    assert_eq!(data, synth_generate(&cfg).unwrap());
    for r in &data {
        // channel 0, last five frames, central ⌊9/2⌋ × ⌊10/2⌋ = 4 × 5 crop
        let mut s = 0.0;
        for t in 2..7 {
            for y in 2..6 {
                for x in 2..7 {
                    s += r.value(t, 0, y, x) as f64;
                }
            }
        }
        let m = s / (5.0 * 20.0) / 255.0;
        assert!((central_mean(r.dims(), r.frames()) - m).abs() <= 1e-15);
        assert!((r.label() - (0.8 * m + 1.7 * m * m)).abs() <= 1e-12);
        assert_eq!(r.label(), synth_label(m, 0.8, 1.7).max(0.0));
    }
}
