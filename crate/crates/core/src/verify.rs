//! Built-in verification: gradient checks on a tiny model instance and the
//! named property checks behind `deeprain selftest`.

use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{grad_check, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::data::{
    decode_binary, encode_binary, format_text_record, parse_text_file, seeded_rng, split, synth_generate, Dims,
    RadarRecord, SynthConfig, PAPER_RATIOS,
};
use crate::model::{decode_checkpoint, encode_checkpoint, Model, ModelError, ModelKind, ModelSpec, NamedTensors};
use crate::optim::AdamState;
use crate::tensor::{avg_pool2d, conv2d, sigmoid, Tensor};
use crate::train::{curve_csv, train, TrainConfig};

/// Geometry of the gradient-check instance: T=3, C=2, 5×5.
pub const TINY_DIMS: Dims = Dims::new(3, 2, 5, 5);
pub const TINY_HIDDEN: usize = 2;

const TINY_STREAM: u64 = 1 << 60;

pub fn tiny_spec(kind: ModelKind, stacks: usize) -> ModelSpec {
    ModelSpec::new(kind, TINY_DIMS).with_stacks(stacks).with_hidden(TINY_HIDDEN)
}

/// A random record on [`TINY_DIMS`] with a label in `[0, 2)`.
pub fn tiny_record(seed: u64) -> RadarRecord {
    let mut rng = seeded_rng(seed, TINY_STREAM);
    let frames = (0..TINY_DIMS.values()).map(|_| rng.random::<u8>()).collect();
    RadarRecord::new(TINY_DIMS, rng.random_range(0.0..2.0), frames).expect("tiny dims are valid")
}

/// Finite-difference check of every parameter of a freshly initialized
/// tiny model on one random record.
pub fn gradcheck_model(kind: ModelKind, stacks: usize, seed: u64) -> Result<GradCheckReport, ModelError> {
    let model = Model::init(tiny_spec(kind, stacks), seed)?;
    let record = tiny_record(seed);
    let mut g = model.loss_graph(&model.prepare(&record)?, record.label())?;
    Ok(grad_check(&mut g, DEFAULT_STEP, DEFAULT_TOLERANCE)?)
}

/// FC-LSTM parameters equivalent to a ConvLSTM with `K = 1` on a 1×1 grid:
/// every `[hidden, in, 1, 1]` kernel becomes a `[hidden, in]` matrix.
pub fn conv_to_fc_params(conv: &NamedTensors) -> NamedTensors {
    conv.iter()
        .map(|(name, t)| {
            let t = match t.shape() {
                [o, i, 1, 1] => t.clone().reshape(&[*o, *i]).expect("same element count"),
                _ => t.clone(),
            };
            (name.clone(), t)
        })
        .collect()
}

/// Straightforward quadruple-loop same-padded cross-correlation.
pub fn naive_conv2d(input: &Tensor, kernels: &Tensor) -> Tensor {
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
    let (ph, pw) = (kh as isize / 2, kw as isize / 2);
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for c in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let (yy, xx) = (y as isize + dy as isize - ph, x as isize + dx as isize - pw);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += input.at(&[c, yy as usize, xx as usize]) * kernels.at(&[o, c, dy, dx]);
                        }
                    }
                }
                out.set(&[o, y, x], acc);
            }
        }
    }
    out
}

pub type CheckResult = Result<(), String>;

/// Outcome of one named selftest check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub result: CheckResult,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.result.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.result.is_err())
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.result {
                Ok(()) => writeln!(f, "PASS {}", c.name)?,
                Err(e) => writeln!(f, "FAIL {}: {e}", c.name)?,
            }
        }
        let passed = self.checks.iter().filter(|c| c.result.is_ok()).count();
        write!(f, "{passed}/{} checks passed", self.checks.len())
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> CheckResult {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("length matches")
}

fn check_conv_oracle() -> CheckResult {
    let mut rng = seeded_rng(7, TINY_STREAM);
    let x = random_tensor(&mut rng, &[3, 6, 7]);
    let k = random_tensor(&mut rng, &[4, 3, 3, 5]);
    let fast = conv2d(&x, &k, None).map_err(|e| e.to_string())?;
    let diff = fast.max_abs_diff(&naive_conv2d(&x, &k)).map_err(|e| e.to_string())?;
    ensure(diff <= 1e-12, || format!("max difference {diff:e}"))
}

fn check_conv_identity() -> CheckResult {
    let mut rng = seeded_rng(8, TINY_STREAM);
    let x = random_tensor(&mut rng, &[2, 4, 4]);
    let mut k = Tensor::zeros(&[2, 2, 3, 3]);
    k.set(&[0, 0, 1, 1], 1.0);
    k.set(&[1, 1, 1, 1], 1.0);
    let y = conv2d(&x, &k, None).map_err(|e| e.to_string())?;
    ensure(y == x, || "centered delta kernel changed the input".into())
}

fn check_pool() -> CheckResult {
    let x = Tensor::ones(&[1, 101, 101]);
    let y = avg_pool2d(&x, 4).map_err(|e| e.to_string())?;
    ensure(y.shape() == [1, 26, 26], || format!("shape {:?}", y.shape()))?;
    ensure(y.values().iter().all(|&v| v == 1.0), || "edge windows not averaged over valid cells".into())
}

fn check_sigmoid() -> CheckResult {
    let vals = [sigmoid(-1000.0), sigmoid(0.0), sigmoid(1000.0)];
    ensure(vals == [0.0, 0.5, 1.0], || format!("got {vals:?}"))
}

fn check_gradients(kind: ModelKind, stacks: usize) -> CheckResult {
    let report = gradcheck_model(kind, stacks, 1).map_err(|e| e.to_string())?;
    ensure(report.passed(), || format!("max relative error {:.3e}", report.max_rel_error()))
}

fn check_degenerate() -> CheckResult {
    let d = Dims::new(4, 3, 1, 1);
    let conv = Model::init(ModelSpec::conv_lstm(d).with_kernel(1).with_hidden(3), 5).map_err(|e| e.to_string())?;
    let fc = Model::new(ModelSpec::fc_lstm(d).with_stacks(2).with_hidden(3), conv_to_fc_params(conv.params()))
        .map_err(|e| e.to_string())?;
    let mut rng = seeded_rng(5, TINY_STREAM);
    let r = RadarRecord::new(d, 0.0, (0..d.values()).map(|_| rng.random()).collect()).expect("valid record");
    let (a, b) = (conv.predict(&r), fc.predict(&r));
    let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
    ensure((a - b).abs() <= 1e-12, || format!("conv {a} vs fc {b}"))
}

fn check_adam() -> CheckResult {
    let mut s = AdamState::with_lr(1e-3);
    let mut p: NamedTensors = [("w".to_string(), Tensor::scalar(0.0))].into_iter().collect();
    let g: NamedTensors = [("w".to_string(), Tensor::scalar(-3.7))].into_iter().collect();
    s.step(&mut p, &g).map_err(|e| e.to_string())?;
    let d = p["w"].values()[0];
    ensure(((d - 1e-3) / 1e-3).abs() < 1e-6, || format!("first step {d}"))
}

fn check_split() -> CheckResult {
    let s = split(10_000, PAPER_RATIOS, 0).map_err(|e| e.to_string())?;
    let sizes = (s.train.len(), s.validation.len(), s.test.len());
    ensure(sizes == (9000, 500, 500), || format!("sizes {sizes:?}"))
}

fn small_synth() -> Vec<RadarRecord> {
    let cfg = SynthConfig { count: 24, dims: TINY_DIMS, ..SynthConfig::default() };
    synth_generate(&cfg).expect("valid config")
}

fn check_text_binary() -> CheckResult {
    let records = small_synth();
    let text: String = records.iter().map(|r| format_text_record(r) + "\n").collect();
    let parsed = parse_text_file(&text, TINY_DIMS).map_err(|e| e.to_string())?;
    let bytes = encode_binary(&parsed).map_err(|e| e.to_string())?;
    let (dims, decoded) = decode_binary(&bytes).map_err(|e| e.to_string())?;
    ensure(dims == TINY_DIMS && decoded == parsed && parsed == records, || "text and binary paths disagree".into())
}

fn check_binary_fixture(path: &Path) -> CheckResult {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (_, records) = decode_binary(&bytes).map_err(|e| e.to_string())?;
    let again = encode_binary(&records).map_err(|e| e.to_string())?;
    ensure(again == bytes, || "re-encoding is not bit-exact".into())
}

fn check_checkpoint() -> CheckResult {
    let m = Model::init(tiny_spec(ModelKind::ConvLstm, 2), 3).map_err(|e| e.to_string())?;
    let bytes = encode_checkpoint(&m);
    let back = decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
    ensure(back == m && encode_checkpoint(&back) == bytes, || "checkpoint round trip differs".into())?;
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    ensure(decode_checkpoint(&bad).is_err(), || "corrupted magic accepted".into())
}

fn check_determinism() -> CheckResult {
    let data = small_synth();
    let s = split(data.len(), [0.5, 0.25, 0.25], 9).map_err(|e| e.to_string())?;
    let run = |threads| {
        let mut cfg = TrainConfig::new(tiny_spec(ModelKind::ConvLstm, 1), 9);
        cfg.batch_size = 4;
        cfg.max_epochs = 2;
        cfg.lr = 0.01;
        cfg.threads = Some(threads);
        train(&cfg, &data, &s).map(|o| (curve_csv(&o.stats), encode_checkpoint(&o.best)))
    };
    let a = run(1).map_err(|e| e.to_string())?;
    let b = run(2).map_err(|e| e.to_string())?;
    ensure(a == b, || "1 and 2 threads produced different results".into())
}

/// Runs every check. With `fixture`, a `DRN1` file is additionally
/// decoded and re-encoded bit-exactly.
pub fn selftest(fixture: Option<&Path>) -> SelftestReport {
    let mut checks: Vec<(&'static str, Box<dyn Fn() -> CheckResult + '_>)> = vec![
        ("conv2d_brute_force_oracle", Box::new(check_conv_oracle)),
        ("conv2d_delta_kernel_identity", Box::new(check_conv_identity)),
        ("avg_pool_valid_cells", Box::new(check_pool)),
        ("sigmoid_saturation", Box::new(check_sigmoid)),
        ("gradcheck_linear", Box::new(|| check_gradients(ModelKind::Linear, 1))),
        ("gradcheck_fc_lstm", Box::new(|| check_gradients(ModelKind::FcLstm, 1))),
        ("gradcheck_conv_lstm_1", Box::new(|| check_gradients(ModelKind::ConvLstm, 1))),
        ("gradcheck_conv_lstm_2", Box::new(|| check_gradients(ModelKind::ConvLstm, 2))),
        ("conv_fc_degenerate_equivalence", Box::new(check_degenerate)),
        ("adam_first_step", Box::new(check_adam)),
        ("split_sizes", Box::new(check_split)),
        ("text_binary_round_trip", Box::new(check_text_binary)),
        ("checkpoint_round_trip", Box::new(check_checkpoint)),
        ("training_determinism", Box::new(check_determinism)),
    ];
    if let Some(p) = fixture {
        checks.push(("binary_fixture", Box::new(move || check_binary_fixture(p))));
    }
    SelftestReport { checks: checks.into_iter().map(|(name, f)| Check { name, result: f() }).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_model_passes_gradcheck() {
        for (kind, stacks) in [
            (ModelKind::Linear, 1),
            (ModelKind::FcLstm, 1),
            (ModelKind::FcLstm, 2),
            (ModelKind::ConvLstm, 1),
            (ModelKind::ConvLstm, 2),
        ] {
            for seed in [0, 42] {
                let r = gradcheck_model(kind, stacks, seed).unwrap();
                assert!(r.passed(), "{kind} x{stacks} seed {seed}:\n{r}");
            }
        }
    }

    #[test]
    fn selftest_passes_and_names_fixture_failures() {
        let r = selftest(None);
        assert!(r.passed(), "{r}");
        assert!(r.checks.len() >= 10);

        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.drn");
        std::fs::write(&good, encode_binary(&small_synth()).unwrap()).unwrap();
        assert!(selftest(Some(&good)).passed());

        let bad = dir.path().join("bad.drn");
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[1] = b'X';
        std::fs::write(&bad, bytes).unwrap();
        let r = selftest(Some(&bad));
        let failed: Vec<_> = r.failures().map(|c| c.name).collect();
        assert_eq!(failed, ["binary_fixture"]);
    }
}
