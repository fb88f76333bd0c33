//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use deeprain::autodiff::{ParamStatus, DEFAULT_STEP, DEFAULT_TOLERANCE};
use deeprain::cli::Cli;
use deeprain::data::{
    decode_binary, encode_binary, minibatches, parse_text_file, read_binary, read_text, split, synth_generate,
    write_binary, DatasetSplit, Dims, RadarRecord, SynthConfig, PAPER_RATIOS,
};
use deeprain::model::{
    convlstm_cell_step, decode_checkpoint, encode_checkpoint, fclstm_cell_step, read_checkpoint, write_checkpoint,
    CellState, FcLstmCellParams, Gate, LstmGates, Model, ModelKind, ModelSpec, NamedTensors,
};
use deeprain::optim::{AdamConfig, AdamState};
use deeprain::train::{evaluate, train, TrainConfig};
use deeprain::verify::{gradcheck_model, TINY_DIMS, TINY_HIDDEN};
use deeprain::Tensor;
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn subset(records: &[RadarRecord], idx: &[usize]) -> Vec<RadarRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    check(DEFAULT_STEP == 1e-3 && DEFAULT_TOLERANCE == 1e-4, "finite-difference defaults changed")?;
    check(TINY_DIMS == Dims::new(3, 2, 5, 5) && TINY_HIDDEN == 2, "tiny instance geometry changed")?;
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for (kind, stacks) in
        [(ModelKind::Linear, 1), (ModelKind::FcLstm, 1), (ModelKind::ConvLstm, 1), (ModelKind::ConvLstm, 2)]
    {
        let report = gradcheck_model(kind, stacks, 42).map_err(e)?;
        for p in &report.params {
            check(
                p.status == ParamStatus::Pass,
                format!("{kind} x{stacks}: {} is {} (rel error {:.3e})", p.name, p.status, p.max_rel_error),
            )?;
        }
        worst = worst.max(report.max_rel_error());
        params += report.params.len();
    }
    let secs = started.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{params} parameters, max rel error {worst:.2e}, {secs:.1}s"))
}

fn cell_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = rng(1000 + seed);
        let (cin, hidden) = (r.random_range(1..4), r.random_range(1..4));
        let (h, w) = (r.random_range(1..7), r.random_range(1..7));
        let k = [1, 3, 5][r.random_range(0..3)];
        let p = rand_conv_cell(&mut r, cin, hidden, k, 0.6);
        let x = rand_tensor(&mut r, &[cin, h, w], 1.0);
        let s = rand_state(&mut r, &[hidden, h, w]);
        let got = convlstm_cell_step(&p, &x, &s).map_err(e)?;
        let (rh, rc) = ref_convlstm_step(&p, &x, &s.h, &s.c);
        let d = max_diff(got.h.values(), &rh).max(max_diff(got.c.values(), &rc));
        check(d <= 1e-12, format!("instance {seed}: difference {d:e}"))?;
        worst = worst.max(d);
    }
    Ok(format!("20 instances, max difference {worst:.1e}"))
}

fn as_matrix(t: &Tensor) -> Tensor {
    let s = t.shape();
    t.clone().reshape(&[s[0], s[1]]).unwrap()
}

fn degenerate_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = rng(2000 + seed);
        let (t, c, hidden, stacks) =
            (r.random_range(1..6), r.random_range(1..5), r.random_range(1..5), r.random_range(1..3));
        let d = Dims::new(t, c, 1, 1);
        let conv = Model::init(ModelSpec::conv_lstm(d).with_kernel(1).with_hidden(hidden).with_stacks(stacks), seed)
            .map_err(e)?;
        // [hidden, in, 1, 1] kernels are [hidden, in] matrices
        let fc_params: NamedTensors = conv
            .params()
            .iter()
            .map(|(n, v)| (n.clone(), if v.rank() == 4 { as_matrix(v) } else { v.clone() }))
            .collect();
        let fc = Model::new(ModelSpec::fc_lstm(d).with_hidden(hidden).with_stacks(stacks), fc_params).map_err(e)?;
        let rec = RadarRecord::new(d, 0.0, (0..d.values()).map(|_| r.random()).collect()).map_err(e)?;
        let diff = (conv.predict(&rec).map_err(e)? - fc.predict(&rec).map_err(e)?).abs();
        worst = worst.max(diff);

        let cell = rand_conv_cell(&mut r, c, hidden, 1, 0.8);
        let fc_cell = FcLstmCellParams {
            gates: LstmGates {
                input: to_fc(&cell.gates.input),
                forget: to_fc(&cell.gates.forget),
                output: to_fc(&cell.gates.output),
                candidate: to_fc(&cell.gates.candidate),
            },
        };
        let x = rand_tensor(&mut r, &[c, 1, 1], 1.0);
        let s = rand_state(&mut r, &[hidden, 1, 1]);
        let a = convlstm_cell_step(&cell, &x, &s).map_err(e)?;
        let flat = |t: &Tensor| t.clone().flatten();
        let b = fclstm_cell_step(&fc_cell, &flat(&x), &CellState { h: flat(&s.h), c: flat(&s.c) }).map_err(e)?;
        worst = worst.max(max_diff(a.h.values(), b.h.values())).max(max_diff(a.c.values(), b.c.values()));
        check(worst <= 1e-12, format!("seed {seed}: difference {worst:e}"))?;
    }
    Ok(format!("20 seeds, max difference {worst:.1e}"))
}

fn to_fc(g: &Gate) -> Gate {
    Gate { w_x: as_matrix(&g.w_x), w_h: as_matrix(&g.w_h), bias: g.bias.clone() }
}

fn benchmark_config() -> Result<SynthConfig, String> {
    let cfg = SynthConfig::load(manifest_dir().join("../../configs/synthetic_benchmark.cfg")).map_err(e)?;
    check(
        cfg.count == 1000 && cfg.dims == Dims::new(5, 2, 8, 8) && cfg.seed == 42,
        format!("benchmark config is not 1000 x (5,2,8,8) seed 42: {cfg:?}"),
    )?;
    Ok(cfg)
}

fn benchmark_data(cfg: &SynthConfig) -> Result<(Vec<RadarRecord>, DatasetSplit), String> {
    let data = synth_generate(cfg).map_err(e)?;
    let s = split(data.len(), PAPER_RATIOS, cfg.seed).map_err(e)?;
    Ok((data, s))
}

fn table_ordering() -> Outcome {
    let started = Instant::now();
    let cfg = benchmark_config()?;
    let (data, s) = benchmark_data(&cfg)?;
    let test = subset(&data, &s.test);
    let mut rmse = Vec::new();
    for spec in
        [ModelSpec::linear(cfg.dims), ModelSpec::fc_lstm(cfg.dims), ModelSpec::conv_lstm(cfg.dims).with_stacks(2)]
    {
        let tc = TrainConfig::new(spec, cfg.seed);
        check(tc.max_epochs <= 50, "more than 50 epochs")?;
        let out = train(&tc, &data, &s).map_err(e)?;
        rmse.push(evaluate(&out.best, &test).map_err(e)?);
    }
    let (lin, fc, conv) = (rmse[0], rmse[1], rmse[2]);
    let secs = started.elapsed().as_secs_f64();
    let summary = format!("test RMSE conv-lstm {conv:.4}, fc-lstm {fc:.4}, linear {lin:.4} ({secs:.0}s)");
    check(conv < lin, format!("conv-lstm not below linear: {summary}"))?;
    check(conv <= fc, format!("conv-lstm above fc-lstm: {summary}"))?;
    check(secs < 1800.0, format!("too slow: {summary}"))?;
    Ok(summary)
}

fn epoch5_val(cfg: &SynthConfig, spec: ModelSpec) -> Result<f64, String> {
    let (data, s) = benchmark_data(cfg)?;
    let mut tc = TrainConfig::new(spec, cfg.seed);
    tc.max_epochs = 5;
    tc.patience = 0;
    let out = train(&tc, &data, &s).map_err(e)?;
    Ok(out.stats[4].val_rmse)
}

fn convergence_speed() -> Outcome {
    let base = benchmark_config()?;
    let mut lines = Vec::new();
    let mut extra_wins = 0;
    for seed in [42u64, 1, 2, 3, 4, 5] {
        let cfg = SynthConfig { seed, ..base.clone() };
        let fc = epoch5_val(&cfg, ModelSpec::fc_lstm(cfg.dims))?;
        let conv = epoch5_val(&cfg, ModelSpec::conv_lstm(cfg.dims))?;
        let win = conv < fc;
        lines.push(format!("{seed}:{}", if win { "win" } else { "loss" }));
        if seed == 42 {
            check(win, format!("seed 42: conv {conv:.4} vs fc {fc:.4}"))?;
        } else if win {
            extra_wins += 1;
        }
    }
    let summary = format!("{extra_wins}/5 extra seeds [{}]", lines.join(" "));
    check(extra_wins >= 4, summary.clone())?;
    Ok(summary)
}

fn protocol_fidelity() -> Outcome {
    let s = split(10_000, PAPER_RATIOS, 42).map_err(e)?;
    let sizes = (s.train.len(), s.validation.len(), s.test.len());
    check(sizes == (9000, 500, 500), format!("split sizes {sizes:?}"))?;
    let batches = minibatches(&s.train, 30, 1, 42);
    check(
        batches.len() == 300 && batches.iter().all(|b| b.len() == 30),
        "9000 training indices did not give 300 batches of 30",
    )?;
    let tail = minibatches(&(0..31).collect::<Vec<_>>(), 30, 1, 0);
    check(tail.iter().map(Vec::len).collect::<Vec<_>>() == [30, 1], "final partial batch not kept")?;
    let d = TrainConfig::new(ModelSpec::conv_lstm(Dims::CANONICAL), 0);
    check(
        d.lr == 0.001 && d.batch_size == 30 && d.max_epochs == 50,
        format!("library defaults lr {} batch {} epochs {}", d.lr, d.batch_size, d.max_epochs),
    )?;
    use clap::Parser;
    let cli = Cli::try_parse_from(["deeprain", "train", "--data", "x"]).map_err(e)?;
    let deeprain::cli::Command::Train(args) = cli.command else {
        return Err("train subcommand did not parse".into());
    };
    let c = args.config(Dims::CANONICAL, None);
    check(
        c.lr == 0.001 && c.batch_size == 30 && c.max_epochs == 50,
        "command-line defaults differ from the library defaults",
    )?;
    Ok("9000/500/500, batches of 30, lr 0.001, 50 epochs".into())
}

fn data_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let fixture = manifest_dir().join("tests/fixtures/tiny.txt");
    let dims = Dims::new(2, 1, 3, 3);
    let direct = read_text(&fixture, dims).map_err(e)?;
    check(direct.len() == 3, format!("fixture holds {} records", direct.len()))?;
    let bin = dir.path().join("tiny.drn");
    let status = Command::new(env!("CARGO_BIN_EXE_deeprain"))
        .args(["convert", "--dims", "2,1,3,3", "--in"])
        .arg(&fixture)
        .arg("--out")
        .arg(&bin)
        .output()
        .map_err(e)?;
    check(status.status.success(), "convert failed")?;
    let (d, via_binary) = read_binary(&bin).map_err(e)?;
    check(d == dims && via_binary == direct, "text->binary->memory differs from text->memory")?;

    let bytes = std::fs::read(&bin).map_err(e)?;
    let again = dir.path().join("again.drn");
    write_binary(&via_binary, &again).map_err(e)?;
    check(std::fs::read(&again).map_err(e)? == bytes, "DRN1 rewrite not bit-exact")?;
    let golden = std::fs::read(manifest_dir().join("tests/fixtures/tiny.drn")).map_err(e)?;
    check(golden == bytes, "DRN1 bytes differ from the checked-in fixture")?;

    let synth = synth_generate(&SynthConfig { count: 7, ..SynthConfig::default() }).map_err(e)?;
    let text: String = synth.iter().map(|r| deeprain::data::format_text_record(r) + "\n").collect();
    let parsed = parse_text_file(&text, synth[0].dims()).map_err(e)?;
    let (_, decoded) = decode_binary(&encode_binary(&parsed).map_err(e)?).map_err(e)?;
    check(decoded == synth && parsed == synth, "generated records do not survive text and binary")?;

    let model = Model::init(ModelSpec::conv_lstm(dims).with_hidden(3), 7).map_err(e)?;
    let ckpt = dir.path().join("m.drnp");
    write_checkpoint(&model, &ckpt).map_err(e)?;
    let ck_bytes = std::fs::read(&ckpt).map_err(e)?;
    let loaded = read_checkpoint(&ckpt).map_err(e)?;
    check(loaded == model && encode_checkpoint(&loaded) == ck_bytes, "DRNP round trip not bit-exact")?;

    let mut bad = bytes.clone();
    bad[0] = b'X';
    check(decode_binary(&bad).is_err(), "corrupted DRN1 magic accepted")?;
    let mut bad = ck_bytes.clone();
    bad[3] = b'Q';
    check(decode_checkpoint(&bad).is_err(), "corrupted DRNP magic accepted")?;
    check(decode_binary(&[]).is_err(), "empty file accepted")?;
    Ok("text/binary/checkpoint round trips exact, bad magic rejected".into())
}

fn run_train(dir: &Path, data: &Path, tag: &str, threads: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let curve = dir.join(format!("{tag}.csv"));
    let ckpt = dir.join(format!("{tag}.drnp"));
    let out = Command::new(env!("CARGO_BIN_EXE_deeprain"))
        .args(["train", "--model", "conv-lstm", "--epochs", "3", "--patience", "0", "--seed", "11"])
        .args(["--hidden", "4", "--threads", threads, "--data"])
        .arg(data)
        .arg("--curve")
        .arg(&curve)
        .arg("--ckpt")
        .arg(&ckpt)
        .output()
        .map_err(e)?;
    check(out.status.success(), format!("train failed: {}", String::from_utf8_lossy(&out.stderr)))?;
    Ok((std::fs::read(curve).map_err(e)?, std::fs::read(ckpt).map_err(e)?))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let data = dir.path().join("synth.drn");
    let recs = synth_generate(&SynthConfig { count: 150, seed: 11, ..SynthConfig::default() }).map_err(e)?;
    write_binary(&recs, &data).map_err(e)?;
    let a = run_train(dir.path(), &data, "a", "1")?;
    let b = run_train(dir.path(), &data, "b", "1")?;
    let c = run_train(dir.path(), &data, "c", "4")?;
    check(a == b, "two single-thread runs differ")?;
    check(a == c, "1 and 4 threads differ")?;
    Ok(format!("curve {} bytes, checkpoint {} bytes identical across 3 runs", a.0.len(), a.1.len()))
}

fn adam_behavior() -> Outcome {
    let lr = 1e-3;
    let eps = AdamConfig::default().eps;
    let one = |v: f64| -> NamedTensors { [("w".to_string(), Tensor::scalar(v))].into_iter().collect() };
    let mut checked = 0;
    for exp in -12..=8 {
        for sign in [-1.0, 1.0] {
            let g = sign * 10f64.powi(exp);
            let mut s = AdamState::with_lr(lr);
            let mut p = one(0.0);
            s.step(&mut p, &one(g)).map_err(e)?;
            let step = p["w"].values()[0];
            check(step.signum() == -g.signum(), format!("g={g:e}: step {step:e} has the wrong sign"))?;
            // exact first step is lr·|g|/(|g| + ε)
            let exact = lr * g.abs() / (g.abs() + eps);
            check(((step.abs() - exact) / exact).abs() < 1e-12, format!("g={g:e}: step {step:e} vs {exact:e}"))?;
            if g.abs() >= 1e-2 {
                check(
                    ((step.abs() - lr) / lr).abs() < 1e-6,
                    format!("g={g:e}: |step| {:e} not within 1e-6 of lr", step.abs()),
                )?;
            }
            checked += 1;
        }
    }
    let (b1, b2) = (0.9f64, 0.999f64);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut s = AdamState::with_lr(lr);
    let mut p = one(1.0);
    for t in 1..=3 {
        let g = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        let g_lib = 2.0 * p["w"].values()[0];
        s.step(&mut p, &one(g_lib)).map_err(e)?;
        let got = p["w"].values()[0];
        check((got - theta).abs() < 1e-12, format!("step {t}: {got} vs {theta}"))?;
    }
    Ok(format!("{checked} gradients, 3-step trace theta={theta:.12}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("cell-equation fidelity", cell_fidelity),
        ("degenerate equivalence", degenerate_equivalence),
        ("benchmark ordering", table_ordering),
        ("convergence speed", convergence_speed),
        ("protocol fidelity", protocol_fidelity),
        ("data round trips", data_round_trips),
        ("determinism", determinism),
        ("adam unit behavior", adam_behavior),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let total = Instant::now();
    for (n, (name, f)) in criteria.iter().enumerate() {
        let id = n + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string() || name.contains(x.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed();
        match result {
            Ok(detail) => println!("criterion {id} PASS {name}: {detail} [{}]", fmt(took)),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL {name}: {why} [{}]", fmt(took))
            }
        }
    }
    println!("acceptance: {failed} failed ({})", fmt(total.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fmt(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
