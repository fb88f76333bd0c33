//! The canonical synthetic benchmark: linear regression, FC-LSTM and a
//! 2-stacked ConvLSTM trained with default settings, compared on test RMSE.
//!
//! cargo run --release --example synthetic_benchmark [config]
//!
//! The config defaults to configs/synthetic_benchmark.cfg.

use std::path::PathBuf;
use std::time::Instant;

use deeprain::data::{split, synth_generate, SynthConfig, PAPER_RATIOS};
use deeprain::model::ModelSpec;
use deeprain::train::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_benchmark.cfg"));
    let cfg = SynthConfig::load(&path)?;
    let data = synth_generate(&cfg)?;
    let s = split(data.len(), PAPER_RATIOS, cfg.seed)?;
    let test: Vec<_> = s.test.iter().map(|&i| data[i].clone()).collect();
    println!(
        "{} records {}, split {}/{}/{}, seed {}",
        data.len(),
        cfg.dims,
        s.train.len(),
        s.validation.len(),
        s.test.len(),
        cfg.seed
    );
    println!("{:<22} {:>6} {:>6} {:>9} {:>9} {:>8}", "model", "epochs", "best", "val", "test", "seconds");
    for (label, spec) in [
        ("linear regression", ModelSpec::linear(cfg.dims)),
        ("fc-lstm", ModelSpec::fc_lstm(cfg.dims)),
        ("conv-lstm (2 stacks)", ModelSpec::conv_lstm(cfg.dims).with_stacks(2)),
    ] {
        let started = Instant::now();
        let out = train(&TrainConfig::new(spec, cfg.seed), &data, &s)?;
        println!(
            "{label:<22} {:>6} {:>6} {:>9.4} {:>9.4} {:>8.1}",
            out.stats.len(),
            out.best_epoch,
            out.best_val_rmse(),
            evaluate(&out.best, &test)?,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
