//! Train a ConvLSTM with validation-based selection, save the learning
//! curve and checkpoint, reload it and score the test split.
//!
//! cargo run --release --example train_and_evaluate

use deeprain::data::{split, synth_generate, SynthConfig, PAPER_RATIOS};
use deeprain::model::{read_checkpoint, write_checkpoint, ModelSpec};
use deeprain::train::{emit_curve, evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SynthConfig { count: 300, seed: 3, ..SynthConfig::default() })?;
    let s = split(data.len(), PAPER_RATIOS, 3)?;

    let mut cfg = TrainConfig::new(ModelSpec::conv_lstm(data[0].dims()).with_stacks(1), 3);
    cfg.max_epochs = 12;
    cfg.lr = 0.003;
    cfg.verbose = true;
    let out = train(&cfg, &data, &s)?;
    println!("best epoch {} of {}, val RMSE {:.4}", out.best_epoch, out.stats.len(), out.best_val_rmse());

    let dir = tempfile::tempdir()?;
    let (curve, ckpt) = (dir.path().join("curve.csv"), dir.path().join("model.drnp"));
    emit_curve(&out.stats, &curve)?;
    write_checkpoint(&out.best, &ckpt)?;
    print!("{}", std::fs::read_to_string(&curve)?);

    let model = read_checkpoint(&ckpt)?;
    let test: Vec<_> = s.test.iter().map(|&i| data[i].clone()).collect();
    println!("reloaded checkpoint: {} parameters, test RMSE {:.4}", model.param_count(), evaluate(&model, &test)?);
    Ok(())
}
