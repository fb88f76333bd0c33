//! Adam against plain gradient descent at the same learning rate.
//!
//! cargo run --release --example optimizer_curves

use deeprain::data::{split, synth_generate, SynthConfig, PAPER_RATIOS};
use deeprain::model::ModelSpec;
use deeprain::optim::OptimizerKind;
use deeprain::train::{curve_csv, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SynthConfig { count: 400, ..SynthConfig::default() })?;
    let s = split(data.len(), PAPER_RATIOS, 42)?;
    for kind in [OptimizerKind::Adam, OptimizerKind::Gd] {
        let mut cfg = TrainConfig::new(ModelSpec::fc_lstm(data[0].dims()), 42);
        cfg.optimizer = kind;
        cfg.lr = 0.01;
        cfg.max_epochs = 15;
        cfg.patience = 0;
        let out = train(&cfg, &data, &s)?;
        println!("{kind:?}");
        print!("{}", curve_csv(&out.stats));
    }
    Ok(())
}
