//! A ConvLSTM cell stepped by hand, then the same stack run by the encoder.
//!
//! cargo run --example convlstm_cell

use deeprain::data::{Dims, RadarRecord};
use deeprain::model::{
    convlstm_cell_step, encode_sequence, CellState, ConvLstmCellParams, LstmGates, Model, ModelSpec,
};
use deeprain::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dims = Dims::new(4, 2, 6, 6);
    let model = Model::init(ModelSpec::conv_lstm(dims).with_stacks(1).with_hidden(3), 7)?;
    let cell = ConvLstmCellParams {
        gates: LstmGates::try_build(|s| model.param(&format!("layer0.{s}")).cloned().ok_or(format!("missing {s}")))?,
    };

    // a bright blob drifting one pixel right per frame
    let mut values = vec![0u8; dims.values()];
    for t in 0..dims.t {
        for c in 0..dims.c {
            let base = (t * dims.c + c) * 36;
            for y in 2..4 {
                values[base + y * 6 + t + 1] = 200;
            }
        }
    }
    let record = RadarRecord::new(dims, 0.0, values)?;
    let frames = model.prepare(&record)?;

    let mut state = CellState { h: Tensor::zeros(&[3, 6, 6]), c: Tensor::zeros(&[3, 6, 6]) };
    for (t, x) in frames.iter().enumerate() {
        state = convlstm_cell_step(&cell, x, &state)?;
        let h = state.h.values();
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!("t={t}: |H| max {peak:.4}, C sum {:+.4}", state.c.sum());
    }

    let encoded = encode_sequence(std::slice::from_ref(&cell), &frames)?;
    assert_eq!(encoded, state.h);
    println!("encoder output matches the manual unroll, shape {:?}", encoded.shape());
    println!("prediction: {:.6}", model.predict(&record)?);
    Ok(())
}
