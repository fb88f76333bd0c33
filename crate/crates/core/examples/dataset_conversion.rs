//! Text records to the binary format and back.
//!
//! cargo run --example dataset_conversion

use deeprain::data::{
    decode_binary, encode_binary, parse_text_file, synth_generate, write_text, Dims, SynthConfig, BINARY_MAGIC,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let records = synth_generate(&SynthConfig { count: 25, dims: Dims::new(5, 2, 16, 16), ..SynthConfig::default() })?;

    // label first, then T·C·H·W integers in t, channel, row-major order
    let txt = dir.path().join("records.txt");
    write_text(&records, &txt)?;
    let text = std::fs::read_to_string(&txt)?;
    let parsed = parse_text_file(&text, Dims::new(5, 2, 16, 16))?;

    let bytes = encode_binary(&parsed)?;
    let (dims, decoded) = decode_binary(&bytes)?;
    assert_eq!(decoded, records);
    println!(
        "{} records {dims}: text {} bytes, binary {} bytes ({:.2}x smaller)",
        decoded.len(),
        text.len(),
        bytes.len(),
        text.len() as f64 / bytes.len() as f64
    );
    println!("magic {:?}", std::str::from_utf8(BINARY_MAGIC)?);

    let canonical = Dims::CANONICAL;
    println!(
        "canonical record {canonical}: {} tokens per text line, {} payload bytes",
        canonical.values() + 1,
        8 + canonical.values()
    );

    match parse_text_file("1.0 1 2 3\n2.0 1 2 x 4\n", Dims::new(1, 1, 2, 2)) {
        Ok(_) => unreachable!(),
        Err(e) => println!("malformed input: {e}"),
    }
    Ok(())
}
