//! Same-padded convolution, pooling and the elementwise kernels.
//!
//! cargo run --example conv2d

use deeprain::tensor::{avg_pool2d, conv2d, global_avg_pool, map_sigmoid};
use deeprain::Tensor;

fn show(name: &str, t: &Tensor) {
    println!("{name} {:?}", t.shape());
    let w = *t.shape().last().unwrap();
    for row in t.values().chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.2}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::new(&[1, 4, 4], (1..=16).map(f64::from).collect())?;
    show("input", &x);

    // 3×3 box filter: border outputs see zero padding
    let box3 = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
    show("box filter", &conv2d(&x, &box3, None)?);

    // two output channels: identity and horizontal gradient, plus bias
    let mut k = Tensor::zeros(&[2, 1, 3, 3]);
    k.set(&[0, 0, 1, 1], 1.0);
    k.set(&[1, 0, 1, 0], -1.0);
    k.set(&[1, 0, 1, 2], 1.0);
    let y = conv2d(&x, &k, Some(&Tensor::from_vec(vec![0.0, 10.0])))?;
    show("identity | gradient + 10", &y);

    show("avg_pool2d(3)", &avg_pool2d(&x, 3)?);
    show("sigmoid(x - 8)", &map_sigmoid(&x.map(|v| v - 8.0)));
    println!("global average per channel: {:?}", global_avg_pool(&y)?.values());

    let canonical = Tensor::zeros(&[4, 101, 101]);
    println!("101x101 pooled by 4 -> {:?}", avg_pool2d(&canonical, 4)?.shape());
    Ok(())
}
