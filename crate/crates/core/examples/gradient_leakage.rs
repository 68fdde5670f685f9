//! Recover a private 8x8 input from the gradient it produced.
//!
//! iDLG first reads the label off the sign of the last bias gradient,
//! then matches gradients with Adam from a few random starts.

use privsec::attacks::{gradient_inversion, infer_label_idlg, InversionConfig, Variant};
use privsec::harness::data::{class_template, TEMPLATE_CLASSES};
use privsec::model::{Activation, Loss, Model, Tensor};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(3);
    let model = Model::mlp(
        &[64, 16, TEMPLATE_CLASSES],
        Activation::Sigmoid,
        Loss::CrossEntropy,
        &mut seeds.stream("model"),
    )?;
    let secret = class_template(2);
    let (_, grad) = model.loss_and_grad(&Tensor::row_vector(&secret), &[2])?;

    println!("inferred label {}", infer_label_idlg(&grad, &model)?);

    let cfg = InversionConfig {
        max_iters: 500,
        seeds: (0..3).collect(),
        input_shape: Some((8, 8)),
        ..InversionConfig::new(Variant::Idlg)
    };
    let res = gradient_inversion(&grad, &model, &cfg)?;
    let mse = res
        .x_hat
        .data()
        .iter()
        .zip(&secret)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / 64.0;
    println!(
        "match loss {:.3e}, pixel mse {mse:.3e}",
        res.final_match_loss
    );
    for r in 0..8 {
        let line: String = res.x_hat.data()[r * 8..r * 8 + 8]
            .iter()
            .map(|&v| if v > 0.5 { '#' } else { '.' })
            .collect();
        println!("  {line}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
