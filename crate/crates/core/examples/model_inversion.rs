//! MI-FACE: rebuild a class prototype from a trained model alone.

use privsec::attacks::mi_face;
use privsec::harness::data::{class_template, synthesize_dataset, DatasetKind};
use privsec::model::{norm2, train_sgd, Loss, Model, SgdConfig};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(17);
    let data = synthesize_dataset(
        DatasetKind::ClassTemplates8x8,
        200,
        0.3,
        &mut seeds.stream("data"),
    )?;
    let mut model = Model::linear(64, 4, Loss::CrossEntropy, &mut seeds.stream("model"))?;
    let cfg = SgdConfig {
        epochs: 100,
        lr: 0.5,
        batch: None,
    };
    train_sgd(&mut model, &data, &cfg, &mut seeds.stream("train"))?;

    // a softmax model only sees how classes differ, so compare against
    // each template minus the mean template
    let templates: Vec<Vec<f64>> = (0..4).map(class_template).collect();
    let mean: Vec<f64> = (0..64)
        .map(|j| templates.iter().map(|t| t[j]).sum::<f64>() / 4.0)
        .collect();
    for c in 0..4 {
        let res = mi_face(&model, c, 0.01, 100, 1.0)?;
        let t: Vec<f64> = templates[c as usize]
            .iter()
            .zip(&mean)
            .map(|(a, m)| a - m)
            .collect();
        let x = res.x.data();
        let cos = x.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / (norm2(x) * norm2(&t));
        println!(
            "class {c}: confidence {:.3}, cosine to centered template {cos:.3}",
            res.confidence
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
