//! Train a small MLP on two moons and report accuracy.
//!
//! ```bash
//! cargo run --example train_classifier
//! ```

use privsec::harness::data::{synthesize_dataset, train_test_split, DatasetKind};
use privsec::model::{train_sgd, Activation, Loss, Model, SgdConfig};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(42);
    let data = synthesize_dataset(DatasetKind::Moons, 300, 0.1, &mut seeds.stream("data"))?;
    let (train, test) = train_test_split(&data, 0.25, &mut seeds.stream("split"));

    let mut model = Model::mlp(
        &[2, 16, 2],
        Activation::Tanh,
        Loss::CrossEntropy,
        &mut seeds.stream("model"),
    )?;
    let cfg = SgdConfig {
        epochs: 300,
        lr: 0.5,
        batch: Some(32),
    };
    let losses = train_sgd(&mut model, &train, &cfg, &mut seeds.stream("train"))?;

    println!("loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);
    println!("test accuracy {:.3}", model.accuracy(&test.x, &test.y)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
