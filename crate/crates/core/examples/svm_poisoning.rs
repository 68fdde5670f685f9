//! Craft one poisoning point that raises an SVM's validation loss.

use privsec::attacks::{svm_poison_point, PoisonConfig};
use privsec::harness::data::{synthesize_dataset, train_test_split, DatasetKind};
use privsec::model::{train_svm, Kernel, SvmParams};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(13);
    let data = synthesize_dataset(DatasetKind::Gaussians, 60, 0.7, &mut seeds.stream("data"))?
        .to_signed_labels()?;
    let (train, valid) = train_test_split(&data, 0.5, &mut seeds.stream("split"));
    let params = SvmParams::new(Kernel::Linear, 1.0);

    // start from a negative point and label it positive
    let start = (0..train.len()).find(|&i| train.y[i] == -1).unwrap();
    let cfg = PoisonConfig {
        max_iter: 10,
        bounds: Some(vec![(-3.0, 3.0); 2]),
        ..PoisonConfig::default()
    };
    let res = svm_poison_point(&train, &valid, &params, train.row(start), 1, &cfg)?;

    let clean = train_svm(&train, &params)?;
    let dirty = train_svm(&train.push(&res.x_poison, 1)?, &params)?;
    println!(
        "validation hinge {:.4} -> {:.4}",
        res.trace[0],
        res.trace[res.trace.len() - 1]
    );
    println!(
        "validation error {:.3} -> {:.3}",
        1.0 - clean.accuracy(&valid),
        1.0 - dirty.accuracy(&valid)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
