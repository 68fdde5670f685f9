//! Gradient-descent evasion of an RBF SVM, then FGSM against a network.

use privsec::attacks::{biggio_evasion, fgsm, EvasionConfig};
use privsec::harness::data::{synthesize_dataset, DatasetKind};
use privsec::model::{train_sgd, train_svm, Kernel, Loss, Model, SgdConfig, SvmParams, Tensor};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(9);
    let data = synthesize_dataset(DatasetKind::Gaussians, 100, 0.5, &mut seeds.stream("data"))?;
    let signed = data.to_signed_labels()?;
    let svm = train_svm(&signed, &SvmParams::new(Kernel::Rbf { gamma: 0.5 }, 1.0))?;

    let benign: Vec<Vec<f64>> = (0..signed.len())
        .filter(|&i| signed.y[i] < 0)
        .map(|i| signed.row(i).to_vec())
        .collect();
    let x0 = (0..signed.len())
        .find(|&i| svm.decision(signed.row(i)) > 0.5)
        .map(|i| signed.row(i).to_vec())
        .unwrap();
    let cfg = EvasionConfig {
        lambda_mimicry: 0.0,
        d_max: 3.0,
        step: 0.1,
        max_iter: 100,
        bounds: Some(vec![(-3.0, 3.0); 2]),
        mimicry_gamma: None,
    };
    let res = biggio_evasion(&svm, &x0, &benign, &cfg)?;
    println!(
        "g(x0) = {:.3}, g(x_adv) = {:.3}, evaded: {}",
        svm.decision(&x0),
        res.decision,
        res.evaded
    );

    let mut net = Model::linear(2, 2, Loss::CrossEntropy, &mut seeds.stream("model"))?;
    train_sgd(
        &mut net,
        &data,
        &SgdConfig::default(),
        &mut seeds.stream("train"),
    )?;
    let adv = fgsm(&net, data.row(0), data.y[0], 1.5, None)?;
    let before = net.predict(&Tensor::row_vector(data.row(0)))?[0];
    let after = net.predict(&Tensor::row_vector(&adv))?[0];
    println!("fgsm: label {} predicted {before} -> {after}", data.y[0]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
