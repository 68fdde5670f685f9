//! Train with DPSGD and read the privacy spent from the moments accountant.

use privsec::dp::{dpsgd_train, DpConfig};
use privsec::harness::data::{synthesize_dataset, DatasetKind};
use privsec::model::{Loss, Model};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(5);
    let data = synthesize_dataset(DatasetKind::Gaussians, 600, 0.5, &mut seeds.stream("data"))?;
    let model = Model::linear(2, 2, Loss::CrossEntropy, &mut seeds.stream("model"))?;

    for sigma in [0.7, 1.1, 2.0] {
        let cfg = DpConfig {
            clip_norm: 1.0,
            noise_multiplier: sigma,
            lot_size: 60,
            batch_size: 60,
            delta: 1e-5,
        };
        let out = dpsgd_train(&model, &data, &cfg, 5, 0.5, &mut seeds.stream("train"))?;
        let eps = out.ledger.epsilon(cfg.delta)?;
        println!(
            "sigma {sigma:.1}: epsilon {:.3} (order {}), accuracy {:.3}",
            eps.epsilon,
            eps.order,
            out.model.accuracy(&data.x, &data.y)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
