//! FedAvg over four in-process clients, each sending only the largest
//! half of its update.

use privsec::fed::{run_federation, shard_dataset, FedConfig, HookSet, SparseTopK, Transport};
use privsec::harness::data::{synthesize_dataset, DatasetKind};
use privsec::model::{Activation, Loss, Model};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(7);
    let data = synthesize_dataset(DatasetKind::Gaussians, 200, 0.6, &mut seeds.stream("data"))?;
    let shards = shard_dataset(&data, 4);
    let model = Model::mlp(
        &[2, 8, 2],
        Activation::Relu,
        Loss::CrossEntropy,
        &mut seeds.stream("model"),
    )?;

    let cfg = FedConfig {
        rounds: 10,
        clients: 4,
        local_epochs: 2,
        lr: 0.2,
        ..FedConfig::default()
    };
    let topk = SparseTopK::new(0.5)?;
    let hooks = HookSet::new().attach_all_clients(cfg.clients, |_| topk);
    let out = run_federation(&model, &shards, &cfg, hooks, Transport::InProcess, &seeds)?;

    for m in &out.server.rounds {
        println!("round {:2}  loss {:.4}", m.round, m.global_loss);
    }
    println!("accuracy {:.3}", out.model.accuracy(&data.x, &data.y)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
