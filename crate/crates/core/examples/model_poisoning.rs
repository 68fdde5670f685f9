//! A fake client hijacks FedAvg by pushing toward its own target model.

use privsec::attacks::MpafHook;
use privsec::fed::{run_federation, shard_dataset, FedConfig, HookSet, Transport};
use privsec::harness::data::{synthesize_dataset, DatasetKind};
use privsec::model::{Activation, Loss, Model};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(19);
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
        lr: 0.2,
        ..FedConfig::default()
    };

    let clean = run_federation(
        &model,
        &shards,
        &cfg,
        HookSet::new(),
        Transport::InProcess,
        &seeds,
    )?;
    let target = model.reinitialized(&mut seeds.stream("target"))?.params();
    let hooks = HookSet::new().attach_client(1, MpafHook::target(target, 10.0));
    let attacked = run_federation(&model, &shards, &cfg, hooks, Transport::InProcess, &seeds)?;

    println!(
        "clean accuracy    {:.3}",
        clean.model.accuracy(&data.x, &data.y)?
    );
    println!(
        "attacked accuracy {:.3}",
        attacked.model.accuracy(&data.x, &data.y)?
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
