//! FedAvg where clients encrypt updates under a shared Paillier key. The
//! server only adds ciphertexts, so it never learns the global model.

use privsec::fed::{
    run_federation, shard_dataset, FedConfig, HookSet, PaillierClientHook, Transport,
};
use privsec::harness::data::{synthesize_dataset, DatasetKind};
use privsec::model::{Loss, Model};
use privsec::paillier::{keygen, FixedPointCodec};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(11);
    let data = synthesize_dataset(DatasetKind::Gaussians, 100, 0.5, &mut seeds.stream("data"))?;
    let shards = shard_dataset(&data, 2);
    let model = Model::linear(2, 2, Loss::CrossEntropy, &mut seeds.stream("model"))?;
    let cfg = FedConfig {
        rounds: 3,
        clients: 2,
        lr: 0.5,
        ..FedConfig::default()
    };

    let plain = run_federation(
        &model,
        &shards,
        &cfg,
        HookSet::new(),
        Transport::InProcess,
        &seeds,
    )?;

    // 256-bit keys keep the example quick; use 512 or more for anything real
    let (pk, sk) = keygen(256, &mut seeds.stream("paillier"))?;
    let codec = FixedPointCodec::new(&pk.n, 32);
    let hooks = HookSet::new().attach_paillier(PaillierClientHook::new(pk, sk, codec)?);
    let enc = run_federation(&model, &shards, &cfg, hooks, Transport::InProcess, &seeds)?;

    assert!(enc.server.global.is_none());
    let gap = plain
        .model
        .params()
        .values()
        .iter()
        .zip(enc.model.params().values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max |plain - encrypted| = {gap:.3e}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
