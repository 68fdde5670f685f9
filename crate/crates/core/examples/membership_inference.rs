//! Shadow-model membership inference against an overfit victim.

use privsec::attacks::{membership_attack, MembershipConfig};
use privsec::harness::data::{synthesize_dataset, DatasetKind};
use privsec::model::{train_sgd, Activation, Loss, Model, SgdConfig};
use privsec::rng::SeedTree;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let seeds = SeedTree::new(21);
    let data = synthesize_dataset(
        DatasetKind::ClassTemplates8x8,
        400,
        1.5,
        &mut seeds.stream("data"),
    )?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let members = data.subset(&idx[..40]);
    let non_members = data.subset(&idx[40..80]);
    let population = data.subset(&idx[80..]);

    let train = SgdConfig {
        epochs: 200,
        lr: 0.5,
        batch: None,
    };
    let mut victim = Model::mlp(
        &[64, 32, 4],
        Activation::Relu,
        Loss::CrossEntropy,
        &mut seeds.stream("model"),
    )?;
    train_sgd(&mut victim, &members, &train, &mut seeds.stream("train"))?;
    println!(
        "victim accuracy: members {:.2}, non-members {:.2}",
        victim.accuracy(&members.x, &members.y)?,
        victim.accuracy(&non_members.x, &non_members.y)?
    );

    let cfg = MembershipConfig {
        n_shadows: 3,
        shadow_split: 40,
        shadow_train: train,
        ..MembershipConfig::default()
    };
    let out = membership_attack(
        &victim,
        &population,
        &members,
        &non_members,
        &cfg,
        &mut seeds.stream("attack"),
    )?;
    println!("attack auc {:.3} (pooled {:.3})", out.auc, out.pooled_auc);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
