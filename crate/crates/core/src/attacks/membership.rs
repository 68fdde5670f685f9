//! Shadow-model membership inference.
//!
//! Shadow models mimic the victim on data the attacker controls, so their
//! confidence on known members and non-members trains a per-class attack
//! classifier that is then pointed at the victim.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::AttackError;
use crate::model::{train_sgd, Activation, Dataset, Loss, Model, SgdConfig, Tensor};
use crate::rng::{Rng, SeedTree};

#[derive(Debug, Clone, PartialEq)]
pub enum ShadowArch {
    /// Same layers as the victim, freshly initialized.
    SameAsVictim,
    Mlp {
        sizes: Vec<usize>,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipConfig {
    pub n_shadows: usize,
    pub shadow_arch: ShadowArch,
    /// Rows per shadow training ("in") split; each shadow also gets a
    /// disjoint "out" split of the same size.
    pub shadow_split: usize,
    pub shadow_train: SgdConfig,
    pub attack_train: SgdConfig,
}

impl Default for MembershipConfig {
    fn default() -> Self {
        Self {
            n_shadows: 4,
            shadow_arch: ShadowArch::SameAsVictim,
            shadow_split: 50,
            shadow_train: SgdConfig {
                epochs: 200,
                lr: 0.5,
                batch: None,
            },
            attack_train: SgdConfig {
                epochs: 500,
                lr: 1.0,
                batch: None,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct MembershipOutcome {
    /// One logistic classifier per class.
    pub attack_models: Vec<Model>,
    /// Per-class AUC averaged with weights equal to each class's number of
    /// member/non-member pairs, so class mix alone carries no signal.
    pub auc: f64,
    /// AUC over all scores pooled across classes.
    pub pooled_auc: f64,
    pub member_scores: Vec<f64>,
    pub non_member_scores: Vec<f64>,
}

/// Confidences sorted in descending order, then the true-class
/// probability and a flag for a correct top-1 prediction.
pub fn attack_features(probs: &[f64], label: i64) -> Vec<f64> {
    let mut f = probs.to_vec();
    f.sort_by(|a, b| b.total_cmp(a));
    let p_true = probs.get(label as usize).copied().unwrap_or(0.0);
    let top = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    f.push(p_true);
    f.push(f64::from(p_true >= top));
    f
}

/// Area under the ROC curve; tied scores count one half.
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> f64 {
    if positive.is_empty() || negative.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (p, n) = (positive.len() as f64, negative.len() as f64);
    (rank_sum - p * (p + 1.0) / 2.0) / (p * n)
}

fn features_of(model: &Model, data: &Dataset) -> Result<Vec<Vec<f64>>, AttackError> {
    let probs = model.predict_proba(&data.x)?;
    Ok((0..data.len())
        .map(|i| attack_features(probs.row(i), data.y[i]))
        .collect())
}

fn score(attack: &Model, feats: &[f64]) -> Result<f64, AttackError> {
    Ok(attack.predict_proba(&Tensor::row_vector(feats))?.row(0)[1])
}

/// Trains shadows on disjoint splits of `population`, fits one attack model
/// per class, and measures AUC on the victim's known members and
/// non-members.
pub fn membership_attack(
    victim: &Model,
    population: &Dataset,
    members: &Dataset,
    non_members: &Dataset,
    cfg: &MembershipConfig,
    rng: &mut Rng,
) -> Result<MembershipOutcome, AttackError> {
    let need = 2 * cfg.n_shadows * cfg.shadow_split;
    if cfg.n_shadows == 0 || cfg.shadow_split == 0 || population.len() < need {
        return Err(AttackError::InsufficientPopulation {
            need: need.max(2),
            have: population.len(),
        });
    }
    let classes = match victim.output_dim() {
        1 => 2,
        c => c,
    };
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.shuffle(rng);
    let seeds = SeedTree::new(rand::Rng::gen(rng));

    let shadow_rows: Vec<(Vec<Vec<f64>>, Vec<i64>, Vec<bool>)> = (0..cfg.n_shadows)
        .into_par_iter()
        .map(|s| {
            let base = 2 * s * cfg.shadow_split;
            let inside = population.subset(&order[base..base + cfg.shadow_split]);
            let outside =
                population.subset(&order[base + cfg.shadow_split..base + 2 * cfg.shadow_split]);
            let mut r = seeds.stream(&format!("shadow{s}"));
            let mut shadow = match &cfg.shadow_arch {
                ShadowArch::SameAsVictim => victim.reinitialized(&mut r)?,
                ShadowArch::Mlp { sizes, activation } => {
                    Model::mlp(sizes, *activation, victim.loss_kind(), &mut r)?
                }
            };
            train_sgd(&mut shadow, &inside, &cfg.shadow_train, &mut r)?;
            let mut feats = features_of(&shadow, &inside)?;
            feats.extend(features_of(&shadow, &outside)?);
            let labels: Vec<i64> = inside.y.iter().chain(&outside.y).copied().collect();
            let flags = (0..2 * cfg.shadow_split)
                .map(|i| i < cfg.shadow_split)
                .collect();
            Ok((feats, labels, flags))
        })
        .collect::<Result<_, AttackError>>()?;

    let width = classes + 2;
    let attack_models: Vec<Model> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for (feats, labels, flags) in &shadow_rows {
                for ((f, l), m) in feats.iter().zip(labels).zip(flags) {
                    if *l as usize == c {
                        rows.push(f.clone());
                        ys.push(i64::from(*m));
                    }
                }
            }
            let mut r = seeds.stream(&format!("attack{c}"));
            let mut model = Model::linear(width, 1, Loss::Logistic, &mut r)?;
            if !rows.is_empty() {
                train_sgd(
                    &mut model,
                    &Dataset::from_rows(&rows, ys)?,
                    &cfg.attack_train,
                    &mut r,
                )?;
            }
            Ok(model)
        })
        .collect::<Result<_, AttackError>>()?;

    let scores = |data: &Dataset| -> Result<Vec<f64>, AttackError> {
        features_of(victim, data)?
            .iter()
            .zip(&data.y)
            .map(|(f, &l)| score(&attack_models[(l as usize).min(classes - 1)], f))
            .collect()
    };
    let member_scores = scores(members)?;
    let non_member_scores = scores(non_members)?;
    let mut weighted = 0.0;
    let mut pairs = 0.0;
    for c in 0..classes as i64 {
        let pos: Vec<f64> = member_scores
            .iter()
            .zip(&members.y)
            .filter(|e| *e.1 == c)
            .map(|e| *e.0)
            .collect();
        let neg: Vec<f64> = non_member_scores
            .iter()
            .zip(&non_members.y)
            .filter(|e| *e.1 == c)
            .map(|e| *e.0)
            .collect();
        let w = (pos.len() * neg.len()) as f64;
        if w > 0.0 {
            weighted += w * roc_auc(&pos, &neg);
            pairs += w;
        }
    }
    Ok(MembershipOutcome {
        auc: if pairs > 0.0 { weighted / pairs } else { 0.5 },
        pooled_auc: roc_auc(&member_scores, &non_member_scores),
        attack_models,
        member_scores,
        non_member_scores,
    })
}
