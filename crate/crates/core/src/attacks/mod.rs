//! Attacks against training and deployment.

mod evasion;
mod fgsm;
mod inversion;
mod label_flip;
mod membership;
mod mi_face;
mod mpaf;
mod poisoning;

pub use evasion::{biggio_evasion, EvasionConfig, EvasionResult};
pub use fgsm::fgsm;
pub use inversion::{
    gradient_inversion, gradient_inversion_all, infer_label_idlg, match_loss, reconstruct_from,
    total_variation, AttackLog, AttackRecord, Distance, InversionConfig, InversionServerHook,
    LabelEstimate, ReconstructionResult, Variant,
};
pub use label_flip::label_flip;
pub use membership::{
    attack_features, membership_attack, roc_auc, MembershipConfig, MembershipOutcome, ShadowArch,
};
pub use mi_face::{mi_face, MiFaceResult};
pub use mpaf::{MpafHook, MpafMode};
pub use poisoning::{svm_poison_point, PoisonConfig, PoisonResult};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("expected exactly one negative bias-gradient entry, found {negatives}")]
    AmbiguousLabel { negatives: usize },
    #[error("every restart diverged")]
    Diverged,
    #[error("class {class} out of range for {classes} classes")]
    InvalidClass { class: i64, classes: usize },
    #[error("starting point is already classified benign (decision {decision})")]
    AlreadyBenign { decision: f64 },
    #[error("population of {have} rows is too small, need {need}")]
    InsufficientPopulation { need: usize, have: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}
