//! Fast gradient sign perturbation.

use super::AttackError;
use crate::model::{clip_box, Model};

/// `clip(x + ε·sign(∇ₓL))`. Coordinates with zero gradient are left alone.
pub fn fgsm(
    model: &Model,
    x: &[f64],
    y: i64,
    eps: f64,
    bounds: Option<&[(f64, f64)]>,
) -> Result<Vec<f64>, AttackError> {
    if !(eps >= 0.0) {
        return Err(AttackError::InvalidConfig("fgsm needs eps >= 0".into()));
    }
    let g = model.input_grad(x, y)?;
    let mut adv: Vec<f64> = x
        .iter()
        .zip(g.data())
        .map(|(xi, gi)| {
            if *gi == 0.0 {
                *xi
            } else {
                xi + eps * gi.signum()
            }
        })
        .collect();
    if let Some(b) = bounds {
        clip_box(&mut adv, b);
    }
    Ok(adv)
}
