//! Training-label corruption.

use rand::seq::index::sample;

use crate::model::Dataset;
use crate::rng::Rng;

/// Flips `⌊rate·n⌋` labels chosen without replacement.
///
/// Labels in `0..C` become `(y + 1) mod C`; `±1` labels change sign.
/// Returns the corrupted copy and the sorted flipped indices.
pub fn label_flip(data: &Dataset, rate: f64, rng: &mut Rng) -> (Dataset, Vec<usize>) {
    let rate = rate.clamp(0.0, 1.0);
    let n = data.len();
    let count = ((rate * n as f64).floor() as usize).min(n);
    let mut idx = sample(rng, n, count).into_vec();
    idx.sort_unstable();
    let signed = data.y.iter().any(|&y| y < 0);
    let classes = data.n_classes().max(2) as i64;
    let mut out = data.clone();
    for &i in &idx {
        let y = out.y[i];
        out.y[i] = if signed { -y } else { (y + 1) % classes };
    }
    (out, idx)
}
