//! Model inversion against a trained classifier: search for the input the
//! model is most confident belongs to a class.

use super::AttackError;
use crate::model::{norm2, sigmoid, softmax, Loss, Model, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct MiFaceResult {
    pub x: Tensor,
    /// Objective after each accepted step, starting with the value at zero.
    pub trace: Vec<f64>,
    pub confidence: f64,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Returns `(objective, p_c, ∂objective/∂x)`.
fn objective(
    model: &Model,
    x: &[f64],
    class: usize,
    gamma: f64,
) -> Result<(f64, f64, Vec<f64>), AttackError> {
    let xt = Tensor::row_vector(x);
    let z = model.forward(&xt)?;
    let z = z.row(0);
    let (p_c, cot) = if z.len() == 1 {
        // one sigmoid output scores class 1
        let s = sigmoid(z[0]);
        let d = s * (1.0 - s);
        if class == 1 {
            (s, vec![-d])
        } else {
            (1.0 - s, vec![d])
        }
    } else {
        let p = softmax(z);
        let pc = p[class];
        let cot = p
            .iter()
            .enumerate()
            .map(|(j, pj)| -pc * (f64::from(j == class) - pj))
            .collect();
        (pc, cot)
    };
    let mut g = model.vjp_input(&xt, &Tensor::row_vector(&cot))?.into_data();
    let mut reg = 0.0;
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi += 2.0 * gamma * xi;
        reg += xi * xi;
    }
    Ok((1.0 - p_c + gamma * reg, p_c, g))
}

/// Gradient descent on `1 − p(class | x) + γ‖x‖²` from the zero input,
/// with Armijo backtracking from step `lr`.
pub fn mi_face(
    model: &Model,
    class: i64,
    gamma: f64,
    max_iters: usize,
    lr: f64,
) -> Result<MiFaceResult, AttackError> {
    let classes = match model.loss_kind() {
        Loss::CrossEntropy => model.output_dim(),
        Loss::Logistic => 2,
        _ => {
            return Err(AttackError::InvalidConfig(
                "model inversion needs a probabilistic classifier".into(),
            ))
        }
    };
    if class < 0 || class as usize >= classes {
        return Err(AttackError::InvalidClass { class, classes });
    }
    if !(gamma >= 0.0) || !(lr > 0.0) {
        return Err(AttackError::InvalidConfig(
            "need gamma >= 0 and lr > 0".into(),
        ));
    }
    let c = class as usize;
    let mut x = vec![0.0; model.input_dim()];
    let (mut f, mut p, mut g) = objective(model, &x, c, gamma)?;
    let mut trace = vec![f];
    for _ in 0..max_iters {
        let gn2 = norm2(&g).powi(2);
        if gn2 == 0.0 {
            break;
        }
        let mut step = lr;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let eval = objective(model, &cand, c, gamma)?;
            if eval.0 <= f - ARMIJO_C * step * gn2 {
                accepted = Some((cand, eval));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, (nf, np, ng))) = accepted else {
            break;
        };
        x = cand;
        f = nf;
        p = np;
        g = ng;
        trace.push(f);
    }
    Ok(MiFaceResult {
        x: Tensor::row_vector(&x),
        trace,
        confidence: p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};
    use crate::rng::seeded;

    fn template_model(t: &[f64]) -> Model {
        Model::new(
            vec![Layer::dense(
                Tensor::new(vec![t.len(), 1], t.to_vec()).unwrap(),
                Tensor::zeros(vec![1]),
            )],
            Loss::Logistic,
        )
        .unwrap()
    }

    #[test]
    fn recovers_template_direction() {
        let t = [0.5, -1.0, 0.25, 2.0];
        let r = mi_face(&template_model(&t), 1, 0.01, 200, 1.0).unwrap();
        let x = r.x.data();
        let cos = x.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>() / (norm2(x) * norm2(&t));
        assert!(cos > 0.999, "cos {cos}");
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.confidence > 0.5);
    }

    #[test]
    fn strong_regularizer_keeps_zero() {
        let m = Model::mlp(
            &[4, 6, 3],
            Activation::Tanh,
            Loss::CrossEntropy,
            &mut seeded(1),
        )
        .unwrap();
        let r = mi_face(&m, 2, 1e6, 100, 0.1).unwrap();
        assert!(norm2(r.x.data()) < 1e-5);
    }

    #[test]
    fn deterministic_and_validates_class() {
        let m = Model::mlp(
            &[4, 6, 3],
            Activation::Tanh,
            Loss::CrossEntropy,
            &mut seeded(2),
        )
        .unwrap();
        assert_eq!(
            mi_face(&m, 0, 0.1, 30, 0.5).unwrap(),
            mi_face(&m, 0, 0.1, 30, 0.5).unwrap()
        );
        assert!(matches!(
            mi_face(&m, 3, 0.1, 1, 0.5),
            Err(AttackError::InvalidClass { .. })
        ));
        assert!(mi_face(&m, -1, 0.1, 1, 0.5).is_err());
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let m = Model::mlp(
            &[3, 5, 4],
            Activation::Sigmoid,
            Loss::CrossEntropy,
            &mut seeded(3),
        )
        .unwrap();
        let x = [0.3, -0.4, 0.9];
        let (_, _, g) = objective(&m, &x, 2, 0.2).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut p = x;
            p[i] += h;
            let mut q = x;
            q[i] -= h;
            let fd = (objective(&m, &p, 2, 0.2).unwrap().0 - objective(&m, &q, 2, 0.2).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }
}
