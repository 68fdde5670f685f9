//! Gradients of functions of the parameter gradient, for gradient matching.
//!
//! With soft targets `t` (rows summing to one) and cross-entropy loss,
//! `G(x, t) = ∂ℓ/∂θ`. Given a cotangent `Ḡ` on `G`, the adjoint pass returns
//! `Ḡ·∂G/∂x` and `Ḡ·∂G/∂t` by running the backward pass in reverse.

use super::network::{softmax_in_place, Layer, Loss, Model};
use super::params::ParamVector;
use super::tensor::Tensor;
use super::ModelError;

struct Graph {
    /// `acts[k]` feeds layer `k`; the last entry is the logits.
    acts: Vec<Tensor>,
    /// `deltas[k] = ∂ℓ/∂acts[k]`.
    deltas: Vec<Tensor>,
    probs: Tensor,
    grad: ParamVector,
}

impl Model {
    fn check_soft(&self, x: &Tensor, targets: &Tensor) -> Result<(), ModelError> {
        if self.loss_kind() != Loss::CrossEntropy {
            return Err(ModelError::InvalidModel(
                "gradient matching needs cross-entropy".into(),
            ));
        }
        if x.rows() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if targets.rows() != x.rows() || targets.cols() != self.output_dim() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{}×{} targets", x.rows(), self.output_dim()),
                found: format!("{:?}", targets.shape()),
            });
        }
        Ok(())
    }

    fn soft_graph(&self, x: &Tensor, targets: &Tensor) -> Result<Graph, ModelError> {
        self.check_soft(x, targets)?;
        let trace = self.trace(x)?;
        let logits = trace.output();
        let n = x.rows();
        let inv_n = 1.0 / n as f64;
        let mut probs = logits.clone();
        for i in 0..n {
            softmax_in_place(probs.row_mut(i));
        }
        let dout = probs.zip_map(targets, |p, t| (p - t) * inv_n);
        let layers = self.layers();
        let mut deltas = vec![Tensor::zeros(vec![0]); layers.len() + 1];
        deltas[layers.len()] = dout;
        for (k, layer) in layers.iter().enumerate().rev() {
            let d = &deltas[k + 1];
            deltas[k] = match layer {
                Layer::Dense { w, .. } => d.matmul_t(w),
                Layer::Activation(a) => d.zip_map(&trace.acts[k], |g, v| g * a.derivative(v)),
            };
        }
        let mut values = Vec::with_capacity(self.num_params());
        for (k, layer) in layers.iter().enumerate() {
            if let Layer::Dense { .. } = layer {
                values.extend(trace.acts[k].t_matmul(&deltas[k + 1]).into_data());
                values.extend(deltas[k + 1].sum_rows());
            }
        }
        let grad = ParamVector::new(values, self.layout().clone())?;
        Ok(Graph {
            acts: trace.acts,
            deltas,
            probs,
            grad,
        })
    }

    /// Mean cross-entropy parameter gradient against soft targets.
    pub fn soft_label_grad(&self, x: &Tensor, targets: &Tensor) -> Result<ParamVector, ModelError> {
        Ok(self.soft_graph(x, targets)?.grad)
    }

    /// Returns `(G, Ḡ·∂G/∂x, Ḡ·∂G/∂t)` for cotangent `gbar`.
    pub fn soft_label_grad_adjoint(
        &self,
        x: &Tensor,
        targets: &Tensor,
        gbar: &ParamVector,
    ) -> Result<(ParamVector, Tensor, Tensor), ModelError> {
        let g = self.soft_graph(x, targets)?;
        g.grad.check_layout(gbar)?;
        let layers = self.layers();
        let n = x.rows();
        let nl = layers.len();
        let mut abar: Vec<Tensor> = g
            .acts
            .iter()
            .map(|a| Tensor::zeros(a.shape().to_vec()))
            .collect();
        let mut dbar: Vec<Tensor> = g
            .deltas
            .iter()
            .map(|d| Tensor::zeros(d.shape().to_vec()))
            .collect();

        // reverse of the backward pass: layer 0 first
        let mut slot_iter = self.layout().iter();
        for k in 0..nl {
            match &layers[k] {
                Layer::Dense { w, .. } => {
                    let ws = slot_iter.next().expect("weight slot");
                    let bs = slot_iter.next().expect("bias slot");
                    let wbar = Tensor::new(w.shape().to_vec(), gbar.block(ws).to_vec())?;
                    let bbar = gbar.block(bs);
                    let mut add = g.acts[k].matmul(&wbar);
                    add.add_assign(&dbar[k].matmul(w));
                    for i in 0..n {
                        for (v, b) in add.row_mut(i).iter_mut().zip(bbar) {
                            *v += b;
                        }
                    }
                    dbar[k + 1].add_assign(&add);
                    abar[k].add_assign(&g.deltas[k + 1].matmul_t(&wbar));
                }
                Layer::Activation(a) => {
                    let a = *a;
                    let pre = &g.acts[k];
                    let to_next = dbar[k].zip_map(pre, |db, v| db * a.derivative(v));
                    dbar[k + 1].add_assign(&to_next);
                    let mixed = dbar[k].zip_map(&g.deltas[k + 1], |db, d| db * d);
                    abar[k].add_assign(&mixed.zip_map(pre, |m, v| m * a.second_derivative(v)));
                }
            }
        }

        // deltas[L] = (softmax(z) − t)/n
        let inv_n = 1.0 / n as f64;
        let top = &dbar[nl];
        let mut zbar = Tensor::zeros(top.shape().to_vec());
        let mut tbar = Tensor::zeros(top.shape().to_vec());
        for i in 0..n {
            let p = g.probs.row(i);
            let d = top.row(i);
            let pd: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
            for (j, z) in zbar.row_mut(i).iter_mut().enumerate() {
                *z = p[j] * (d[j] - pd) * inv_n;
            }
            for (t, dj) in tbar.row_mut(i).iter_mut().zip(d) {
                *t = -dj * inv_n;
            }
        }
        abar[nl].add_assign(&zbar);

        // reverse of the forward pass
        for k in (0..nl).rev() {
            let back = match &layers[k] {
                Layer::Dense { w, .. } => abar[k + 1].matmul_t(w),
                Layer::Activation(a) => {
                    let a = *a;
                    abar[k + 1].zip_map(&g.acts[k], |ab, v| ab * a.derivative(v))
                }
            };
            abar[k].add_assign(&back);
        }
        Ok((g.grad, abar.swap_remove(0), tbar))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use crate::rng::seeded;
    use rand::Rng as _;

    fn onehot(n: usize, c: usize, labels: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(vec![n, c]);
        for (i, &l) in labels.iter().enumerate() {
            t.row_mut(i)[l] = 1.0;
        }
        t
    }

    #[test]
    fn hard_targets_match_loss_and_grad() {
        let mut rng = seeded(3);
        let m = Model::mlp(&[4, 5, 3], Activation::Tanh, Loss::CrossEntropy, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, -0.2, 0.3, 0.5], vec![-1.0, 0.4, 0.0, 0.2]]).unwrap();
        let (_, g) = m.loss_and_grad(&x, &[2, 0]).unwrap();
        let s = m.soft_label_grad(&x, &onehot(2, 3, &[2, 0])).unwrap();
        for (a, b) in g.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // f(x, t) = Σ Ḡ ⊙ G(x, t) for a fixed random Ḡ, checked by central differences
    #[test]
    fn adjoint_matches_finite_differences() {
        for (seed, act) in [
            (1u64, Activation::Sigmoid),
            (2, Activation::Tanh),
            (3, Activation::Relu),
        ] {
            let mut rng = seeded(seed);
            let m = Model::mlp(&[3, 4, 4, 3], act, Loss::CrossEntropy, &mut rng).unwrap();
            let x = Tensor::new(
                vec![2, 3],
                (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let mut t = Tensor::new(
                vec![2, 3],
                (0..6).map(|_| rng.gen_range(0.1..1.0)).collect(),
            )
            .unwrap();
            for i in 0..2 {
                let s: f64 = t.row(i).iter().sum();
                t.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
            let probe = m
                .params()
                .with_values(
                    (0..m.num_params())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap();
            let f = |x: &Tensor, t: &Tensor| -> f64 {
                let g = m.soft_label_grad(x, t).unwrap();
                g.values()
                    .iter()
                    .zip(probe.values())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (_, xbar, tbar) = m.soft_label_grad_adjoint(&x, &t, &probe).unwrap();
            let h = 1e-5;
            for j in 0..6 {
                let mut xp = x.clone();
                xp.data_mut()[j] += h;
                let mut xm = x.clone();
                xm.data_mut()[j] -= h;
                let fd = (f(&xp, &t) - f(&xm, &t)) / (2.0 * h);
                assert!(
                    (fd - xbar.data()[j]).abs() <= 1e-6 * fd.abs().max(1e-3),
                    "{act:?} x{j}: {fd} vs {}",
                    xbar.data()[j]
                );
                let mut tp = t.clone();
                tp.data_mut()[j] += h;
                let mut tm = t.clone();
                tm.data_mut()[j] -= h;
                let fd = (f(&x, &tp) - f(&x, &tm)) / (2.0 * h);
                assert!((fd - tbar.data()[j]).abs() <= 1e-6 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn rejects_other_losses() {
        let m = Model::mlp(&[2, 1], Activation::Relu, Loss::Logistic, &mut seeded(0)).unwrap();
        let x = Tensor::zeros(vec![1, 2]);
        assert!(m.soft_label_grad(&x, &Tensor::zeros(vec![1, 1])).is_err());
    }
}
