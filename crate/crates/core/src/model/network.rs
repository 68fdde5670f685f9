use std::sync::Arc;

use rand::Rng as _;

use super::params::{Layout, ParamSlot, ParamVector};
use super::tensor::Tensor;
use super::ModelError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// f'(v) evaluated at the pre-activation value.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    /// f''(v); zero almost everywhere for ReLU.
    pub fn second_derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Loss attached to a model's output.
///
/// Targets are integer labels: class ids for `CrossEntropy`, `{0, 1}` for
/// `Logistic`, `{-1, +1}` for `Hinge`. `Mse` regresses a single output on
/// the label value, or a one-hot vector when the output is wider than one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    CrossEntropy,
    Logistic,
    Mse,
    Hinge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = x·W + b` with `W` stored as `in × out`.
    Dense {
        w: Tensor,
        b: Tensor,
    },
    Activation(Activation),
}

impl Layer {
    pub fn dense(w: Tensor, b: Tensor) -> Self {
        Layer::Dense { w, b }
    }
}

/// Feed-forward stack of dense layers and activations.
#[derive(Debug, Clone)]
pub struct Model {
    layers: Vec<Layer>,
    loss: Loss,
    layout: Layout,
    input_dim: usize,
    output_dim: usize,
}

/// Activations recorded by a forward pass; `acts[0]` is the input and
/// `acts[i + 1]` is the output of layer `i`.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    pub acts: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("trace has the input at least")
    }
}

impl Model {
    pub fn new(layers: Vec<Layer>, loss: Loss) -> Result<Self, ModelError> {
        let mut dim: Option<usize> = None;
        let mut input_dim = None;
        let mut slots = Vec::new();
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Dense { w, b } = layer {
                if w.shape().len() != 2 || b.len() != w.shape()[1] {
                    return Err(ModelError::InvalidModel(format!(
                        "layer {i}: weight {:?} and bias {:?} do not form a dense layer",
                        w.shape(),
                        b.shape()
                    )));
                }
                let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
                if let Some(d) = dim {
                    if d != fan_in {
                        return Err(ModelError::InvalidModel(format!(
                            "layer {i} expects {fan_in} inputs but receives {d}"
                        )));
                    }
                }
                input_dim.get_or_insert(fan_in);
                dim = Some(fan_out);
                slots.push(ParamSlot {
                    name: format!("dense{i}.weight"),
                    shape: vec![fan_in, fan_out],
                    offset,
                });
                offset += fan_in * fan_out;
                slots.push(ParamSlot {
                    name: format!("dense{i}.bias"),
                    shape: vec![fan_out],
                    offset,
                });
                offset += fan_out;
            }
        }
        let (Some(input_dim), Some(output_dim)) = (input_dim, dim) else {
            return Err(ModelError::InvalidModel("model has no dense layer".into()));
        };
        match loss {
            Loss::CrossEntropy if output_dim < 2 => {
                return Err(ModelError::InvalidModel(
                    "cross-entropy needs at least two output classes".into(),
                ))
            }
            Loss::Logistic | Loss::Hinge if output_dim != 1 => {
                return Err(ModelError::InvalidModel(format!(
                    "{loss:?} loss needs a single output, model has {output_dim}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            layers,
            loss,
            layout: Arc::new(slots),
            input_dim,
            output_dim,
        })
    }

    /// MLP with `activation` between dense layers; `sizes` lists the width
    /// of every layer including input and output.
    ///
    /// Weights and biases are drawn from uniform(−1/√fan_in, 1/√fan_in).
    pub fn mlp(
        sizes: &[usize],
        activation: Activation,
        loss: Loss,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        if sizes.len() < 2 {
            return Err(ModelError::InvalidModel(
                "an MLP needs input and output sizes".into(),
            ));
        }
        let mut layers = Vec::new();
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            let b = (0..fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            layers.push(Layer::Dense {
                w: Tensor::new(vec![fan_in, fan_out], w)?,
                b: Tensor::new(vec![fan_out], b)?,
            });
            if i + 2 < sizes.len() {
                layers.push(Layer::Activation(activation));
            }
        }
        Self::new(layers, loss)
    }

    /// Single dense layer (softmax / logistic regression or linear model).
    pub fn linear(
        input: usize,
        output: usize,
        loss: Loss,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        Self::mlp(&[input, output], Activation::Relu, loss, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss_kind(&self) -> Loss {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.iter().map(ParamSlot::len).sum()
    }

    pub fn params(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            if let Layer::Dense { w, b } = layer {
                values.extend_from_slice(w.data());
                values.extend_from_slice(b.data());
            }
        }
        ParamVector::new(values, self.layout.clone()).expect("layout built from these layers")
    }

    pub fn set_params(&mut self, params: &ParamVector) -> Result<(), ModelError> {
        if params.layout().as_slice() != self.layout.as_slice() {
            return Err(ModelError::LayoutMismatch(format!(
                "model has {} parameters in {} blocks, vector has {} in {}",
                self.num_params(),
                self.layout.len(),
                params.len(),
                params.layout().len()
            )));
        }
        let mut cursor = 0;
        let values = params.values();
        for layer in &mut self.layers {
            if let Layer::Dense { w, b } = layer {
                let nw = w.len();
                w.data_mut().copy_from_slice(&values[cursor..cursor + nw]);
                cursor += nw;
                let nb = b.len();
                b.data_mut().copy_from_slice(&values[cursor..cursor + nb]);
                cursor += nb;
            }
        }
        Ok(())
    }

    pub fn with_params(&self, params: &ParamVector) -> Result<Model, ModelError> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), ModelError> {
        if x.cols() != self.input_dim {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} input features", self.input_dim),
                found: format!("{} features", x.cols()),
            });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, x: &Tensor) -> Result<ForwardTrace, ModelError> {
        self.check_input(x)?;
        let n = x.rows();
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(Tensor::new(vec![n, x.cols()], x.data().to_vec())?);
        for layer in &self.layers {
            let prev = acts.last().expect("non-empty");
            let next = match layer {
                Layer::Dense { w, b } => {
                    let mut out = prev.matmul(w);
                    for i in 0..n {
                        for (o, bv) in out.row_mut(i).iter_mut().zip(b.data()) {
                            *o += bv;
                        }
                    }
                    out
                }
                Layer::Activation(act) => prev.map(|v| act.apply(v)),
            };
            acts.push(next);
        }
        Ok(ForwardTrace { acts })
    }

    /// Raw outputs (logits for classification), `n × output_dim`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.trace(x)?.acts.pop().expect("non-empty"))
    }

    /// Class probabilities: softmax for `CrossEntropy`, `[1 − σ, σ]` for
    /// single-output models.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let out = self.forward(x)?;
        let n = out.rows();
        if self.output_dim == 1 {
            let mut data = Vec::with_capacity(2 * n);
            for i in 0..n {
                let p = sigmoid(out.row(i)[0]);
                data.push(1.0 - p);
                data.push(p);
            }
            return Tensor::new(vec![n, 2], data);
        }
        let mut probs = out;
        for i in 0..n {
            softmax_in_place(probs.row_mut(i));
        }
        Ok(probs)
    }

    /// Predicted label per row, in the label convention of the loss.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<i64>, ModelError> {
        let out = self.forward(x)?;
        Ok((0..out.rows())
            .map(|i| {
                let r = out.row(i);
                match self.loss {
                    Loss::Hinge => {
                        if r[0] >= 0.0 {
                            1
                        } else {
                            -1
                        }
                    }
                    Loss::Logistic => i64::from(r[0] >= 0.0),
                    Loss::Mse if r.len() == 1 => r[0].round() as i64,
                    _ => argmax(r) as i64,
                }
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, y: &[i64]) -> Result<f64, ModelError> {
        let pred = self.predict(x)?;
        if pred.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / pred.len() as f64)
    }

    fn check_labels(&self, n: usize, y: &[i64]) -> Result<(), ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if y.len() != n {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{n} labels"),
                found: format!("{} labels", y.len()),
            });
        }
        for &label in y {
            let ok = match self.loss {
                Loss::CrossEntropy => label >= 0 && (label as usize) < self.output_dim,
                Loss::Logistic => label == 0 || label == 1,
                Loss::Hinge => label == -1 || label == 1,
                Loss::Mse => {
                    self.output_dim == 1 || (label >= 0 && (label as usize) < self.output_dim)
                }
            };
            if !ok {
                return Err(ModelError::LabelOutOfRange {
                    label,
                    loss: self.loss,
                    outputs: self.output_dim,
                });
            }
        }
        Ok(())
    }

    /// Mean loss over the batch and its gradient w.r.t. the outputs.
    pub(crate) fn output_loss_grad(&self, out: &Tensor, y: &[i64]) -> (f64, Tensor) {
        let n = out.rows();
        let inv_n = 1.0 / n as f64;
        let mut grad = Tensor::zeros(vec![n, out.cols()]);
        let mut total = 0.0;
        for i in 0..n {
            let z = out.row(i);
            let g = grad.row_mut(i);
            let label = y[i];
            match self.loss {
                Loss::CrossEntropy => {
                    let lse = log_sum_exp(z);
                    total += lse - z[label as usize];
                    for (gj, zj) in g.iter_mut().zip(z) {
                        *gj = (zj - lse).exp() * inv_n;
                    }
                    g[label as usize] -= inv_n;
                }
                Loss::Logistic => {
                    let t = label as f64;
                    total += softplus(z[0]) - t * z[0];
                    g[0] = (sigmoid(z[0]) - t) * inv_n;
                }
                Loss::Hinge => {
                    let t = label as f64;
                    let margin = 1.0 - t * z[0];
                    if margin > 0.0 {
                        total += margin;
                        g[0] = -t * inv_n;
                    }
                }
                Loss::Mse => {
                    for (j, (gj, zj)) in g.iter_mut().zip(z).enumerate() {
                        let target = if z.len() == 1 {
                            label as f64
                        } else if j as i64 == label {
                            1.0
                        } else {
                            0.0
                        };
                        let r = zj - target;
                        total += 0.5 * r * r;
                        *gj = r * inv_n;
                    }
                }
            }
        }
        (total * inv_n, grad)
    }

    /// Back-propagates `dout` through the layers. Returns the parameter
    /// gradient and the gradient w.r.t. the input.
    pub(crate) fn backward(&self, trace: &ForwardTrace, dout: Tensor) -> (ParamVector, Tensor) {
        let mut blocks: Vec<Vec<f64>> = Vec::new();
        let mut g = dout;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            match layer {
                Layer::Dense { w, .. } => {
                    let dw = input.t_matmul(&g);
                    let db = g.sum_rows();
                    blocks.push(db);
                    blocks.push(dw.into_data());
                    g = g.matmul_t(w);
                }
                Layer::Activation(act) => {
                    g = g.zip_map(input, |gv, xv| gv * act.derivative(xv));
                }
            }
        }
        blocks.reverse();
        let values: Vec<f64> = blocks.into_iter().flatten().collect();
        let grad = ParamVector::new(values, self.layout.clone()).expect("gradient matches layout");
        (grad, g)
    }

    pub fn loss(&self, x: &Tensor, y: &[i64]) -> Result<f64, ModelError> {
        self.check_labels(x.rows(), y)?;
        let out = self.forward(x)?;
        Ok(self.output_loss_grad(&out, y).0)
    }

    /// Mean batch loss and its gradient w.r.t. every parameter.
    pub fn loss_and_grad(&self, x: &Tensor, y: &[i64]) -> Result<(f64, ParamVector), ModelError> {
        self.check_labels(x.rows(), y)?;
        let trace = self.trace(x)?;
        let (loss, dout) = self.output_loss_grad(trace.output(), y);
        let (grad, _) = self.backward(&trace, dout);
        Ok((loss, grad))
    }

    /// One gradient per example; their mean is the batch gradient.
    pub fn per_example_grads(&self, x: &Tensor, y: &[i64]) -> Result<Vec<ParamVector>, ModelError> {
        self.check_labels(x.rows(), y)?;
        self.check_input(x)?;
        (0..x.rows())
            .map(|i| {
                let xi = Tensor::row_vector(x.row(i));
                self.loss_and_grad(&xi, &y[i..=i]).map(|(_, g)| g)
            })
            .collect()
    }

    /// Gradient of the loss w.r.t. the input coordinates of one example.
    pub fn input_grad(&self, x: &[f64], y: i64) -> Result<Tensor, ModelError> {
        let xt = Tensor::row_vector(x);
        self.check_labels(1, &[y])?;
        let trace = self.trace(&xt)?;
        let (_, dout) = self.output_loss_grad(trace.output(), &[y]);
        Ok(self.backward(&trace, dout).1)
    }

    /// Vector-Jacobian product of the raw outputs w.r.t. the input.
    pub fn vjp_input(&self, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, ModelError> {
        let trace = self.trace(x)?;
        if cotangent.rows() != x.rows() || cotangent.cols() != self.output_dim {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{}×{} cotangent", x.rows(), self.output_dim),
                found: format!("{:?}", cotangent.shape()),
            });
        }
        let dout = Tensor::new(vec![x.rows(), self.output_dim], cotangent.data().to_vec())?;
        Ok(self.backward(&trace, dout).1)
    }

    /// Block name of the last dense layer's bias.
    pub fn last_bias_slot(&self) -> Option<&ParamSlot> {
        self.layout.iter().rev().find(|s| s.name.ends_with(".bias"))
    }

    /// True when the last layer is dense, i.e. outputs are raw logits.
    pub fn ends_with_dense(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::Dense { .. }))
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let lse = log_sum_exp(z);
    for v in z {
        *v = (*v - lse).exp();
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
