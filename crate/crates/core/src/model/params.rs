use std::sync::Arc;

use super::ModelError;

/// One named parameter block inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

pub type Layout = Arc<Vec<ParamSlot>>;

/// Flattened model parameters or gradients.
///
/// The layout is shared between a model and every vector derived from it,
/// so layout checks are usually a pointer comparison.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self, ModelError> {
        let total = layout.iter().map(ParamSlot::len).sum::<usize>();
        let contiguous = layout
            .iter()
            .scan(0usize, |next, s| {
                let ok = s.offset == *next;
                *next += s.len();
                Some(ok)
            })
            .all(|ok| ok);
        if !contiguous || total != values.len() {
            return Err(ModelError::LayoutMismatch(format!(
                "layout covers {total} values, vector has {}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Vector with a single anonymous block, for tests and raw payloads.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(vec![ParamSlot {
            name: "flat".into(),
            shape: vec![values.len()],
            offset: 0,
        }]);
        Self { values, layout }
    }

    pub fn zeros_like(other: &ParamVector) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            layout: other.layout.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<(), ModelError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(ModelError::LayoutMismatch(format!(
                "{} vs {} values",
                self.len(),
                other.len()
            )))
        }
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != self.values.len() {
            return Err(ModelError::LayoutMismatch(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn block(&self, slot: &ParamSlot) -> &[f64] {
        &self.values[slot.range()]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.values {
            *v *= k;
        }
    }

    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<(), ModelError> {
        self.check_layout(x)?;
        for (v, xv) in self.values.iter_mut().zip(&x.values) {
            *v += a * xv;
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector, ModelError> {
        self.check_layout(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector, ModelError> {
        self.check_layout(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            layout: self.layout.clone(),
        })
    }

    /// Little-endian `u32` count followed by little-endian `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_f64s(&self.values)
    }

    /// Inverse of [`ParamVector::to_bytes`], attaching a known layout.
    pub fn from_bytes(bytes: &[u8], layout: Layout) -> Result<Self, ModelError> {
        let (values, used) = decode_f64s(bytes)?;
        if used != bytes.len() {
            return Err(ModelError::Decode(format!(
                "{} trailing bytes",
                bytes.len() - used
            )));
        }
        Self::new(values, layout)
    }
}

pub(crate) fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Returns the decoded values and the number of bytes consumed.
pub(crate) fn decode_f64s(bytes: &[u8]) -> Result<(Vec<f64>, usize), ModelError> {
    let head: [u8; 4] = bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| ModelError::Decode("missing count".into()))?;
    let count = u32::from_le_bytes(head) as usize;
    let need = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(4))
        .ok_or_else(|| ModelError::Decode("count overflow".into()))?;
    if bytes.len() < need {
        return Err(ModelError::Decode(format!(
            "need {need} bytes for {count} values, have {}",
            bytes.len()
        )));
    }
    let values = bytes[4..need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((values, need))
}

/// `params − lr·grad`.
pub fn sgd_step(
    params: &ParamVector,
    grad: &ParamVector,
    lr: f64,
) -> Result<ParamVector, ModelError> {
    params.check_layout(grad)?;
    Ok(ParamVector {
        values: params
            .values
            .iter()
            .zip(&grad.values)
            .map(|(p, g)| p - lr * g)
            .collect(),
        layout: params.layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_examples() {
        let p = ParamVector::flat(vec![1.0]);
        let g = ParamVector::flat(vec![2.0]);
        assert_eq!(sgd_step(&p, &g, 0.5).unwrap().values(), &[0.0]);
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // f(p) = 0.5 Σ a_i (p_i − c_i)², minimizer c.
        let a = [1.0, 3.0, 0.5];
        let c = [2.0, -1.0, 4.0];
        let mut p = ParamVector::flat(vec![0.0; 3]);
        for _ in 0..2000 {
            let g: Vec<f64> = (0..3).map(|i| a[i] * (p.values()[i] - c[i])).collect();
            p = sgd_step(&p, &ParamVector::flat(g), 0.3).unwrap();
        }
        for i in 0..3 {
            assert!((p.values()[i] - c[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let p = ParamVector::flat(vec![1.0, 2.0]);
        let g = ParamVector::flat(vec![1.0]);
        assert!(matches!(
            sgd_step(&p, &g, 0.1),
            Err(ModelError::LayoutMismatch(_))
        ));
    }

    #[test]
    fn truncated_bytes_fail() {
        let p = ParamVector::flat(vec![1.5, -2.0]);
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), 4 + 16);
        assert!(ParamVector::from_bytes(&bytes[..bytes.len() - 1], p.layout().clone()).is_err());
        assert_eq!(
            ParamVector::from_bytes(&bytes, p.layout().clone()).unwrap(),
            p
        );
    }
}
