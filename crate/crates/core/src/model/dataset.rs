use super::tensor::Tensor;
use super::ModelError;

/// Feature matrix with integer labels and optional per-column bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<i64>,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<i64>) -> Result<Self, ModelError> {
        if x.rows() != y.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} labels", x.rows()),
                found: format!("{} labels", y.len()),
            });
        }
        let x = if x.shape().len() == 2 {
            x
        } else {
            let (r, c) = (x.rows(), x.cols());
            x.reshape(vec![r, c])?
        };
        Ok(Self { x, y, bounds: None })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<i64>) -> Result<Self, ModelError> {
        Self::new(Tensor::from_rows(rows)?, y)
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if bounds.len() != self.dim() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} bounds", self.dim()),
                found: format!("{} bounds", bounds.len()),
            });
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    /// `max(label) + 1`, or 0 for an empty set.
    pub fn n_classes(&self) -> usize {
        self.y.iter().max().map_or(0, |&m| (m.max(0) + 1) as usize)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            bounds: self.bounds.clone(),
        }
    }

    /// Concatenation of two datasets with equal width.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, ModelError> {
        if self.dim() != other.dim() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} features", self.dim()),
                found: format!("{} features", other.dim()),
            });
        }
        let mut data = self.x.data().to_vec();
        data.extend_from_slice(other.x.data());
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Dataset {
            x: Tensor::new(vec![y.len(), self.dim()], data)?,
            y,
            bounds: self.bounds.clone(),
        })
    }

    /// Appends one labelled row.
    pub fn push(&self, row: &[f64], label: i64) -> Result<Dataset, ModelError> {
        let one = Dataset::new(Tensor::row_vector(row), vec![label])?;
        self.concat(&one)
    }

    /// Labels `{0, 1}` become `{-1, +1}`; `{-1, +1}` is left alone.
    pub fn to_signed_labels(&self) -> Result<Dataset, ModelError> {
        let mut out = self.clone();
        for y in &mut out.y {
            *y = match *y {
                0 | -1 => -1,
                1 => 1,
                other => {
                    return Err(ModelError::LabelOutOfRange {
                        label: other,
                        loss: super::Loss::Hinge,
                        outputs: 1,
                    })
                }
            };
        }
        Ok(out)
    }

    /// Clamp a point into the declared bounds (no-op without bounds).
    pub fn clip_to_bounds(&self, x: &mut [f64]) {
        if let Some(b) = &self.bounds {
            clip_box(x, b);
        }
    }
}

pub fn clip_box(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}
