use super::ModelError;

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{expected} elements for shape {shape:?}"),
                found: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    /// 2-D tensor from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ModelError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ModelError::ShapeMismatch {
                    expected: format!("row of length {cols}"),
                    found: format!("row of length {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    /// Single-row matrix.
    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            shape: vec![1, v.len()],
            data: v.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D tensor (1-D tensors count as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a 2-D tensor; trailing dims are flattened.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, ModelError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("{} elements", self.data.len()),
                found: format!("shape {shape:?}"),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Gather rows by index into a new 2-D tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
        }
    }

    /// `self (n×k) · other (k×m)`.
    pub(crate) fn matmul(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        debug_assert_eq!(k, other.rows());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = self.row(i);
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = other.row(p);
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    /// `selfᵀ (k×n) · other (n×m)`.
    pub(crate) fn t_matmul(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows(), self.cols(), other.cols());
        debug_assert_eq!(n, other.rows());
        let mut out = vec![0.0; k * m];
        for i in 0..n {
            let a = self.row(i);
            let b = other.row(i);
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let o = &mut out[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Tensor {
            shape: vec![k, m],
            data: out,
        }
    }

    /// `self (n×m) · otherᵀ` where other is k×m.
    pub(crate) fn matmul_t(&self, other: &Tensor) -> Tensor {
        let (n, m, k) = (self.rows(), self.cols(), other.rows());
        debug_assert_eq!(m, other.cols());
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let a = self.row(i);
            for p in 0..k {
                out[i * k + p] = dot(a, other.row(p));
            }
        }
        Tensor {
            shape: vec![n, k],
            data: out,
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.data.len(), other.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Column sums of a 2-D tensor.
    pub(crate) fn sum_rows(&self) -> Vec<f64> {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for i in 0..self.rows() {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
