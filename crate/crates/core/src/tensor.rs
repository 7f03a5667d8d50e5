//! Dense row-major `f32` tensors.

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that every extent is positive and that the
    /// data length equals the product of the extents. An empty `dims` is a
    /// scalar.
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return shape_err(format!("zero extent in dims {dims:?}"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f32) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Option<f32> {
        self.is_scalar().then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), self.data)
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies rows `indices` of the leading axis into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.dims.is_empty() {
            return shape_err("cannot select rows of a scalar");
        }
        if indices.is_empty() {
            return shape_err("row selection is empty");
        }
        let row: usize = self.dims[1..].iter().product();
        let mut data = Vec::with_capacity(row * indices.len());
        for &i in indices {
            if i >= self.dims[0] {
                return shape_err(format!("row {i} out of range {}", self.dims[0]));
            }
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut dims = self.dims.clone();
        dims[0] = indices.len();
        Ok(Tensor { dims, data })
    }

    /// Slice of the `i`-th entry along the leading axis.
    pub fn row(&self, i: usize) -> &[f32] {
        let row: usize = self.dims[1..].iter().product();
        &self.data[i * row..(i + 1) * row]
    }

    /// Concatenates tensors along the leading axis.
    pub fn stack_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to stack".into()))?;
        let tail = &first.dims[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims.is_empty() || &p.dims[1..] != tail {
                return shape_err(format!(
                    "cannot stack {:?} onto {:?}",
                    p.dims, first.dims
                ));
            }
            lead += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        let mut dims = first.dims.clone();
        dims[0] = lead;
        Tensor::new(dims, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_dims_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn select_and_stack() {
        let t = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[5., 6., 1., 2.]);
        let st = Tensor::stack_rows(&[&s, &t]).unwrap();
        assert_eq!(st.dims(), &[5, 2]);
        assert!(t.select_rows(&[3]).is_err());
    }
}
