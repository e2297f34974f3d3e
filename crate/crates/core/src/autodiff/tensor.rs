use serde::{Deserialize, Serialize};

use super::GradError;

/// Dense n-dimensional array of 64-bit floats with a same-shape gradient slot.
///
/// Invariant: `shape.iter().product() == values.len() == grad.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self, GradError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(GradError::BadTensor {
                detail: format!(
                    "shape {:?} implies {} elements, got {}",
                    shape,
                    n,
                    values.len()
                ),
            });
        }
        let grad = vec![0.0; n];
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
            grad,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            grad: vec![0.0],
        }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.grad.iter().all(|g| g.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_value_length_must_agree() {
        assert!(Tensor::from_values(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_values(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn zeros_has_matching_grad() {
        let t = Tensor::zeros(&[4, 5]);
        assert_eq!(t.values.len(), 20);
        assert_eq!(t.grad.len(), 20);
        assert!(t.all_finite());
    }
}
