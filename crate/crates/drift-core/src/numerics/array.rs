use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::error::DriftError;
use crate::Result;

/// Dense row-major array of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(DriftError::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Array::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let numel = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![v; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
        Array {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Array> {
        Array::new(shape.to_vec(), self.data.clone())
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn transpose2(&self) -> Array {
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = Array::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        out
    }

    /// Plain (non-recorded) matrix product.
    pub fn matmul(&self, other: &Array) -> Result<Array> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(DriftError::Dimension("matmul expects 2-D arrays".into()));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(DriftError::Dimension(format!(
                "matmul inner dims {} vs {}",
                k, k2
            )));
        }
        let mut out = Array::zeros(&[m, n]);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * row[j];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Array) -> Result<Array> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Array) -> Result<Array> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Array) -> Result<Array> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Array {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Result<Array> {
        if self.shape != other.shape {
            return Err(DriftError::Dimension(format!(
                "elementwise op on shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Relative Frobenius distance, with an absolute fallback for tiny references.
    pub fn rel_frobenius_dist(&self, other: &Array) -> f64 {
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        diff / other.frobenius_norm().max(1.0)
    }
}

/// Trainable (or frozen) tensor: value plus accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Array,
    pub grad: Array,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Array, requires_grad: bool) -> ParamRef {
        let grad = Array::zeros(value.shape());
        Rc::new(RefCell::new(Parameter {
            name: name.into(),
            value,
            grad,
            requires_grad,
        }))
    }

    pub fn zero_grad(&mut self) {
        self.grad = Array::zeros(self.value.shape());
    }
}

pub type ParamRef = Rc<RefCell<Parameter>>;
