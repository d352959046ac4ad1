use std::fmt::Debug;

use crate::error::{Error, Result};

/// Scalar type parameters are stored in. All arithmetic runs in `f64`.
pub trait Real: Copy + Default + PartialOrd + Debug + Send + Sync + 'static {
    /// Machine epsilon of the storage type.
    const EPSILON: f64;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const EPSILON: f64 = f32::EPSILON as f64;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    const EPSILON: f64 = f64::EPSILON;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered named tensors; flattening concatenates them in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T = f32> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(tensors: Vec<ParamTensor<T>>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::invalid(format!("duplicate parameter name `{}`", t.name)));
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!(
                    "parameter `{}` has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
        }
        Ok(Self { tensors })
    }

    /// A single unnamed-shape vector, handy for optimizer tests on plain functions.
    pub fn from_vec(name: &str, values: Vec<T>) -> Self {
        Self {
            tensors: vec![ParamTensor {
                name: name.into(),
                shape: vec![values.len()],
                data: values,
            }],
        }
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_dim(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn flatten_f64(&self) -> Vec<f64> {
        self.iter_values().map(Real::to_f64).collect()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout template.
    pub fn unflatten(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.total_dim() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, layout needs {}",
                flat.len(),
                self.total_dim()
            )));
        }
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let n = t.data.len();
                let data = flat[offset..offset + n].to_vec();
                offset += n;
                ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data,
                }
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn same_layout<U>(&self, other: &ParamVector<U>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::from_f64(0.0))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| f(v)).collect(),
                })
                .collect(),
        }
    }

    /// Element-wise combination of two vectors with the same layout.
    pub fn zip_map(&self, other: &Self, mut f: impl FnMut(T, T) -> T) -> Result<Self> {
        if !self.same_layout(other) {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        Ok(Self {
            tensors: self
                .tensors
                .iter()
                .zip(&other.tensors)
                .map(|(a, b)| ParamTensor {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
                })
                .collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> ParamVector<U> {
        ParamVector {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Euclidean norm, accumulated left to right in `f64`.
    pub fn norm(&self) -> f64 {
        self.iter_values()
            .map(|v| {
                let v = v.to_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(|v| v.to_f64().is_finite())
    }

    pub fn get_flat(&self, mut index: usize) -> Option<T> {
        for t in &self.tensors {
            if index < t.data.len() {
                return Some(t.data[index]);
            }
            index -= t.data.len();
        }
        None
    }

    pub fn set_flat(&mut self, mut index: usize, value: T) -> Result<()> {
        for t in &mut self.tensors {
            if index < t.data.len() {
                t.data[index] = value;
                return Ok(());
            }
            index -= t.data.len();
        }
        Err(Error::invalid("flat index out of range"))
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }
}
