use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Name and shape of one tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        TensorSpec {
            name: name.to_owned(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat model parameters plus the layout that gives them structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector<T> {
    values: Vec<T>,
    layout: Vec<TensorSpec>,
}

impl<T: Scalar> ParameterVector<T> {
    pub fn new(layout: Vec<TensorSpec>, values: Vec<T>) -> Result<Self> {
        let expect: usize = layout.iter().map(TensorSpec::numel).sum();
        if expect != values.len() {
            return Err(Error::LayoutMismatch(format!(
                "layout holds {expect} elements, got {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(ParameterVector { values, layout })
    }

    pub fn zeros(layout: Vec<TensorSpec>) -> Self {
        let n = layout.iter().map(TensorSpec::numel).sum();
        ParameterVector {
            values: vec![T::zero(); n],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn range_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for spec in &self.layout {
            let end = start + spec.numel();
            if spec.name == name {
                return Some(start..end);
            }
            start = end;
        }
        None
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.range_of(name).map(|r| &self.values[r])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.range_of(name).map(move |r| &mut self.values[r])
    }

    /// Splits into one owned buffer per tensor.
    pub fn unflatten(&self) -> Vec<(TensorSpec, Vec<T>)> {
        let mut start = 0;
        self.layout
            .iter()
            .map(|spec| {
                let end = start + spec.numel();
                let part = self.values[start..end].to_vec();
                start = end;
                (spec.clone(), part)
            })
            .collect()
    }

    pub fn from_tensors(tensors: Vec<(TensorSpec, Vec<T>)>) -> Result<Self> {
        let mut layout = Vec::with_capacity(tensors.len());
        let mut values = Vec::new();
        for (spec, data) in tensors {
            if spec.numel() != data.len() {
                return Err(Error::LayoutMismatch(format!(
                    "tensor {} expects {} values, got {}",
                    spec.name,
                    spec.numel(),
                    data.len()
                )));
            }
            values.extend(data);
            layout.push(spec);
        }
        Self::new(layout, values)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch("axpy on different layouts".into()));
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterVector<U> {
        ParameterVector {
            values: self
                .values
                .iter()
                .map(|v| U::lit(v.to_f64_lossless()))
                .collect(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn layout() -> Vec<TensorSpec> {
        vec![TensorSpec::new("a", &[2, 3]), TensorSpec::new("b", &[4])]
    }

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(ParameterVector::<f64>::new(layout(), vec![0.0; 9]).is_err());
        let mut v = vec![0.0; 10];
        v[3] = f64::NAN;
        assert!(ParameterVector::<f64>::new(layout(), v).is_err());
    }

    #[test]
    fn named_tensors() {
        let p = ParameterVector::<f64>::new(layout(), (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(p.tensor("b").unwrap(), &[6.0, 7.0, 8.0, 9.0]);
        assert!(p.tensor("c").is_none());
    }

    proptest! {
        #[test]
        fn flatten_round_trip(values in prop::collection::vec(-1e6f64..1e6, 10)) {
            let p = ParameterVector::new(layout(), values).unwrap();
            let back = ParameterVector::from_tensors(p.unflatten()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
