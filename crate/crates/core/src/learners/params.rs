use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

/// A named tensor inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Ordered collection of named matrices: trainable weights, gradients,
/// updates and optimizer moments all share this shape.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub params: Vec<Param>,
}

impl ParamSet {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Total scalar count.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.map(|m| Matrix::zeros(m.rows(), m.cols()))
    }

    pub fn map(&self, f: impl Fn(&Matrix) -> Matrix) -> ParamSet {
        ParamSet {
            params: self.params.iter().map(|p| Param { name: p.name.clone(), value: f(&p.value) }).collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter sets have different layouts".into()))
        }
    }

    pub fn add(&self, other: &ParamSet) -> ParamSet {
        self.zip_with(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &ParamSet) -> ParamSet {
        self.zip_with(other, |a, b| a.sub(b))
    }

    fn zip_with(&self, other: &ParamSet, f: impl Fn(&Matrix, &Matrix) -> Matrix) -> ParamSet {
        assert!(self.same_layout(other), "parameter layout mismatch");
        ParamSet {
            params: self
                .params
                .iter()
                .zip(&other.params)
                .map(|(a, b)| Param { name: a.name.clone(), value: f(&a.value, &b.value) })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        self.axpy(1.0, other);
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: f64, other: &ParamSet) {
        assert!(self.same_layout(other), "parameter layout mismatch");
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.value.axpy(s, &b.value);
        }
    }

    pub fn scale(&self, s: f64) -> ParamSet {
        self.map(|m| m.scale(s))
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.params.iter_mut().for_each(|p| p.value.scale_mut(s));
    }

    pub fn l2_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.params.iter().map(|p| p.value.max_abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Concatenation of all tensors in order, each row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend_from_slice(p.value.as_slice());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout template.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, layout needs {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let n = p.value.len();
            let value = Matrix::from_vec(p.value.rows(), p.value.cols(), flat[offset..offset + n].to_vec())?;
            params.push(Param { name: p.name.clone(), value });
            offset += n;
        }
        Ok(ParamSet { params })
    }

    pub fn for_each_value_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for p in &mut self.params {
            p.value.as_mut_slice().iter_mut().for_each(&mut f);
        }
    }
}

/// Unweighted mean of parameter sets with identical layout, summed in the
/// given order.
pub fn mean(sets: &[ParamSet]) -> Option<ParamSet> {
    let (first, rest) = sets.split_first()?;
    let mut acc = first.clone();
    for s in rest {
        acc.add_assign(s);
    }
    acc.scale_mut(1.0 / sets.len() as f64);
    Some(acc)
}
