use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

use super::Tensor;

/// Named tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Sparse gradient buffer: only parameters on the data path get an entry.
pub type Gradients = ParameterSet;

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new tensor. Shapes are fixed once a name is taken.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if let Some(old) = self.tensors.get(&name) {
            if old.dims() != tensor.dims() {
                return Err(Error::ShapeMismatch {
                    op: "parameter insert",
                    left: old.dims().to_vec(),
                    right: tensor.dims().to_vec(),
                });
            }
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Unknown {
            kind: "parameter",
            id: name.to_string(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    /// Gradient slot for `name`, zero-initialised with `dims` on first use.
    pub fn slot(&mut self, name: &str, dims: &[usize]) -> &mut Tensor {
        self.tensors
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(dims))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Subset of tensors whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParameterSet {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copies every tensor of `other` over the same-named entry here.
    pub fn overwrite_from(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, t) in other.iter() {
            self.insert(name, t.clone())?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.values_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other` entry-wise, creating missing entries.
    pub fn accumulate(&mut self, other: &ParameterSet) -> Result<()> {
        for (name, t) in other.iter() {
            self.slot(name, t.dims()).add_scaled(t, 1.0)?;
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            if let Some((index, value)) = t.first_non_finite() {
                return Err(Error::NonFinite {
                    name: name.to_string(),
                    index,
                    value,
                });
            }
        }
        Ok(())
    }
}

pub fn uniform<R: Rng + ?Sized>(dims: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let n = dims.iter().product();
    let values = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_vec(dims, values).expect("dims product matches")
}

/// Xavier/Glorot uniform for an `out x in` weight matrix.
pub fn xavier<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (out + inp) as f64).sqrt();
    uniform(&[out, inp], limit, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_fixed_after_insert() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[2, 2])).is_ok());
        assert!(p.insert("w", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn iteration_is_name_ordered() {
        let mut p = ParameterSet::new();
        for n in ["b", "c", "a"] {
            p.insert(n, Tensor::zeros(&[1])).unwrap();
        }
        assert_eq!(p.names().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn check_finite_names_the_parameter() {
        let mut p = ParameterSet::new();
        p.insert("ok", Tensor::zeros(&[2])).unwrap();
        p.insert("bad", Tensor::vector(vec![0.0, f64::NAN])).unwrap();
        match p.check_finite().unwrap_err() {
            Error::NonFinite { name, index, .. } => {
                assert_eq!(name, "bad");
                assert_eq!(index, 1);
            }
            e => panic!("{e:?}"),
        }
    }
}
