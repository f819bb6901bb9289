use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::checkpoint::TensorMap;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, dims: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            dims: dims.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Ordered, named tensors. Order is the spec order and fixes the optimizer
/// state layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init<R: Rng>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut set = Self::new();
        for s in specs {
            let t = match s.init {
                Init::Zeros => Tensor::zeros(&s.dims),
                Init::Ones => Tensor::ones(&s.dims),
                Init::Normal(std) => sample_normal(&s.dims, std, rng),
                Init::He(fan_in) => sample_normal(&s.dims, (2.0 / fan_in as f64).sqrt(), rng),
            };
            set.insert(&s.name, t);
        }
        set
    }

    pub fn insert(&mut self, name: &str, t: Tensor<f32>) {
        match self.index.get(name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.to_string(), self.names.len());
                self.names.push(name.to_string());
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>, ModelError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(ModelError::MissingParam(name.to_string())),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar entries.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Leaves on `graph`; learnable leaves require gradients.
    pub fn bind<'g>(&self, graph: &'g Graph<f32>, learnable: bool) -> Bound<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if learnable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }

    /// Copies matching entries from `src`, checking names and dims against
    /// this set's layout.
    pub fn load_from(&mut self, src: &TensorMap, prefix: &str) -> Result<(), ModelError> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}{name}");
            let v = src.get(&key).ok_or_else(|| ModelError::MissingParam(key.clone()))?;
            if v.dims() != t.dims() {
                return Err(ModelError::Config(format!(
                    "`{key}` has dims {:?}, expected {:?}",
                    v.dims(),
                    t.dims()
                )));
            }
            *t = v.clone();
        }
        Ok(())
    }

    pub fn store_into(&self, dst: &mut TensorMap, prefix: &str) {
        for (name, t) in self.iter() {
            dst.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

fn sample_normal<R: Rng>(dims: &[usize], std: f64, rng: &mut R) -> Tensor<f32> {
    let n = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(dims, |_| n.sample(rng) as f32)
}

/// A [`ParamSet`] placed on a graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g, f32>>,
    index: HashMap<String, usize>,
}

impl<'g> Bound<'g> {
    pub fn get(&self, name: &str) -> Result<Var<'g, f32>, ModelError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var<'g, f32>] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_seeded_and_ordered() {
        let specs = [
            ParamSpec::new("a", &[2, 3], Init::Normal(0.02)),
            ParamSpec::new("b", &[3], Init::Zeros),
            ParamSpec::new("c", &[3], Init::Ones),
        ];
        let p1 = ParamSet::init(&specs, &mut ChaCha8Rng::seed_from_u64(1));
        let p2 = ParamSet::init(&specs, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p1, p2);
        assert_eq!(p1.names(), ["a", "b", "c"]);
        assert_eq!(p1.count(), 12);
        assert_eq!(p1.get("c").unwrap().data(), &[1.0; 3]);
        assert!(p1.get("zz").is_err());
    }

    #[test]
    fn map_round_trip_with_prefix() {
        let specs = [ParamSpec::new("w", &[2], Init::Normal(1.0))];
        let p = ParamSet::init(&specs, &mut ChaCha8Rng::seed_from_u64(3));
        let mut m = TensorMap::new();
        p.store_into(&mut m, "g.");
        assert!(m.contains_key("g.w"));
        let mut q = ParamSet::init(&specs, &mut ChaCha8Rng::seed_from_u64(4));
        q.load_from(&m, "g.").unwrap();
        assert_eq!(p, q);
    }
}
