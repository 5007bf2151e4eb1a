use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::RunningStats;
use crate::model::config::{ModelConfig, ParamKind};
use crate::tensor::{Scalar, Tensor};

/// Learnable tensors keyed by canonical name (`enc1.conv1.weight`, ...) plus
/// the running statistics of every batch-norm layer keyed by layer name
/// (`enc1.bn1`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub(crate) tensors: BTreeMap<String, Tensor<T>>,
    pub(crate) running: BTreeMap<String, RunningStats<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Normal(0, 2 / fan_in) convolution weights, zero biases, unit scales and
    /// zero shifts. Running statistics start at mean 0, variance 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in config.parameter_specs() {
            let t = match spec.kind {
                ParamKind::ConvWeight => {
                    let sigma = (2.0 / spec.fan_in as f64).sqrt();
                    let data = (0..spec.shape.len())
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::of(sigma * z)
                        })
                        .collect();
                    Tensor::from_vec(spec.shape, data)?
                }
                ParamKind::ConvBias | ParamKind::NormShift => Tensor::zeros(spec.shape),
                ParamKind::NormScale => Tensor::full(spec.shape, T::one()),
            };
            tensors.insert(spec.name, t);
        }
        let running = config
            .norm_layers()
            .into_iter()
            .map(|(name, c)| (name, RunningStats::identity(c)))
            .collect();
        Ok(Parameters { tensors, running })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub(crate) fn tensor(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn running_stats(&self, layer: &str) -> Option<&RunningStats<T>> {
        self.running.get(layer)
    }

    pub fn running(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.running.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
            && self
                .running
                .values()
                .all(|r| r.mean.iter().chain(&r.var).all(|x| x.is_finite()))
    }

    /// Checks that names and shapes are exactly those implied by `config`.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let specs = config.parameter_specs();
        if specs.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for spec in specs {
            match self.tensors.get(&spec.name) {
                None => return Err(Error::Config(format!("missing parameter {}", spec.name))),
                Some(t) if t.shape() != spec.shape => {
                    return Err(Error::Config(format!(
                        "parameter {} has shape {}, expected {}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        for (name, c) in config.norm_layers() {
            match self.running.get(&name) {
                Some(r) if r.mean.len() == c && r.var.len() == c => {}
                _ => return Err(Error::Config(format!("running statistics for {name} missing or mis-sized"))),
            }
        }
        Ok(())
    }

    /// Flattens every learnable tensor (in name order) into one vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.values().flat_map(|t| t.to_f64_vec()).collect()
    }

    /// Inverse of [`Parameters::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.scalar_count()
            )));
        }
        let mut off = 0;
        for t in self.tensors.values_mut() {
            let n = t.len();
            for (d, &s) in t.data_mut().iter_mut().zip(&flat[off..off + n]) {
                *d = T::of(s);
            }
            off += n;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            running: self
                .running
                .iter()
                .map(|(k, r)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: r.mean.iter().map(|x| U::of(x.f64())).collect(),
                            var: r.var.iter().map(|x| U::of(x.f64())).collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub(crate) fn from_parts(
        tensors: BTreeMap<String, Tensor<T>>,
        running: BTreeMap<String, RunningStats<T>>,
    ) -> Self {
        Parameters { tensors, running }
    }
}

/// Gradients keyed like [`Parameters`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<T> {
    pub(crate) tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            tensors: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub(crate) fn insert(&mut self, name: String, t: Tensor<T>) {
        match self.tensors.get_mut(&name) {
            Some(existing) => existing.add_assign(&t),
            None => {
                self.tensors.insert(name, t);
            }
        }
    }

    pub(crate) fn insert_vec(&mut self, name: String, v: Vec<T>) {
        self.insert(name, Tensor::vector(v));
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(k, _)| k.as_str())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|x| x.f64() * x.f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors.values_mut() {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }

    /// Same ordering as [`Parameters::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.values().flat_map(|t| t.to_f64_vec()).collect()
    }
}
