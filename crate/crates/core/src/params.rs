//! Named parameter storage with weight tying.
//!
//! Every trainable tensor lives in a [`ParamStore`] under a canonical name.
//! Tied weights are a single entry reachable under extra alias names, so
//! mutating it through any name changes every view.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is filled by [`ParamStore::initialize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamInit {
    /// Truncated normal (two standard deviations), std 0.02.
    Normal,
    Zeros,
    Ones,
}

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    inits: Vec<ParamInit>,
    index: HashMap<String, ParamId>,
    aliases: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-filled trainable parameter.
    pub fn add(&mut self, name: &str, shape: &[usize], init: ParamInit) -> Result<ParamId> {
        if self.index.contains_key(name) || self.aliases.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.tensors
            .push(Tensor::zeros(shape)?.with_requires_grad(true));
        self.names.push(name.to_string());
        self.inits.push(init);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Makes `name` another view of an existing parameter.
    pub fn alias(&mut self, name: &str, target: ParamId) -> Result<()> {
        if self.index.contains_key(name) || self.aliases.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        if target.0 >= self.tensors.len() {
            return Err(Error::Config(format!("alias {name} targets unknown parameter")));
        }
        self.aliases.insert(name.to_string(), target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Resolves a canonical or alias name.
    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index
            .get(name)
            .or_else(|| self.aliases.get(name))
            .copied()
    }

    /// Alias name to canonical name, sorted by alias.
    pub fn tying_map(&self) -> BTreeMap<String, String> {
        self.aliases
            .iter()
            .map(|(a, id)| (a.clone(), self.names[id.0].clone()))
            .collect()
    }

    /// Total number of scalar parameters, counting tied storage once.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn initialize<R: Rng>(&mut self, ids: &[ParamId], rng: &mut R) {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for &id in ids {
            let init = self.inits[id.0];
            let t = &mut self.tensors[id.0];
            match init {
                ParamInit::Zeros => t.data_mut().fill(0.0),
                ParamInit::Ones => t.data_mut().fill(1.0),
                ParamInit::Normal => {
                    for v in t.data_mut() {
                        *v = loop {
                            let x: f64 = normal.sample(rng);
                            if x.abs() <= 2.0 * INIT_STD {
                                break x;
                            }
                        };
                    }
                }
            }
        }
    }

    /// Copies values (not gradients) from `src` into `dst`.
    pub fn copy_values(&mut self, src: ParamId, dst: ParamId) -> Result<()> {
        if src == dst {
            return Ok(());
        }
        if self.tensors[src.0].shape() != self.tensors[dst.0].shape() {
            return Err(Error::Graft(format!(
                "cannot copy {} {:?} into {} {:?}",
                self.names[src.0],
                self.tensors[src.0].shape(),
                self.names[dst.0],
                self.tensors[dst.0].shape()
            )));
        }
        let data = self.tensors[src.0].data().to_vec();
        self.tensors[dst.0].data_mut().copy_from_slice(&data);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn accumulate(&mut self, grads: ParamGrads) -> Result<()> {
        for (id, g) in grads.0 {
            self.tensors[id.0].accumulate_grad_vec(g)?;
        }
        Ok(())
    }

    /// Freezes (or unfreezes) every parameter whose canonical name starts
    /// with one of `prefixes`. Returns how many parameters matched.
    pub fn set_frozen(&mut self, prefixes: &[String], frozen: bool) -> usize {
        let mut n = 0;
        for (t, name) in self.tensors.iter_mut().zip(&self.names) {
            if prefixes.iter().any(|p| name.starts_with(p.as_str())) {
                t.set_requires_grad(!frozen);
                n += 1;
            }
        }
        n
    }
}

/// Gradients produced by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads(pub(crate) Vec<(ParamId, Vec<f64>)>);

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.0.iter().map(|(id, g)| (*id, g.as_slice()))
    }
}
