//! Named trainable parameters, kept outside any tape.
//!
//! Each training step binds parameters onto a fresh tape as leaves (or as
//! constants when the owning network is frozen), runs forward/backward,
//! then harvests the leaf gradients back into the store for the optimizer.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{check_finite, Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Vec<f32>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn grad(&self) -> &[f32] {
        &self.grad
    }
}

/// Insertion-ordered collection of named parameters.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

/// Standard deviation of the normal conv-weight initializer.
pub const INIT_STD: f32 = 0.02;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid("param", format!("duplicate name {name:?}")));
        }
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != data.len() {
            return Err(Error::invalid(
                "param",
                format!("{name:?}: shape {shape:?} does not match {} values", data.len()),
            ));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            grad: vec![0.0; data.len()],
            data,
        });
        Ok(id)
    }

    /// Weight drawn from N(0, INIT_STD^2).
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid stddev");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, shape, data)
    }

    pub fn add_full(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: f32,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Parameters in insertion order (stable across runs by construction).
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f32]) {
        for (dst, &src) in self.params[id.0].grad.iter_mut().zip(g) {
            *dst += src;
        }
    }
}

/// Parameter-to-tape bindings for one forward/backward pass.
pub struct Bindings {
    frozen: bool,
    bound: HashMap<(ParamId, Vec<usize>), TensorId>,
}

impl Bindings {
    /// Bindings whose leaves receive gradients.
    pub fn trainable() -> Self {
        Self {
            frozen: false,
            bound: HashMap::new(),
        }
    }

    /// Bindings that enter the tape as constants; backward skips them.
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            bound: HashMap::new(),
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Binds a parameter with its stored shape.
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Result<TensorId> {
        let shape = store.get(id).shape.clone();
        self.bind_as(tape, store, id, &shape)
    }

    /// Binds a parameter under a reinterpreted shape with equal element
    /// count, e.g. a `[C]` affine as `[1,C,1,1]`.
    pub fn bind_as(
        &mut self,
        tape: &mut Tape,
        store: &ParamStore,
        id: ParamId,
        shape: &[usize],
    ) -> Result<TensorId> {
        if let Some(&tid) = self.bound.get(&(id, shape.to_vec())) {
            return Ok(tid);
        }
        let p = store.get(id);
        let n: usize = shape.iter().product();
        if n != p.data.len() {
            return Err(Error::invalid(
                "bind",
                format!("cannot view {:?} as {shape:?}", p.shape),
            ));
        }
        let tid = if self.frozen {
            tape.constant(shape, p.data.clone())?
        } else {
            tape.leaf(shape, p.data.clone())?
        };
        self.bound.insert((id, shape.to_vec()), tid);
        Ok(tid)
    }

    /// Copies tape gradients back into the store, accumulating. Rejects
    /// non-finite gradients; a frozen binding harvests nothing.
    pub fn harvest(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        for (&(pid, _), &tid) in &self.bound {
            if let Some(g) = tape.grad(tid) {
                check_finite("grad", g)?;
                store.accumulate_grad(pid, g);
            }
        }
        Ok(())
    }
}
