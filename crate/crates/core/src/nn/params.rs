use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of learnable tensors.
///
/// The registration order is the checkpoint manifest order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
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

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Inserts every parameter into `g` as a gradient-tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.variable(t.clone())).collect())
    }

    /// Replaces all values, keeping names; shapes must match.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::shape(format!("{} tensors for {} parameters", values.len(), self.tensors.len())));
        }
        for (i, (old, new)) in self.tensors.iter().zip(&values).enumerate() {
            if old.shape() != new.shape() {
                return Err(Error::shape(format!(
                    "parameter {}: expected {:?}, got {:?}",
                    self.names[i],
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.tensors = values;
        Ok(())
    }
}

/// Graph handles of a [`ParamStore`] bound into one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<NodeId>);

impl Bound {
    /// Uses existing nodes as the parameters, in store order.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Self {
        Bound(nodes)
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.0[id.0]
    }

    /// Gradients for every parameter, zero where the loss did not reach.
    pub fn grads(&self, g: &Graph, store: &ParamStore) -> Vec<Tensor> {
        self.0
            .iter()
            .zip(store.tensors())
            .map(|(&n, p)| {
                let data = g.grad(n).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]);
                Tensor::new(p.shape().to_vec(), data).expect("gradient matches parameter shape")
            })
            .collect()
    }
}

/// Normal(0, σ²) resampled until within ±2σ.
pub fn trunc_normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Affine map `x·W + b` with `W: [in×out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let weight = store.register(format!("{name}.weight"), trunc_normal(rng, &[d_in, d_out], INIT_STD));
        let bias = bias.then(|| store.register(format!("{name}.bias"), Tensor::zeros(&[1, d_out])));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, b.node(self.weight))?;
        match self.bias {
            Some(bias) => g.add_row(y, b.node(bias)),
            None => Ok(y),
        }
    }

    pub fn numel(d_in: usize, d_out: usize, bias: bool) -> usize {
        d_in * d_out + if bias { d_out } else { 0 }
    }
}

/// Layer norm with learned per-feature scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            scale: store.register(format!("{name}.scale"), Tensor::full(&[1, d], 1.0)),
            shift: store.register(format!("{name}.shift"), Tensor::zeros(&[1, d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        let n = g.layer_norm_rows(x);
        let s = g.mul_row(n, b.node(self.scale))?;
        g.add_row(s, b.node(self.shift))
    }
}
