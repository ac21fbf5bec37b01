//! Solution surrogates: a vanilla MLP and a separable PINN.

mod mlp;
mod spinn;

pub use mlp::MlpSpec;
pub use spinn::{GridEval, SpinnSpec};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ad::{Level, TensorOps, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Sin,
}

impl Activation {
    pub fn apply<T: TensorOps>(self, x: &T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Sin => x.sin(),
        }
    }
}

/// Named weight matrices and bias vectors. Iteration is name-sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTree<L = Tensor>(BTreeMap<String, L>);

impl<L> Default for ParamTree<L> {
    fn default() -> Self {
        Self(BTreeMap::new())
    }
}

impl<L> ParamTree<L> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, leaf: L) {
        self.0.insert(name.into(), leaf);
    }

    pub fn get(&self, name: &str) -> Option<&L> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &L)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut L)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map<M>(&self, mut f: impl FnMut(&str, &L) -> M) -> ParamTree<M> {
        ParamTree(self.0.iter().map(|(k, v)| (k.clone(), f(k, v))).collect())
    }

    pub fn try_map<M, E>(&self, mut f: impl FnMut(&str, &L) -> Result<M, E>) -> Result<ParamTree<M>, E> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.0 {
            out.insert(k.clone(), f(k, v)?);
        }
        Ok(ParamTree(out))
    }

    fn leaf(&self, name: &str) -> Result<&L> {
        self.0
            .get(name)
            .ok_or_else(|| Error::InvalidSpec(format!("missing weight `{name}`")))
    }
}

impl ParamTree<Tensor> {
    /// Wraps every leaf as an untracked root variable.
    pub fn as_constants(&self) -> ParamTree<Var> {
        self.map(|_, t| Var::constant(t.clone()))
    }

    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.0.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }
}

/// Glorot-uniform weights `±sqrt(6/(fan_in+fan_out))`, zero biases, for a
/// dense chain of `sizes`, named `{prefix}W{i}` / `{prefix}b{i}` from 1.
pub(crate) fn init_dense(tree: &mut ParamTree, prefix: &str, sizes: &[usize], rng: &mut impl Rng) {
    for (i, w) in sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        tree.insert(
            format!("{prefix}W{}", i + 1),
            Tensor::new(&[fan_out, fan_in], data).expect("dense shape"),
        );
        tree.insert(format!("{prefix}b{}", i + 1), Tensor::zeros(&[fan_out]));
    }
}

/// Affine-activation chain with an affine last layer. `z` is `n × in` or `[in]`.
pub(crate) fn dense_forward<T: Level>(
    tree: &ParamTree<Var>,
    prefix: &str,
    layers: usize,
    activation: Activation,
    z: &T,
) -> Result<T> {
    let single = z.shape().len() == 1;
    let mut h = if single {
        z.reshape(&[1, z.shape()[0]])
    } else {
        z.clone()
    };
    for i in 1..=layers {
        let w = T::lift(tree.leaf(&format!("{prefix}W{i}"))?);
        let b = T::lift(tree.leaf(&format!("{prefix}b{i}"))?);
        h = h.matmul(&w.transpose()).add(&b);
        if i < layers {
            h = activation.apply(&h);
        }
    }
    if single {
        let n = h.shape()[1];
        h = h.reshape(&[n]);
    }
    Ok(h)
}

fn check_input(expected: usize, z: &[usize]) -> Result<()> {
    let got = z.last().copied().unwrap_or(0);
    if z.is_empty() || z.len() > 2 || got != expected {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

/// Architecture of a surrogate. Weights live separately in a [`ParamTree`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Network {
    Mlp(MlpSpec),
    Spinn(SpinnSpec),
}

impl Network {
    pub fn input_dim(&self) -> usize {
        match self {
            Network::Mlp(s) => s.layer_sizes[0],
            Network::Spinn(s) => s.axes(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Network::Mlp(s) => *s.layer_sizes.last().unwrap(),
            Network::Spinn(_) => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Network::Mlp(s) => s.validate(),
            Network::Spinn(s) => s.validate(),
        }
    }

    pub fn init(&self) -> Result<ParamTree> {
        match self {
            Network::Mlp(s) => s.init(),
            Network::Spinn(s) => s.init(),
        }
    }

    pub fn forward<T: Level>(&self, p: &ParamTree<Var>, z: &T) -> Result<T> {
        check_input(self.input_dim(), z.shape())?;
        match self {
            Network::Mlp(s) => s.forward(p, z),
            Network::Spinn(s) => s.forward(p, z),
        }
    }

    /// Plain evaluation without any derivative tracking.
    pub fn eval(&self, p: &ParamTree, z: &Tensor) -> Result<Tensor> {
        let out: Var = self.forward(&p.as_constants(), &Var::constant(z.clone()))?;
        Ok(out.value().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn init_respects_spec_shapes(
            sizes in prop::collection::vec(1usize..12, 2..5),
            seed in any::<u64>(),
        ) {
            let spec = MlpSpec { layer_sizes: sizes.clone(), activation: Activation::Tanh, seed };
            let tree = spec.init().unwrap();
            prop_assert_eq!(tree.len(), 2 * (sizes.len() - 1));
            for (i, w) in sizes.windows(2).enumerate() {
                let wt = tree.get(&format!("W{}", i + 1)).unwrap();
                prop_assert_eq!(wt.shape(), &[w[1], w[0]]);
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                prop_assert!(wt.data().iter().all(|v| v.abs() <= limit));
                prop_assert_eq!(tree.get(&format!("b{}", i + 1)).unwrap().shape(), &[w[1]]);
            }
        }
    }
}
