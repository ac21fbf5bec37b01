use serde::{Deserialize, Serialize};

use super::{dense_forward, init_dense, Activation, ParamTree};
use crate::ad::{Level, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Multi-layer perceptron. `layer_sizes` runs from input to output width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        Self {
            layer_sizes,
            activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec("an MLP needs at least two layer sizes".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "zero-size layer in {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn init(&self) -> Result<ParamTree> {
        self.validate()?;
        let mut rng = rng::stream(self.seed, rng::streams::INIT);
        let mut tree = ParamTree::new();
        init_dense(&mut tree, "", &self.layer_sizes, &mut rng);
        Ok(tree)
    }

    pub(crate) fn forward<T: Level>(&self, p: &ParamTree<Var>, z: &T) -> Result<T> {
        dense_forward(p, "", self.layer_sizes.len() - 1, self.activation, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Network;
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn same_seed_same_tree() {
        let spec = MlpSpec::new(vec![2, 8, 8, 1], Activation::Tanh, 0);
        assert_eq!(spec.init().unwrap(), spec.init().unwrap());
        let other = MlpSpec { seed: 1, ..spec.clone() };
        assert_ne!(spec.init().unwrap(), other.init().unwrap());
    }

    #[test]
    fn shape_bookkeeping() {
        let tree = MlpSpec::new(vec![1, 4, 1], Activation::Tanh, 3).init().unwrap();
        let shapes = tree.shapes();
        assert_eq!(shapes["W1"], vec![4, 1]);
        assert_eq!(shapes["b1"], vec![4]);
        assert_eq!(shapes["W2"], vec![1, 4]);
        assert_eq!(shapes["b2"], vec![1]);
        assert!(tree.get("b1").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_size_layer_is_invalid() {
        let err = MlpSpec::new(vec![2, 0, 1], Activation::Tanh, 0).init().unwrap_err();
        assert!(err.to_string().contains("invalid spec"));
        assert!(MlpSpec::new(vec![3], Activation::Tanh, 0).init().is_err());
    }

    #[test]
    fn glorot_draws_are_centred() {
        // 10^4 draws from U(-l, l): sigma = l/sqrt(3), standard error sigma/100.
        let spec = MlpSpec::new(vec![100, 100], Activation::Tanh, 11);
        let w = spec.init().unwrap().get("W1").unwrap().clone();
        assert_eq!(w.len(), 10_000);
        let limit = (6.0f64 / 200.0).sqrt();
        let sigma = limit / 3f64.sqrt();
        let mean = w.sum_value() / w.len() as f64;
        assert!(mean.abs() < 3.0 * sigma / 100.0, "mean {mean}");
    }

    #[test]
    fn zero_weights_give_last_bias() {
        let net = Network::Mlp(MlpSpec::new(vec![3, 5, 1], Activation::Sin, 0));
        let tree = net
            .init()
            .unwrap()
            .map(|name, t| if name == "b2" { Tensor::full(t.shape(), 0.75) } else { Tensor::zeros(t.shape()) });
        let z = Tensor::from_rows(&[vec![1., 2., 3.], vec![-4., 0., 9.]]).unwrap();
        assert_eq!(net.eval(&tree, &z).unwrap().data(), &[0.75, 0.75]);
    }

    #[test]
    fn single_affine_layer() {
        let net = Network::Mlp(MlpSpec::new(vec![1, 1], Activation::Tanh, 0));
        let mut tree = ParamTree::new();
        tree.insert("W1", Tensor::new(&[1, 1], vec![2.0]).unwrap());
        tree.insert("b1", Tensor::vector(vec![1.0]));
        let z = Tensor::new(&[3, 1], vec![0.0, 1.0, -2.0]).unwrap();
        assert_eq!(net.eval(&tree, &z).unwrap().data(), &[1.0, 3.0, -3.0]);
        assert_eq!(net.eval(&tree, &Tensor::vector(vec![0.5])).unwrap().data(), &[2.0]);
    }

    #[test]
    fn input_dimension_is_checked() {
        let net = Network::Mlp(MlpSpec::new(vec![2, 4, 1], Activation::Tanh, 0));
        let tree = net.init().unwrap();
        let err = net.eval(&tree, &Tensor::zeros(&[5, 3])).unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 2, got: 3 }));
    }

    /// Independent evaluation with explicit loops over the row-major buffers.
    fn loop_forward(tree: &ParamTree, sizes: &[usize], z: &[f64]) -> f64 {
        let mut h = z.to_vec();
        for l in 1..sizes.len() {
            let w = tree.get(&format!("W{l}")).unwrap().data();
            let b = tree.get(&format!("b{l}")).unwrap().data();
            let (fin, fout) = (sizes[l - 1], sizes[l]);
            let mut next = vec![0.0; fout];
            for o in 0..fout {
                let mut acc = b[o];
                for i in 0..fin {
                    acc += w[o * fin + i] * h[i];
                }
                next[o] = if l + 1 < sizes.len() { acc.tanh() } else { acc };
            }
            h = next;
        }
        h[0]
    }

    #[test]
    fn matches_loop_evaluation() {
        let sizes = vec![2, 8, 1];
        let net = Network::Mlp(MlpSpec::new(sizes.clone(), Activation::Tanh, 5));
        let tree = net.init().unwrap();
        // Non-zero biases so they are exercised too.
        let tree = tree.map(|n, t| if n.starts_with('b') { t.map(|_| 0.1) } else { t.clone() });
        let mut rng = crate::rng::stream(99, 0);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let out = net.eval(&tree, &Tensor::from_rows(&rows).unwrap()).unwrap();
        for (row, &u) in rows.iter().zip(out.data()) {
            assert!((u - loop_forward(&tree, &sizes, row)).abs() < 1e-12);
        }
    }
}
