use serde::{Deserialize, Serialize};

use super::{dense_forward, init_dense, Activation, ParamTree};
use crate::ad::{Level, TensorOps, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Separable PINN: one scalar-input subnet per axis, each producing `rank`
/// features, combined as `u(z) = Σ_j Π_a f_a(z_a)[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinnSpec {
    /// Per-axis input sizes; every entry is 1.
    pub axis_dims: Vec<usize>,
    pub rank: usize,
    /// Hidden widths shared by every axis subnet.
    pub subnet_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

/// Grid evaluation result with the number of subnet point evaluations spent.
#[derive(Clone, Debug)]
pub struct GridEval {
    pub values: Tensor,
    pub subnet_evaluations: usize,
}

impl SpinnSpec {
    pub fn new(axes: usize, rank: usize, subnet_sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        Self {
            axis_dims: vec![1; axes],
            rank,
            subnet_sizes,
            activation,
            seed,
        }
    }

    pub fn axes(&self) -> usize {
        self.axis_dims.len()
    }

    fn subnet_layers(&self) -> Vec<usize> {
        let mut sizes = vec![1];
        sizes.extend(&self.subnet_sizes);
        sizes.push(self.rank);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis_dims.is_empty() || self.axis_dims.iter().any(|&d| d != 1) {
            return Err(Error::InvalidSpec(format!(
                "SPINN axes must each have size 1, got {:?}",
                self.axis_dims
            )));
        }
        if self.rank == 0 || self.subnet_sizes.contains(&0) {
            return Err(Error::InvalidSpec("zero-size SPINN layer".into()));
        }
        Ok(())
    }

    pub fn init(&self) -> Result<ParamTree> {
        self.validate()?;
        let mut rng = rng::stream(self.seed, rng::streams::INIT);
        let mut tree = ParamTree::new();
        for a in 0..self.axes() {
            init_dense(&mut tree, &format!("axis{a}."), &self.subnet_layers(), &mut rng);
        }
        Ok(tree)
    }

    fn layers(&self) -> usize {
        self.subnet_sizes.len() + 1
    }

    /// Pointwise evaluation: `z` is `n × axes` (or `[axes]`), output `n × 1`.
    pub(crate) fn forward<T: Level>(&self, p: &ParamTree<Var>, z: &T) -> Result<T> {
        let single = z.shape().len() == 1;
        let z = if single { z.reshape(&[1, self.axes()]) } else { z.clone() };
        let mut prod: Option<T> = None;
        for a in 0..self.axes() {
            let col = z.slice_last(a, 1);
            let f = dense_forward(p, &format!("axis{a}."), self.layers(), self.activation, &col)?;
            prod = Some(match prod {
                None => f,
                Some(acc) => acc.mul(&f),
            });
        }
        let ones = T::constant(Tensor::ones(&[self.rank, 1]));
        let out = prod.expect("at least one axis").matmul(&ones);
        Ok(if single { out.reshape(&[1]) } else { out })
    }

    /// Evaluates on the Cartesian grid `axes[0] × axes[1] × …`. Each axis
    /// subnet runs once per coordinate on that axis, not once per grid point.
    /// Output has shape `[n_0, n_1, …]`.
    pub fn eval_grid(&self, p: &ParamTree, axes: &[Vec<f64>]) -> Result<GridEval> {
        if axes.len() != self.axes() {
            return Err(Error::DimMismatch {
                expected: self.axes(),
                got: axes.len(),
            });
        }
        let p = p.as_constants();
        let mut evaluations = 0;
        let mut acc: Option<(Vec<f64>, usize)> = None;
        for (a, coords) in axes.iter().enumerate() {
            let col = Var::constant(Tensor::new(&[coords.len(), 1], coords.clone())?);
            let f = dense_forward(&p, &format!("axis{a}."), self.layers(), self.activation, &col)?;
            evaluations += coords.len();
            let f = f.value().data();
            let r = self.rank;
            acc = Some(match acc {
                None => (f.to_vec(), coords.len()),
                Some((g, rows)) => {
                    let mut next = Vec::with_capacity(rows * coords.len() * r);
                    for i in 0..rows {
                        for j in 0..coords.len() {
                            for k in 0..r {
                                next.push(g[i * r + k] * f[j * r + k]);
                            }
                        }
                    }
                    (next, rows * coords.len())
                }
            });
        }
        let (g, rows) = acc.expect("at least one axis");
        let values: Vec<f64> = g.chunks(self.rank).map(|c| c.iter().sum()).collect();
        debug_assert_eq!(values.len(), rows);
        let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
        Ok(GridEval {
            values: Tensor::new(&shape, values)?,
            subnet_evaluations: evaluations,
        })
    }
}
