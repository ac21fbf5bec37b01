//! Two-branch parameters: network weights (`nn`) and equation parameters
//! (`eq`), plus per-loss-term derivative masks.
//!
//! Leaf paths are `nn.<leaf>`, `eq.<name>` for scalar equation parameters and
//! `eq.<name>.<leaf>` for network-backed fields. Canonical leaf order is
//! depth-first and name-sorted, so `eq` leaves come before `nn` leaves.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ad::{Level, TensorOps, Var};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::networks::{MlpSpec, Network, ParamTree};
use crate::tensor::Tensor;

/// An equation parameter. Scalars are trainable leaves; fields vary over the
/// domain and are either fixed closed forms or backed by a small MLP whose
/// weights are trainable leaves.
#[derive(Clone, Debug, PartialEq)]
pub enum EqParam<L = Tensor> {
    Scalar(L),
    Field(Expr),
    NetField {
        spec: MlpSpec,
        /// Coordinate names fed to the network, in order, e.g. `["x", "y"]`.
        inputs: Vec<String>,
        weights: ParamTree<L>,
    },
}

impl EqParam {
    pub fn scalar(v: f64) -> Self {
        EqParam::Scalar(Tensor::scalar(v))
    }

    /// Value at one point. Scalars ignore the coordinates.
    pub fn eval_at_point(&self, t: Option<f64>, x: Option<&[f64]>) -> Result<f64> {
        let lookup = |name: &str| -> Option<f64> {
            if name == "t" {
                return t;
            }
            let axis = coordinate_axis(name)?;
            x.and_then(|x| x.get(axis).copied())
        };
        match self {
            EqParam::Scalar(v) => Ok(v.item()),
            EqParam::Field(e) => e.eval_f64(&lookup),
            EqParam::NetField { spec, inputs, weights } => {
                let z: Vec<f64> = inputs
                    .iter()
                    .map(|n| lookup(n).ok_or_else(|| Error::MissingCoordinate(n.clone())))
                    .collect::<Result<_>>()?;
                let net = Network::Mlp(spec.clone());
                Ok(net.eval(weights, &Tensor::vector(z))?.data()[0])
            }
        }
    }
}

fn coordinate_axis(name: &str) -> Option<usize> {
    match name {
        "x" | "x1" => Some(0),
        "y" | "x2" => Some(1),
        "z" | "x3" => Some(2),
        _ => None,
    }
}

/// Named coordinate columns at some differentiation level, each `n × 1`.
#[derive(Clone, Debug)]
pub struct Coords<T> {
    entries: Vec<(String, T)>,
}

impl<T: TensorOps> Coords<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, column: T) {
        self.entries.push((name.into(), column));
    }

    /// Resolves `t`, `x`/`x1`, `y`/`x2`, `z`/`x3` and any other pushed name.
    pub fn get(&self, name: &str) -> Option<T> {
        let canonical = match name {
            "x1" => "x",
            "x2" => "y",
            "x3" => "z",
            other => other,
        };
        self.entries
            .iter()
            .find(|(n, _)| n == canonical)
            .map(|(_, v)| v.clone())
    }
}

impl<T: TensorOps> Default for Coords<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl EqParam<Var> {
    /// Value at every point of a batch (or rank 0 for scalars).
    pub fn eval<T: Level>(&self, coords: &Coords<T>) -> Result<T> {
        match self {
            EqParam::Scalar(v) => Ok(T::lift(v)),
            EqParam::Field(e) => e.eval(&|n| coords.get(n)),
            EqParam::NetField { spec, inputs, weights } => {
                let cols: Vec<T> = inputs
                    .iter()
                    .map(|n| coords.get(n).ok_or_else(|| Error::MissingCoordinate(n.clone())))
                    .collect::<Result<_>>()?;
                Network::Mlp(spec.clone()).forward(weights, &T::concat_last(&cols))
            }
        }
    }
}

/// Network weights ν and equation parameters θ.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<L = Tensor> {
    pub nn: ParamTree<L>,
    pub eq: BTreeMap<String, EqParam<L>>,
}

impl<L> Params<L> {
    pub fn new(nn: ParamTree<L>) -> Self {
        Self {
            nn,
            eq: BTreeMap::new(),
        }
    }

    pub fn with_eq(mut self, name: impl Into<String>, p: EqParam<L>) -> Self {
        self.eq.insert(name.into(), p);
        self
    }

    pub fn eq_param(&self, name: &str) -> Result<&EqParam<L>> {
        self.eq
            .get(name)
            .ok_or_else(|| Error::MissingEqParam(name.to_string()))
    }

    /// Leaves in canonical order.
    pub fn leaves(&self) -> Vec<(String, &L)> {
        let mut out = Vec::new();
        for (name, p) in &self.eq {
            match p {
                EqParam::Scalar(v) => out.push((format!("eq.{name}"), v)),
                EqParam::Field(_) => {}
                EqParam::NetField { weights, .. } => {
                    for (leaf, v) in weights.iter() {
                        out.push((format!("eq.{name}.{leaf}"), v));
                    }
                }
            }
        }
        for (leaf, v) in self.nn.iter() {
            out.push((format!("nn.{leaf}"), v));
        }
        out
    }

    pub fn leaf_paths(&self) -> Vec<String> {
        self.leaves().into_iter().map(|(p, _)| p).collect()
    }

    /// Same structure with every leaf transformed; `f` sees leaves in
    /// canonical order.
    pub fn map_leaves<M>(&self, mut f: impl FnMut(&str, &L) -> M) -> Params<M> {
        let mut eq = BTreeMap::new();
        for (name, p) in &self.eq {
            let mapped = match p {
                EqParam::Scalar(v) => EqParam::Scalar(f(&format!("eq.{name}"), v)),
                EqParam::Field(e) => EqParam::Field(e.clone()),
                EqParam::NetField { spec, inputs, weights } => EqParam::NetField {
                    spec: spec.clone(),
                    inputs: inputs.clone(),
                    weights: weights.map(|leaf, v| f(&format!("eq.{name}.{leaf}"), v)),
                },
            };
            eq.insert(name.clone(), mapped);
        }
        let nn = self.nn.map(|leaf, v| f(&format!("nn.{leaf}"), v));
        Params { nn, eq }
    }
}

/// Path and shape of every flattened leaf, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub leaves: Vec<LeafInfo>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafInfo {
    pub path: String,
    pub shape: Vec<usize>,
}

impl Manifest {
    pub fn total_len(&self) -> usize {
        self.leaves.iter().map(|l| l.shape.iter().product::<usize>()).sum()
    }
}

impl Params<Tensor> {
    /// Wraps every leaf as an untracked root variable.
    pub fn as_constants(&self) -> Params<Var> {
        self.map_leaves(|_, t| Var::constant(t.clone()))
    }

    pub fn zeros_like(&self) -> Params<Tensor> {
        self.map_leaves(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            leaves: self
                .leaves()
                .into_iter()
                .map(|(path, t)| LeafInfo {
                    path,
                    shape: t.shape().to_vec(),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> (Vec<f64>, Manifest) {
        let mut flat = Vec::new();
        for (_, t) in self.leaves() {
            flat.extend_from_slice(t.data());
        }
        (flat, self.manifest())
    }

    /// Rebuilds parameters with `self`'s structure from a flat vector.
    pub fn unflatten(&self, flat: &[f64], manifest: &Manifest) -> Result<Params<Tensor>> {
        let own = self.manifest();
        if &own != manifest {
            return Err(Error::ManifestMismatch(
                "leaf paths or shapes differ from the parameter structure".into(),
            ));
        }
        if flat.len() != manifest.total_len() {
            return Err(Error::ManifestMismatch(format!(
                "manifest describes {} values, got {}",
                manifest.total_len(),
                flat.len()
            )));
        }
        let mut offset = 0;
        Ok(self.map_leaves(|_, t| {
            let n = t.len();
            let leaf = Tensor::new(t.shape(), flat[offset..offset + n].to_vec()).expect("manifest shape");
            offset += n;
            leaf
        }))
    }

    /// Scalar equation parameter value.
    pub fn eq_scalar(&self, name: &str) -> Result<f64> {
        match self.eq_param(name)? {
            EqParam::Scalar(v) => Ok(v.item()),
            _ => Err(Error::InvalidSpec(format!("`{name}` is not a scalar parameter"))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.leaves().iter().all(|(_, t)| t.all_finite())
    }
}

/// One of the four loss components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Dynamic,
    Boundary,
    Initial,
    Observations,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [
        LossTerm::Dynamic,
        LossTerm::Boundary,
        LossTerm::Initial,
        LossTerm::Observations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Dynamic => "dynamic",
            LossTerm::Boundary => "boundary",
            LossTerm::Initial => "initial",
            LossTerm::Observations => "observations",
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which parameter paths each loss term differentiates. An entry selects a
/// leaf path and everything below it: `"nn"`, `"eq"`, `"eq.*"`, `"eq.D"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeMask {
    #[serde(default = "nn_only")]
    pub dynamic: Vec<String>,
    #[serde(default = "nn_only")]
    pub boundary: Vec<String>,
    #[serde(default = "nn_only")]
    pub initial: Vec<String>,
    #[serde(default = "nn_only")]
    pub observations: Vec<String>,
}

fn nn_only() -> Vec<String> {
    vec!["nn".to_string()]
}

impl Default for DerivativeMask {
    fn default() -> Self {
        Self::forward()
    }
}

impl DerivativeMask {
    /// Forward problem: every term differentiates the network only.
    pub fn forward() -> Self {
        Self {
            dynamic: nn_only(),
            boundary: nn_only(),
            initial: nn_only(),
            observations: nn_only(),
        }
    }

    /// Inverse problem: network on every term, equation parameters on `eq_terms`.
    pub fn inverse(eq_terms: &[LossTerm]) -> Self {
        let mut m = Self::forward();
        for &t in eq_terms {
            m.entries_mut(t).push("eq".to_string());
        }
        m
    }

    pub fn entries(&self, term: LossTerm) -> &[String] {
        match term {
            LossTerm::Dynamic => &self.dynamic,
            LossTerm::Boundary => &self.boundary,
            LossTerm::Initial => &self.initial,
            LossTerm::Observations => &self.observations,
        }
    }

    pub fn entries_mut(&mut self, term: LossTerm) -> &mut Vec<String> {
        match term {
            LossTerm::Dynamic => &mut self.dynamic,
            LossTerm::Boundary => &mut self.boundary,
            LossTerm::Initial => &mut self.initial,
            LossTerm::Observations => &mut self.observations,
        }
    }

    pub fn allows(&self, term: LossTerm, path: &str) -> bool {
        self.entries(term).iter().any(|e| entry_matches(e, path))
    }

    /// Every entry must select at least one leaf of `params`.
    pub fn validate<L>(&self, params: &Params<L>) -> Result<()> {
        let paths = params.leaf_paths();
        for term in LossTerm::ALL {
            for e in self.entries(term) {
                let matched = paths.iter().any(|p| entry_matches(e, p));
                let empty_eq = params.eq.is_empty() && (e == "eq" || e == "eq.*");
                if !matched && !empty_eq {
                    return Err(Error::UnknownParamPath(e.clone()));
                }
            }
        }
        Ok(())
    }
}

fn entry_matches(entry: &str, path: &str) -> bool {
    let entry = entry.strip_suffix(".*").unwrap_or(entry);
    entry == "*" || path == entry || (path.starts_with(entry) && path[entry.len()..].starts_with('.'))
}

/// Zeroes every leaf of `g` outside `mask[term]`.
pub fn mask_gradient(g: &Params, mask: &DerivativeMask, term: LossTerm) -> Params {
    g.map_leaves(|path, t| {
        if mask.allows(term, path) {
            t.clone()
        } else {
            Tensor::zeros(t.shape())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Activation;
    use proptest::prelude::*;

    fn sample_params(seed: u64) -> Params {
        let nn = MlpSpec::new(vec![2, 5, 1], Activation::Tanh, seed).init().unwrap();
        let aux = MlpSpec::new(vec![2, 3, 1], Activation::Tanh, seed + 1);
        let weights = aux.init().unwrap();
        Params::new(nn)
            .with_eq("D", EqParam::scalar(0.3))
            .with_eq("a", EqParam::NetField { spec: aux, inputs: vec!["x".into(), "y".into()], weights })
            .with_eq("f", EqParam::Field(Expr::parse("1 + x^2").unwrap()))
    }

    #[test]
    fn scalar_and_field_evaluation() {
        assert_eq!(EqParam::scalar(2.0).eval_at_point(Some(0.1), Some(&[3.0])).unwrap(), 2.0);
        let field = EqParam::Field(Expr::parse("1 + x^2").unwrap());
        assert_eq!(field.eval_at_point(None, Some(&[0.5, 7.0])).unwrap(), 1.25);
        assert!(matches!(field.eval_at_point(None, None), Err(Error::MissingCoordinate(_))));
    }

    #[test]
    fn net_field_with_zero_weights_is_its_bias() {
        let spec = MlpSpec::new(vec![2, 4, 1], Activation::Tanh, 0);
        let weights = spec
            .init()
            .unwrap()
            .map(|n, t| if n == "b2" { Tensor::full(t.shape(), -1.5) } else { Tensor::zeros(t.shape()) });
        let p = EqParam::NetField { spec, inputs: vec!["x".into(), "y".into()], weights };
        for pt in [[0.0, 0.0], [0.3, -2.0], [5.0, 1.0]] {
            assert_eq!(p.eval_at_point(None, Some(&pt)).unwrap(), -1.5);
        }
    }

    #[test]
    fn leaf_order_and_manifest() {
        let p = sample_params(0);
        let paths = p.leaf_paths();
        assert_eq!(paths[0], "eq.D");
        assert!(paths[1].starts_with("eq.a."));
        assert!(paths.last().unwrap().starts_with("nn."));
        let (flat, manifest) = p.flatten();
        assert_eq!(manifest.total_len(), flat.len());
        assert_eq!(manifest.leaves.len(), paths.len());
    }

    #[test]
    fn empty_eq_flattens_to_network_leaves() {
        let nn = MlpSpec::new(vec![1, 3, 1], Activation::Tanh, 4).init().unwrap();
        let p = Params::new(nn.clone());
        let (flat, _) = p.flatten();
        let direct: Vec<f64> = nn.iter().flat_map(|(_, t)| t.data().to_vec()).collect();
        assert_eq!(flat, direct);
    }

    #[test]
    fn unflatten_rejects_foreign_manifest() {
        let p = sample_params(0);
        let (flat, mut manifest) = p.flatten();
        manifest.leaves[0].path = "eq.zzz".into();
        assert!(matches!(p.unflatten(&flat, &manifest), Err(Error::ManifestMismatch(_))));
        let (_, manifest) = p.flatten();
        assert!(p.unflatten(&flat[1..], &manifest).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trip_is_bitwise(seed in any::<u64>(), scale in -1e3f64..1e3) {
            let p = sample_params(seed).map_leaves(|_, t| t.scale(scale));
            let (flat, manifest) = p.flatten();
            let back = p.unflatten(&flat, &manifest).unwrap();
            prop_assert_eq!(back.flatten().0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            flat.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn masking_is_idempotent_and_linear(seed in any::<u64>(), c in -10f64..10.0) {
            let g = sample_params(seed);
            let m = DerivativeMask {
                dynamic: vec!["nn".into(), "eq.D".into()],
                ..DerivativeMask::forward()
            };
            for term in LossTerm::ALL {
                let once = mask_gradient(&g, &m, term);
                prop_assert_eq!(&mask_gradient(&once, &m, term), &once);
                let scaled = mask_gradient(&g.map_leaves(|_, t| t.scale(c)), &m, term);
                prop_assert_eq!(scaled, once.map_leaves(|_, t| t.scale(c)));
            }
        }
    }

    #[test]
    fn mask_examples() {
        let g = sample_params(1);
        let m = DerivativeMask::forward();
        let masked = mask_gradient(&g, &m, LossTerm::Dynamic);
        for (path, t) in masked.leaves() {
            if path.starts_with("eq.") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{path}");
            } else {
                assert_eq!(Some(t), g.leaves().iter().find(|(p, _)| *p == path).map(|(_, t)| *t));
            }
        }

        let p = Params::new(MlpSpec::new(vec![1, 2, 1], Activation::Tanh, 0).init().unwrap())
            .with_eq("a", EqParam::scalar(1.0));
        let m = DerivativeMask { observations: vec!["nn".into(), "eq.a".into()], ..DerivativeMask::forward() };
        assert_eq!(mask_gradient(&p, &m, LossTerm::Observations), p);
    }

    #[test]
    fn unknown_mask_path_is_rejected() {
        let p = sample_params(0);
        let bad = DerivativeMask { boundary: vec!["eq.nope".into()], ..DerivativeMask::forward() };
        assert!(matches!(bad.validate(&p), Err(Error::UnknownParamPath(s)) if s == "eq.nope"));
        let ok = DerivativeMask::inverse(&[LossTerm::Dynamic]);
        ok.validate(&p).unwrap();
        assert!(ok.allows(LossTerm::Dynamic, "eq.a.W1"));
        assert!(!ok.allows(LossTerm::Boundary, "eq.D"));
        assert!(!ok.allows(LossTerm::Dynamic, "eqx"));
    }
}
