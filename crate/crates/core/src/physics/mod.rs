//! Residuals, boundary and initial conditions, and the composite loss.

mod equations;
mod loss;
pub mod operators;

pub use equations::{Equation, ExprField, Layout, NetField};
pub use loss::{evaluate_loss, mse, LossComponents, LossEval, LossOptions, LossWeights};
pub use operators::{divergence, gradient, jet, laplacian, AdMode, GradField, Jet};

use serde::{Deserialize, Serialize};

use crate::ad::{Function, TensorOps, Var};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::parameters::Params;
use crate::sampling::{Domain, Facet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BoundaryCondition {
    /// `u = g` on the facet.
    Dirichlet { value: Expr },
    /// `∂u/∂n = g` with the outward normal.
    Neumann { value: Expr },
}

/// An equation parameter varied across tasks when meta-learning; it becomes
/// an extra surrogate input column sampled from `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub equation: Equation,
    pub domain: Domain,
    pub meta: Vec<MetaParam>,
    /// Empty: no boundary term. One entry: every facet. Otherwise one per
    /// facet, ordered by facet id (`x lo, x hi, y lo, …`).
    pub boundary: Vec<BoundaryCondition>,
    pub initial: Option<Expr>,
}

impl Problem {
    pub fn layout(&self) -> Layout {
        Layout::new(
            self.domain.has_time(),
            self.domain.space_dim(),
            self.meta.iter().map(|m| m.name.clone()).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.equation.check_layout(&self.layout())?;
        let facets = 2 * self.domain.space_dim();
        if !(self.boundary.len() <= 1 || self.boundary.len() == facets) {
            return Err(Error::InvalidDomain(format!(
                "{} boundary conditions for {facets} facets",
                self.boundary.len()
            )));
        }
        if !self.boundary.is_empty() && facets == 0 {
            return Err(Error::InvalidDomain("boundary condition without spatial axes".into()));
        }
        if self.initial.is_some() && !self.domain.has_time() {
            return Err(Error::StationaryProblem);
        }
        for m in &self.meta {
            if !(m.lo <= m.hi) {
                return Err(Error::InvalidDomain(format!("meta parameter {}: lo > hi", m.name)));
            }
        }
        Ok(())
    }

    /// Checks that every parameter the equation reads is present.
    pub fn check_params<L>(&self, p: &Params<L>) -> Result<()> {
        let meta: Vec<&str> = self.meta.iter().map(|m| m.name.as_str()).collect();
        for name in self.equation.required_params() {
            if !meta.contains(name) {
                p.eq_param(name)?;
            }
        }
        Ok(())
    }

    pub fn boundary_for(&self, facet: Facet) -> Option<&BoundaryCondition> {
        match self.boundary.len() {
            0 => None,
            1 => self.boundary.first(),
            _ => self.boundary.get(facet.id()),
        }
    }

    /// Boundary residual on points of one facet.
    pub fn boundary_residual<U: Function>(
        &self,
        u: &U,
        facet: Facet,
        x: &Var,
        mode: AdMode,
    ) -> Result<Var> {
        let layout = self.layout();
        let cond = self
            .boundary_for(facet)
            .ok_or_else(|| Error::InvalidDomain("no boundary condition".into()))?;
        let target = |e: &Expr| ExprField { expr: e, layout: &layout }.eval(x);
        match cond {
            BoundaryCondition::Dirichlet { value } => Ok(u.eval(x)?.sub(&target(value)?)),
            BoundaryCondition::Neumann { value } => {
                let axis = layout.space_axes()[facet.axis];
                let du = jet(u, x, &[axis], &[], mode)?.d(axis)?;
                Ok(du.scale(facet.outward_sign()).sub(&target(value)?))
            }
        }
    }

    pub fn initial_residual<U: Function>(&self, u: &U, x: &Var) -> Result<Var> {
        let layout = self.layout();
        let u0 = self.initial.as_ref().ok_or(Error::StationaryProblem)?;
        Ok(u.eval(x)?.sub(&ExprField { expr: u0, layout: &layout }.eval(x)?))
    }
}

/// Substitutes `Meta` equation parameters: wherever the equation reads a
/// meta parameter it takes the corresponding input column.
pub(crate) fn with_meta_fields(p: &Params<Var>, meta: &[MetaParam]) -> Result<Params<Var>> {
    let mut p = p.clone();
    for m in meta {
        p.eq.insert(m.name.clone(), crate::parameters::EqParam::Field(Expr::parse(&m.name)?));
    }
    Ok(p)
}
