use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::physics::{BoundaryCondition, Equation, MetaParam, Problem};
use crate::sampling::Domain;
use crate::solver::SamplerSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Base {
    LinearOde,
    Poisson,
    FisherKpp,
    Burgers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProblemDef {
    pub id: &'static str,
    pub base: Base,
    pub inverse: bool,
    pub summary: &'static str,
}

pub const PROBLEMS: &[ProblemDef] = &[
    ProblemDef {
        id: "linear_ode",
        base: Base::LinearOde,
        inverse: false,
        summary: "u' = a u on [0, 1], u(0) = 1; exact e^{at}",
    },
    ProblemDef {
        id: "linear_ode_inverse",
        base: Base::LinearOde,
        inverse: true,
        summary: "estimate a from observations of e^{2t}",
    },
    ProblemDef {
        id: "poisson_2d",
        base: Base::Poisson,
        inverse: false,
        summary: "-div(a grad u) = 2 pi^2 sin(pi x) sin(pi y) on the unit square, u = 0 on the boundary",
    },
    ProblemDef {
        id: "poisson_2d_inverse",
        base: Base::Poisson,
        inverse: true,
        summary: "estimate the diffusion coefficient a from interior observations",
    },
    ProblemDef {
        id: "fisher_kpp",
        base: Base::FisherKpp,
        inverse: false,
        summary: "u_t = D u_xx + u (r - gamma u) on [0, 1] x [-5, 5] with a travelling-wave exact solution",
    },
    ProblemDef {
        id: "fisher_kpp_inverse",
        base: Base::FisherKpp,
        inverse: true,
        summary: "estimate D, r, gamma from observations of the travelling wave",
    },
    ProblemDef {
        id: "burgers_1d",
        base: Base::Burgers,
        inverse: false,
        summary: "u_t + u u_x = (0.01/pi) u_xx on [0, 1] x [-1, 1], u0 = -sin(pi x); bundled reference",
    },
];

pub fn lookup(id: &str) -> Result<&'static ProblemDef> {
    PROBLEMS.iter().find(|p| p.id == id).ok_or_else(|| {
        let known: Vec<&str> = PROBLEMS.iter().map(|p| p.id).collect();
        Error::Config(format!("unknown problem `{id}`; known: {}", known.join(", ")))
    })
}

/// Formats a value for substitution into an expression.
fn num(v: f64) -> String {
    format!("({v:?})")
}

/// Looks up `name` among the scalar values unless it is a meta input, in
/// which case the expression keeps it as a variable.
fn term(vals: &BTreeMap<String, f64>, meta: &[String], name: &str) -> Result<String> {
    if meta.iter().any(|m| m == name) {
        return Ok(name.to_string());
    }
    vals.get(name)
        .map(|&v| num(v))
        .ok_or_else(|| Error::MissingEqParam(name.to_string()))
}

impl ProblemDef {
    pub fn default_domain(&self) -> Domain {
        match self.base {
            Base::LinearOde => Domain {
                space: vec![],
                time: Some((0.0, 1.0)),
            },
            Base::Poisson => Domain {
                space: vec![(0.0, 1.0), (0.0, 1.0)],
                time: None,
            },
            Base::FisherKpp => Domain {
                space: vec![(-5.0, 5.0)],
                time: Some((0.0, 1.0)),
            },
            Base::Burgers => Domain {
                space: vec![(-1.0, 1.0)],
                time: Some((0.0, 1.0)),
            },
        }
    }

    /// Parameter values that generate the data (and the reference).
    pub fn true_params(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match (self.base, self.inverse) {
            (Base::LinearOde, false) | (Base::Poisson, false) => vec![("a", 1.0)],
            (Base::LinearOde, true) | (Base::Poisson, true) => vec![("a", 2.0)],
            (Base::FisherKpp, _) => vec![("D", 0.5), ("r", 1.0), ("gamma", 1.0)],
            (Base::Burgers, _) => vec![("nu", 0.01 / PI)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Starting values of the estimated parameters in inverse mode.
    pub fn initial_guess(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match self.base {
            Base::LinearOde | Base::Poisson => vec![("a", 1.0)],
            Base::FisherKpp => vec![("D", 1.0), ("r", 0.5), ("gamma", 0.5)],
            Base::Burgers => vec![("nu", 0.01)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn default_sampler(&self) -> SamplerSpec {
        let mut s = SamplerSpec::grid(match self.base {
            Base::LinearOde => 64,
            Base::Poisson => 1024,
            Base::FisherKpp => 1024,
            Base::Burgers => 2601,
        });
        if self.base == Base::Burgers {
            s.boundary_per_facet = Some(101);
            s.initial = Some(201);
        }
        s
    }

    pub fn equation(&self, source: Option<&Expr>) -> Result<Equation> {
        Ok(match self.base {
            Base::LinearOde => Equation::LinearOde,
            Base::Poisson => Equation::Poisson {
                source: match source {
                    Some(s) => s.clone(),
                    None => Expr::parse("2*pi^2*sin(pi*x)*sin(pi*y)")?,
                },
            },
            Base::FisherKpp => Equation::FisherKpp,
            Base::Burgers => Equation::Burgers,
        })
    }

    /// Closed-form solution at the given parameter values, if one exists.
    pub fn analytic(&self, vals: &BTreeMap<String, f64>, meta: &[String]) -> Result<Option<Expr>> {
        let t = |n: &str| term(vals, meta, n);
        let src = match self.base {
            Base::LinearOde => format!("exp({}*t)", t("a")?),
            Base::Poisson => format!("sin(pi*x)*sin(pi*y)/{}", t("a")?),
            Base::FisherKpp => {
                let (d, r, g) = (t("D")?, t("r")?, t("gamma")?);
                format!("({r}/{g})/(1 + exp(sqrt({r}/(6*{d}))*x - 5*{r}*t/6))^2")
            }
            Base::Burgers => return Ok(None),
        };
        Ok(Some(Expr::parse(&src)?))
    }

    /// Assembles the problem. Conditions that the closed form pins down use
    /// `solution` (the travelling wave's boundary values, for instance).
    pub fn problem(
        &self,
        domain: Domain,
        source: Option<&Expr>,
        solution: Option<&Expr>,
        meta: Vec<MetaParam>,
    ) -> Result<Problem> {
        let zero = || BoundaryCondition::Dirichlet { value: Expr::constant(0.0) };
        let (boundary, initial) = match self.base {
            Base::LinearOde => (vec![], Some(Expr::constant(1.0))),
            Base::Poisson => (vec![zero()], None),
            Base::FisherKpp => {
                let u = solution
                    .cloned()
                    .ok_or_else(|| Error::Config("fisher_kpp needs its closed-form solution".into()))?;
                (vec![BoundaryCondition::Dirichlet { value: u.clone() }], Some(u))
            }
            Base::Burgers => (vec![zero()], Some(Expr::parse("-sin(pi*x)")?)),
        };
        let p = Problem {
            equation: self.equation(source)?,
            domain,
            meta,
            boundary,
            initial,
        };
        p.validate()?;
        Ok(p)
    }
}
