use std::fmt;

use serde::{Deserialize, Serialize};

use super::operators::{divergence, gradient, jet, AdMode};
use crate::ad::{Function, Level, TensorOps, Var};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::networks::{Network, ParamTree};
use crate::parameters::{Coords, EqParam, Params};

const SPACE_NAMES: [&str; 3] = ["x", "y", "z"];

/// Column layout of a point batch: `[t?, x, y?, z?, meta...]`. Meta columns
/// carry equation parameters fed to the surrogate as extra inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub has_time: bool,
    pub space_dim: usize,
    pub meta: Vec<String>,
}

impl Layout {
    pub fn new(has_time: bool, space_dim: usize, meta: Vec<String>) -> Self {
        Self { has_time, space_dim, meta }
    }

    pub fn ncols(&self) -> usize {
        usize::from(self.has_time) + self.space_dim + self.meta.len()
    }

    /// Columns of the physical domain only.
    pub fn domain_cols(&self) -> usize {
        usize::from(self.has_time) + self.space_dim
    }

    pub fn time_axis(&self) -> Option<usize> {
        self.has_time.then_some(0)
    }

    pub fn space_axes(&self) -> Vec<usize> {
        let off = usize::from(self.has_time);
        (off..off + self.space_dim).collect()
    }

    pub fn names(&self) -> Vec<String> {
        let mut n = Vec::with_capacity(self.ncols());
        if self.has_time {
            n.push("t".to_string());
        }
        n.extend(SPACE_NAMES[..self.space_dim].iter().map(|s| s.to_string()));
        n.extend(self.meta.iter().cloned());
        n
    }

    pub fn coords<T: TensorOps>(&self, x: &T) -> Coords<T> {
        let mut c = Coords::new();
        for (i, name) in self.names().into_iter().enumerate() {
            c.push(name, x.slice_last(i, 1));
        }
        c
    }
}

/// A network bound to its weights, usable at any differentiation level.
pub struct NetField<'a> {
    pub net: &'a Network,
    pub nn: &'a ParamTree<Var>,
}

impl Function for NetField<'_> {
    fn eval<T: Level>(&self, x: &T) -> Result<T> {
        self.net.forward(self.nn, x)
    }
}

/// A closed-form field over the named coordinates of a layout.
pub struct ExprField<'a> {
    pub expr: &'a Expr,
    pub layout: &'a Layout,
}

impl ExprField<'_> {
    /// Plain values at a batch of points, `n × 1`.
    pub fn eval_tensor(&self, x: &crate::tensor::Tensor) -> Result<crate::tensor::Tensor> {
        Ok(self.eval(&Var::constant(x.clone()))?.value().clone())
    }
}

impl Function for ExprField<'_> {
    fn eval<T: Level>(&self, x: &T) -> Result<T> {
        let c = self.layout.coords(x);
        let v = self.expr.eval(&|n| c.get(n))?;
        // Constant expressions come back rank 0.
        Ok(v.broadcast_to(&[x.shape()[0], 1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "equation", rename_all = "snake_case")]
pub enum Equation {
    /// `u_t − a u = 0`.
    LinearOde,
    /// `−∇·(a∇u) − f = 0`.
    Poisson { source: Expr },
    /// `u_t − D Δu − u (r − γ u) = 0`.
    FisherKpp,
    /// `u_t + u u_x − ν u_xx = 0`.
    Burgers,
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Equation::LinearOde => "linear_ode",
            Equation::Poisson { .. } => "poisson",
            Equation::FisherKpp => "fisher_kpp",
            Equation::Burgers => "burgers",
        })
    }
}

impl Equation {
    pub fn required_params(&self) -> &'static [&'static str] {
        match self {
            Equation::LinearOde | Equation::Poisson { .. } => &["a"],
            Equation::FisherKpp => &["D", "r", "gamma"],
            Equation::Burgers => &["nu"],
        }
    }

    pub fn check_layout(&self, l: &Layout) -> Result<()> {
        let ok = match self {
            Equation::LinearOde => l.has_time && l.space_dim == 0,
            Equation::Poisson { .. } => !l.has_time && l.space_dim >= 1,
            Equation::FisherKpp => l.has_time && l.space_dim >= 1,
            Equation::Burgers => l.has_time && l.space_dim == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidDomain(format!(
                "{self} does not fit a domain with time={} and {} spatial axes",
                l.has_time, l.space_dim
            )))
        }
    }

    /// Pointwise residual `N[u](x)` over a batch, `n × 1`.
    pub fn residual<T: Level, U: Function>(
        &self,
        u: &U,
        params: &Params<Var>,
        layout: &Layout,
        x: &T,
        mode: AdMode,
    ) -> Result<T> {
        let coords = layout.coords(x);
        let param = |name: &str| params.eq_param(name)?.eval(&coords);
        let space = layout.space_axes();
        match self {
            Equation::LinearOde => {
                let j = jet(u, x, &[0], &[], mode)?;
                Ok(j.d(0)?.sub(&param("a")?.mul(&j.value)))
            }
            Equation::Poisson { source } => {
                let f = source.eval(&|n| coords.get(n))?;
                let a = params.eq_param("a")?;
                let div = match a {
                    EqParam::Scalar(_) => {
                        let lap = jet(u, x, &[], &space, mode)?.laplacian(&space)?;
                        param("a")?.mul(&lap)
                    }
                    _ => {
                        let flux = Flux {
                            u,
                            a,
                            layout,
                            axes: &space,
                            mode,
                        };
                        divergence(&flux, x, &space, mode)?
                    }
                };
                Ok(div.neg().sub(&f))
            }
            Equation::FisherKpp => {
                let j = jet(u, x, &[0], &space, mode)?;
                let lap = j.laplacian(&space)?;
                let reaction = j.value.mul(&param("r")?.sub(&param("gamma")?.mul(&j.value)));
                Ok(j.d(0)?.sub(&param("D")?.mul(&lap)).sub(&reaction))
            }
            Equation::Burgers => {
                let j = jet(u, x, &[0], &[1], mode)?;
                let adv = j.value.mul(&j.d(1)?);
                Ok(j.d(0)?.add(&adv).sub(&param("nu")?.mul(&j.dd(1)?)))
            }
        }
    }
}

/// `a(x) ∇u(x)` as a vector field.
struct Flux<'a, U> {
    u: &'a U,
    a: &'a EqParam<Var>,
    layout: &'a Layout,
    axes: &'a [usize],
    mode: AdMode,
}

impl<U: Function> Function for Flux<'_, U> {
    fn eval<T: Level>(&self, x: &T) -> Result<T> {
        let a = self.a.eval(&self.layout.coords(x))?;
        Ok(a.mul(&gradient(self.u, x, self.axes, self.mode)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameters::EqParam;
    use crate::tensor::Tensor;

    fn scalar_params(pairs: &[(&str, f64)]) -> Params<Var> {
        let mut p = Params::new(ParamTree::new());
        for &(n, v) in pairs {
            p = p.with_eq(n, EqParam::scalar(v));
        }
        p.as_constants()
    }

    fn residual_max(eq: &Equation, u: &str, p: &Params<Var>, layout: &Layout, rows: &[Vec<f64>]) -> f64 {
        let e = Expr::parse(u).unwrap();
        let field = ExprField { expr: &e, layout };
        let x = Var::constant(Tensor::from_rows(rows).unwrap());
        let mut worst: f64 = 0.0;
        for mode in [AdMode::Forward, AdMode::Reverse] {
            let r = eq.residual(&field, p, layout, &x, mode).unwrap();
            worst = worst.max(r.value().data().iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        worst
    }

    #[test]
    fn manufactured_solutions_have_zero_residual() {
        let rows2: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.9, 0.95]];

        let ode = Layout::new(true, 0, vec![]);
        let p = scalar_params(&[("a", 2.0)]);
        let t: Vec<Vec<f64>> = vec![vec![0.0], vec![0.3], vec![1.0]];
        assert!(residual_max(&Equation::LinearOde, "exp(2*t)", &p, &ode, &t) < 1e-12);

        let pl = Layout::new(false, 2, vec![]);
        let eq = Equation::Poisson {
            source: Expr::parse("2*pi^2*sin(pi*x)*sin(pi*y)").unwrap(),
        };
        let p = scalar_params(&[("a", 1.0)]);
        assert!(residual_max(&eq, "sin(pi*x)*sin(pi*y)", &p, &pl, &rows2) < 1e-12);

        // Variable coefficient a = 1 + x, u = x²: −(a u')' = −(2 + 4x).
        let eq = Equation::Poisson {
            source: Expr::parse("-(2 + 4*x)").unwrap(),
        };
        let p = Params::new(ParamTree::new())
            .with_eq("a", EqParam::Field(Expr::parse("1 + x").unwrap()))
            .as_constants();
        assert!(residual_max(&eq, "x^2", &p, &pl, &rows2) < 1e-12);

        let bl = Layout::new(true, 1, vec![]);
        let p = scalar_params(&[("nu", 0.3)]);
        // Steady viscous shock u = −tanh(x/(2ν)).
        assert!(residual_max(&Equation::Burgers, "-tanh(x/0.6)", &p, &bl, &rows2) < 1e-12);

        let p = scalar_params(&[("D", 0.5), ("r", 1.0), ("gamma", 2.0)]);
        assert!(residual_max(&Equation::FisherKpp, "0.5", &p, &bl, &rows2) < 1e-12);
    }

    #[test]
    fn layout_checks() {
        assert!(Equation::Burgers.check_layout(&Layout::new(true, 2, vec![])).is_err());
        assert!(Equation::LinearOde.check_layout(&Layout::new(true, 0, vec!["a".into()])).is_ok());
        assert_eq!(Layout::new(true, 2, vec!["k".into()]).names(), vec!["t", "x", "y", "k"]);
    }
}
