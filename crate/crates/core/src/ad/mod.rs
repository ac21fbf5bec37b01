//! Automatic differentiation over batched tensors.
//!
//! Every differentiable value implements [`TensorOps`]. Three families do:
//!
//! * [`Tensor`]: plain values, no derivative information.
//! * [`Dual<T>`]: forward mode, carries a tangent alongside the primal.
//! * [`Rev<T>`]: reverse mode, records operations on a [`Tape<T>`].
//!
//! Because `Dual` and `Rev` are generic over any `TensorOps`, they nest.
//! The training loop differentiates a loss with respect to parameters on a
//! root tape of [`Var`] values, while input-space derivatives inside the loss
//! are taken with `Dual<Var>` (first order) or `Dual<Dual<Var>>` (second
//! order). The tangent arithmetic is itself recorded on the root tape, so the
//! parameter gradient of a residual containing `∂u/∂t` or `Δu` is exact.
//!
//! Backward rules of `Rev<T>` are written with `T` operations, so
//! `Rev<Rev<Var>>` gives reverse-over-reverse as well.
//!
//! Batching: residuals are written for one point, but every operation acts
//! row-wise on an `n × k` batch, so the same code evaluates all collocation
//! points at once.

mod dual;
mod tape;

pub use dual::Dual;
pub use tape::{Rev, Tape};

use std::fmt;

use crate::error::{Error, Result};
use crate::parameters::Params;
use crate::tensor::Tensor;

/// Root reverse-mode variable: the level at which parameter gradients are taken.
pub type Var = Rev<Tensor>;

/// Differentiable tensor operations. Shapes follow [`Tensor`] broadcasting.
pub trait TensorOps: Clone + fmt::Debug {
    /// Lifts a plain value with zero derivative.
    fn constant(t: Tensor) -> Self;

    /// Innermost primal value.
    fn value(&self) -> &Tensor;

    fn shape(&self) -> &[usize] {
        self.value().shape()
    }

    /// True when this value carries no derivative information at any level.
    fn is_constant(&self) -> bool;

    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn div(&self, rhs: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn offset(&self, c: f64) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tanh(&self) -> Self;
    fn sigmoid(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn matmul(&self, rhs: &Self) -> Self;
    fn transpose(&self) -> Self;
    /// Sum of all entries, rank 0.
    fn sum(&self) -> Self;
    fn sum_to_shape(&self, shape: &[usize]) -> Self;
    fn broadcast_to(&self, shape: &[usize]) -> Self;
    fn reshape(&self, shape: &[usize]) -> Self;
    fn slice_last(&self, start: usize, len: usize) -> Self;
    fn concat_last(parts: &[Self]) -> Self;

    fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    fn square(&self) -> Self {
        self.mul(self)
    }
}

/// A differentiation level that can embed root variables as constants.
/// Network weights live on the root tape and are lifted into whichever
/// level the surrogate is being evaluated at.
pub trait Level: TensorOps {
    fn lift(v: &Var) -> Self;
}

impl Level for Var {
    fn lift(v: &Var) -> Self {
        v.clone()
    }
}

impl<T: Level> Level for Rev<T> {
    fn lift(v: &Var) -> Self {
        Rev::constant(T::lift(v))
    }
}

impl<T: Level> Level for Dual<T> {
    fn lift(v: &Var) -> Self {
        Dual::constant(T::lift(v))
    }
}

/// A pure tensor function usable at any differentiation level.
pub trait Function {
    fn eval<T: Level>(&self, x: &T) -> Result<T>;
}

impl TensorOps for Tensor {
    fn constant(t: Tensor) -> Self {
        t
    }
    fn value(&self) -> &Tensor {
        self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn add(&self, rhs: &Self) -> Self {
        Tensor::add(self, rhs)
    }
    fn sub(&self, rhs: &Self) -> Self {
        Tensor::sub(self, rhs)
    }
    fn mul(&self, rhs: &Self) -> Self {
        Tensor::mul(self, rhs)
    }
    fn div(&self, rhs: &Self) -> Self {
        Tensor::div(self, rhs)
    }
    fn scale(&self, c: f64) -> Self {
        Tensor::scale(self, c)
    }
    fn offset(&self, c: f64) -> Self {
        self.map(|a| a + c)
    }
    fn powf(&self, p: f64) -> Self {
        self.map(|a| a.powf(p))
    }
    fn exp(&self) -> Self {
        self.map(f64::exp)
    }
    fn ln(&self) -> Self {
        self.map(f64::ln)
    }
    fn sin(&self) -> Self {
        self.map(f64::sin)
    }
    fn cos(&self) -> Self {
        self.map(f64::cos)
    }
    fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }
    fn sigmoid(&self) -> Self {
        self.map(|a| 1.0 / (1.0 + (-a).exp()))
    }
    fn sqrt(&self) -> Self {
        self.map(f64::sqrt)
    }
    fn matmul(&self, rhs: &Self) -> Self {
        Tensor::matmul(self, rhs)
    }
    fn transpose(&self) -> Self {
        Tensor::transpose(self)
    }
    fn sum(&self) -> Self {
        Tensor::sum(self)
    }
    fn sum_to_shape(&self, shape: &[usize]) -> Self {
        Tensor::sum_to_shape(self, shape)
    }
    fn broadcast_to(&self, shape: &[usize]) -> Self {
        Tensor::broadcast_to(self, shape)
    }
    fn reshape(&self, shape: &[usize]) -> Self {
        Tensor::reshape(self, shape)
    }
    fn slice_last(&self, start: usize, len: usize) -> Self {
        Tensor::slice_last(self, start, len)
    }
    fn concat_last(parts: &[Self]) -> Self {
        Tensor::concat_last(parts)
    }
}

/// Forward mode at an arbitrary level: returns `(f(x), J_f(x)·v)`.
pub fn jvp_at<T: Level, F: Function>(f: &F, x: &T, v: &T) -> Result<(T, T)> {
    if x.shape() != v.shape() {
        return Err(Error::TangentShape {
            input: x.shape().to_vec(),
            tangent: v.shape().to_vec(),
        });
    }
    let y = f.eval(&Dual::new(x.clone(), v.clone()))?;
    let tangent = y.tangent_or_zero();
    Ok((y.primal, tangent))
}

/// `(f(x), J_f(x)·v)` for plain tensors.
pub fn jvp<F: Function>(f: &F, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (y, t) = jvp_at(f, &Var::constant(x.clone()), &Var::constant(v.clone()))?;
    Ok((y.value().clone(), t.value().clone()))
}

/// `(f(x), ∇f(x))` for a scalar-valued `f`, via one forward trace and one
/// backward sweep.
pub fn vjp<F: Function>(f: &F, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let y = f.eval(&leaf)?;
    if y.value().len() != 1 {
        return Err(Error::ScalarOutputRequired(y.shape().to_vec()));
    }
    let g = tape.gradient(&y, &[&leaf])?;
    Ok((y.value().clone(), g.into_iter().next().unwrap()))
}

/// `vᵀ H_f(x) v` via forward-over-forward at an arbitrary level. For a
/// batched `f` (one output per row) this is the per-row second directional
/// derivative.
pub fn second_directional_at<T: Level, F: Function>(f: &F, x: &T, v: &T) -> Result<T> {
    if x.shape() != v.shape() {
        return Err(Error::TangentShape {
            input: x.shape().to_vec(),
            tangent: v.shape().to_vec(),
        });
    }
    let inner = Dual::new(x.clone(), v.clone());
    let outer = Dual::new(inner, Dual::constant(v.clone()));
    let y = f.eval(&outer)?;
    Ok(y.tangent_or_zero().tangent_or_zero())
}

pub fn second_directional<F: Function>(f: &F, x: &Tensor, v: &Tensor) -> Result<Tensor> {
    let y = second_directional_at(f, &Var::constant(x.clone()), &Var::constant(v.clone()))?;
    let out = y.value().clone();
    if out.len() != 1 {
        return Err(Error::ScalarOutputRequired(out.shape().to_vec()));
    }
    Ok(out)
}

/// Value and gradient of a scalar loss over every leaf of both parameter
/// branches. The loss may take input-space derivatives internally; those
/// are recorded on the same tape, so the gradient is exact.
pub fn grad_wrt_params<F>(loss: F, p: &Params) -> Result<(f64, Params)>
where
    F: FnOnce(&Params<Var>) -> Result<Var>,
{
    let tape = Tape::new();
    let vars = p.map_leaves(|_, t| tape.leaf(t.clone()));
    let out = loss(&vars)?;
    if out.value().len() != 1 {
        return Err(Error::ScalarOutputRequired(out.shape().to_vec()));
    }
    let leaves: Vec<&Var> = vars.leaves().into_iter().map(|(_, v)| v).collect();
    let mut grads = tape.gradient(&out, &leaves)?.into_iter();
    let g = p.map_leaves(|_, _| grads.next().expect("one gradient per leaf"));
    Ok((out.value().item(), g))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;
    impl Function for Square {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.square())
        }
    }

    struct Sin;
    impl Function for Sin {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.sin())
        }
    }

    struct SumSquares;
    impl Function for SumSquares {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.square().sum())
        }
    }

    struct Five;
    impl Function for Five {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.scale(0.0).sum().offset(5.0))
        }
    }

    struct ExpTimes;
    impl Function for ExpTimes {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.slice_last(0, 1).exp().mul(&x.slice_last(1, 1)).sum())
        }
    }

    struct XSquaredY;
    impl Function for XSquaredY {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.slice_last(0, 1).square().mul(&x.slice_last(1, 1)).sum())
        }
    }

    struct Identity;
    impl Function for Identity {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.clone())
        }
    }

    fn s(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn jvp_of_square_and_sin() {
        let (y, t) = jvp(&Square, &s(3.0), &s(1.0)).unwrap();
        assert_eq!((y.item(), t.item()), (9.0, 6.0));
        let (y, t) = jvp(&Sin, &s(0.0), &s(1.0)).unwrap();
        assert_eq!((y.item(), t.item()), (0.0, 1.0));
    }

    #[test]
    fn jvp_rejects_mismatched_tangent() {
        let err = jvp(&Square, &Tensor::zeros(&[3]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(err.to_string().contains("tangent shape"), "{err}");
    }

    #[test]
    fn vjp_examples() {
        let (y, g) = vjp(&SumSquares, &Tensor::vector(vec![1., 2., 3.])).unwrap();
        assert_eq!(y.item(), 14.0);
        assert_eq!(g.data(), &[2., 4., 6.]);

        let (y, g) = vjp(&Five, &Tensor::vector(vec![1., -2.])).unwrap();
        assert_eq!(y.item(), 5.0);
        assert_eq!(g.data(), &[0., 0.]);

        let (y, g) = vjp(&ExpTimes, &Tensor::vector(vec![0., 2.])).unwrap();
        assert_eq!(y.item(), 2.0);
        assert_eq!(g.data(), &[2., 1.]);
    }

    #[test]
    fn vjp_requires_scalar_output() {
        let err = vjp(&Identity, &Tensor::vector(vec![1., 2.])).unwrap_err();
        assert!(err.to_string().contains("scalar output required"), "{err}");
    }

    #[test]
    fn second_directional_examples() {
        assert_eq!(second_directional(&Square, &s(5.0), &s(1.0)).unwrap().item(), 2.0);
        let x = Tensor::vector(vec![1., 1.]);
        let v = Tensor::vector(vec![1., 0.]);
        assert_eq!(second_directional(&XSquaredY, &x, &v).unwrap().item(), 2.0);
    }

    struct Cube;
    impl Function for Cube {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            Ok(x.powf(3.0))
        }
    }

    /// x ↦ d/dx x³ via forward mode, so that reverse over it is a second derivative.
    struct CubeDerivative;
    impl Function for CubeDerivative {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            let ones = T::constant(Tensor::ones(x.shape()));
            Ok(jvp_at(&Cube, x, &ones)?.1.sum())
        }
    }

    #[test]
    fn reverse_over_forward_is_exact() {
        for &x in &[-1.5, 0.3, 2.0] {
            let (d1, d2) = vjp(&CubeDerivative, &s(x)).unwrap();
            assert!((d1.item() - 3.0 * x * x).abs() < 1e-12);
            assert!((d2.item() - 6.0 * x).abs() < 1e-10);
        }
    }

    struct CubeGradient;
    impl Function for CubeGradient {
        fn eval<T: Level>(&self, x: &T) -> Result<T> {
            let tape = Tape::new();
            let leaf = tape.leaf(x.clone());
            let y = Cube.eval(&leaf)?.sum();
            Ok(tape.gradient(&y, &[&leaf])?.remove(0).sum())
        }
    }

    #[test]
    fn gradient_over_both_branches() {
        use crate::networks::{Activation, MlpSpec};
        use crate::parameters::EqParam;
        let nn = MlpSpec::new(vec![1, 3, 1], Activation::Tanh, 0).init().unwrap();
        let p = Params::new(nn).with_eq("a", EqParam::scalar(1.5));
        let (v, g) = grad_wrt_params(
            |p| match p.eq_param("a")? {
                EqParam::Scalar(a) => Ok(a.square()),
                _ => unreachable!(),
            },
            &p,
        )
        .unwrap();
        assert_eq!(v, 2.25);
        for (path, t) in g.leaves() {
            let expected = if path == "eq.a" { 3.0 } else { 0.0 };
            assert!(t.data().iter().all(|&x| x == expected), "{path}");
        }
    }

    #[test]
    fn reverse_over_reverse_is_exact() {
        let (d1, d2) = vjp(&CubeGradient, &s(1.7)).unwrap();
        assert!((d1.item() - 3.0 * 1.7 * 1.7).abs() < 1e-12);
        assert!((d2.item() - 6.0 * 1.7).abs() < 1e-12);
    }
}
