//! Input-space differential operators over a batch of points, in forward or
//! reverse mode.
//!
//! Every operator takes the point batch `x` (`n × k`) at some level `T` and
//! returns columns at the same level, so results stay differentiable with
//! respect to parameters recorded further down.

use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Function, Level, Tape, TensorOps};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdMode {
    #[default]
    Forward,
    Reverse,
}

fn unit_direction(shape: &[usize], axis: usize) -> Tensor {
    let k = shape[shape.len() - 1];
    let mut data = vec![0.0; shape.iter().product()];
    for row in data.chunks_mut(k) {
        row[axis] = 1.0;
    }
    Tensor::new(shape, data).expect("direction shape")
}

fn check_axes(x: &[usize], axes: &[usize]) -> Result<()> {
    let k = x.last().copied().unwrap_or(0);
    if x.len() != 2 {
        return Err(Error::Shape(format!("point batch must be n × k, got {x:?}")));
    }
    if let Some(&bad) = axes.iter().find(|&&a| a >= k) {
        return Err(Error::DimMismatch { expected: k, got: bad + 1 });
    }
    Ok(())
}

/// Value, first derivatives and unmixed second derivatives of a scalar
/// field at a batch of points.
#[derive(Clone, Debug)]
pub struct Jet<T> {
    pub value: T,
    /// `∂u/∂x_a` for each requested first-order axis, `n × 1` each.
    pub first: Vec<(usize, T)>,
    /// `∂²u/∂x_a²` for each requested second-order axis.
    pub second: Vec<(usize, T)>,
}

impl<T: Clone> Jet<T> {
    fn lookup(list: &[(usize, T)], axis: usize) -> Option<T> {
        list.iter().find(|(a, _)| *a == axis).map(|(_, v)| v.clone())
    }

    pub fn d(&self, axis: usize) -> Result<T> {
        Self::lookup(&self.first, axis).ok_or_else(|| Error::Shape(format!("no first derivative on axis {axis}")))
    }

    pub fn dd(&self, axis: usize) -> Result<T> {
        Self::lookup(&self.second, axis).ok_or_else(|| Error::Shape(format!("no second derivative on axis {axis}")))
    }
}

impl<T: TensorOps> Jet<T> {
    /// Sum of the second derivatives over `axes`.
    pub fn laplacian(&self, axes: &[usize]) -> Result<T> {
        let mut acc: Option<T> = None;
        for &a in axes {
            let v = self.dd(a)?;
            acc = Some(match acc {
                None => v,
                Some(s) => s.add(&v),
            });
        }
        acc.ok_or_else(|| Error::Shape("laplacian over no axes".into()))
    }
}

/// Computes `u`, `∂u/∂x_a` for `a ∈ first ∪ second`, and `∂²u/∂x_a²` for
/// `a ∈ second`. Forward mode runs one nested dual pass per axis; reverse
/// mode runs one outer sweep plus one inner sweep per second-order axis.
pub fn jet<T: Level, F: Function>(u: &F, x: &T, first: &[usize], second: &[usize], mode: AdMode) -> Result<Jet<T>> {
    check_axes(x.shape(), first)?;
    check_axes(x.shape(), second)?;
    let mut axes: Vec<usize> = first.iter().chain(second).copied().collect();
    axes.sort_unstable();
    axes.dedup();
    match mode {
        AdMode::Forward => jet_forward(u, x, &axes, second),
        AdMode::Reverse => jet_reverse(u, x, &axes, second),
    }
}

fn jet_forward<T: Level, F: Function>(u: &F, x: &T, axes: &[usize], second: &[usize]) -> Result<Jet<T>> {
    let mut value = None;
    let mut out_first = Vec::new();
    let mut out_second = Vec::new();
    for &a in axes {
        let e = T::constant(unit_direction(x.shape(), a));
        if second.contains(&a) {
            let outer = Dual::new(Dual::new(x.clone(), e.clone()), Dual::constant(e));
            let y = u.eval(&outer)?;
            value.get_or_insert_with(|| y.primal.primal.clone());
            out_first.push((a, y.primal.tangent_or_zero()));
            out_second.push((a, y.tangent_or_zero().tangent_or_zero()));
        } else {
            let y = u.eval(&Dual::new(x.clone(), e))?;
            value.get_or_insert_with(|| y.primal.clone());
            out_first.push((a, y.tangent_or_zero()));
        }
    }
    let value = match value {
        Some(v) => v,
        None => u.eval(x)?,
    };
    Ok(Jet {
        value,
        first: out_first,
        second: out_second,
    })
}

fn jet_reverse<T: Level, F: Function>(u: &F, x: &T, axes: &[usize], second: &[usize]) -> Result<Jet<T>> {
    if axes.is_empty() {
        return Ok(Jet {
            value: u.eval(x)?,
            first: Vec::new(),
            second: Vec::new(),
        });
    }
    let inner = Tape::<T>::new();
    let xi = inner.leaf(x.clone());
    if second.is_empty() {
        let y = u.eval(&xi)?;
        // Rows are independent, so the gradient of the batch sum is the
        // per-row gradient.
        let g = inner.gradient(&y.sum(), &[&xi])?.remove(0);
        return Ok(Jet {
            value: y.inner().clone(),
            first: axes.iter().map(|&a| (a, g.slice_last(a, 1))).collect(),
            second: Vec::new(),
        });
    }
    let outer = Tape::new();
    let xo = outer.leaf(xi.clone());
    let y = u.eval(&xo)?;
    let g = outer.gradient(&y.sum(), &[&xo])?.remove(0);
    let mut out_second = Vec::new();
    for &a in second {
        let ga = g.slice_last(a, 1);
        let h = inner.gradient(&ga.sum(), &[&xi])?.remove(0);
        out_second.push((a, h.slice_last(a, 1)));
    }
    Ok(Jet {
        value: y.inner().inner().clone(),
        first: axes.iter().map(|&a| (a, g.slice_last(a, 1).inner().clone())).collect(),
        second: out_second,
    })
}

/// `∇u` restricted to `axes`, as an `n × |axes|` batch.
pub fn gradient<T: Level, F: Function>(u: &F, x: &T, axes: &[usize], mode: AdMode) -> Result<T> {
    let j = jet(u, x, axes, &[], mode)?;
    let cols: Vec<T> = axes.iter().map(|&a| j.d(a)).collect::<Result<_>>()?;
    Ok(T::concat_last(&cols))
}

/// `Σ_i ∂F_i/∂x_{axes[i]}` for a vector field `F` with `|axes|` outputs.
pub fn divergence<T: Level, F: Function>(field: &F, x: &T, axes: &[usize], mode: AdMode) -> Result<T> {
    check_axes(x.shape(), axes)?;
    let mut terms = Vec::with_capacity(axes.len());
    match mode {
        AdMode::Forward => {
            for (i, &a) in axes.iter().enumerate() {
                let e = T::constant(unit_direction(x.shape(), a));
                let y = field.eval(&Dual::new(x.clone(), e))?;
                check_field_width(y.primal.shape(), axes.len())?;
                terms.push(y.tangent_or_zero().slice_last(i, 1));
            }
        }
        AdMode::Reverse => {
            let tape = Tape::<T>::new();
            let xr = tape.leaf(x.clone());
            let y = field.eval(&xr)?;
            check_field_width(y.shape(), axes.len())?;
            for (i, &a) in axes.iter().enumerate() {
                let g = tape.gradient(&y.slice_last(i, 1).sum(), &[&xr])?.remove(0);
                terms.push(g.slice_last(a, 1));
            }
        }
    }
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::Shape("divergence over no axes".into()))?;
    Ok(it.fold(first, |acc, t| acc.add(&t)))
}

fn check_field_width(shape: &[usize], width: usize) -> Result<()> {
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::Shape(format!("vector field must be n × {width}, got {shape:?}")));
    }
    Ok(())
}

/// `Σ_a ∂²u/∂x_a²` over `axes`.
pub fn laplacian<T: Level, F: Function>(u: &F, x: &T, axes: &[usize], mode: AdMode) -> Result<T> {
    jet(u, x, &[], axes, mode)?.laplacian(axes)
}

/// The gradient of `u` as a vector field, so it can be fed to [`divergence`].
pub struct GradField<'a, F> {
    pub u: &'a F,
    pub axes: &'a [usize],
    pub mode: AdMode,
}

impl<F: Function> Function for GradField<'_, F> {
    fn eval<T: Level>(&self, x: &T) -> Result<T> {
        gradient(self.u, x, self.axes, self.mode)
    }
}
