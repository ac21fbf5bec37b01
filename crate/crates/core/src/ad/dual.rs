use super::TensorOps;
use crate::tensor::Tensor;

/// Forward-mode value: `(primal, tangent)` obeying `(a,ȧ)(b,ḃ) = (ab, aḃ + ȧb)`.
///
/// A missing tangent is an exact zero; operations skip work on it.
#[derive(Clone, Debug)]
pub struct Dual<T> {
    pub primal: T,
    pub tangent: Option<T>,
}

impl<T: TensorOps> Dual<T> {
    pub fn new(primal: T, tangent: T) -> Self {
        assert_eq!(primal.shape(), tangent.shape(), "tangent shape");
        Self {
            primal,
            tangent: Some(tangent),
        }
    }

    pub fn constant(primal: T) -> Self {
        Self {
            primal,
            tangent: None,
        }
    }

    /// Tangent with zeros materialised when absent.
    pub fn tangent_or_zero(&self) -> T {
        self.tangent
            .clone()
            .unwrap_or_else(|| T::constant(Tensor::zeros(self.primal.shape())))
    }

    fn with(primal: T, tangent: Option<T>) -> Self {
        Self { primal, tangent }
    }

    fn chain(&self, primal: T, dy_dx: impl FnOnce() -> T) -> Self {
        let tangent = self.tangent.as_ref().map(|t| t.mul(&dy_dx()));
        Self::with(primal, tangent)
    }

    fn map_tangent(&self, primal: T, f: impl FnOnce(&T) -> T) -> Self {
        Self::with(primal, self.tangent.as_ref().map(f))
    }
}

fn broadcast_opt<T: TensorOps>(t: Option<T>, shape: &[usize]) -> Option<T> {
    t.map(|t| t.broadcast_to(shape))
}

impl<T: TensorOps> TensorOps for Dual<T> {
    fn constant(t: Tensor) -> Self {
        Dual::constant(T::constant(t))
    }

    fn value(&self) -> &Tensor {
        self.primal.value()
    }

    fn is_constant(&self) -> bool {
        self.tangent.is_none() && self.primal.is_constant()
    }

    fn add(&self, rhs: &Self) -> Self {
        let primal = self.primal.add(&rhs.primal);
        let tangent = match (&self.tangent, &rhs.tangent) {
            (Some(a), Some(b)) => Some(a.add(b)),
            (Some(a), None) => broadcast_opt(Some(a.clone()), primal.shape()),
            (None, Some(b)) => broadcast_opt(Some(b.clone()), primal.shape()),
            (None, None) => None,
        };
        Self::with(primal, tangent)
    }

    fn sub(&self, rhs: &Self) -> Self {
        let primal = self.primal.sub(&rhs.primal);
        let tangent = match (&self.tangent, &rhs.tangent) {
            (Some(a), Some(b)) => Some(a.sub(b)),
            (Some(a), None) => broadcast_opt(Some(a.clone()), primal.shape()),
            (None, Some(b)) => broadcast_opt(Some(b.neg()), primal.shape()),
            (None, None) => None,
        };
        Self::with(primal, tangent)
    }

    fn mul(&self, rhs: &Self) -> Self {
        let primal = self.primal.mul(&rhs.primal);
        let tangent = match (&self.tangent, &rhs.tangent) {
            (Some(a), Some(b)) => Some(a.mul(&rhs.primal).add(&self.primal.mul(b))),
            (Some(a), None) => broadcast_opt(Some(a.mul(&rhs.primal)), primal.shape()),
            (None, Some(b)) => broadcast_opt(Some(self.primal.mul(b)), primal.shape()),
            (None, None) => None,
        };
        Self::with(primal, tangent)
    }

    fn div(&self, rhs: &Self) -> Self {
        let primal = self.primal.div(&rhs.primal);
        let tangent = match (&self.tangent, &rhs.tangent) {
            (Some(a), Some(b)) => Some(a.sub(&primal.mul(b)).div(&rhs.primal)),
            (Some(a), None) => broadcast_opt(Some(a.div(&rhs.primal)), primal.shape()),
            (None, Some(b)) => {
                broadcast_opt(Some(primal.mul(b).div(&rhs.primal).neg()), primal.shape())
            }
            (None, None) => None,
        };
        Self::with(primal, tangent)
    }

    fn scale(&self, c: f64) -> Self {
        self.map_tangent(self.primal.scale(c), |t| t.scale(c))
    }

    fn offset(&self, c: f64) -> Self {
        Self::with(self.primal.offset(c), self.tangent.clone())
    }

    fn powf(&self, p: f64) -> Self {
        self.chain(self.primal.powf(p), || self.primal.powf(p - 1.0).scale(p))
    }

    fn exp(&self) -> Self {
        let y = self.primal.exp();
        self.chain(y.clone(), || y)
    }

    fn ln(&self) -> Self {
        self.map_tangent(self.primal.ln(), |t| t.div(&self.primal))
    }

    fn sin(&self) -> Self {
        self.chain(self.primal.sin(), || self.primal.cos())
    }

    fn cos(&self) -> Self {
        self.chain(self.primal.cos(), || self.primal.sin().neg())
    }

    fn tanh(&self) -> Self {
        let y = self.primal.tanh();
        self.chain(y.clone(), || y.square().neg().offset(1.0))
    }

    fn sigmoid(&self) -> Self {
        let y = self.primal.sigmoid();
        self.chain(y.clone(), || y.mul(&y.neg().offset(1.0)))
    }

    fn sqrt(&self) -> Self {
        let y = self.primal.sqrt();
        self.map_tangent(y.clone(), |t| t.div(&y).scale(0.5))
    }

    fn matmul(&self, rhs: &Self) -> Self {
        let primal = self.primal.matmul(&rhs.primal);
        let tangent = match (&self.tangent, &rhs.tangent) {
            (Some(a), Some(b)) => Some(a.matmul(&rhs.primal).add(&self.primal.matmul(b))),
            (Some(a), None) => Some(a.matmul(&rhs.primal)),
            (None, Some(b)) => Some(self.primal.matmul(b)),
            (None, None) => None,
        };
        Self::with(primal, tangent)
    }

    fn transpose(&self) -> Self {
        self.map_tangent(self.primal.transpose(), T::transpose)
    }

    fn sum(&self) -> Self {
        self.map_tangent(self.primal.sum(), T::sum)
    }

    fn sum_to_shape(&self, shape: &[usize]) -> Self {
        self.map_tangent(self.primal.sum_to_shape(shape), |t| t.sum_to_shape(shape))
    }

    fn broadcast_to(&self, shape: &[usize]) -> Self {
        self.map_tangent(self.primal.broadcast_to(shape), |t| t.broadcast_to(shape))
    }

    fn reshape(&self, shape: &[usize]) -> Self {
        self.map_tangent(self.primal.reshape(shape), |t| t.reshape(shape))
    }

    fn slice_last(&self, start: usize, len: usize) -> Self {
        self.map_tangent(self.primal.slice_last(start, len), |t| t.slice_last(start, len))
    }

    fn concat_last(parts: &[Self]) -> Self {
        let primals: Vec<T> = parts.iter().map(|p| p.primal.clone()).collect();
        let primal = T::concat_last(&primals);
        let tangent = if parts.iter().all(|p| p.tangent.is_none()) {
            None
        } else {
            let ts: Vec<T> = parts.iter().map(Dual::tangent_or_zero).collect();
            Some(T::concat_last(&ts))
        };
        Self::with(primal, tangent)
    }
}
