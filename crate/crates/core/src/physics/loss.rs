use serde::{Deserialize, Serialize};

use super::{with_meta_fields, NetField, Problem};
use crate::ad::{Tape, TensorOps, Var};
use crate::error::{Error, Result};
use crate::networks::Network;
use crate::parallel::{add_into, chunk_ranges, pairwise_reduce, Executor};
use crate::parameters::{DerivativeMask, LossTerm, Params};
use crate::sampling::{CollocationBatch, Facet};
use crate::tensor::{pairwise_sum, Tensor};

use super::operators::AdMode;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub dynamic: f64,
    pub boundary: f64,
    pub initial: f64,
    pub observations: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dynamic: 1.0,
            boundary: 1.0,
            initial: 1.0,
            observations: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Dynamic => self.dynamic,
            LossTerm::Boundary => self.boundary,
            LossTerm::Initial => self.initial,
            LossTerm::Observations => self.observations,
        }
    }
}

/// Per-term mean squared errors (zero for absent terms) and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub dynamic: f64,
    pub boundary: f64,
    pub initial: f64,
    pub observations: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Dynamic => self.dynamic,
            LossTerm::Boundary => self.boundary,
            LossTerm::Initial => self.initial,
            LossTerm::Observations => self.observations,
        }
    }

    fn set(&mut self, term: LossTerm, v: f64) {
        match term {
            LossTerm::Dynamic => self.dynamic = v,
            LossTerm::Boundary => self.boundary = v,
            LossTerm::Initial => self.initial = v,
            LossTerm::Observations => self.observations = v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub weights: LossWeights,
    pub mode: AdMode,
    /// Rows per independently evaluated chunk. Fixed rather than derived
    /// from the thread count so results do not depend on it.
    pub chunk_size: usize,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            mode: AdMode::Forward,
            chunk_size: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossEval {
    pub components: LossComponents,
    /// Gradient of the total in canonical leaf order, each term masked
    /// before summation. Present when a mask was supplied.
    pub gradient: Option<Vec<f64>>,
}

/// Mean of the squared entries summed over output columns: `Σ r² / rows`.
pub fn mse(residual: &Tensor) -> f64 {
    let rows = residual.nrows().max(1);
    pairwise_sum(&residual.data().iter().map(|r| r * r).collect::<Vec<_>>()) / rows as f64
}

enum Piece {
    Dynamic(Tensor),
    Boundary(Facet, Tensor),
    Initial(Tensor),
    Observations(Tensor, Tensor),
}

impl Piece {
    fn term(&self) -> LossTerm {
        match self {
            Piece::Dynamic(_) => LossTerm::Dynamic,
            Piece::Boundary(..) => LossTerm::Boundary,
            Piece::Initial(_) => LossTerm::Initial,
            Piece::Observations(..) => LossTerm::Observations,
        }
    }
}

fn pieces(batch: &CollocationBatch, problem: &Problem, opts: &LossOptions) -> Result<(Vec<Piece>, [usize; 4])> {
    let chunk = opts.chunk_size;
    let w = opts.weights;
    let mut out = Vec::new();
    let mut counts = [0usize; 4];
    let split = |t: &Tensor| chunk_ranges(t.nrows(), chunk).into_iter().map(|r| t.row_range(r.start, r.end)).collect::<Vec<_>>();

    if batch.interior.nrows() == 0 {
        if w.dynamic > 0.0 {
            return Err(Error::EmptyTerm("dynamic"));
        }
    } else {
        counts[0] = batch.interior.nrows();
        out.extend(split(&batch.interior).into_iter().map(Piece::Dynamic));
    }

    let boundary = batch.boundary.as_ref().filter(|b| !b.is_empty());
    if !problem.boundary.is_empty() && boundary.is_none() && w.boundary > 0.0 {
        return Err(Error::EmptyTerm("boundary"));
    }
    if let (false, Some(b)) = (problem.boundary.is_empty(), boundary) {
        counts[1] = b.len();
        for (facet, rows) in b.rows_by_facet() {
            let pts = b.points.select_rows(&rows);
            out.extend(split(&pts).into_iter().map(|p| Piece::Boundary(facet, p)));
        }
    }
    let initial = batch.initial.as_ref().filter(|t| t.nrows() > 0);
    if problem.initial.is_some() && initial.is_none() && w.initial > 0.0 {
        return Err(Error::EmptyTerm("initial"));
    }
    if let (true, Some(init)) = (problem.initial.is_some(), initial) {
        counts[2] = init.nrows();
        out.extend(split(init).into_iter().map(Piece::Initial));
    }
    if let Some(obs) = batch.observations.as_ref().filter(|_| w.observations > 0.0) {
        counts[3] = obs.len();
        for r in chunk_ranges(obs.len(), chunk) {
            out.push(Piece::Observations(
                obs.points.row_range(r.start, r.end),
                obs.values.row_range(r.start, r.end),
            ));
        }
    }
    Ok((out, counts))
}

fn piece_residual(problem: &Problem, net: &Network, p: &Params<Var>, piece: &Piece, mode: AdMode) -> Result<Var> {
    let layout = problem.layout();
    let full = with_meta_fields(p, &problem.meta)?;
    let u = NetField { net, nn: &p.nn };
    match piece {
        Piece::Dynamic(x) => problem.equation.residual(&u, &full, &layout, &Var::constant(x.clone()), mode),
        Piece::Boundary(f, x) => problem.boundary_residual(&u, *f, &Var::constant(x.clone()), mode),
        Piece::Initial(x) => problem.initial_residual(&u, &Var::constant(x.clone())),
        Piece::Observations(x, y) => Ok(net
            .forward(&p.nn, &Var::constant(x.clone()))?
            .sub(&Var::constant(y.clone()))),
    }
}

/// Sum of squared residuals of one piece and, when masked, its gradient.
fn eval_piece(
    problem: &Problem,
    net: &Network,
    params: &Params,
    piece: &Piece,
    mode: AdMode,
    mask: Option<&DerivativeMask>,
    leaf_lens: &[(String, usize)],
) -> Result<(f64, Option<Vec<f64>>)> {
    let Some(mask) = mask else {
        let r = piece_residual(problem, net, &params.as_constants(), piece, mode)?;
        return Ok((r.value().square_sum(), None));
    };
    let term = piece.term();
    let tape = Tape::new();
    let vars = params.map_leaves(|_, t| tape.leaf(t.clone()));
    let r = piece_residual(problem, net, &vars, piece, mode)?;
    let sse = r.square().sum();
    let leaves = vars.leaves();
    let allowed: Vec<&Var> = leaves
        .iter()
        .filter(|(path, _)| mask.allows(term, path))
        .map(|(_, v)| *v)
        .collect();
    let mut grads = tape.gradient(&sse, &allowed)?.into_iter();
    let mut flat = Vec::with_capacity(leaf_lens.iter().map(|(_, n)| n).sum());
    for (path, n) in leaf_lens {
        if mask.allows(term, path) {
            flat.extend_from_slice(grads.next().expect("gradient per allowed leaf").value().data());
        } else {
            flat.extend(std::iter::repeat_n(0.0, *n));
        }
    }
    Ok((sse.value().item(), Some(flat)))
}

/// Composite loss `Σ_k w_k · MSE_k` over a batch, evaluated chunk by chunk.
pub fn evaluate_loss(
    problem: &Problem,
    net: &Network,
    params: &Params,
    batch: &CollocationBatch,
    opts: &LossOptions,
    mask: Option<&DerivativeMask>,
    exec: &Executor,
) -> Result<LossEval> {
    problem.check_params(params)?;
    let (pieces, counts) = pieces(batch, problem, opts)?;
    let leaf_lens: Vec<(String, usize)> = params.leaves().into_iter().map(|(p, t)| (p, t.len())).collect();
    let results = exec.map(&pieces, |piece| eval_piece(problem, net, params, piece, opts.mode, mask, &leaf_lens));

    let mut components = LossComponents::default();
    let mut total_grad: Vec<Option<Vec<f64>>> = Vec::new();
    let mut totals = Vec::new();
    let mut results: Vec<Option<(f64, Option<Vec<f64>>)>> =
        results.into_iter().map(|r| r.map(Some)).collect::<Result<_>>()?;
    for (k, term) in LossTerm::ALL.into_iter().enumerate() {
        if counts[k] == 0 {
            continue;
        }
        let mut sses = Vec::new();
        let mut grads = Vec::new();
        for (piece, res) in pieces.iter().zip(results.iter_mut()) {
            if piece.term() == term {
                let (s, g) = res.take().expect("each piece consumed once");
                sses.push(s);
                grads.extend(g);
            }
        }
        let n = counts[k] as f64;
        let m = pairwise_sum(&sses) / n;
        components.set(term, m);
        let w = opts.weights.get(term);
        totals.push(w * m);
        total_grad.push(pairwise_reduce(grads, &add_into).map(|g| g.into_iter().map(|v| v * w / n).collect()));
    }
    components.total = pairwise_sum(&totals);
    if !components.total.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("non-finite loss {components:?}"),
        });
    }
    let gradient = mask.and_then(|_| pairwise_reduce(total_grad.into_iter().flatten().collect(), &add_into));
    Ok(LossEval { components, gradient })
}
