//! Gradient-based training of a surrogate against the composite loss.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Network;
use crate::parallel::Executor;
use crate::parameters::{DerivativeMask, Manifest, Params};
use crate::physics::{evaluate_loss, LossComponents, LossOptions, MetaParam, Problem};
use crate::rng::{self, streams};
use crate::sampling::{
    minibatch, sample_boundary, sample_initial, sample_interior_at, sample_interior_grid, BoundarySet,
    CollocationBatch, ObservationSet, Scheme,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr } | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// First and second moment estimates, empty for SGD.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update of `theta` in place.
    pub fn step(&mut self, spec: &OptimizerSpec, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), grad.len(), "gradient length");
        self.t += 1;
        match *spec {
            OptimizerSpec::Sgd { lr } => {
                for (x, g) in theta.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                if self.m.len() != theta.len() {
                    self.m = vec![0.0; theta.len()];
                    self.v = vec![0.0; theta.len()];
                }
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..theta.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    theta[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

/// How point sets are drawn for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default)]
    pub scheme: Scheme,
    /// Interior point count.
    pub interior: usize,
    /// Explicit per-axis grid counts; overrides `interior` for grids.
    #[serde(default)]
    pub interior_grid: Option<Vec<usize>>,
    /// Points per boundary facet. Defaults to `interior / (4d)`.
    #[serde(default)]
    pub boundary_per_facet: Option<usize>,
    /// Initial-slice points. Defaults to `interior / (4d)`, or 1 without
    /// spatial axes.
    #[serde(default)]
    pub initial: Option<usize>,
    /// Interior minibatch size; `None` uses every point each step.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Redraw uniform interior points (and meta inputs) every this many steps.
    #[serde(default)]
    pub resample_every: Option<usize>,
}

impl SamplerSpec {
    pub fn grid(interior: usize) -> Self {
        Self {
            scheme: Scheme::Grid,
            interior,
            interior_grid: None,
            boundary_per_facet: None,
            initial: None,
            batch_size: None,
            resample_every: None,
        }
    }
}

/// Largest `k^axes` not above `n`, at least 1.
fn floor_power(n: usize, axes: u32) -> usize {
    if axes == 0 {
        return 1;
    }
    let mut k = (n as f64).powf(1.0 / axes as f64).floor() as usize;
    while (k + 1).pow(axes) <= n {
        k += 1;
    }
    while k > 1 && k.pow(axes) > n {
        k -= 1;
    }
    k.max(1).pow(axes)
}

/// Draws the point sets of a problem; pure in `(seed, ordinal)`.
#[derive(Clone, Debug)]
pub struct BatchSource<'a> {
    pub problem: &'a Problem,
    pub spec: &'a SamplerSpec,
    pub observations: Option<&'a ObservationSet>,
    pub seed: u64,
}

impl BatchSource<'_> {
    fn per_facet(&self) -> usize {
        let d = self.problem.domain.space_dim().max(1);
        let n = self.spec.boundary_per_facet.unwrap_or((self.spec.interior / (4 * d)).max(1));
        let free = (self.problem.domain.ncols() - 1) as u32;
        match self.spec.scheme {
            Scheme::Grid if self.spec.boundary_per_facet.is_none() => floor_power(n, free),
            _ => n,
        }
    }

    fn initial_count(&self) -> usize {
        let d = self.problem.domain.space_dim();
        if d == 0 {
            return self.spec.initial.unwrap_or(1);
        }
        match self.spec.initial {
            Some(m) => m,
            None => {
                let m = (self.spec.interior / (4 * d)).max(1);
                if self.spec.scheme == Scheme::Grid {
                    floor_power(m, d as u32)
                } else {
                    m
                }
            }
        }
    }

    fn with_meta(&self, points: Tensor, purpose: u64, ordinal: u64) -> Result<Tensor> {
        append_meta(points, &self.problem.meta, self.seed, purpose, ordinal)
    }

    /// Full point sets for draw `ordinal` (0 at setup, then per resample).
    pub fn draw(&self, ordinal: u64) -> Result<CollocationBatch> {
        let dom = &self.problem.domain;
        let interior = match &self.spec.interior_grid {
            Some(counts) if self.spec.scheme == Scheme::Grid => sample_interior_grid(dom, counts)?,
            _ => sample_interior_at(dom, self.spec.interior, self.spec.scheme, self.seed, ordinal)?,
        };
        let interior = self.with_meta(interior, 0, ordinal)?;
        let boundary = if self.problem.boundary.is_empty() {
            None
        } else {
            let b = sample_boundary(dom, self.per_facet(), self.spec.scheme, self.seed)?;
            Some(BoundarySet {
                points: self.with_meta(b.points, 1, ordinal)?,
                facets: b.facets,
            })
        };
        let initial = match &self.problem.initial {
            Some(_) => Some(self.with_meta(
                sample_initial(dom, self.initial_count(), self.spec.scheme, self.seed)?,
                2,
                ordinal,
            )?),
            None => None,
        };
        Ok(CollocationBatch {
            interior,
            boundary,
            initial,
            observations: self.observations.cloned(),
        })
    }
}

/// Appends one uniformly drawn column per meta parameter.
pub fn append_meta(points: Tensor, meta: &[MetaParam], seed: u64, purpose: u64, ordinal: u64) -> Result<Tensor> {
    if meta.is_empty() {
        return Ok(points);
    }
    let mut rng = rng::stream_at(seed, streams::META + (purpose << 8), ordinal);
    let n = points.nrows();
    let mut cols = vec![points];
    for m in meta {
        let v: Vec<f64> = (0..n).map(|_| if m.lo < m.hi { rng.random_range(m.lo..=m.hi) } else { m.lo }).collect();
        cols.push(Tensor::new(&[n, 1], v)?);
    }
    Ok(Tensor::concat_last(&cols))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub n_iter: usize,
    pub optimizer: OptimizerSpec,
    pub loss: LossOptions,
    pub mask: DerivativeMask,
    pub seed: u64,
    /// Run the validation hook every this many steps (0 disables).
    pub validation_every: usize,
    /// Record a history row every this many steps (the last step always is).
    pub log_every: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            n_iter: 1000,
            optimizer: OptimizerSpec::default(),
            loss: LossOptions::default(),
            mask: DerivativeMask::default(),
            seed: 0,
            validation_every: 0,
            log_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: LossComponents,
    pub validation: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: Params,
    pub optimizer: OptimizerState,
    pub step: usize,
    pub history: Vec<HistoryRow>,
    pub validation: Vec<(usize, f64)>,
    /// Lowest validation value so far with its step and parameters.
    pub best: Option<(usize, f64, Params)>,
}

impl TrainState {
    pub fn new(params: Params) -> Self {
        let n = params.manifest().total_len();
        Self {
            params,
            optimizer: OptimizerState::new(n),
            step: 0,
            history: Vec::new(),
            validation: Vec::new(),
            best: None,
        }
    }
}

pub type Validator<'a> = &'a dyn Fn(&Params) -> Result<f64>;

/// Everything a training run needs besides its configuration.
pub struct Setup<'a> {
    pub problem: &'a Problem,
    pub net: &'a Network,
    pub sampler: &'a SamplerSpec,
    pub observations: Option<&'a ObservationSet>,
}

fn divergence_at(step: usize, e: Error) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { step, detail },
        other => other,
    }
}

/// Runs `cfg.n_iter` optimizer steps from `state`. Each step masks every
/// loss term's gradient with its own mask before summing.
pub fn solve(
    setup: &Setup,
    cfg: &SolveConfig,
    mut state: TrainState,
    exec: &Executor,
    validator: Option<Validator>,
) -> Result<TrainState> {
    setup.problem.validate()?;
    setup.problem.check_params(&state.params)?;
    if setup.net.input_dim() != setup.problem.layout().ncols() {
        return Err(Error::DimMismatch {
            expected: setup.problem.layout().ncols(),
            got: setup.net.input_dim(),
        });
    }
    cfg.mask.validate(&state.params)?;
    let source = BatchSource {
        problem: setup.problem,
        spec: setup.sampler,
        observations: setup.observations,
        seed: cfg.seed,
    };
    let resample = match (setup.sampler.scheme, setup.sampler.resample_every) {
        (_, Some(k)) if k > 0 && (setup.sampler.scheme == Scheme::Uniform || !setup.problem.meta.is_empty()) => Some(k),
        _ => None,
    };
    let mut ordinal = resample.map_or(0, |k| (state.step / k) as u64);
    let mut full = source.draw(ordinal)?;
    let mut epoch_cache: Option<(u64, Vec<Tensor>)> = None;
    let (mut theta, manifest) = state.params.flatten();
    let log_every = cfg.log_every.max(1);
    let end = state.step + cfg.n_iter;

    while state.step < end {
        let step = state.step;
        if let Some(k) = resample {
            let o = (step / k) as u64;
            if o != ordinal {
                ordinal = o;
                full = source.draw(ordinal)?;
                epoch_cache = None;
            }
        }
        let batch = match setup.sampler.batch_size {
            Some(bs) => {
                let n_batches = full.interior.nrows().div_ceil(bs.max(1)).max(1);
                let epoch = (step / n_batches) as u64;
                if epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    epoch_cache = Some((epoch, minibatch(&full.interior, bs, cfg.seed, epoch)?));
                }
                let batches = &epoch_cache.as_ref().expect("cached").1;
                CollocationBatch {
                    interior: batches[step % batches.len()].clone(),
                    ..full.clone()
                }
            }
            None => full.clone(),
        };

        let eval = evaluate_loss(
            setup.problem,
            setup.net,
            &state.params,
            &batch,
            &cfg.loss,
            Some(&cfg.mask),
            exec,
        )
        .map_err(|e| divergence_at(step, e))?;
        let grad = eval.gradient.unwrap_or_else(|| vec![0.0; theta.len()]);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite gradient".into(),
            });
        }

        let mut validation = None;
        if cfg.validation_every > 0 && step % cfg.validation_every == 0 {
            if let Some(v) = validator {
                let value = v(&state.params)?;
                state.validation.push((step, value));
                if state.best.as_ref().is_none_or(|(_, b, _)| value < *b) {
                    state.best = Some((step, value, state.params.clone()));
                }
                validation = Some(value);
            }
        }
        if step % log_every == 0 || step + 1 == end || validation.is_some() {
            state.history.push(HistoryRow {
                step,
                loss: eval.components,
                validation,
            });
        }

        state.optimizer.step(&cfg.optimizer, &mut theta, &grad);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                step,
                detail: "non-finite parameters after update".into(),
            });
        }
        state.params = state.params.unflatten(&theta, &manifest)?;
        state.step += 1;
    }
    Ok(state)
}

/// Training over a family of problems indexed by the meta parameters, which
/// enter the surrogate as extra inputs.
pub fn meta_solve(
    setup: &Setup,
    cfg: &SolveConfig,
    state: TrainState,
    exec: &Executor,
    validator: Option<Validator>,
) -> Result<TrainState> {
    if setup.problem.meta.is_empty() {
        return Err(Error::Config("meta training needs at least one meta parameter".into()));
    }
    solve(setup, cfg, state, exec, validator)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub optimizer_t: u64,
}

fn write_f64s(path: &Path, xs: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * xs.len());
    for x in xs {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::ManifestMismatch(format!("{}: truncated blob", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Writes `params.bin`, `optimizer.bin`, `manifest.json` and
/// `checkpoint.json` into `dir`.
pub fn save_checkpoint(dir: &Path, state: &TrainState, seed: u64, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (flat, manifest) = state.params.flatten();
    write_f64s(&dir.join("params.bin"), &flat)?;
    let mut moments = state.optimizer.m.clone();
    moments.extend_from_slice(&state.optimizer.v);
    write_f64s(&dir.join("optimizer.bin"), &moments)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let info = CheckpointInfo {
        step: state.step,
        seed,
        config_hash: config_hash.to_string(),
        optimizer_t: state.optimizer.t,
    };
    fs::write(dir.join("checkpoint.json"), serde_json::to_string_pretty(&info)?)?;
    Ok(())
}

/// Restores a state saved by [`save_checkpoint`] onto the structure of
/// `template`. History is not part of a checkpoint.
pub fn load_checkpoint(dir: &Path, template: &Params) -> Result<(TrainState, CheckpointInfo)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let info: CheckpointInfo = serde_json::from_str(&fs::read_to_string(dir.join("checkpoint.json"))?)?;
    let flat = read_f64s(&dir.join("params.bin"))?;
    let params = template.unflatten(&flat, &manifest)?;
    let moments = read_f64s(&dir.join("optimizer.bin"))?;
    let n = flat.len();
    let optimizer = if moments.len() == 2 * n {
        OptimizerState {
            m: moments[..n].to_vec(),
            v: moments[n..].to_vec(),
            t: info.optimizer_t,
        }
    } else {
        return Err(Error::ManifestMismatch("optimizer blob length".into()));
    };
    let mut state = TrainState::new(params);
    state.optimizer = optimizer;
    state.step = info.step;
    Ok((state, info))
}

pub const HISTORY_HEADER: &str = "step,loss_total,loss_dyn,loss_bc,loss_init,loss_obs,validation";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        let l = &r.loss;
        let v = r.validation.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, l.total, l.dynamic, l.boundary, l.initial, l.observations, v
        ));
    }
    out
}
