use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Mode, Run, RunConfig};
use super::metrics::{l1_relative_error, l2_relative_error};
use super::reference::{make_reference, validation_subset};
use crate::error::{Error, Result};
use crate::networks::Network;
use crate::parallel::Executor;
use crate::parameters::{DerivativeMask, LossTerm, Params};
use crate::physics::{evaluate_loss, LossComponents, LossOptions, LossWeights};
use crate::sampling::{CollocationBatch, ObservationSet};
use crate::solver::{history_csv, meta_solve, save_checkpoint, solve, BatchSource, Setup, TrainState, Validator};
use crate::tensor::Tensor;

const VALIDATION_ROWS: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaError {
    pub value: f64,
    pub l1re: f64,
    pub l2re: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub estimate: f64,
    pub truth: f64,
    pub l1re: f64,
    pub l2re: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub source: String,
    pub points: usize,
    pub points_per_axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub problem: String,
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    /// Solution errors against the reference, when there is one.
    pub l1re: Option<f64>,
    pub l2re: Option<f64>,
    pub meta_errors: Vec<MetaError>,
    /// Inverse mode: one entry per estimated parameter.
    pub param_errors: BTreeMap<String, ParamError>,
    pub final_loss: LossComponents,
    pub reference: Option<ReferenceInfo>,
    pub wall_clock_seconds: f64,
    pub config: RunConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub reference: Option<Vec<f64>>,
}

pub struct Outcome {
    pub report: Report,
    pub state: TrainState,
    pub solution: Solution,
}

/// Worker count from `--threads`, else the `THREADS` environment variable.
pub fn thread_cap(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("THREADS must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

/// Surrogate values at a batch of points, in bounded chunks.
pub fn predict(net: &Network, params: &Params, points: &Tensor) -> Result<Tensor> {
    const CHUNK: usize = 8192;
    let mut out = Vec::with_capacity(points.nrows());
    let mut start = 0;
    while start < points.nrows() {
        let end = (start + CHUNK).min(points.nrows());
        out.extend_from_slice(net.eval(&params.nn, &points.row_range(start, end))?.data());
        start = end;
    }
    Tensor::new(&[points.nrows(), 1], out)
}

fn errors(est: &Tensor, reference: &Tensor) -> Result<(f64, f64)> {
    Ok((
        l1_relative_error(est.data(), reference.data())?,
        l2_relative_error(est.data(), reference.data())?,
    ))
}

pub fn training_batch(run: &Run) -> Result<CollocationBatch> {
    BatchSource {
        problem: &run.problem,
        spec: &run.sampler,
        observations: run.observations.as_ref(),
        seed: run.solve.seed,
    }
    .draw(0)
}

/// Trains and evaluates a resolved run without touching the filesystem.
pub fn execute(run: &Run, exec: &Executor) -> Result<Outcome> {
    let started = Instant::now();
    let reference = make_reference(run)?;
    let validation = reference.as_ref().map(|r| validation_subset(r, VALIDATION_ROWS)).transpose()?;
    let net = &run.net;
    let validator = |p: &Params| -> Result<f64> {
        let v = validation.as_ref().ok_or_else(|| Error::NoReference(run.def.id.to_string()))?;
        l2_relative_error(predict(net, p, &v.points)?.data(), v.values.data())
    };
    let validator_ref: Option<Validator> = validation.as_ref().map(|_| &validator as _);

    let setup = Setup {
        problem: &run.problem,
        net,
        sampler: &run.sampler,
        observations: run.observations.as_ref(),
    };
    let state = TrainState::new(run.params.clone());
    let state = match run.mode {
        Mode::Meta => meta_solve(&setup, &run.solve, state, exec, validator_ref)?,
        _ => solve(&setup, &run.solve, state, exec, validator_ref)?,
    };

    let final_loss = evaluate_loss(
        &run.problem,
        net,
        &state.params,
        &training_batch(run)?,
        &run.solve.loss,
        None,
        exec,
    )
    .map_err(|e| match e {
        Error::Divergence { detail, .. } => Error::Divergence {
            step: state.step,
            detail,
        },
        other => other,
    })?;

    let mut report = Report {
        problem: run.def.id.to_string(),
        mode: run.mode,
        config_hash: run.config_hash.clone(),
        seed: run.solve.seed,
        steps: state.step,
        l1re: None,
        l2re: None,
        meta_errors: Vec::new(),
        param_errors: BTreeMap::new(),
        final_loss: final_loss.components,
        reference: None,
        wall_clock_seconds: 0.0,
        config: run.config.clone(),
    };

    let solution = match &reference {
        Some(r) => {
            let est = predict(net, &state.params, &r.points)?;
            let (l1, l2) = errors(&est, &r.values)?;
            report.l1re = Some(l1);
            report.l2re = Some(l2);
            if run.mode == Mode::Meta {
                report.meta_errors = meta_errors(run, r, &est)?;
            }
            report.reference = Some(ReferenceInfo {
                source: r.source.clone(),
                points: r.len(),
                points_per_axis: run.config.reference.points_per_axis,
            });
            Solution {
                points: r.points.rows().map(<[f64]>::to_vec).collect(),
                values: est.data().to_vec(),
                reference: Some(r.values.data().to_vec()),
            }
        }
        None => {
            let grid = crate::sampling::sample_interior_grid(
                &run.problem.domain,
                &vec![run.config.reference.points_per_axis; run.problem.domain.ncols()],
            )?;
            if !run.problem.meta.is_empty() {
                return Err(Error::NoReference(run.def.id.to_string()));
            }
            let est = predict(net, &state.params, &grid)?;
            Solution {
                points: grid.rows().map(<[f64]>::to_vec).collect(),
                values: est.data().to_vec(),
                reference: None,
            }
        }
    };

    for name in &run.estimated {
        let truth = *run.truth.get(name).ok_or_else(|| Error::MissingEqParam(name.clone()))?;
        let estimate = state.params.eq_scalar(name)?;
        let (l1re, l2re) = errors(&Tensor::vector(vec![estimate]), &Tensor::vector(vec![truth]))?;
        report.param_errors.insert(
            name.clone(),
            ParamError {
                estimate,
                truth,
                l1re,
                l2re,
            },
        );
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(Outcome {
        report,
        state,
        solution,
    })
}

fn meta_errors(run: &Run, reference: &ObservationSet, est: &Tensor) -> Result<Vec<MetaError>> {
    let col = run.problem.layout().ncols() - 1;
    let values = run.config.reference.meta_values.clone().unwrap_or_default();
    let mut out = Vec::new();
    for v in values {
        let rows: Vec<usize> = reference
            .points
            .rows()
            .enumerate()
            .filter(|(_, r)| r[col] == v)
            .map(|(i, _)| i)
            .collect();
        let (l1re, l2re) = errors(&est.select_rows(&rows), &reference.values.select_rows(&rows))?;
        out.push(MetaError { value: v, l1re, l2re });
    }
    Ok(out)
}

/// Writes `report.json`, `history.csv`, `solution.json`, the checkpoint
/// directory and, when present, `observations.csv`.
pub fn write_artifacts(run: &Run, outcome: &Outcome, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&outcome.report)?)?;
    fs::write(out.join("history.csv"), history_csv(&outcome.state.history))?;
    fs::write(out.join("solution.json"), serde_json::to_string(&outcome.solution)?)?;
    save_checkpoint(&out.join("checkpoint"), &outcome.state, run.solve.seed, &run.config_hash)?;
    if let Some(obs) = &run.observations {
        let l = run.problem.layout();
        obs.write_csv(&out.join("observations.csv"), l.has_time, l.space_dim)?;
    }
    Ok(())
}

/// Loads, trains, evaluates and writes everything for one config file.
pub fn run_config(path: &Path, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<Report> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let run = Run::from_config(cfg)?;
    let exec = Executor::new(run.config.solve.parallelism, thread_cap(threads)?)?;
    let outcome = execute(&run, &exec)?;
    write_artifacts(&run, &outcome, out)?;
    Ok(outcome.report)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheck {
    pub term: LossTerm,
    pub leaf: String,
    pub rel_err: f64,
}

/// Fourth-order finite-difference check of the loss gradient at the initial
/// parameters, term by term, on a thinned batch and a few coordinates
/// per leaf.
pub fn check_grad(run: &Run, exec: &Executor) -> Result<Vec<GradCheck>> {
    let mut batch = training_batch(run)?;
    let n = batch.interior.nrows();
    let stride = n.div_ceil(32).max(1);
    batch.interior = batch.interior.select_rows(&(0..n).step_by(stride).collect::<Vec<_>>());
    let all = DerivativeMask {
        dynamic: vec!["nn".into(), "eq".into()],
        boundary: vec!["nn".into(), "eq".into()],
        initial: vec!["nn".into(), "eq".into()],
        observations: vec!["nn".into(), "eq".into()],
    };
    let (theta, manifest) = run.params.flatten();
    let mut out = Vec::new();
    for term in LossTerm::ALL {
        let mut weights = LossWeights {
            dynamic: 0.0,
            boundary: 0.0,
            initial: 0.0,
            observations: 0.0,
        };
        match term {
            LossTerm::Dynamic => weights.dynamic = 1.0,
            LossTerm::Boundary if !run.problem.boundary.is_empty() => weights.boundary = 1.0,
            LossTerm::Initial if run.problem.initial.is_some() => weights.initial = 1.0,
            LossTerm::Observations if batch.observations.is_some() => weights.observations = 1.0,
            _ => continue,
        }
        let opts = LossOptions {
            weights,
            ..run.solve.loss
        };
        let loss_at = |flat: &[f64]| -> Result<f64> {
            let p = run.params.unflatten(flat, &manifest)?;
            Ok(evaluate_loss(&run.problem, &run.net, &p, &batch, &opts, None, exec)?.components.total)
        };
        let ad = evaluate_loss(&run.problem, &run.net, &run.params, &batch, &opts, Some(&all), exec)?
            .gradient
            .expect("masked evaluation returns a gradient");
        let mut offset = 0;
        for leaf in &manifest.leaves {
            let len: usize = leaf.shape.iter().product();
            let picks: Vec<usize> = [0, len / 2, len.saturating_sub(1)]
                .into_iter()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let (mut diff, mut norm) = (0.0f64, 0.0f64);
            for k in picks {
                let i = offset + k;
                let h = 1e-3 * theta[i].abs().max(1.0);
                let at = |d: f64| {
                    let mut t = theta.clone();
                    t[i] += d;
                    loss_at(&t)
                };
                let fd = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
                diff += (ad[i] - fd).powi(2);
                norm += fd * fd;
            }
            out.push(GradCheck {
                term,
                leaf: leaf.path.clone(),
                rel_err: diff.sqrt() / norm.sqrt().max(1e-6),
            });
            offset += len;
        }
    }
    Ok(out)
}
