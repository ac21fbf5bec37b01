//! TOML run configuration and its resolution into a ready-to-train run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::registry::{self, ProblemDef};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::networks::{Activation, MlpSpec, Network, SpinnSpec};
use crate::parallel::Parallelism;
use crate::parameters::{DerivativeMask, EqParam, LossTerm, Params};
use crate::physics::{AdMode, ExprField, LossOptions, LossWeights, MetaParam, Problem};
use crate::rng::{self, streams};
use crate::sampling::{Domain, ObservationSet, Scheme};
use crate::solver::{OptimizerSpec, SamplerSpec, SolveConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Forward,
    Inverse,
    Meta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    #[serde(default)]
    pub space: Vec<[f64; 2]>,
    #[serde(default)]
    pub time: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    /// CSV file with header `t?,x1..xd,u1`; relative to the config file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Number of synthetic observations when no file is given.
    #[serde(default = "default_obs_count")]
    pub count: usize,
    #[serde(default = "default_obs_scheme")]
    pub scheme: Scheme,
    /// Standard deviation of additive Gaussian noise on synthetic values.
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_obs_count() -> usize {
    50
}
fn default_obs_scheme() -> Scheme {
    Scheme::Uniform
}

impl Default for ObservationSection {
    fn default() -> Self {
        Self {
            path: None,
            count: default_obs_count(),
            scheme: default_obs_scheme(),
            noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: String,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Scalar equation parameters; in inverse mode these are the values
    /// that generate the observations.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Spatially varying equation parameters, as expressions in the
    /// coordinates. Replace the scalar of the same name.
    #[serde(default)]
    pub fields: BTreeMap<String, Expr>,
    /// Inverse mode: starting values of the estimated parameters.
    #[serde(default)]
    pub initial_guess: BTreeMap<String, f64>,
    #[serde(default)]
    pub domain: Option<DomainSection>,
    /// Poisson forcing override.
    #[serde(default)]
    pub source: Option<Expr>,
    /// Closed-form solution override used for the reference.
    #[serde(default)]
    pub solution: Option<Expr>,
    #[serde(default)]
    pub observations: Option<ObservationSection>,
    /// Meta mode: parameter ranges, e.g. `a = [0.5, 1.5]`.
    #[serde(default)]
    pub meta: BTreeMap<String, [f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    #[default]
    Mlp,
    Spinn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    #[serde(default)]
    pub kind: NetKind,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// SPINN feature rank.
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_rank() -> usize {
    16
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            kind: NetKind::Mlp,
            hidden: default_hidden(),
            activation: Activation::Tanh,
            rank: default_rank(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ad_mode: AdMode,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub parallelism: Parallelism,
    #[serde(default)]
    pub validation_every: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub weights: LossWeights,
}

fn default_n_iter() -> usize {
    1000
}
fn default_chunk() -> usize {
    256
}
fn default_log_every() -> usize {
    1
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            n_iter: default_n_iter(),
            seed: 0,
            ad_mode: AdMode::Forward,
            chunk_size: default_chunk(),
            parallelism: Parallelism::default(),
            validation_every: 0,
            log_every: default_log_every(),
            weights: LossWeights::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Analytic,
    File,
    Bundled,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// Defaults to `analytic` when a closed form exists, else `bundled`.
    #[serde(default)]
    pub kind: Option<ReferenceKind>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Evaluation grid density for analytic references.
    #[serde(default = "default_per_axis")]
    pub points_per_axis: usize,
    /// Meta mode: parameter values at which the family is evaluated.
    /// Defaults to the two range ends and the midpoint.
    #[serde(default)]
    pub meta_values: Option<Vec<f64>>,
}

fn default_per_axis() -> usize {
    101
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            kind: None,
            path: None,
            points_per_axis: default_per_axis(),
            meta_values: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub mask: Option<DerivativeMask>,
    #[serde(default)]
    pub reference: ReferenceSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        if let Some(obs) = &mut cfg.problem.observations {
            rebase(&mut obs.path);
        }
        rebase(&mut cfg.reference.path);
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.solve.seed = seed;
        self
    }

    /// Fills every default so the serialized config is complete.
    pub fn normalized(mut self) -> Result<Self> {
        let def = registry::lookup(&self.problem.id)?;
        let mode = self.mode(def)?;
        self.problem.mode = Some(mode);
        let mut params = def.true_params();
        params.extend(self.problem.params.clone());
        self.problem.params = params;
        if mode == Mode::Inverse {
            let mut guess = def.initial_guess();
            guess.extend(self.problem.initial_guess.clone());
            self.problem.initial_guess = guess;
            self.problem.observations.get_or_insert_with(ObservationSection::default);
        }
        if self.problem.domain.is_none() {
            let d = def.default_domain();
            self.problem.domain = Some(DomainSection {
                space: d.space.iter().map(|&(a, b)| [a, b]).collect(),
                time: d.time.map(|(a, b)| [a, b]),
            });
        }
        self.sampler.get_or_insert_with(|| def.default_sampler());
        self.net.seed.get_or_insert(self.solve.seed);
        if self.mask.is_none() {
            self.mask = Some(match mode {
                Mode::Inverse => DerivativeMask::inverse(&[LossTerm::Dynamic]),
                _ => DerivativeMask::forward(),
            });
        }
        if mode == Mode::Meta && self.reference.meta_values.is_none() {
            let (k, [lo, hi]) = self.problem.meta.iter().next().ok_or_else(|| {
                Error::Config("meta mode needs a [problem.meta] range".into())
            })?;
            if self.problem.meta.len() > 1 {
                return Err(Error::Config(format!(
                    "meta_values default only covers one meta parameter; set [reference] meta_values (first is `{k}`)"
                )));
            }
            self.reference.meta_values = Some(vec![*lo, 0.5 * (lo + hi), *hi]);
        }
        Ok(self)
    }

    fn mode(&self, def: &ProblemDef) -> Result<Mode> {
        let implied = if def.inverse { Mode::Inverse } else { Mode::Forward };
        let mode = self.problem.mode.unwrap_or(if self.problem.meta.is_empty() { implied } else { Mode::Meta });
        if def.inverse && mode != Mode::Inverse {
            return Err(Error::Config(format!("problem `{}` only runs in inverse mode", def.id)));
        }
        if (mode == Mode::Meta) != !self.problem.meta.is_empty() {
            return Err(Error::Config("[problem.meta] ranges go with mode = \"meta\"".into()));
        }
        Ok(mode)
    }

    /// SHA-256 of the normalized config as canonical JSON.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// A fully resolved run.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: RunConfig,
    pub def: &'static ProblemDef,
    pub mode: Mode,
    pub problem: Problem,
    pub net: Network,
    pub params: Params,
    /// Data-generating scalar values.
    pub truth: BTreeMap<String, f64>,
    /// Names estimated in inverse mode.
    pub estimated: Vec<String>,
    pub solution: Option<Expr>,
    pub observations: Option<ObservationSet>,
    pub sampler: SamplerSpec,
    pub solve: SolveConfig,
    pub config_hash: String,
}

impl Run {
    pub fn from_config(cfg: RunConfig) -> Result<Self> {
        let cfg = cfg.normalized()?;
        let config_hash = cfg.hash()?;
        let def = registry::lookup(&cfg.problem.id)?;
        let mode = cfg.problem.mode.expect("normalized");
        let p = &cfg.problem;

        let dom = p.domain.as_ref().expect("normalized");
        let domain = Domain::new(
            dom.space.iter().map(|&[a, b]| (a, b)).collect(),
            dom.time.map(|[a, b]| (a, b)),
        )?;
        let meta: Vec<MetaParam> = p
            .meta
            .iter()
            .map(|(name, &[lo, hi])| MetaParam {
                name: name.clone(),
                lo,
                hi,
            })
            .collect();
        let meta_names: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();

        let solution = match &p.solution {
            Some(s) => Some(s.clone()),
            None if p.fields.is_empty() && p.source.is_none() => def.analytic(&p.params, &meta_names)?,
            None => None,
        };
        let problem = def.problem(domain, p.source.as_ref(), solution.as_ref(), meta)?;
        let layout = problem.layout();

        let sampler = cfg.sampler.clone().expect("normalized");
        let net = build_net(&cfg.net, layout.ncols())?;
        let mut params = Params::new(net.init()?);
        let estimated: Vec<String> = match mode {
            Mode::Inverse => problem.equation.required_params().iter().map(|s| s.to_string()).collect(),
            _ => Vec::new(),
        };
        for name in problem.equation.required_params() {
            if meta_names.iter().any(|m| m == name) {
                continue;
            }
            let eq = if let Some(field) = p.fields.get(*name) {
                EqParam::Field(field.clone())
            } else if estimated.iter().any(|e| e == name) {
                let v = p.initial_guess.get(*name).or(p.params.get(*name));
                EqParam::scalar(*v.ok_or_else(|| Error::MissingEqParam(name.to_string()))?)
            } else {
                EqParam::scalar(*p.params.get(*name).ok_or_else(|| Error::MissingEqParam(name.to_string()))?)
            };
            params = params.with_eq(*name, eq);
        }
        for name in p.params.keys().chain(p.fields.keys()) {
            if !problem.equation.required_params().contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "`{name}` is not a parameter of {}; expected {:?}",
                    problem.equation,
                    problem.equation.required_params()
                )));
            }
        }

        let observations = match &p.observations {
            None => None,
            Some(o) => Some(load_or_synthesize(o, &problem, solution.as_ref(), cfg.solve.seed)?),
        };

        let solve = SolveConfig {
            n_iter: cfg.solve.n_iter,
            optimizer: cfg.optimizer,
            loss: LossOptions {
                weights: cfg.solve.weights,
                mode: cfg.solve.ad_mode,
                chunk_size: cfg.solve.chunk_size.max(1),
            },
            mask: cfg.mask.clone().expect("normalized"),
            seed: cfg.solve.seed,
            validation_every: cfg.solve.validation_every,
            log_every: cfg.solve.log_every,
        };
        if solve.n_iter == 0 {
            return Err(Error::Config("solve.n_iter must be at least 1".into()));
        }
        if solve.optimizer.lr() < 0.0 || !solve.optimizer.lr().is_finite() {
            return Err(Error::Config("optimizer learning rate must be finite and non-negative".into()));
        }
        solve.mask.validate(&params)?;
        Ok(Self {
            truth: p.params.clone(),
            config: cfg,
            def,
            mode,
            problem,
            net,
            params,
            estimated,
            solution,
            observations,
            sampler,
            solve,
            config_hash,
        })
    }
}

fn build_net(n: &NetSection, input: usize) -> Result<Network> {
    let seed = n.seed.unwrap_or(0);
    let net = match n.kind {
        NetKind::Mlp => {
            let mut sizes = vec![input];
            sizes.extend(&n.hidden);
            sizes.push(1);
            Network::Mlp(MlpSpec::new(sizes, n.activation, seed))
        }
        NetKind::Spinn => Network::Spinn(SpinnSpec::new(input, n.rank, n.hidden.clone(), n.activation, seed)),
    };
    net.validate()?;
    Ok(net)
}

fn load_or_synthesize(
    o: &ObservationSection,
    problem: &Problem,
    solution: Option<&Expr>,
    seed: u64,
) -> Result<ObservationSet> {
    let layout = problem.layout();
    if let Some(path) = &o.path {
        return ObservationSet::read_csv(path, layout.has_time, layout.space_dim, 1);
    }
    let u = solution.ok_or_else(|| Error::Config("synthetic observations need a closed-form solution".into()))?;
    synthetic_observations(problem, u, o.count, o.scheme, o.noise_sigma, seed)
}

/// Evaluates `u` at seeded points with optional Gaussian noise.
pub fn synthetic_observations(
    problem: &Problem,
    u: &Expr,
    count: usize,
    scheme: Scheme,
    sigma: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if count == 0 {
        return Err(Error::Config("observation count must be positive".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Config("noise_sigma must be non-negative".into()));
    }
    let layout = problem.layout();
    let axes = problem.domain.axes();
    let points = match scheme {
        Scheme::Grid => crate::sampling::sample_interior(&problem.domain, count, Scheme::Grid, seed)?,
        Scheme::Uniform => {
            let mut r = rng::stream(seed, streams::OBSERVATIONS);
            let data: Vec<f64> = (0..count)
                .flat_map(|_| axes.iter().map(|&(lo, hi)| r.random_range(lo..=hi)).collect::<Vec<_>>())
                .collect();
            Tensor::new(&[count, axes.len()], data)?
        }
    };
    let clean = ExprField { expr: u, layout: &layout }.eval_tensor(&points)?;
    let mut noise = rng::stream(seed, streams::NOISE);
    let normal = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let noisy: Vec<f64> = clean
        .data()
        .iter()
        .map(|&v| if sigma > 0.0 { v + normal.sample(&mut noise) } else { v })
        .collect();
    ObservationSet::new(points, Tensor::new(&[count, 1], noisy)?, "synthetic")
}
