use pinnforge::expr::Expr;
use pinnforge::networks::{Activation, MlpSpec, Network};
use pinnforge::parallel::Executor;
use pinnforge::parameters::{DerivativeMask, EqParam, LossTerm, Params};
use pinnforge::physics::{evaluate_loss, Equation, LossOptions, Problem};
use pinnforge::sampling::Domain;
use pinnforge::solver::{
    history_csv, load_checkpoint, meta_solve, save_checkpoint, solve, BatchSource, OptimizerSpec, OptimizerState,
    SamplerSpec, Setup, SolveConfig, TrainState, HISTORY_HEADER,
};

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn adam_first_step_moves_by_lr() {
    let spec = OptimizerSpec::adam(0.1);
    for g in [0.5, -3.0, 1e-3] {
        let mut theta = vec![1.0];
        OptimizerState::new(1).step(&spec, &mut theta, &[g]);
        assert!((theta[0] - (1.0 - 0.1 * g.signum())).abs() < 1e-6, "{g}: {}", theta[0]);
    }
    let mut theta = vec![0.3, -2.0];
    let mut st = OptimizerState::new(2);
    for _ in 0..5 {
        st.step(&spec, &mut theta, &[0.0, 0.0]);
    }
    assert_eq!(theta, vec![0.3, -2.0]);

    let frozen = OptimizerSpec::adam(0.0);
    let start = vec![0.1f64.sqrt(), std::f64::consts::E];
    let mut theta = start.clone();
    let mut st = OptimizerState::new(2);
    for k in 0..10 {
        st.step(&frozen, &mut theta, &[k as f64, -7.5]);
    }
    assert_eq!(bits(&theta), bits(&start));
}

#[test]
fn adam_descends_a_quadratic() {
    let target = [3.0, -1.0, 0.25];
    let mut theta = vec![0.0; 3];
    let mut st = OptimizerState::new(3);
    let f = |t: &[f64]| t.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let start = f(&theta);
    for _ in 0..3000 {
        let g: Vec<f64> = theta.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect();
        st.step(&OptimizerSpec::adam(0.05), &mut theta, &g);
    }
    assert!(f(&theta) < 1e-8 * start);
}

fn ode() -> (Problem, Network, Params) {
    let problem = Problem {
        equation: Equation::LinearOde,
        domain: Domain::new(vec![], Some((0.0, 1.0))).unwrap(),
        meta: vec![],
        boundary: vec![],
        initial: Some(Expr::constant(1.0)),
    };
    let net = Network::Mlp(MlpSpec::new(vec![1, 8, 8, 1], Activation::Tanh, 3));
    let params = Params::new(net.init().unwrap()).with_eq("a", EqParam::scalar(1.0));
    (problem, net, params)
}

fn cfg(n_iter: usize) -> SolveConfig {
    SolveConfig {
        n_iter,
        optimizer: OptimizerSpec::adam(1e-2),
        ..SolveConfig::default()
    }
}

#[test]
fn history_and_validation_cadence() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let c = SolveConfig { validation_every: 100, ..cfg(500) };
    let calls = std::cell::Cell::new(0);
    let validator = |_: &Params| {
        calls.set(calls.get() + 1);
        Ok(calls.get() as f64)
    };
    let state = solve(&setup, &c, TrainState::new(params), &Executor::sequential(), Some(&validator)).unwrap();
    assert_eq!(state.step, 500);
    assert_eq!(state.history.len(), 500);
    assert_eq!(state.validation.iter().map(|v| v.0).collect::<Vec<_>>(), vec![0, 100, 200, 300, 400]);
    assert_eq!(state.best.as_ref().unwrap().0, 0);
    for (i, row) in state.history.iter().enumerate() {
        assert_eq!(row.step, i);
        let l = &row.loss;
        assert_eq!(l.total, l.dynamic + l.boundary + l.initial + l.observations);
    }
    let first = state.history.first().unwrap().loss.total;
    let last = state.history.last().unwrap().loss.total;
    assert!(last < 0.1 * first, "{first} -> {last}");

    let csv = history_csv(&state.history);
    assert_eq!(csv.lines().next(), Some(HISTORY_HEADER));
    assert_eq!(csv.lines().count(), 501);
}

#[test]
fn sparse_logging_keeps_the_last_step() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let c = SolveConfig { log_every: 7, ..cfg(30) };
    let state = solve(&setup, &c, TrainState::new(params), &Executor::sequential(), None).unwrap();
    let steps: Vec<usize> = state.history.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 7, 14, 21, 28, 29]);
}

#[test]
fn masked_leaves_stay_fixed() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let exec = Executor::sequential();

    let state = solve(&setup, &cfg(50), TrainState::new(params.clone()), &exec, None).unwrap();
    assert_eq!(state.params.eq_scalar("a").unwrap().to_bits(), 1.0f64.to_bits());

    let eq_only = SolveConfig {
        mask: DerivativeMask {
            dynamic: vec!["eq".into()],
            boundary: vec![],
            initial: vec![],
            observations: vec![],
        },
        ..cfg(50)
    };
    let state = solve(&setup, &eq_only, TrainState::new(params.clone()), &exec, None).unwrap();
    let (before, _) = params.flatten();
    let (after, m) = state.params.flatten();
    let a_slot = m.leaves.iter().position(|l| l.path == "eq.a").unwrap();
    for (i, (x, y)) in before.iter().zip(&after).enumerate() {
        if i == a_slot {
            assert_ne!(x, y);
        } else {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn gradients_match_finite_differences_along_the_trajectory() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let exec = Executor::sequential();
    let batch = BatchSource { problem: &problem, spec: &sampler, observations: None, seed: 0 }
        .draw(0)
        .unwrap();
    let mask = DerivativeMask::inverse(&[LossTerm::Dynamic]);
    let c = SolveConfig { mask: mask.clone(), ..cfg(0) };
    let mut state = TrainState::new(params);
    for stop in [1, 100, 200] {
        let c = SolveConfig { n_iter: stop - state.step, ..c.clone() };
        state = solve(&setup, &c, state, &exec, None).unwrap();
        let p = &state.params;
        let opts = LossOptions::default();
        let g = evaluate_loss(&problem, &net, p, &batch, &opts, Some(&mask), &exec).unwrap().gradient.unwrap();
        let (theta, m) = p.flatten();
        let loss = |i: usize, d: f64| {
            let mut t = theta.clone();
            t[i] += d;
            evaluate_loss(&problem, &net, &p.unflatten(&t, &m).unwrap(), &batch, &opts, None, &exec)
                .unwrap()
                .components
                .total
        };
        for i in (0..theta.len()).step_by(7) {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let fd = (loss(i, h) - loss(i, -h)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "step {stop} slot {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let exec = Executor::sequential();
    let straight = solve(&setup, &cfg(40), TrainState::new(params.clone()), &exec, None).unwrap();

    let half = solve(&setup, &cfg(20), TrainState::new(params.clone()), &exec, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &half, 0, "abc").unwrap();
    let (restored, info) = load_checkpoint(dir.path(), &params).unwrap();
    assert_eq!((info.step, info.seed, info.config_hash.as_str(), info.optimizer_t), (20, 0, "abc", 20));
    assert_eq!(bits(&restored.params.flatten().0), bits(&half.params.flatten().0));
    assert_eq!(bits(&restored.optimizer.v), bits(&half.optimizer.v));

    let resumed = solve(&setup, &cfg(20), restored, &exec, None).unwrap();
    assert_eq!(resumed.step, 40);
    assert_eq!(bits(&resumed.params.flatten().0), bits(&straight.params.flatten().0));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let state = solve(&setup, &cfg(2), TrainState::new(params.clone()), &Executor::sequential(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &state, 0, "h").unwrap();
    std::fs::write(dir.path().join("params.bin"), [0u8; 12]).unwrap();
    assert!(load_checkpoint(dir.path(), &params).is_err());
}

#[test]
fn training_is_deterministic() {
    let (problem, net, params) = ode();
    let mut sampler = SamplerSpec::grid(32);
    sampler.scheme = pinnforge::sampling::Scheme::Uniform;
    sampler.resample_every = Some(5);
    sampler.batch_size = Some(8);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let run = || {
        solve(&setup, &cfg(30), TrainState::new(params.clone()), &Executor::sequential(), None)
            .unwrap()
            .params
            .flatten()
            .0
    };
    assert_eq!(bits(&run()), bits(&run()));
}

#[test]
fn divergence_names_the_step() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    let c = SolveConfig { optimizer: OptimizerSpec::Sgd { lr: 1e300 }, ..cfg(10) };
    let err = solve(&setup, &c, TrainState::new(params), &Executor::sequential(), None).unwrap_err();
    assert!(matches!(err, pinnforge::Error::Divergence { .. }), "{err}");
}

#[test]
fn meta_solve_needs_meta_parameters() {
    let (problem, net, params) = ode();
    let sampler = SamplerSpec::grid(16);
    let setup = Setup { problem: &problem, net: &net, sampler: &sampler, observations: None };
    assert!(meta_solve(&setup, &cfg(1), TrainState::new(params), &Executor::sequential(), None).is_err());
}
