use pinnforge::ad::{Function, Level, TensorOps, Var};
use pinnforge::expr::Expr;
use pinnforge::networks::{Activation, MlpSpec, Network, ParamTree};
use pinnforge::parallel::{Executor, Parallelism};
use pinnforge::parameters::{DerivativeMask, EqParam, Params};
use pinnforge::physics::{
    divergence, evaluate_loss, gradient, laplacian, AdMode, BoundaryCondition, Equation, ExprField, GradField, Layout,
    LossOptions, LossWeights, NetField, Problem,
};
use pinnforge::rng;
use pinnforge::sampling::{sample_boundary, sample_interior, CollocationBatch, Domain, ObservationSet, Scheme};
use pinnforge::Tensor;
use rand::Rng;

fn scalars(pairs: &[(&str, f64)]) -> Params {
    pairs
        .iter()
        .fold(Params::new(ParamTree::new()), |p, &(n, v)| p.with_eq(n, EqParam::scalar(v)))
}

fn random_points(seed: u64, n: usize, bounds: &[(f64, f64)]) -> Tensor {
    let mut r = rng::stream(seed, 99);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| r.random_range(lo..hi)).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn residual(eq: &Equation, u: &impl Function, p: &Params, layout: &Layout, x: &Tensor, mode: AdMode) -> Tensor {
    eq.residual(u, &p.as_constants(), layout, &Var::constant(x.clone()), mode)
        .unwrap()
        .value()
        .clone()
}

#[test]
fn operator_examples() {
    let layout = Layout::new(false, 2, vec![]);
    let pts = random_points(1, 5, &[(-2.0, 2.0), (-2.0, 2.0)]);
    let x = Var::constant(pts.clone());
    for mode in [AdMode::Forward, AdMode::Reverse] {
        let e = Expr::parse("x^2 + y^2").unwrap();
        let lap = laplacian(&ExprField { expr: &e, layout: &layout }, &x, &[0, 1], mode).unwrap();
        assert!(lap.value().data().iter().all(|v| (v - 4.0).abs() < 1e-12));

        struct Identity;
        impl Function for Identity {
            fn eval<T: Level>(&self, x: &T) -> pinnforge::Result<T> {
                Ok(x.clone())
            }
        }
        let div = divergence(&Identity, &x, &[0, 1], mode).unwrap();
        assert!(div.value().data().iter().all(|v| (v - 2.0).abs() < 1e-14));

        let e = Expr::parse("sin(x)*y").unwrap();
        let at = Var::constant(Tensor::from_rows(&[vec![0.0, 2.0]]).unwrap());
        let g = gradient(&ExprField { expr: &e, layout: &layout }, &at, &[0, 1], mode).unwrap();
        assert_eq!(g.value().data(), &[2.0, 0.0]);
    }
}

#[test]
fn divergence_of_gradient_on_random_closures() {
    let layout = Layout::new(false, 2, vec![]);
    let mut r = rng::stream(7, 0);
    for _ in 0..10 {
        let (a, b, c) = (r.random_range(0.5..2.0), r.random_range(-1.0..1.0), r.random_range(0.1..1.0));
        let src = format!("exp({a}*x)*sin({b}*y) + {c}*tanh(x*y) + cos(x + {a}*y)^2");
        let e = Expr::parse(&src).unwrap();
        let u = ExprField { expr: &e, layout: &layout };
        let x = Var::constant(random_points(r.random(), 16, &[(-1.0, 1.0), (-1.0, 1.0)]));
        for mode in [AdMode::Forward, AdMode::Reverse] {
            let axes = [0, 1];
            let field = GradField { u: &u, axes: &axes, mode };
            let dg = divergence(&field, &x, &axes, mode).unwrap();
            let lap = laplacian(&u, &x, &axes, mode).unwrap();
            assert!(dg.value().max_abs_diff(lap.value()) < 1e-9, "{src}");
        }
    }
}

#[test]
fn residual_examples() {
    let ode = Layout::new(true, 0, vec![]);
    let t = Tensor::new(&[3, 1], vec![0.0, 0.5, 1.0]).unwrap();
    let e = Expr::parse("t").unwrap();
    let r = residual(&Equation::LinearOde, &ExprField { expr: &e, layout: &ode }, &scalars(&[("a", 0.0)]), &ode, &t, AdMode::Forward);
    assert_eq!(r.data(), &[1.0, 1.0, 1.0]);

    let e = Expr::parse("exp(t)").unwrap();
    let r = residual(&Equation::LinearOde, &ExprField { expr: &e, layout: &ode }, &scalars(&[("a", 1.0)]), &ode, &t, AdMode::Reverse);
    assert!(r.data().iter().all(|v| v.abs() < 1e-10));

    let bl = Layout::new(true, 1, vec![]);
    let pts = random_points(3, 10, &[(0.0, 1.0), (-1.0, 1.0)]);
    let e = Expr::parse("x").unwrap();
    let r = residual(&Equation::Burgers, &ExprField { expr: &e, layout: &bl }, &scalars(&[("nu", 0.7)]), &bl, &pts, AdMode::Forward);
    for (row, v) in pts.rows().zip(r.data()) {
        assert!((v - row[1]).abs() < 1e-14);
    }
    let e = Expr::parse("2.5").unwrap();
    let r = residual(&Equation::Burgers, &ExprField { expr: &e, layout: &bl }, &scalars(&[("nu", 0.7)]), &bl, &pts, AdMode::Reverse);
    assert!(r.data().iter().all(|v| *v == 0.0));

    let e = Expr::parse("0").unwrap();
    let fk = scalars(&[("D", 0.3), ("r", 1.2), ("gamma", 0.4)]);
    let r = residual(&Equation::FisherKpp, &ExprField { expr: &e, layout: &bl }, &fk, &bl, &pts, AdMode::Forward);
    assert!(r.data().iter().all(|v| *v == 0.0));
}

#[test]
fn missing_parameter_is_an_error() {
    let ode = Layout::new(true, 0, vec![]);
    let e = Expr::parse("t").unwrap();
    let x = Var::constant(Tensor::new(&[1, 1], vec![0.5]).unwrap());
    let p = Params::new(ParamTree::new()).as_constants();
    let err = Equation::LinearOde.residual(&ExprField { expr: &e, layout: &ode }, &p, &ode, &x, AdMode::Forward);
    assert!(err.is_err());
}

#[test]
fn poisson_manufactured_solutions_on_grid() {
    let dom = Domain::new(vec![(0.0, 1.0), (0.0, 1.0)], None).unwrap();
    let grid = sample_interior(&dom, 400, Scheme::Grid, 0).unwrap();
    let layout = Layout::new(false, 2, vec![]);
    let cases = [
        ("sin(pi*x)*sin(pi*y)", "2*pi^2*sin(pi*x)*sin(pi*y)", "1"),
        ("x^2 + y^2", "-4", "1"),
        ("x", "-1", "1 + x"),
    ];
    for (u, f, a) in cases {
        let eq = Equation::Poisson { source: Expr::parse(f).unwrap() };
        let a = Expr::parse(a).unwrap();
        let p = Params::new(ParamTree::new()).with_eq(
            "a",
            if a.variables().is_empty() { EqParam::scalar(a.eval_f64(&|_| None).unwrap()) } else { EqParam::Field(a) },
        );
        let e = Expr::parse(u).unwrap();
        for mode in [AdMode::Forward, AdMode::Reverse] {
            let r = residual(&eq, &ExprField { expr: &e, layout: &layout }, &p, &layout, &grid, mode);
            assert!(r.data().iter().all(|v| v.abs() < 1e-8), "{u}");
        }
    }
}

fn seeded_mlp(input: usize, seed: u64) -> (Network, Params) {
    let net = Network::Mlp(MlpSpec::new(vec![input, 12, 12, 1], Activation::Tanh, seed));
    let p = Params::new(net.init().unwrap());
    (net, p)
}

#[test]
fn ad_modes_agree_for_every_equation() {
    let cases: Vec<(Equation, Layout, Vec<(f64, f64)>, Params)> = vec![
        (Equation::LinearOde, Layout::new(true, 0, vec![]), vec![(0.0, 1.0)], scalars(&[("a", 1.3)])),
        (
            Equation::Poisson { source: Expr::parse("x*y").unwrap() },
            Layout::new(false, 2, vec![]),
            vec![(0.0, 1.0), (0.0, 1.0)],
            Params::new(ParamTree::new()).with_eq("a", EqParam::Field(Expr::parse("1 + x*y^2").unwrap())),
        ),
        (
            Equation::FisherKpp,
            Layout::new(true, 2, vec![]),
            vec![(0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)],
            scalars(&[("D", 0.2), ("r", 1.0), ("gamma", 0.5)]),
        ),
        (Equation::Burgers, Layout::new(true, 1, vec![]), vec![(0.0, 1.0), (-1.0, 1.0)], scalars(&[("nu", 0.01)])),
    ];
    for (k, (eq, layout, bounds, eqp)) in cases.into_iter().enumerate() {
        let (net, p) = seeded_mlp(layout.ncols(), k as u64);
        let p = Params { nn: p.nn, eq: eqp.eq };
        let x = random_points(k as u64, 100, &bounds);
        let pc = p.as_constants();
        let u = NetField { net: &net, nn: &pc.nn };
        let f = residual(&eq, &u, &p, &layout, &x, AdMode::Forward);
        let r = residual(&eq, &u, &p, &layout, &x, AdMode::Reverse);
        assert!(f.max_abs_diff(&r) < 1e-10, "{eq}");
    }
}

#[test]
fn burgers_residual_matches_finite_differences() {
    let layout = Layout::new(true, 1, vec![]);
    let (net, p) = seeded_mlp(2, 11);
    let p = p.with_eq("nu", EqParam::scalar(0.05));
    let x = random_points(5, 50, &[(0.1, 0.9), (-0.9, 0.9)]);
    let pc = p.as_constants();
    let r = residual(&Equation::Burgers, &NetField { net: &net, nn: &pc.nn }, &p, &layout, &x, AdMode::Forward);
    let u = |t: f64, y: f64| net.eval(&p.nn, &Tensor::vector(vec![t, y])).unwrap().item();
    let h = 1e-4;
    for (row, &res) in x.rows().zip(r.data()) {
        let (t, y) = (row[0], row[1]);
        let ut = (u(t + h, y) - u(t - h, y)) / (2.0 * h);
        let ux = (u(t, y + h) - u(t, y - h)) / (2.0 * h);
        let uxx = (u(t, y + h) - 2.0 * u(t, y) + u(t, y - h)) / (h * h);
        let fd = ut + u(t, y) * ux - 0.05 * uxx;
        assert!((res - fd).abs() < 1e-5, "{res} vs {fd}");
    }
}

fn ode_problem() -> Problem {
    Problem {
        equation: Equation::LinearOde,
        domain: Domain::new(vec![], Some((0.0, 1.0))).unwrap(),
        meta: vec![],
        boundary: vec![],
        initial: Some(Expr::constant(1.0)),
    }
}

#[test]
fn mse_of_two_violations() {
    // Zero network: u ≡ 0, so observation violations are −y.
    let net = Network::Mlp(MlpSpec::new(vec![1, 3, 1], Activation::Tanh, 0));
    let zero = Params::new(net.init().unwrap()).zeros_like().with_eq("a", EqParam::scalar(1.0));
    let obs = ObservationSet::new(
        Tensor::new(&[2, 1], vec![0.2, 0.8]).unwrap(),
        Tensor::new(&[2, 1], vec![-1.0, 3.0]).unwrap(),
        "test",
    )
    .unwrap();
    let batch = CollocationBatch {
        interior: Tensor::new(&[3, 1], vec![0.0, 0.5, 1.0]).unwrap(),
        boundary: None,
        initial: Some(Tensor::new(&[1, 1], vec![0.0]).unwrap()),
        observations: Some(obs),
    };
    let opts = LossOptions {
        weights: LossWeights { dynamic: 0.0, boundary: 0.0, initial: 0.0, observations: 1.0 },
        ..LossOptions::default()
    };
    let l = evaluate_loss(&ode_problem(), &net, &zero, &batch, &opts, None, &Executor::sequential()).unwrap();
    assert_eq!(l.components.observations, 5.0);
    assert_eq!(l.components.total, 5.0);
    assert_eq!(l.components.initial, 1.0);
    assert_eq!(l.components.dynamic, 0.0);
}

#[test]
fn observations_equal_to_outputs_give_zero_term() {
    let (net, p) = seeded_mlp(1, 2);
    let p = p.with_eq("a", EqParam::scalar(1.0));
    let pts = Tensor::new(&[4, 1], vec![0.1, 0.2, 0.3, 0.9]).unwrap();
    let vals = net.eval(&p.nn, &pts).unwrap();
    let batch = CollocationBatch {
        interior: pts.clone(),
        boundary: None,
        initial: Some(Tensor::new(&[1, 1], vec![0.0]).unwrap()),
        observations: Some(ObservationSet::new(pts, vals, "self").unwrap()),
    };
    let l = evaluate_loss(&ode_problem(), &net, &p, &batch, &LossOptions::default(), None, &Executor::sequential()).unwrap();
    assert_eq!(l.components.observations, 0.0);
}

#[test]
fn empty_required_term_is_rejected() {
    let (net, p) = seeded_mlp(1, 2);
    let p = p.with_eq("a", EqParam::scalar(1.0));
    let batch = CollocationBatch {
        interior: Tensor::new(&[2, 1], vec![0.1, 0.2]).unwrap(),
        boundary: None,
        initial: Some(Tensor::zeros(&[0, 1])),
        observations: None,
    };
    let err = evaluate_loss(&ode_problem(), &net, &p, &batch, &LossOptions::default(), None, &Executor::sequential()).unwrap_err();
    assert!(err.to_string().contains("empty term"));
}

fn poisson_setup() -> (Problem, Network, Params, CollocationBatch) {
    let dom = Domain::new(vec![(0.0, 1.0), (0.0, 1.0)], None).unwrap();
    let problem = Problem {
        equation: Equation::Poisson { source: Expr::parse("sin(x)*y").unwrap() },
        domain: dom.clone(),
        meta: vec![],
        boundary: vec![
            BoundaryCondition::Dirichlet { value: Expr::constant(0.0) },
            BoundaryCondition::Neumann { value: Expr::parse("y").unwrap() },
            BoundaryCondition::Dirichlet { value: Expr::parse("x^2").unwrap() },
            BoundaryCondition::Neumann { value: Expr::constant(1.0) },
        ],
        initial: None,
    };
    let (net, p) = seeded_mlp(2, 9);
    let p = p.with_eq("a", EqParam::scalar(1.5));
    let batch = CollocationBatch {
        interior: sample_interior(&dom, 700, Scheme::Uniform, 4).unwrap(),
        boundary: Some(sample_boundary(&dom, 40, Scheme::Uniform, 4).unwrap()),
        initial: None,
        observations: None,
    };
    (problem, net, p, batch)
}

#[test]
fn loss_is_permutation_invariant_up_to_rounding() {
    let (problem, net, p, batch) = poisson_setup();
    let opts = LossOptions { chunk_size: 64, ..LossOptions::default() };
    let exec = Executor::sequential();
    let base = evaluate_loss(&problem, &net, &p, &batch, &opts, None, &exec).unwrap().components;
    let n = batch.interior.nrows();
    let perm: Vec<usize> = (0..n).map(|i| (i * 389 + 17) % n).collect();
    let shuffled = CollocationBatch { interior: batch.interior.select_rows(&perm), ..batch };
    let other = evaluate_loss(&problem, &net, &p, &shuffled, &opts, None, &exec).unwrap().components;
    assert!((base.total - other.total).abs() <= 1e-13 * base.total);
    assert!((base.dynamic - other.dynamic).abs() <= 1e-13 * base.dynamic);
    assert_eq!(base.boundary, other.boundary);
}

#[test]
fn total_is_weighted_sum_and_independent_of_workers() {
    let (problem, net, p, batch) = poisson_setup();
    let opts = LossOptions {
        weights: LossWeights { dynamic: 0.7, boundary: 3.0, initial: 1.0, observations: 1.0 },
        chunk_size: 50,
        mode: AdMode::Reverse,
    };
    let mask = DerivativeMask::forward();
    let seq = evaluate_loss(&problem, &net, &p, &batch, &opts, Some(&mask), &Executor::sequential()).unwrap();
    let par = evaluate_loss(&problem, &net, &p, &batch, &opts, Some(&mask), &Executor::new(Parallelism::Rayon, Some(4)).unwrap()).unwrap();
    let c = seq.components;
    assert_eq!(c.total, 0.7 * c.dynamic + 3.0 * c.boundary);
    assert_eq!(c, par.components);
    let bits = |g: &[f64]| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(seq.gradient.as_ref().unwrap()), bits(par.gradient.as_ref().unwrap()));
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (problem, net, p, batch) = poisson_setup();
    let batch = CollocationBatch { interior: batch.interior.row_range(0, 40), ..batch };
    let opts = LossOptions::default();
    let exec = Executor::sequential();
    let mask = DerivativeMask {
        dynamic: vec!["nn".into(), "eq".into()],
        ..DerivativeMask::forward()
    };
    let g = evaluate_loss(&problem, &net, &p, &batch, &opts, Some(&mask), &exec).unwrap().gradient.unwrap();
    let (theta, manifest) = p.flatten();
    let mut r = rng::stream(1, 0);
    let mut picks: Vec<usize> = (0..12).map(|_| r.random_range(0..theta.len())).collect();
    picks.push(0); // eq.a, only the dynamic term sees it
    for i in picks {
        let h = 1e-6;
        let at = |d: f64| {
            let mut t = theta.clone();
            t[i] += d;
            let q = p.unflatten(&t, &manifest).unwrap();
            evaluate_loss(&problem, &net, &q, &batch, &opts, None, &exec).unwrap().components.total
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!((g[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {} vs {fd}", g[i]);
    }
}
