use cavlab::forward::{Scheme, TimeGrid};
use cavlab::geometry::{hausdorff_distance, CavityShape, Parameterization, StarShape};
use cavlab::inverse::{reconstruct, Arm, Design, InitialPolicy, InverseProblemSpec, Objective, OptimizerSettings};
use cavlab::observe::{add_noise, misfit, Observation};
use cavlab::operators::EllipticOperator;
use cavlab::scenario::Scenario;
use cavlab::sources::Profile;
use cavlab::{Error, Execution};

struct Setup {
    design: Design,
    op: EllipticOperator,
    truth: CavityShape,
    data: Observation,
    scenario: Scenario,
}

fn setup() -> Setup {
    let mut s = Scenario::preset("circle-reconstruction").unwrap().with_h(1.0 / 16.0).unwrap();
    s.time = TimeGrid::new(1.0, 50, Scheme::CrankNicolson);
    let design = s.design().unwrap();
    let op = s.operator("", &s.experiment().unwrap().operator).unwrap().clone();
    let truth = s.shape("", &s.inverse().unwrap().truth).unwrap().clone();
    let data = design.observe(&Arm { shape: Some(truth.clone()), op: op.clone(), u0: Profile::Zero }).unwrap().obs;
    Setup { design, op, truth, data, scenario: s }
}

fn spec(s: &Setup, optimizer: OptimizerSettings) -> InverseProblemSpec {
    InverseProblemSpec { data: s.data.clone(), param: s.scenario.parameterization().unwrap(), policy: InitialPolicy::Windowed, lambda: 0.0, optimizer }
}

#[test]
fn objective_vanishes_at_the_truth_and_not_elsewhere() {
    let s = setup();
    let spec = spec(&s, OptimizerSettings::default());
    let f = Objective { design: &s.design, op: &s.op, spec: &spec };
    let at_truth = f.evaluate(&[1.1, 1.1, 0.3]);
    assert!(at_truth.feasible);
    assert!(at_truth.objective <= 1e-12, "{}", at_truth.objective);
    let off = f.evaluate(&[1.0, 1.2, 0.4]);
    assert!(off.objective > 1e3 * at_truth.objective.max(1e-15), "{}", off.objective);
}

#[test]
fn infeasible_parameters_give_infinite_objective() {
    let s = setup();
    let spec = spec(&s, OptimizerSettings::default());
    let f = Objective { design: &s.design, op: &s.op, spec: &spec };
    let wrong_arity = f.evaluate(&[1.1, 1.1]);
    assert!(!wrong_arity.feasible && wrong_arity.objective.is_infinite());
    // clamped into the box but still too small to hold a node
    let tiny = f.evaluate(&[1.1, 1.1, 0.0]);
    assert!(tiny.clamped);
    let mut p = s.scenario.parameterization().unwrap();
    p.lower[2] = 0.001;
    let spec = InverseProblemSpec { param: p, ..spec.clone() };
    let f = Objective { design: &s.design, op: &s.op, spec: &spec };
    let empty = f.evaluate(&[1.1 + 0.5 / 16.0, 1.1 + 0.5 / 16.0, 0.001]);
    assert!(!empty.feasible && empty.objective.is_infinite(), "{empty:?}");
}

#[test]
fn tiny_budget_is_flagged_as_exhausted() {
    let s = setup();
    let spec = spec(&s, OptimizerSettings { starts: 2, max_evals: 8, ..OptimizerSettings::default() });
    let r = reconstruct(&s.design, &s.op, &spec, Execution::Sequential).unwrap();
    assert!(r.budget_exhausted);
    assert!(r.evals <= 8);
    assert_eq!(r.starts.len(), 2);
}

#[test]
fn reconstruction_recovers_the_circle_and_is_deterministic() {
    let s = setup();
    let spec = spec(&s, OptimizerSettings { starts: 2, max_evals: 600, seed: 7, ..OptimizerSettings::default() });
    let a = reconstruct(&s.design, &s.op, &spec, Execution::Sequential).unwrap();
    let b = reconstruct(&s.design, &s.op, &spec, Execution::Parallel).unwrap();
    assert_eq!(a.best_params, b.best_params);
    assert_eq!(a.trace, b.trace);
    assert!(a.trace.windows(2).all(|w| w[1].best <= w[0].best));
    let h = s.design.grid.h();
    let d = hausdorff_distance(&a.shape, &s.truth);
    assert!(d < 2.0 * h, "{d} with params {:?}", a.best_params);
    assert!(matches!(a.shape, CavityShape::StarShaped(StarShape { .. })));
}

#[test]
fn invalid_optimizer_settings_are_rejected() {
    let s = setup();
    let spec = spec(&s, OptimizerSettings { starts: 0, ..OptimizerSettings::default() });
    assert!(matches!(reconstruct(&s.design, &s.op, &spec, Execution::Sequential), Err(Error::UnvalidatedSpec(_))));
}

fn star(a1: f64, b2: f64) -> CavityShape {
    CavityShape::StarShaped(StarShape { cx: 1.1, cy: 1.1, r0: 0.3, a: vec![a1, 0.0], b: vec![0.0, b2] })
}

fn observe(s: &Setup, shape: &CavityShape, u0: Profile, design: &Design) -> Observation {
    design.observe(&Arm { shape: Some(shape.clone()), op: s.op.clone(), u0 }).unwrap().obs
}

/// Misfit between the zero-data observations of `shape` at `h` and at `h/2`.
fn floor(s: &Setup, shape: &CavityShape) -> f64 {
    let coarse = observe(s, shape, Profile::Zero, &s.design);
    let fine = observe(s, shape, Profile::Zero, &s.design.on_grid(s.design.grid.refined()));
    misfit(&coarse, &fine.restrict_to(&coarse).unwrap(), s.design.weights).unwrap()
}

#[test]
fn windowing_forgets_nonzero_initial_data() {
    let s = setup();
    let data = observe(&s, &s.truth, s.scenario.initial.u0.clone(), &s.design);
    let spec = InverseProblemSpec { data, ..spec(&s, OptimizerSettings::default()) };
    let f = Objective { design: &s.design, op: &s.op, spec: &spec };
    let at_truth = f.evaluate(&[1.1, 1.1, 0.3]).objective;
    let noiseless_floor = floor(&s, &s.truth);
    assert!(at_truth < 10.0 * noiseless_floor, "{at_truth} vs floor {noiseless_floor}");
}

#[test]
fn objective_grows_along_single_coefficient_segments() {
    let s = setup();
    let truth = star(0.03, 0.02);
    let param = Parameterization::new_box(2, 0.6, 1.4, 0.1, 0.5, 0.15);
    let p0 = match &truth {
        CavityShape::StarShaped(st) => param.params_of(st),
        _ => unreachable!(),
    };
    let data = observe(&s, &truth, Profile::Zero, &s.design);
    let spec = InverseProblemSpec { data, param, ..spec(&s, OptimizerSettings::default()) };
    let f = Objective { design: &s.design, op: &s.op, spec: &spec };
    let mut monotone = 0;
    let mut total = 0;
    for i in 3..7 {
        for sign in [-1.0, 1.0] {
            let values: Vec<f64> = (0..=5)
                .map(|k| {
                    let mut p = p0.clone();
                    p[i] += sign * 0.02 * k as f64;
                    f.evaluate(&p).objective
                })
                .collect();
            assert!(values[5] > values[0], "coefficient {i} sign {sign}: {values:?}");
            total += 1;
            if values.windows(2).all(|w| w[1] >= w[0]) {
                monotone += 1;
            }
        }
    }
    assert!(monotone as f64 >= 0.8 * total as f64, "{monotone} of {total} scans monotone");
}

#[test]
fn noisy_star_is_recovered_for_most_seeds() {
    let s = setup();
    let truth = star(0.03, 0.02);
    let clean = observe(&s, &truth, Profile::Zero, &s.design);
    let h = s.design.grid.h();
    let mut hits = 0;
    for seed in 0..5 {
        let spec = InverseProblemSpec {
            data: add_noise(&clean, 0.01, seed).unwrap(),
            param: Parameterization::new_box(2, 0.6, 1.4, 0.1, 0.5, 0.1),
            ..spec(&s, OptimizerSettings { starts: 4, max_evals: 2000, seed, ..OptimizerSettings::default() })
        };
        let r = reconstruct(&s.design, &s.op, &spec, Execution::default()).unwrap();
        if hausdorff_distance(&r.shape, &truth) < 4.0 * h {
            hits += 1;
        }
    }
    assert!(hits >= 3, "{hits} of 5 seeds within 4h");
}

#[test]
fn target_outside_the_box_leaves_a_large_misfit() {
    let s = setup();
    let optimizer = OptimizerSettings { starts: 2, max_evals: 400, ..OptimizerSettings::default() };
    let param = Parameterization { harmonics: 0, lower: vec![0.6, 0.6, 0.1], upper: vec![1.4, 1.4, 0.3] };
    let feasible = reconstruct(&s.design, &s.op, &InverseProblemSpec { param: param.clone(), ..spec(&s, optimizer.clone()) }, Execution::default()).unwrap();

    let big = CavityShape::rectangle(0.5, 0.5, 1.5, 1.5);
    let data = observe(&s, &big, Profile::Zero, &s.design);
    let spec = InverseProblemSpec { data, param, ..spec(&s, optimizer) };
    let r = reconstruct(&s.design, &s.op, &spec, Execution::default()).unwrap();
    // radii within a cell of the cap rasterize alike
    let on_box_edge = 0.3 - r.best_params[2] < s.design.grid.h();
    assert!(r.budget_exhausted || on_box_edge, "{:?}", r.best_params);
    assert!(r.objective > 1e3 * feasible.objective.max(1e-12), "{} vs {}", r.objective, feasible.objective);
}

#[test]
fn reconstructions_from_different_initial_data_agree() {
    let mut s = setup();
    // e^{-c δ} < 1e-3 for the reaction coefficient c = 10
    s.design.window_start = 0.7;
    let optimizer = OptimizerSettings { starts: 2, max_evals: 600, seed: 3, ..OptimizerSettings::default() };
    let run = |u0: Profile| {
        let data = observe(&s, &s.truth, u0, &s.design);
        reconstruct(&s.design, &s.op, &InverseProblemSpec { data, ..spec(&s, optimizer.clone()) }, Execution::default()).unwrap().best_params
    };
    let a = run(s.scenario.initial.u0.clone());
    let b = run(Profile::HeatMode { fx: 1.0, fy: 1.0, amplitude: 1.0 });
    let h = s.design.grid.h();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= h), "{a:?} vs {b:?}");
}
