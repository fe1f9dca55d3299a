use cavlab::forward::{solve, Scheme, TimeGrid};
use cavlab::geometry::{rasterize, CavityShape, Edge, Grid, Patch, Region};
use cavlab::observe::{add_noise, extract, misfit, trapezoid_weights, Observation, ObservationKind, Weights};
use cavlab::operators::{conormal_trace, CavityCondition, EllipticOperator};
use cavlab::Error;

fn grid() -> Grid {
    Grid::square(0.25, 2.0, 1.0 / 16.0).unwrap()
}

fn synthetic(n_loc: usize, times: Vec<f64>, f: impl Fn(usize, usize) -> f64) -> Observation {
    let nt = times.len();
    Observation {
        kind: ObservationKind::ConormalOnGamma,
        region: "gamma".into(),
        locations: (0..n_loc).collect(),
        coords: (0..n_loc).map(|l| (0.25, 0.25 + l as f64)).collect(),
        values: (0..n_loc * nt).map(|i| f(i / nt, i % nt)).collect(),
        times,
        spatial_weight: 0.5,
        noise: None,
    }
}

/// The one-sided normal difference is exact for quadratics, so the conormal
/// derivative of `x² + xy + y²` is reproduced to round-off on every edge.
#[test]
fn conormal_trace_is_exact_for_quadratics() {
    let g = grid();
    let op = EllipticOperator::constant(2.0, 0.5, 1.0, 0.0, 0.0, 0.0);
    let u: Vec<f64> = (0..g.len())
        .map(|k| {
            let (x, y) = g.coords(k);
            x * x + x * y + y * y
        })
        .collect();
    for edge in Edge::ALL {
        let region = Region::edge(edge);
        let trace = conormal_trace(&u, &op, &region, &g).unwrap();
        let nodes = region.gamma_nodes(&g).unwrap();
        assert_eq!(trace.len(), nodes.len());
        for (v, n) in trace.iter().zip(&nodes) {
            let (x, y) = g.coords(n.node);
            let (ux, uy) = (2.0 * x + y, x + 2.0 * y);
            let (nx, ny) = edge.normal();
            let expected = (2.0 * ux + 0.5 * uy) * nx + (0.5 * ux + 1.0 * uy) * ny;
            assert!((v - expected).abs() < 1e-9, "{edge:?} at ({x},{y}): {v} vs {expected}");
        }
    }
}

#[test]
fn one_percent_noise_has_the_requested_level() {
    let obs = synthetic(100, (0..100).map(|i| i as f64 * 0.01).collect(), |l, t| ((l * 37 + t * 11) % 17) as f64 - 8.0);
    let noisy = add_noise(&obs, 0.01, 42).unwrap();
    let n = obs.values.len() as f64;
    let noise_rms = (noisy.values.iter().zip(&obs.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    let rel = noise_rms / obs.rms();
    assert!((0.008..=0.012).contains(&rel), "{rel}");
    assert_eq!(add_noise(&obs, 0.01, 42).unwrap(), noisy);
    assert_ne!(add_noise(&obs, 0.01, 43).unwrap().values, noisy.values);
    assert_eq!(noisy.noise.unwrap().seed, 42);
}

#[test]
fn negative_noise_level_is_rejected() {
    let obs = synthetic(2, vec![0.0, 1.0], |_, _| 1.0);
    assert!(matches!(add_noise(&obs, -0.1, 0), Err(Error::UnvalidatedSpec(_))));
}

#[test]
fn misfit_of_a_constant_offset_has_closed_form() {
    let times: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
    let a = synthetic(3, times.clone(), |l, t| (l + t) as f64);
    let b = synthetic(3, times.clone(), |l, t| (l + t) as f64 + 0.2);
    // ½ · spatial weight · locations · c² · T
    let expected = 0.5 * 0.5 * 3.0 * 0.04 * 1.0;
    let m = misfit(&a, &b, Weights::Quadrature).unwrap();
    assert!((m - expected).abs() < 1e-14, "{m}");
    assert_eq!(misfit(&b, &a, Weights::Quadrature).unwrap(), m);
    assert!((misfit(&a, &b, Weights::Unit).unwrap() - 0.5 * 33.0 * 0.04).abs() < 1e-13);
    assert_eq!(misfit(&a, &a, Weights::Quadrature).unwrap(), 0.0);
    let w: f64 = trapezoid_weights(&times).iter().sum();
    assert!((w - 1.0).abs() < 1e-15);
}

#[test]
fn misfit_rejects_mismatched_layouts() {
    let a = synthetic(3, vec![0.0, 1.0], |_, _| 0.0);
    let b = synthetic(2, vec![0.0, 1.0], |_, _| 0.0);
    assert!(matches!(misfit(&a, &b, Weights::Unit), Err(Error::ShapeMismatch(_))));
}

#[test]
fn fine_grid_observations_restrict_to_coarse_locations() {
    let coarse = grid();
    let fine = coarse.refined();
    let shape = CavityShape::rectangle(0.5, 0.5, 1.0, 1.0);
    let op = EllipticOperator::laplacian();
    let run = |g: &Grid, nt: usize| {
        let cls = rasterize(&shape, g).unwrap();
        let u0: Vec<f64> = (0..g.len())
            .map(|k| {
                let (x, y) = g.coords(k);
                // vanishes on the outer boundary and on the cavity boundary
                let pi = std::f64::consts::PI;
                let envelope = (pi * (x - 0.25) / 1.75).sin() * (pi * (y - 0.25) / 1.75).sin();
                if cls.kind(k).is_cavity() { 0.0 } else { envelope * (2.0 * pi * x).sin() * (2.0 * pi * y).sin() }
            })
            .collect();
        let f = solve(&cls, &op, None, None, &u0, &TimeGrid::new(0.01, nt, Scheme::CrankNicolson), &CavityCondition::Dirichlet).unwrap();
        extract(&f, &Region::edge(Edge::Left), &op, ObservationKind::ConormalOnGamma).unwrap()
    };
    let rel = |a: &Observation, b: &Observation| {
        let zero = Observation { values: vec![0.0; a.values.len()], ..a.clone() };
        misfit(a, b, Weights::Quadrature).unwrap() / misfit(a, &zero, Weights::Quadrature).unwrap()
    };
    let a = run(&coarse, 10);
    let b = run(&fine, 20);
    let c = run(&fine.refined(), 40);
    let b_on_a = b.restrict_to(&a).unwrap();
    assert_eq!(a.coords, b_on_a.coords);
    assert_eq!(a.times, b_on_a.times);
    let coarse_gap = rel(&a, &b_on_a);
    let fine_gap = rel(&b, &c.restrict_to(&b).unwrap());
    assert!(coarse_gap < 5e-2, "{coarse_gap}");
    assert!(fine_gap < 0.5 * coarse_gap, "{fine_gap} vs {coarse_gap}");
}

#[test]
fn interior_observation_needs_fluid_nodes() {
    let g = grid();
    let cls = rasterize(&CavityShape::rectangle(0.5, 0.5, 1.0, 1.0), &g).unwrap();
    let op = EllipticOperator::laplacian();
    let f = solve(&cls, &op, None, None, &vec![0.0; g.len()], &TimeGrid::new(0.01, 2, Scheme::CrankNicolson), &CavityCondition::Dirichlet).unwrap();
    let inside = Region::InteriorPatch { patch: Patch::Rect { x0: 0.6, y0: 0.6, x1: 0.9, y1: 0.9 } };
    assert!(matches!(extract(&f, &inside, &op, ObservationKind::InteriorOnOmega), Err(Error::InvalidRegion(_))));
    assert!(matches!(
        extract(&f, &Region::edge(Edge::Top), &op, ObservationKind::InteriorOnOmega),
        Err(Error::RegionKindMismatch(_))
    ));
    let strip = Region::InteriorPatch { patch: Patch::Rect { x0: 0.3, y0: 0.3, x1: 0.45, y1: 1.9 } };
    let obs = extract(&f, &strip, &op, ObservationKind::InteriorOnOmega).unwrap();
    assert_eq!(obs.spatial_weight, g.h() * g.h());
    assert!(obs.values.iter().all(|&v| v == 0.0));
}
