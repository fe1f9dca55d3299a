use cavlab::forward::{Scheme, TimeGrid};
use cavlab::geometry::{rasterize, CavityShape, Grid, NodeKind};
use cavlab::inverse::{compare, Arm};
use cavlab::observe::{misfit, trapezoid_weights, Observation, ObservationKind, Weights};
use cavlab::scenario::{parse_value, preset_source, set_path, Scenario};
use cavlab::Execution;
use proptest::prelude::*;

fn obs(values: Vec<f64>, nt: usize) -> Observation {
    let n_loc = values.len() / nt;
    Observation {
        kind: ObservationKind::ConormalOnGamma,
        region: "gamma".into(),
        locations: (0..n_loc).collect(),
        coords: (0..n_loc).map(|l| (0.0, l as f64)).collect(),
        values,
        times: (0..nt).map(|i| 0.1 * i as f64).collect(),
        spatial_weight: 0.25,
        noise: None,
    }
}

fn brute_count(shape: &CavityShape, g: &Grid) -> usize {
    let mut n = 0;
    for j in 1..g.ny() - 1 {
        for i in 1..g.nx() - 1 {
            let (x, y) = (g.x(i), g.y(j));
            if shape.contains_closed(x, y) {
                n += 1;
            }
        }
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rectangle_cavity_node_count_matches_lattice(i0 in 3usize..10, j0 in 3usize..10, w in 1usize..8, hgt in 1usize..8) {
        let g = Grid::square(0.0, 2.0, 1.0 / 16.0).unwrap();
        let h = g.h();
        let shape = CavityShape::rectangle(i0 as f64 * h, j0 as f64 * h, (i0 + w) as f64 * h, (j0 + hgt) as f64 * h);
        let cls = rasterize(&shape, &g).unwrap();
        let cavity = cls.count(NodeKind::CavityBoundary) + cls.count(NodeKind::CavityInterior);
        prop_assert_eq!(cavity, (w + 1) * (hgt + 1));
        prop_assert_eq!(cavity, brute_count(&shape, &g));
        prop_assert_eq!(cls.count(NodeKind::Fluid) + cavity + cls.count(NodeKind::OuterBoundary), g.len());
    }

    #[test]
    fn circle_cavity_count_matches_brute_force(cx in 0.8f64..1.2, cy in 0.8f64..1.2, r in 0.1f64..0.5) {
        let g = Grid::square(0.0, 2.0, 1.0 / 16.0).unwrap();
        let shape = CavityShape::circle(cx, cy, r);
        let cls = rasterize(&shape, &g).unwrap();
        let cavity = cls.count(NodeKind::CavityBoundary) + cls.count(NodeKind::CavityInterior);
        prop_assert_eq!(cavity, brute_count(&shape, &g));
    }

    #[test]
    fn misfit_is_symmetric_and_nonnegative(a in prop::collection::vec(-10.0f64..10.0, 12), b in prop::collection::vec(-10.0f64..10.0, 12)) {
        let (oa, ob) = (obs(a, 4), obs(b, 4));
        for w in [Weights::Quadrature, Weights::Unit] {
            let m = misfit(&oa, &ob, w).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert_eq!(m, misfit(&ob, &oa, w).unwrap());
            prop_assert_eq!(misfit(&oa, &oa, w).unwrap(), 0.0);
        }
    }

    #[test]
    fn trapezoid_weights_integrate_linear_functions(steps in prop::collection::vec(0.01f64..1.0, 1..20), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut times = vec![0.0];
        for s in &steps {
            times.push(times.last().unwrap() + s);
        }
        let w = trapezoid_weights(&times);
        let t_end = *times.last().unwrap();
        let quad: f64 = w.iter().zip(&times).map(|(w, t)| w * (a + b * t)).sum();
        let exact = a * t_end + 0.5 * b * t_end * t_end;
        prop_assert!((quad - exact).abs() < 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn set_path_then_parse_roundtrips(t in 0.05f64..0.55) {
        let mut v = parse_value(preset_source("bang-bang-q1").unwrap()).unwrap();
        set_path(&mut v, "time.t_final", 0.6).unwrap();
        set_path(&mut v, "name", 3.0).unwrap_err();
        set_path(&mut v, "source.breakpoints.1", t).unwrap();
        let got = v["source"]["breakpoints"][1].as_float().unwrap();
        prop_assert_eq!(got, t);
    }
}

#[test]
fn sequential_and_parallel_compare_agree_bitwise() {
    let mut s = Scenario::preset("bang-bang-q1").unwrap().with_h(1.0 / 16.0).unwrap();
    s.time = TimeGrid::new(0.6, 60, Scheme::CrankNicolson);
    let design = s.design().unwrap();
    let e = s.experiment().unwrap();
    let op = s.operator("", &e.operator).unwrap().clone();
    let a = Arm { shape: Some(s.shape("", &e.d1).unwrap().clone()), op: op.clone(), u0: s.initial.u0.clone() };
    let b = Arm { shape: Some(s.shape("", &e.d2).unwrap().clone()), op, u0: s.initial.u0.clone() };
    let seq = compare(&design, &a, &b, Execution::Sequential).unwrap();
    let par = compare(&design, &a, &b, Execution::Parallel).unwrap();
    assert_eq!(seq.gap.to_bits(), par.gap.to_bits());
    assert_eq!(seq.floor.to_bits(), par.floor.to_bits());
    assert_eq!(seq.first, par.first);
    assert_eq!(seq.second, par.second);
}
