use proptest::prelude::*;

use legimod::env::{step, EnvState, SceneSpec, Status};
use legimod::geometry::{resample_arclength, BezierCurve, Point};
use legimod::ipf::{posteriors, potential};
use legimod::scoring::{rank_normalize, score_lp_eval, score_lp_train};

fn point2() -> impl Strategy<Value = Point> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| Point::xy(x, y))
}

fn point3() -> impl Strategy<Value = Point> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y, z)| Point::xyz(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn posteriors_sum_to_one(goals in prop::collection::vec(point3(), 2..5), x in point3(), sigma in 0.01..1.0f64) {
        let p = posteriors(&x, &goals, sigma).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn potential_mirrors_with_intended_goal(x in point2()) {
        let spec = SceneSpec::default_2d();
        let other = spec.scene.with_intended(1).unwrap();
        let mirrored = Point::xy(1.0 - x.coord(0), x.coord(1));
        let a = potential(&x, &spec.scene, spec.sigma).unwrap();
        let b = potential(&mirrored, &other, spec.sigma).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn bezier_stays_in_control_hull(c in prop::array::uniform4(point2()), dirs in prop::collection::vec(-1.0..1.0f64, 16)) {
        let curve = BezierCurve::new(c[0], c[1], c[2], c[3]).unwrap();
        for i in 0..=1000 {
            let p = curve.evaluate(i as f64 / 1000.0).unwrap();
            // A point is in the hull iff no direction separates it.
            for w in dirs.chunks(2) {
                let w = Point::xy(w[0], w[1]);
                let support = c.iter().map(|q| q.dot(&w)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p.dot(&w) <= support + 1e-12);
            }
        }
    }

    #[test]
    fn resampling_keeps_endpoints(c in prop::array::uniform4(point2()), n in 2usize..120) {
        prop_assume!(c[0].distance(&c[3]) > 0.05);
        let curve = BezierCurve::new(c[0], c[1], c[2], c[3]).unwrap();
        let t = resample_arclength(&curve, n).unwrap();
        prop_assert_eq!(t.len(), n);
        prop_assert_eq!(t.first(), c[0]);
        prop_assert_eq!(t.last(), c[3]);
    }

    #[test]
    fn ranks_span_unit_interval(mut raw in prop::collection::vec(-100.0..100.0f64, 2..60)) {
        raw.dedup();
        prop_assume!(raw.len() >= 2);
        let labels = rank_normalize(&raw).unwrap();
        let ell: Vec<f64> = labels.iter().map(|l| l.normalized).collect();
        let (imin, imax) = (0..raw.len()).fold((0, 0), |(lo, hi), i| {
            (if raw[i] < raw[lo] { i } else { lo }, if raw[i] > raw[hi] { i } else { hi })
        });
        prop_assert_eq!(ell[imin], -1.0);
        prop_assert_eq!(ell[imax], 1.0);
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                if raw[i] < raw[j] {
                    prop_assert!(ell[i] < ell[j]);
                }
            }
        }
    }

    #[test]
    fn scores_are_monotone_in_each_potential(states in prop::collection::vec(point2(), 3..20), pick in any::<prop::sample::Index>()) {
        let spec = SceneSpec::default_2d();
        let i = pick.index(states.len());
        // Moving a state onto the distractor raises its potential.
        let mut worse = states.clone();
        worse[i] = spec.scene.goals[1];
        let before = potential(&states[i], &spec.scene, spec.sigma).unwrap();
        let after = potential(&worse[i], &spec.scene, spec.sigma).unwrap();
        prop_assume!(after > before + 1e-9);
        let train = |s: &[Point]| score_lp_train(s, &spec.scene, spec.sigma, 0.05).unwrap();
        let eval = |s: &[Point]| score_lp_eval(s, &spec.scene, spec.sigma).unwrap();
        prop_assert!(train(&worse) < train(&states));
        prop_assert!(eval(&worse) > eval(&states));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stepping_never_leaves_bounds(actions in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1000)) {
        for spec in [SceneSpec::default_2d(), SceneSpec::default_3d()] {
            let mut spec = spec;
            spec.env.max_steps = 2000;
            // keep the goal out of reach so every step is taken
            spec.env.success_radius = 1e-9;
            let mut s = EnvState::reset(&spec.scene);
            for (x, y, z) in &actions {
                let a = if spec.dim() == 2 { Point::xy(*x, *y) } else { Point::xyz(*x, *y, *z) };
                let next = step(&s, &a, &spec).unwrap();
                prop_assert_eq!(step(&s, &a, &spec).unwrap(), next);
                prop_assert!(spec.scene.bounds.contains(&next.position));
                s = next;
            }
            prop_assert_eq!(s.step_count, 1000);
        }
    }
}

#[test]
fn straight_line_policy_reaches_the_goal() {
    for spec in [SceneSpec::default_2d(), SceneSpec::default_3d()] {
        for target in 0..2 {
            let spec = spec.with_intended(target).unwrap();
            let mut s = EnvState::reset(&spec.scene);
            while !s.is_done() {
                let a = (spec.scene.goal() - s.position) * (1.0 / spec.env.dt);
                s = step(&s, &a, &spec).unwrap();
            }
            assert_eq!(s.status, Status::Success);
            assert!(s.step_count < spec.env.max_steps);
        }
    }
}
