mod common;

use common::optimal_assignment_cost;
use nae_core::eval::{improvement_ratio, point_errors, MatchMode, RestorationMetrics};
use nae_core::rng::{substream, Purpose};
use nae_core::synth::{generate_scene, jitter_annotations, JitterSpec, Layout, SceneSpec};
use nae_core::{Point, PointSet};
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn jitter_magnitude_is_beta_times_spacing() {
    // A 100 x 100 lattice with spacing 5 and a 10 px margin: every d_i is 5
    // and nothing reaches the border.
    let pts: Vec<Point> = (0..100)
        .flat_map(|r| {
            (0..100).map(move |c| Point::new(10.0 + 5.0 * c as f64, 10.0 + 5.0 * r as f64))
        })
        .collect();
    let centers = PointSet::new(520, 520, pts).unwrap();
    let j = jitter_annotations(
        &centers,
        &JitterSpec { beta: 0.4 },
        &mut substream(1, Purpose::Jitter, &[]),
    )
    .unwrap();
    assert!(j.clamped.iter().all(|c| !c));
    let mean = j
        .points
        .points()
        .iter()
        .zip(centers.points())
        .map(|(a, b)| a.distance(*b))
        .sum::<f64>()
        / 1e4;
    assert!((mean - 2.0).abs() <= 0.01, "mean displacement {mean}");
}

#[test]
fn zero_jitter_leaves_annotations_on_the_truth() {
    let spec = SceneSpec::default();
    let scene = generate_scene(&spec, &mut substream(2, Purpose::Scene, &[])).unwrap();
    let j = jitter_annotations(
        &scene.centers,
        &JitterSpec { beta: 0.0 },
        &mut substream(2, Purpose::Jitter, &[]),
    )
    .unwrap();
    assert_eq!(j.points, scene.centers);
}

#[test]
fn perspective_scenes_shrink_towards_the_top() {
    let spec = SceneSpec {
        width: 96,
        height: 96,
        count: (20, 30),
        min_separation: 8.0,
        layout: Layout::Perspective { top_scale: 0.3 },
        ..SceneSpec::default()
    };
    let (mut top, mut bottom) = (Vec::new(), Vec::new());
    for i in 0..100 {
        let scene = generate_scene(&spec, &mut substream(3, Purpose::Scene, &[i])).unwrap();
        for (c, r) in scene.centers.points().iter().zip(&scene.radii) {
            if c.y < 32.0 {
                top.push(*r);
            } else if c.y >= 64.0 {
                bottom.push(*r);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!top.is_empty() && !bottom.is_empty());
    assert!(
        mean(&top) < mean(&bottom),
        "{} vs {}",
        mean(&top),
        mean(&bottom)
    );
}

#[test]
fn scenes_are_reproducible() {
    let spec = SceneSpec::default();
    let a = generate_scene(&spec, &mut substream(4, Purpose::Scene, &[0])).unwrap();
    let b = generate_scene(&spec, &mut substream(4, Purpose::Scene, &[0])).unwrap();
    assert_eq!(a, b);
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 1..max)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
}

proptest! {
    #[test]
    fn nn_match_of_a_permutation_is_exact(pts in cloud(40), seed in any::<u64>()) {
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut substream(seed, Purpose::Shuffle, &[]));
        let e = point_errors(&shuffled, &pts, MatchMode::NnMatch).unwrap();
        prop_assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nn_match_never_beats_the_optimal_assignment(a in cloud(8), seed in any::<u64>()) {
        // Perturbing a small set slightly keeps the greedy pairing optimal.
        let mut rng = substream(seed, Purpose::Jitter, &[]);
        let b: Vec<Point> = a
            .iter()
            .map(|p| Point::new(p.x + rand::Rng::random_range(&mut rng, -1e-3..1e-3), p.y))
            .collect();
        let greedy: f64 = point_errors(&a, &b, MatchMode::NnMatch).unwrap().iter().sum();
        let best = optimal_assignment_cost(&a, &b);
        prop_assert!(greedy >= best - 1e-12);
        let spread = a.iter().enumerate().all(|(i, p)| a[..i].iter().all(|q| p.distance(*q) > 0.01));
        if spread {
            prop_assert!((greedy - best).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_ignore_point_order(pts in cloud(30), seed in any::<u64>()) {
        let truth: Vec<Point> = pts.iter().map(|p| Point::new(p.x + 0.5, p.y - 0.25)).collect();
        let refined: Vec<Point> = pts.iter().map(|p| Point::new(p.x + 0.1, p.y)).collect();
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut substream(seed, Purpose::Shuffle, &[]));
        let pick = |v: &[Point]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let score = |a: &[Point], r: &[Point], t: &[Point]| {
            let before = point_errors(a, t, MatchMode::Indexed).unwrap();
            let after = point_errors(r, t, MatchMode::Indexed).unwrap();
            RestorationMetrics::from_errors(&before, &after, MatchMode::Indexed).unwrap()
        };
        let m1 = score(&pts, &refined, &truth);
        let m2 = score(&pick(&pts), &pick(&refined), &pick(&truth));
        prop_assert!((m1.mean_err_before - m2.mean_err_before).abs() < 1e-12);
        prop_assert!((m1.mean_err_after - m2.mean_err_after).abs() < 1e-12);
        prop_assert_eq!(m1.p50, m2.p50);
        let r = m1.improvement_ratio.unwrap();
        prop_assert!((r - (1.0 - m1.mean_err_after / m1.mean_err_before)).abs() < 1e-15);
    }
}

#[test]
fn ratio_is_undefined_without_initial_error() {
    assert_eq!(improvement_ratio(0.0, 0.0), None);
    assert_eq!(improvement_ratio(2.0, 1.0), Some(0.5));
}
