mod common;

use std::collections::HashSet;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflectsim::capacity::{capacity_det, ChannelMatrix, FadingDraw};
use reflectsim::channel::{array_factor, assemble_channel};
use reflectsim::geometry::Vec3;
use reflectsim::metasurface::{synthesize_phase_profile, MetaAtomSpec, Panel, PanelMode};
use reflectsim::scene::{los_visibility, trace_paths, PathKind, Scene};
use reflectsim::SPEED_OF_LIGHT;

use common::{box_room, random_point_in};

const F: f64 = 300e9;

fn room_with_panel(rng: &mut ChaCha8Rng) -> (Scene, Vec3) {
    let (w, d, h) = (rng.random_range(3.0..8.0), rng.random_range(3.0..8.0), 3.0);
    let tx = random_point_in(rng, w, d, h);
    let rx = loop {
        let p = random_point_in(rng, w, d, h);
        if p.distance(tx) > 0.5 {
            break p;
        }
    };
    let panel = Panel::new(
        "p",
        8,
        8,
        5e-4,
        PanelMode::ControlledReflect { target_direction: Vec3::new(0.0, 0.6, 0.8) },
        MetaAtomSpec::reflective(),
    )
    .unwrap();
    let mut spec = box_room(tx, w, d, h, rng.random_range(3.0..20.0))
        .panel("mount", Vec3::new(w / 2.0, 0.01, 1.0), Vec3::new(0.02, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.02), panel)
        // a free-standing partition so that some cells lose LoS
        .wall("partition", Vec3::new(w / 3.0, d / 3.0, 0.0), Vec3::new(w / 3.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 2.5), 6.0);
    spec.max_bounces = rng.random_range(0..=2);
    (spec.build().unwrap(), rx)
}

#[test]
fn delays_sorted_and_bounded_by_straight_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..40 {
        let (scene, rx) = room_with_panel(&mut rng);
        let paths = trace_paths(&scene, rx, scene.max_bounces).unwrap();
        let direct = scene.tx_position.distance(rx) / SPEED_OF_LIGHT;
        assert!(paths.windows(2).all(|w| w[0].delay <= w[1].delay));
        assert!(paths.iter().all(|p| p.delay >= direct * (1.0 - 1e-12)));
    }
}

#[test]
fn no_los_path_through_walls() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut blocked = 0;
    for _ in 0..60 {
        let (scene, rx) = room_with_panel(&mut rng);
        let visible = los_visibility(&scene, scene.tx_position, rx).unwrap();
        let paths = trace_paths(&scene, rx, scene.max_bounces).unwrap();
        let has_los = paths.iter().any(|p| p.kind == PathKind::Los);
        assert_eq!(visible, has_los);
        blocked += usize::from(!visible);
    }
    assert!(blocked > 0, "fixtures never exercised blocking");
}

#[test]
fn reciprocal_path_multisets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let (w, d, h) = (rng.random_range(3.0..8.0), rng.random_range(3.0..8.0), 3.0);
        let tx = random_point_in(&mut rng, w, d, h);
        let rx = random_point_in(&mut rng, w, d, h);
        let mut spec = box_room(tx, w, d, h, 10.0);
        spec.max_bounces = 2;
        let scene = spec.build().unwrap();
        let key = |s: &Scene, to: Vec3| {
            let mut v: Vec<(i64, PathKind, usize)> = trace_paths(s, to, 2)
                .unwrap()
                .iter()
                .map(|p| ((p.total_length * 1e9).round() as i64, p.kind, p.interactions.len()))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&scene, rx), key(&scene.with_transmitter(rx).unwrap(), tx));
    }
}

#[test]
fn taps_and_paths_are_in_bijection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let (scene, rx) = room_with_panel(&mut rng);
        let paths = trace_paths(&scene, rx, scene.max_bounces).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let response = assemble_channel(&paths, &scene, one, one).unwrap();
        let live: Vec<_> = response.taps.iter().filter(|t| t.kind != PathKind::Absorbed).collect();
        let refs: HashSet<usize> = live.iter().map(|t| t.path_ref).collect();
        assert_eq!(refs.len(), live.len());
        assert_eq!(live.len(), paths.iter().filter(|p| p.kind != PathKind::Absorbed).count());
        for t in live {
            assert_eq!(t.kind, paths[t.path_ref].kind);
        }
    }
}

#[test]
fn synthesized_profile_beats_perturbations() {
    let lambda = SPEED_OF_LIGHT / F;
    let mut p = Panel::new("p", 8, 8, lambda / 2.0, PanelMode::Specular, MetaAtomSpec::reflective())
        .unwrap()
        .centered_on(Vec3::ZERO, Vec3::Z, Vec3::X)
        .unwrap();
    let (t0, f0) = (25f64.to_radians(), 1.1);
    // far source along the normal: plane-wave incidence
    let psi = synthesize_phase_profile(&p, F, Vec3::new(0.0, 0.0, 1e7), p.direction_from_angles(t0, f0)).unwrap();
    p.set_phase_profile(psi.clone());
    let best = array_factor(&p, F, t0, f0).unwrap().value.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let size = rng.random_range(0.01..1.0);
        let perturbed: Vec<f64> = psi.iter().map(|v| (v + rng.random_range(-size..size) * TAU).rem_euclid(TAU)).collect();
        let mut q = p.clone();
        q.set_phase_profile(perturbed);
        assert!(array_factor(&q, F, t0, f0).unwrap().value.norm() <= best * (1.0 + 1e-12));
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
    FadingDraw::generate(rng.random(), 0, rows, cols).g
}

#[test]
fn unitary_rotation_keeps_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (m, n) = (rng.random_range(1..12), rng.random_range(1..12));
        let u = gaussian(&mut rng, m, m).qr().q();
        let h = gaussian(&mut rng, m, n);
        let p = rng.random_range(0.01..100.0);
        let a = capacity_det(&ChannelMatrix::new(h.clone()).unwrap(), p, 1e9).unwrap().bits_per_s;
        let b = capacity_det(&ChannelMatrix::new(&u * h).unwrap(), p, 1e9).unwrap().bits_per_s;
        assert!((a - b).abs() <= 1e-9 * a.max(1e-300), "{a} vs {b}");
    }
}

#[test]
fn favorable_propagation_trend() {
    let mut means = Vec::new();
    for m in [16usize, 64, 256] {
        let mut total = 0.0;
        for draw in 0..100 {
            let g = FadingDraw::generate(7, draw, m, 4).g;
            let gram = g.adjoint() * &g / Complex64::new(m as f64, 0.0) - DMatrix::identity(4, 4);
            total += gram.iter().map(|z| z.norm()).fold(0.0, f64::max);
        }
        means.push(total / 100.0);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

proptest! {
    #[test]
    fn capacity_grows_with_power_and_columns(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, p in 0.0f64..50.0, dp in 0.0f64..50.0) {
        let g = FadingDraw::generate(seed, 1, m, n + 1).g;
        let h = ChannelMatrix::new(g.columns(0, n).into_owned()).unwrap();
        let wider = ChannelMatrix::new(g).unwrap();
        let base = capacity_det(&h, p, 1e9).unwrap().bits_per_s;
        let more_power = capacity_det(&h, p + dp, 1e9).unwrap().bits_per_s;
        let more_cols = capacity_det(&wider, p, 1e9).unwrap().bits_per_s;
        prop_assert!(more_power >= base * (1.0 - 1e-12));
        prop_assert!(more_cols >= base * (1.0 - 1e-12));
    }
}
