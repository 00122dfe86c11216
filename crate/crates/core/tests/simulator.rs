mod common;

use std::collections::BTreeMap;

use common::*;
use scenediff::eval::{generate, Scenario};
use scenediff::simulator::{
    generate_trajectories, look_at, sample_partial_surface, GtLabel, OverlapProfile, TrajectoryConfig,
};
use scenediff::{Point3, RigidTransform, Vector3};

#[test]
fn generation_is_a_function_of_the_seed() {
    let s = Scenario::table_one();
    let a = generate(&s, 5).unwrap();
    let b = generate(&s, 5).unwrap();
    assert_eq!(a.source_stream, b.source_stream);
    assert_eq!(a.target_stream, b.target_stream);
    assert_eq!(a.labels, b.labels);
    let c = generate(&s, 6).unwrap();
    assert_ne!(a.source_scene, c.source_scene);
}

#[test]
fn table_one_scene_shape() {
    let s = Scenario::table_one();
    for seed in 0..10 {
        let g = generate(&s, seed).unwrap();
        let n = g.source_scene.objects.len();
        assert!((35..=40).contains(&n), "seed {seed}: {n} objects");
        for t in 0..8 {
            let k = g.source_scene.objects_on(t).len();
            assert!((4..=5).contains(&k), "seed {seed} table {t}: {k}");
        }
        assert!(g.source_scene.min_pair_distance().unwrap() >= 0.15 - 1e-12);
        assert!(g.target_scene.min_pair_distance().unwrap() >= 0.15 - 1e-12);
        let mut by_label: BTreeMap<GtLabel, usize> = BTreeMap::new();
        for l in g.labels.values() {
            *by_label.entry(*l).or_default() += 1;
        }
        assert_eq!(by_label.get(&GtLabel::Added), Some(&3));
        assert_eq!(by_label.get(&GtLabel::Removed), Some(&3));
        assert_eq!(by_label.get(&GtLabel::Moved), Some(&6));
        assert_eq!(g.labels.values().filter(|l| l.is_changed()).count(), 12);
        let profiles = &g.target_trajectory.profiles;
        assert_eq!(profiles.iter().filter(|p| **p == OverlapProfile::OppositeSide).count(), 3);
    }
}

#[test]
fn session_offset_matches_configuration() {
    let s = Scenario::table_one();
    for seed in 0..20 {
        let g = generate(&s, seed).unwrap();
        let off = g.target_stream.offset;
        assert!((off.translation().norm() - 0.1).abs() < 1e-12);
        assert!((off.rotation_angle().to_degrees() - 5.0).abs() < 1e-9);
    }
}

#[test]
fn target_centers_align_under_true_offset() {
    let s = Scenario::table_one();
    let g = generate(&s, 3).unwrap();
    let t = g.true_t_rel();
    for obs in g.target_stream.observations() {
        let truth = g.target_scene.object(obs.gt_id).unwrap().position;
        let err = (t.apply(&obs.measurement.center) - truth).norm();
        assert!(err < 0.02, "gt {} error {err}", obs.gt_id);
    }
    for obs in g.source_stream.observations() {
        let truth = g.source_scene.object(obs.gt_id).unwrap().position;
        assert!((obs.measurement.center - truth).norm() < 0.02);
    }
}

#[test]
fn every_object_is_observed_in_both_sessions() {
    let s = Scenario::table_one();
    for seed in 0..5 {
        let g = generate(&s, seed).unwrap();
        for (gt, label) in &g.labels {
            let in_source = g.source_stream.observations().any(|o| o.gt_id == *gt);
            let in_target = g.target_stream.observations().any(|o| o.gt_id == *gt);
            match label {
                GtLabel::Added => assert!(in_target && !in_source),
                GtLabel::Removed => assert!(in_source && !in_target),
                _ => assert!(in_source && in_target, "seed {seed} gt {gt}"),
            }
        }
    }
}

#[test]
fn opposite_views_barely_overlap() {
    let lib = generate(&Scenario::table_one(), 0).unwrap().library;
    for (i, entry) in lib.shapes.iter().enumerate() {
        let overlap = opposite_view_overlap(&entry.primitive, i as u64, 2000, 1.0, 0.005);
        assert!(overlap < 0.10, "shape {i}: {overlap}");
    }
}

#[test]
fn partial_surfaces_face_the_camera() {
    let lib = generate(&Scenario::table_one(), 0).unwrap().library;
    let mut r = rng(1);
    for entry in &lib.shapes {
        let pose = RigidTransform::from_axis_angle(Vector3::z(), 0.7, Vector3::new(1.0, 2.0, 0.8));
        let eye = Point3::new(2.0, 2.5, 1.2);
        let pts = sample_partial_surface(&entry.primitive, &pose, &eye, 300, &mut r);
        assert_eq!(pts.len(), 300);
        for (p, n) in pts {
            assert!(n.dot(&(eye - p)) > 0.0);
        }
    }
}

#[test]
fn cameras_look_at_their_table() {
    let g = generate(&Scenario::table_one(), 2).unwrap();
    let (src, tgt) = generate_trajectories(&g.source_scene, &TrajectoryConfig::default(), 9).unwrap();
    for traj in [&src, &tgt] {
        assert_eq!(traj.poses.len(), 40);
        for p in &traj.poses {
            let table = g.source_scene.tables[p.table].center;
            let to_table = (table - p.position()).normalize();
            assert!(p.forward().dot(&to_table) > 1.0 - 1e-9);
            assert!(p.pose.orthonormality_error() < 1e-12);
        }
    }
    assert!(look_at(&Point3::origin(), &Point3::new(0.0, 0.0, 1.0)).is_err());
}
