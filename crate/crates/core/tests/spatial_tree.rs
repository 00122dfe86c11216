mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use scenediff::descriptor::cosine_similarity;
use scenediff::spatial_tree::{AssociationOutcome, SpatialObjectTree, TreeConfig};
use scenediff::{Measurement, ObjectInstance, Point3};

const DELTA_D: f64 = 0.02;
const DELTA_S: f64 = 0.9;

/// Flat-list model of the tree: intervals kept in plain vectors, objects in a
/// vector indexed by id.
struct FlatModel {
    length: f64,
    xs: Vec<(f64, f64)>,
    ys: Vec<(f64, f64)>,
    objects: Vec<ObjectInstance>,
}

fn containing(intervals: &[(f64, f64)], c: f64) -> Option<usize> {
    intervals.iter().position(|(lo, hi)| *lo <= c && c <= *hi)
}

fn ensure_interval(intervals: &mut Vec<(f64, f64)>, length: f64, c: f64) {
    if containing(intervals, c).is_some() {
        return;
    }
    let below = intervals.iter().filter(|(_, hi)| *hi < c).map(|(_, hi)| *hi).fold(f64::NEG_INFINITY, f64::max);
    let above = intervals.iter().filter(|(lo, _)| *lo > c).map(|(lo, _)| *lo).fold(f64::INFINITY, f64::min);
    let lo = (c - length / 2.0).max(below.next_up());
    let hi = (c + length / 2.0).min(above.next_down());
    intervals.push((lo, hi));
}

impl FlatModel {
    fn new(length: f64) -> Self {
        Self { length, xs: Vec::new(), ys: Vec::new(), objects: Vec::new() }
    }

    fn neighborhood(&self, p: &Point3) -> Vec<u64> {
        let (Some(ix), Some(iy)) = (containing(&self.xs, p.x), containing(&self.ys, p.y)) else {
            return Vec::new();
        };
        self.objects
            .iter()
            .filter(|o| containing(&self.xs, o.center.x) == Some(ix) && containing(&self.ys, o.center.y) == Some(iy))
            .map(|o| o.id)
            .collect()
    }

    fn insert(&mut self, m: &Measurement) -> AssociationOutcome {
        let mut best: Option<(f64, f64, u64)> = None;
        for id in self.neighborhood(&m.center) {
            let o = &self.objects[id as usize];
            let dist = (o.center - m.center).norm();
            let sim = cosine_similarity(&o.shape_code, &m.shape_code).unwrap();
            if dist >= DELTA_D || sim <= DELTA_S {
                continue;
            }
            let key = (sim, dist, id);
            best = match best {
                Some(b) if b.0 > key.0 || (b.0 == key.0 && (b.1 < key.1 || (b.1 == key.1 && b.2 < key.2))) => Some(b),
                _ => Some(key),
            };
        }
        if let Some((_, _, id)) = best {
            let o = &mut self.objects[id as usize];
            let updated = m.quality > o.quality;
            if updated {
                o.shape_code = m.shape_code.clone();
                o.center = m.center;
                o.quality = m.quality;
                ensure_interval(&mut self.xs, self.length, m.center.x);
                ensure_interval(&mut self.ys, self.length, m.center.y);
            }
            return AssociationOutcome::Associated { id, updated };
        }
        let id = self.objects.len() as u64;
        self.objects.push(ObjectInstance::from_measurement(id, m));
        ensure_interval(&mut self.xs, self.length, m.center.x);
        ensure_interval(&mut self.ys, self.length, m.center.y);
        AssociationOutcome::Instantiated { id }
    }
}

/// Noisy repeated observations of a fixed set of objects scattered over a
/// few square meters.
#[test]
fn association_matches_flat_list_model() {
    for seed in 0..8 {
        let stream = measurement_stream(seed, 60, 500, 6.0);
        let mut tree = SpatialObjectTree::default();
        let mut model = FlatModel::new(TreeConfig::default().interval_length);
        let mut associated = 0;
        for m in &stream {
            let got = tree.insert_or_associate(m, DELTA_D, DELTA_S).unwrap();
            let want = model.insert(m);
            assert_eq!(got, want, "seed {seed} frame {}", m.frame_index);
            associated += matches!(got, AssociationOutcome::Associated { .. }) as usize;
        }
        assert!(associated > 100, "stream should exercise association");
        tree.check_invariants().unwrap();
        assert_eq!(tree.len(), model.objects.len());
        for (o, want) in tree.all_objects().into_iter().zip(&model.objects) {
            assert_eq!(o, want);
        }
        let mut got_x: Vec<(f64, f64)> = tree.x_tree().in_order().iter().map(|&i| (tree.x_tree().node(i).lo, tree.x_tree().node(i).hi)).collect();
        let mut want_x = model.xs.clone();
        got_x.sort_by(|a, b| a.0.total_cmp(&b.0));
        want_x.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(got_x, want_x);
        let mut r = rng(seed + 100);
        for _ in 0..200 {
            let q = Point3::new(r.random_range(-1.0..7.0), r.random_range(-1.0..7.0), 0.8);
            let got: Vec<u64> = tree.query_neighborhood(&q).iter().map(|o| o.id).collect();
            assert_eq!(got, model.neighborhood(&q));
        }
    }
}

/// Objects whose centers fall in the same x and y node as `q`, found by
/// scanning every node and object.
#[test]
fn neighborhood_matches_linear_scan() {
    let stream = measurement_stream(42, 300, 300, 15.0);
    let mut tree = SpatialObjectTree::default();
    for m in &stream {
        tree.insert_or_associate(m, DELTA_D, DELTA_S).unwrap();
    }
    let mut r = rng(43);
    for _ in 0..500 {
        let q = Point3::new(r.random_range(-1.0..16.0), r.random_range(-1.0..16.0), 0.0);
        let got: Vec<u64> = tree.query_neighborhood(&q).iter().map(|o| o.id).collect();
        assert_eq!(got, neighborhood_scan(&tree, &q));
    }
}

#[test]
fn every_object_is_its_own_neighbor() {
    let stream = measurement_stream(5, 80, 400, 8.0);
    let mut tree = SpatialObjectTree::default();
    for m in &stream {
        tree.insert_or_associate(m, DELTA_D, DELTA_S).unwrap();
    }
    for o in tree.all_objects() {
        assert!(tree.query_neighborhood(&o.center).iter().any(|n| n.id == o.id));
    }
}

#[test]
fn margin_widens_but_never_narrows_neighborhoods() {
    let stream = measurement_stream(9, 80, 300, 6.0);
    let strict_cfg = TreeConfig::default();
    let mut strict = SpatialObjectTree::new(strict_cfg);
    for m in &stream {
        strict.insert_or_associate(m, DELTA_D, DELTA_S).unwrap();
    }
    let wide = SpatialObjectTree::from_json(&strict.to_json().replace("\"neighbor_margin\": 0.0", "\"neighbor_margin\": 0.3")).unwrap();
    assert_eq!(wide.config().neighbor_margin, 0.3);
    let mut r = rng(10);
    for _ in 0..300 {
        let q = Point3::new(r.random_range(0.0..6.0), r.random_range(0.0..6.0), 0.0);
        let a: Vec<u64> = strict.query_neighborhood(&q).iter().map(|o| o.id).collect();
        let b: Vec<u64> = wide.query_neighborhood(&q).iter().map(|o| o.id).collect();
        assert!(a.iter().all(|id| b.contains(id)));
    }
}

#[test]
fn corrupted_json_is_rejected() {
    let mut tree = SpatialObjectTree::default();
    for m in measurement_stream(1, 5, 20, 2.0) {
        tree.insert_or_associate(&m, DELTA_D, DELTA_S).unwrap();
    }
    let text = tree.to_json();
    assert_eq!(SpatialObjectTree::from_json(&text).unwrap(), tree);
    assert!(SpatialObjectTree::from_json("{").is_err());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut broken = v.clone();
    broken["tx"]["nodes"][0]["lo"] = serde_json::json!(1e6);
    assert!(SpatialObjectTree::from_json(&broken.to_string()).is_err());
}

fn arb_measurement() -> impl Strategy<Value = Measurement> {
    (0.0..4.0f64, 0.0..4.0f64, 0usize..4, 0.05..1.0f64, -0.004..0.004f64).prop_map(|(x, y, shape, q, jitter)| {
        measurement(peaked_code(shape, 8), Point3::new(x + jitter, y, 0.5), q, 0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn invariants_hold_after_any_insert_sequence(ms in prop::collection::vec(arb_measurement(), 1..120)) {
        let mut tree = SpatialObjectTree::default();
        let mut created = 0;
        for m in &ms {
            if let AssociationOutcome::Instantiated { id } = tree.insert_or_associate(m, DELTA_D, DELTA_S).unwrap() {
                prop_assert_eq!(id, created);
                created += 1;
            }
        }
        prop_assert!(tree.check_invariants().is_ok());
        prop_assert_eq!(tree.len() as u64, created);
        let ids: Vec<u64> = tree.all_objects().iter().map(|o| o.id).collect();
        prop_assert_eq!(ids, (0..created).collect::<Vec<_>>());
        prop_assert_eq!(SpatialObjectTree::from_json(&tree.to_json()).unwrap(), tree);
    }

    #[test]
    fn repeated_measurement_associates(m in arb_measurement()) {
        let mut tree = SpatialObjectTree::default();
        tree.insert_or_associate(&m, DELTA_D, DELTA_S).unwrap();
        let again = tree.insert_or_associate(&m, DELTA_D, DELTA_S).unwrap();
        prop_assert_eq!(again, AssociationOutcome::Associated { id: 0, updated: false });
        prop_assert_eq!(tree.len(), 1);
    }

    #[test]
    fn stored_quality_never_decreases(ms in prop::collection::vec(arb_measurement(), 1..60)) {
        let mut tree = SpatialObjectTree::default();
        let mut best = std::collections::BTreeMap::new();
        for m in &ms {
            let out = tree.insert_or_associate(m, DELTA_D, DELTA_S).unwrap();
            let q = tree.get(out.id()).unwrap().quality;
            let prev = best.insert(out.id(), q).unwrap_or(0.0);
            prop_assert!(q >= prev);
        }
    }
}
