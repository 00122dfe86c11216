//! Helpers shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scenediff::change::ObjectGraph;
use scenediff::descriptor::cosine_similarity;
use scenediff::rng::seeded_rng;
use scenediff::spatial_tree::SpatialObjectTree;
use scenediff::{Measurement, ObjectInstance, Point3, RigidTransform, Session, ShapeCode, Vector3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed)
}

pub fn random_code(rng: &mut impl Rng, k: usize) -> ShapeCode {
    ShapeCode::new((0..k).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Code concentrated on entry `i` of `k`, with a small positive floor.
pub fn peaked_code(i: usize, k: usize) -> ShapeCode {
    let mut v = vec![0.01; k];
    v[i % k] = 1.0;
    ShapeCode::new(v).unwrap()
}

pub fn measurement(code: ShapeCode, center: Point3, quality: f64, frame_index: u64) -> Measurement {
    Measurement {
        shape_code: code,
        center,
        quality,
        frame_index,
        session: Session::Target,
    }
}

pub fn instance(id: u64, code: ShapeCode, center: Point3) -> ObjectInstance {
    ObjectInstance {
        id,
        shape_code: code,
        center,
        quality: 0.9,
        marked_changed: false,
        observed: false,
        matched: false,
    }
}

pub fn random_point(rng: &mut impl Rng, half: f64) -> Point3 {
    Point3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half))
}

pub fn random_rotation(rng: &mut impl Rng) -> RigidTransform {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = axis.try_normalize(1e-9).unwrap_or(Vector3::z());
    RigidTransform::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::PI), Vector3::zeros())
}

pub fn random_transform(rng: &mut impl Rng, max_translation: f64) -> RigidTransform {
    let r = random_rotation(rng);
    let t = Vector3::new(
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
    );
    RigidTransform::new(*r.rotation(), t).unwrap()
}

/// Rotation angle of `a⁻¹ ∘ b` in degrees and the distance between the
/// translations.
pub fn transform_error(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    let rel = a.inverse().compose(b);
    ((a.translation() - b.translation()).norm(), rel.rotation_angle().to_degrees())
}

/// Layout comparison written as an explicit similarity matrix over all
/// target/source vertex pairs.
pub fn compare_graphs_oracle(target: &ObjectGraph, source: &ObjectGraph, delta_s: f64, delta_e: f64) -> bool {
    let n = target.vertices.len();
    let m = source.vertices.len();
    let mut sim = vec![vec![f64::NEG_INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            sim[i][j] = cosine_similarity(&target.vertices[i].shape_code, &source.vertices[j].shape_code).unwrap();
        }
    }
    let mut unchanged = false;
    for i in 0..n {
        for j in 0..m {
            if sim[i][j] <= delta_s {
                continue;
            }
            let dominated = (0..m).any(|l| {
                sim[i][l] > sim[i][j] || (sim[i][l] == sim[i][j] && source.vertices[l].id < source.vertices[j].id)
            });
            if !dominated && (target.edges[i] - source.edges[j]).norm() <= delta_e {
                unchanged = true;
            }
        }
    }
    unchanged
}

/// Fraction of target points without a reference point within `d`, by
/// exhaustive double loop.
pub fn nn_fraction_oracle(target: &[Point3], reference: &[Point3], d: f64) -> f64 {
    let missing = target
        .iter()
        .filter(|p| !reference.iter().any(|s| (*p - s).norm() <= d))
        .count();
    missing as f64 / target.len() as f64
}

/// Side of the cube that registration trial centers are drawn from, meters.
pub const TRIAL_SPREAD: f64 = 3.0;

/// One registration trial: six center pairs spread over a `TRIAL_SPREAD` cube, Gaussian
/// noise of `sigma` per axis on the target side, and the last two pairs
/// replaced by gross outliers. Returns the translation and rotation error of
/// the recovered target-to-source transform and whether both outliers were
/// rejected.
pub fn registration_trial(seed: u64, sigma: f64) -> scenediff::Result<(f64, f64, bool)> {
    use rand_distr::{Distribution, Normal};
    use scenediff::registration::{ransac_register, RansacConfig};
    let mut r = rng(seed);
    let truth = random_transform(&mut r, 1.0);
    let inv = truth.inverse();
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut pairs: Vec<(Point3, Point3)> = (0..6)
        .map(|_| {
            let s = random_point(&mut r, TRIAL_SPREAD / 2.0);
            let noise = Vector3::new(normal.sample(&mut r), normal.sample(&mut r), normal.sample(&mut r));
            (s, inv.apply(&s) + noise)
        })
        .collect();
    for p in pairs.iter_mut().skip(4) {
        let dir = random_point(&mut r, 1.0).coords.try_normalize(1e-9).unwrap_or(Vector3::x());
        p.1 += dir * r.random_range(0.3..1.0);
    }
    let cfg = RansacConfig { seed, ..RansacConfig::default() };
    let out = ransac_register(&pairs, &cfg)?;
    let (t_err, r_err) = transform_error(&out.transform, &truth);
    let rejected = out.inliers == [true, true, true, true, false, false];
    Ok((t_err, r_err, rejected))
}

/// Random target/source star graphs with at most six vertices each. Codes come
/// from a small pool so that exact similarity ties occur, and some source
/// edges copy a target edge up to a perturbation around `delta_e`.
pub fn random_graph_pair(r: &mut impl Rng, delta_e: f64) -> (ObjectGraph, ObjectGraph) {
    use scenediff::change::build_object_graph;
    let pool: Vec<ShapeCode> = (0..4)
        .map(|i| {
            if r.random_bool(0.5) {
                peaked_code(i, 8)
            } else {
                let mut v: Vec<f64> = peaked_code(i, 8).values().to_vec();
                v[(i + 1) % 8] = r.random_range(0.0..0.6);
                ShapeCode::new(v).unwrap()
            }
        })
        .collect();
    let center_code = pool[0].clone();
    let n = r.random_range(0..=6usize);
    let m = r.random_range(0..=6usize);
    let t_center = random_point(r, 5.0);
    let s_center = random_point(r, 5.0);
    let target_nb: Vec<ObjectInstance> = std::iter::once(instance(100, center_code.clone(), t_center))
        .chain((0..n).map(|i| {
            let off = random_point(r, 0.4);
            instance(101 + i as u64, pool[r.random_range(0..4)].clone(), t_center + off.coords)
        }))
        .collect();
    let source_nb: Vec<ObjectInstance> = std::iter::once(instance(10, center_code, s_center))
        .chain((0..m).map(|j| {
            let code = pool[r.random_range(0..4)].clone();
            let edge = if n > 0 && r.random_bool(0.6) {
                let t = &target_nb[1 + r.random_range(0..n)];
                let jitter = random_point(r, 1.0).coords.try_normalize(1e-9).unwrap_or(Vector3::x()) * r.random_range(0.0..2.0 * delta_e);
                (t.center - t_center) + jitter
            } else {
                random_point(r, 0.4).coords
            };
            // Ids deliberately out of order to exercise tie-breaking.
            instance(50 - j as u64, code, s_center + edge)
        }))
        .collect();
    (
        build_object_graph(&target_nb[0], target_nb.iter()),
        build_object_graph(&source_nb[0], source_nb.iter()),
    )
}

/// Random non-degenerate inputs for each loss: predictions away from the
/// clamp, strictly positive codes, and batches with continuous codes so that
/// no hardest-sample ties occur.
pub fn random_loss_inputs(seed: u64) -> Vec<scenediff::losses::LossInput> {
    use scenediff::losses::LossInput;
    let mut r = rng(seed);
    let n = r.random_range(1..64);
    let predicted: Vec<f64> = (0..n).map(|_| r.random_range(0.02..0.98)).collect();
    let truth: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let k = r.random_range(2..24);
    let positive_code = |r: &mut ChaCha8Rng| ShapeCode::new((0..k).map(|_| r.random_range(0.05..1.0)).collect()).unwrap();
    let (anchor, positive, negative) = (positive_code(&mut r), positive_code(&mut r), positive_code(&mut r));
    let batch = random_batch(&mut r, k);
    vec![
        LossInput::Occupancy { predicted, truth },
        LossInput::Triplet { anchor, positive, negative },
        LossInput::BatchHard(batch),
    ]
}

pub fn random_batch(r: &mut impl Rng, k: usize) -> scenediff::losses::LabeledBatch {
    let objects = r.random_range(2..6u64);
    let mut samples = Vec::new();
    for id in 0..objects {
        let base: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        for _ in 0..r.random_range(2..4) {
            let v = base.iter().map(|b| (b + r.random_range(-0.04..0.04)).max(0.01)).collect();
            samples.push((id, ShapeCode::new(v).unwrap()));
        }
    }
    // Interleave labels so that ordering does not line up with objects.
    for i in (1..samples.len()).rev() {
        let j = r.random_range(0..=i);
        samples.swap(i, j);
    }
    scenediff::losses::LabeledBatch::new(samples).unwrap()
}

/// Batch-hard loss by explicit enumeration of every (anchor, positive,
/// negative) triple: the hardest triple per anchor maximizes the triplet loss.
pub fn batch_hard_oracle(batch: &scenediff::losses::LabeledBatch) -> f64 {
    use scenediff::losses::triplet_shape_loss;
    let s = batch.samples();
    let mut total = 0.0;
    for (a, (ia, ca)) in s.iter().enumerate() {
        let mut worst = f64::NEG_INFINITY;
        for (p, (ip, cp)) in s.iter().enumerate() {
            if p == a || ip != ia {
                continue;
            }
            for (iq, cq) in s.iter() {
                if iq == ia {
                    continue;
                }
                worst = worst.max(triplet_shape_loss(ca, cp, cq).unwrap());
            }
        }
        total += worst;
    }
    total / s.len() as f64
}

/// Random latent matrix and rotation; returns the largest absolute difference
/// between the shape codes of `Z` and `Z R`.
pub fn rotation_invariance_gap(seed: u64) -> f64 {
    use scenediff::descriptor::shape_code_from_latent;
    use scenediff::LatentMatrix;
    let mut r = rng(seed);
    let k = r.random_range(1..300);
    let scale = 10f64.powf(r.random_range(-2.0..1.0));
    let rows: Vec<Vector3> = (0..k).map(|_| random_point(&mut r, scale).coords).collect();
    let z = LatentMatrix::new(rows).unwrap();
    let rot = random_rotation(&mut r);
    let a = shape_code_from_latent(&z).unwrap();
    let b = shape_code_from_latent(&z.mul_right(rot.rotation())).unwrap();
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs gradient checks with `h = 1e-5` until each loss has `per_loss`
/// non-degenerate points. Returns the count per loss (occupancy, triplet,
/// batch-hard) and the largest relative error seen.
pub fn gradient_checks(per_loss: usize, seed: u64) -> ([usize; 3], f64) {
    use scenediff::losses::loss_gradient_check;
    let mut checked = [0usize; 3];
    let mut worst: f64 = 0.0;
    let mut s = seed;
    while checked.iter().any(|c| *c < per_loss) {
        for (i, input) in random_loss_inputs(s).iter().enumerate() {
            if checked[i] >= per_loss {
                continue;
            }
            let c = loss_gradient_check(input, 1e-5).unwrap();
            if !c.skipped {
                checked[i] += 1;
                worst = worst.max(c.max_relative_error);
            }
        }
        s += 1;
        assert!(s < seed + 100 * per_loss as u64, "too many degenerate points");
    }
    (checked, worst)
}

/// Fraction of the points of a partial view from azimuth `a` that have a
/// point of the view from `a + pi` within `radius`. Both cameras sit `range`
/// meters from the body center at its mid-height.
pub fn opposite_view_overlap(
    primitive: &scenediff::descriptor::Primitive,
    seed: u64,
    n_points: usize,
    range: f64,
    radius: f64,
) -> f64 {
    use scenediff::baseline::{unmatched_fraction, NnParams, SpatialHash};
    use scenediff::simulator::sample_partial_cloud;
    let mut r = rng(seed);
    let yaw = r.random_range(0.0..std::f64::consts::TAU);
    let center = Point3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), 0.8);
    let pose = RigidTransform::from_axis_angle(Vector3::z(), yaw, center.coords);
    let a = r.random_range(0.0..std::f64::consts::TAU);
    let eye = |az: f64| center + Vector3::new(az.cos(), az.sin(), 0.0) * range;
    let front = sample_partial_cloud(primitive, &pose, &eye(a), n_points, 0.0, &mut r);
    let back = sample_partial_cloud(primitive, &pose, &eye(a + std::f64::consts::PI), n_points, 0.0, &mut r);
    let hash = SpatialHash::from_points(radius, &back.points);
    1.0 - unmatched_fraction(&front, &hash, &NnParams { d: radius, r: 0.3 }).unwrap()
}

/// A random pair of point clouds for NN comparisons: the target shares part
/// of its points with a jittered copy of the source.
pub fn random_cloud_pair(seed: u64) -> (Vec<Point3>, Vec<Point3>, f64) {
    let mut r = rng(seed);
    let d = r.random_range(0.001..0.02);
    let n = r.random_range(1..400);
    let m = r.random_range(0..400);
    let source: Vec<Point3> = (0..m).map(|_| random_point(&mut r, 0.1)).collect();
    let target: Vec<Point3> = (0..n)
        .map(|_| {
            if !source.is_empty() && r.random_bool(0.5) {
                source[r.random_range(0..m)] + random_point(&mut r, d).coords
            } else {
                random_point(&mut r, 0.1)
            }
        })
        .collect();
    (target, source, d)
}

/// Neighborhood by scanning every node and object.
pub fn neighborhood_scan(tree: &SpatialObjectTree, q: &Point3) -> Vec<u64> {
    let find = |t: &scenediff::spatial_tree::IntervalTree, c: f64| (0..t.node_count()).find(|&i| t.node(i).contains(c));
    let (Some(nx), Some(ny)) = (find(tree.x_tree(), q.x), find(tree.y_tree(), q.y)) else {
        return Vec::new();
    };
    let (nx, ny) = (tree.x_tree().node(nx), tree.y_tree().node(ny));
    tree.all_objects()
        .into_iter()
        .filter(|o| nx.contains(o.center.x) && ny.contains(o.center.y))
        .map(|o| o.id)
        .collect()
}

/// Noisy repeated measurements of `n_objects` random objects on a square.
pub fn measurement_stream(seed: u64, n_objects: usize, n: usize, spread: f64) -> Vec<Measurement> {
    let mut r = rng(seed);
    let objects: Vec<(ShapeCode, Point3)> = (0..n_objects)
        .map(|_| {
            let c = Point3::new(r.random_range(0.0..spread), r.random_range(0.0..spread), 0.8);
            (random_code(&mut r, 16), c)
        })
        .collect();
    (0..n)
        .map(|i| {
            let (code, c) = &objects[r.random_range(0..n_objects)];
            let noisy: Vec<f64> = code.values().iter().map(|v| (v + r.random_range(-0.03..0.03)).max(0.0)).collect();
            let jitter = Point3::new(r.random_range(-0.01..0.01), r.random_range(-0.01..0.01), r.random_range(-0.01..0.01));
            measurement(ShapeCode::new(noisy).unwrap(), c + jitter.coords, r.random_range(0.3..1.0), i as u64)
        })
        .collect()
}
