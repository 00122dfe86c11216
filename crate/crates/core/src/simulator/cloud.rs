//! Back-face-culled surface samples of primitive bodies.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::descriptor::Primitive;
use crate::geometry::{Point3, PointCloud, RigidTransform, Vector3};

/// A surface point and its outward unit normal, both in the body frame.
fn sample_surface(primitive: &Primitive, rng: &mut impl Rng) -> (Point3, Vector3) {
    match *primitive {
        Primitive::Box { half_extents: h } => {
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.random::<f64>() * total;
            let mut axis = 2;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    axis = i;
                    break;
                }
                pick -= a;
            }
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let mut p = Vector3::from_fn(|i, _| rng.random_range(-h[i]..=h[i]));
            p[axis] = sign * h[axis];
            let mut n = Vector3::zeros();
            n[axis] = sign;
            (Point3::from(p), n)
        }
        Primitive::Cylinder { radius, half_height } => {
            let side = std::f64::consts::TAU * radius * 2.0 * half_height;
            let cap = std::f64::consts::PI * radius * radius;
            let u = rng.random::<f64>() * (side + 2.0 * cap);
            if u < side {
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(-half_height..=half_height);
                let n = Vector3::new(phi.cos(), phi.sin(), 0.0);
                (Point3::new(radius * n.x, radius * n.y, z), n)
            } else {
                let sign = if u < side + cap { 1.0 } else { -1.0 };
                let r = radius * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                (Point3::new(r * phi.cos(), r * phi.sin(), sign * half_height), Vector3::new(0.0, 0.0, sign))
            }
        }
        Primitive::Superellipsoid { radii, exponent } => {
            // Radial projection of a uniform direction onto the surface.
            let d = loop {
                let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                if let Some(u) = v.try_normalize(1e-12) {
                    break u;
                }
            };
            let s: f64 = (0..3).map(|i| (d[i] / radii[i]).abs().powf(exponent)).sum();
            let p = d * s.powf(-1.0 / exponent);
            let g = Vector3::from_fn(|i, _| {
                p[i].signum() * (p[i] / radii[i]).abs().powf(exponent - 1.0) / radii[i]
            });
            (Point3::from(p), g.try_normalize(1e-300).unwrap_or(d))
        }
    }
}

/// Up to `n_points` world-frame surface samples whose outward normals face
/// `camera`, with their world-frame normals. Fewer are returned only when
/// the camera sees almost none of the surface.
pub fn sample_partial_surface(
    primitive: &Primitive,
    pose: &RigidTransform,
    camera: &Point3,
    n_points: usize,
    rng: &mut impl Rng,
) -> Vec<(Point3, Vector3)> {
    let mut out = Vec::with_capacity(n_points);
    let max_attempts = 200 * n_points.max(1);
    for _ in 0..max_attempts {
        if out.len() == n_points {
            break;
        }
        let (p, n) = sample_surface(primitive, rng);
        let (pw, nw) = (pose.apply(&p), pose.apply_vector(&n));
        if nw.dot(&(camera - pw)) > 0.0 {
            out.push((pw, nw));
        }
    }
    out
}

/// World-frame partial cloud of a body seen from `camera`, with optional
/// isotropic Gaussian point noise.
pub fn sample_partial_cloud(
    primitive: &Primitive,
    pose: &RigidTransform,
    camera: &Point3,
    n_points: usize,
    point_noise: f64,
    rng: &mut impl Rng,
) -> PointCloud {
    let pts = sample_partial_surface(primitive, pose, camera, n_points, rng)
        .into_iter()
        .map(|(p, _)| {
            if point_noise > 0.0 {
                let e = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                p + e * point_noise
            } else {
                p
            }
        })
        .collect();
    PointCloud::world(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn sphere_samples_face_the_camera() {
        let sphere = Primitive::Superellipsoid { radii: [0.05; 3], exponent: 2.0 };
        let pose = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 0.8));
        let cam = Point3::new(1.5, 2.5, 1.2);
        let mut rng = seeded_rng(1);
        let s = sample_partial_surface(&sphere, &pose, &cam, 500, &mut rng);
        assert_eq!(s.len(), 500);
        for (p, n) in &s {
            assert!(n.dot(&(cam - p)) > 0.0);
            assert!(((p - Point3::new(1.0, 2.0, 0.8)).norm() - 0.05).abs() < 1e-9);
        }
    }

    #[test]
    fn box_seen_face_on_shows_one_face() {
        let b = Primitive::Box { half_extents: [0.03, 0.04, 0.05] };
        let pose = RigidTransform::identity();
        let cam = Point3::new(1.0, 0.0, 0.0);
        let mut rng = seeded_rng(2);
        let s = sample_partial_surface(&b, &pose, &cam, 300, &mut rng);
        assert_eq!(s.len(), 300);
        assert!(s.iter().all(|(_, n)| (n - Vector3::x()).norm() < 1e-12));

        let oblique = Point3::new(1.0, 1.0, 1.0);
        let s = sample_partial_surface(&b, &pose, &oblique, 300, &mut rng);
        let mut faces: Vec<[i64; 3]> = s.iter().map(|(_, n)| [n.x as i64, n.y as i64, n.z as i64]).collect();
        faces.sort();
        faces.dedup();
        assert!(faces.len() <= 3);
    }

    #[test]
    fn cylinder_points_lie_on_surface() {
        let c = Primitive::Cylinder { radius: 0.04, half_height: 0.05 };
        let mut rng = seeded_rng(3);
        let s = sample_partial_surface(&c, &RigidTransform::identity(), &Point3::new(0.0, -1.0, 0.3), 400, &mut rng);
        for (p, _) in &s {
            let on_side = (p.x.hypot(p.y) - 0.04).abs() < 1e-12 && p.z.abs() <= 0.05;
            let on_cap = (p.z.abs() - 0.05).abs() < 1e-12 && p.x.hypot(p.y) <= 0.04;
            assert!(on_side || on_cap);
        }
        assert!(s.iter().all(|(p, _)| p.z > -0.05));
    }

    #[test]
    fn camera_inside_body_sees_nothing() {
        let c = Primitive::Cylinder { radius: 0.04, half_height: 0.05 };
        let mut rng = seeded_rng(4);
        let cloud = sample_partial_cloud(&c, &RigidTransform::identity(), &Point3::origin(), 10, 0.0, &mut rng);
        assert!(cloud.is_empty());
    }
}
