//! Visibility, occlusion and noisy per-frame measurement streams.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cloud::sample_partial_cloud;
use super::scene::Scene;
use super::trajectory::{CameraPose, Trajectory};
use crate::descriptor::{synth_observe, DescriptorNoise, SyntheticShapeLibrary, ViewContext};
use crate::error::{invalid, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform, Vector3};
use crate::rng::{derive_seed, seeded_rng};
use crate::types::{Measurement, Session};

/// Offset between the source world frame and the target session's frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionOffset {
    Fixed { transform: RigidTransform },
    /// Random direction and axis with the given magnitudes.
    Random { translation: f64, rotation_deg: f64 },
}

impl SessionOffset {
    /// Maps source-world coordinates into the target session frame.
    pub fn resolve(&self, seed: u64) -> RigidTransform {
        match *self {
            SessionOffset::Fixed { transform } => transform,
            SessionOffset::Random { translation, rotation_deg } => {
                let mut rng = seeded_rng(derive_seed(seed, "session-offset", 0));
                let dir = unit_vector(&mut rng);
                let axis = unit_vector(&mut rng);
                RigidTransform::from_axis_angle(axis, rotation_deg.to_radians(), dir * translation)
            }
        }
    }
}

fn unit_vector(rng: &mut impl Rng) -> Vector3 {
    loop {
        let v = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        if let Some(u) = v.try_normalize(1e-9) {
            return u;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub descriptor: DescriptorNoise,
    /// Per-frame camera rotation jitter, radians; accumulates along a session.
    pub sigma_rot: f64,
    /// Per-frame camera translation jitter, meters; accumulates along a session.
    pub sigma_trans: f64,
    pub offset: SessionOffset,
    /// Depth noise of partial cloud points, meters.
    pub point_noise: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            descriptor: DescriptorNoise::default(),
            sigma_rot: 0.00005,
            sigma_trans: 0.0001,
            offset: SessionOffset::Random { translation: 0.1, rotation_deg: 5.0 },
            point_noise: 0.0003,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            descriptor: DescriptorNoise::noiseless(),
            sigma_rot: 0.0,
            sigma_trans: 0.0,
            offset: SessionOffset::Fixed { transform: RigidTransform::identity() },
            point_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        let all = [self.sigma_rot, self.sigma_trans, self.point_noise];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("pose and point noise must be finite and >= 0"));
        }
        if let SessionOffset::Random { translation, rotation_deg } = self.offset {
            if !(translation >= 0.0 && rotation_deg >= 0.0) {
                return Err(invalid("offset magnitudes must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityConfig {
    /// Half-angle of the viewing cone, degrees.
    pub fov_half_angle_deg: f64,
    pub max_range: f64,
    /// Objects more occluded than this are not measured.
    pub max_occlusion: f64,
    /// Samples per side of the occlusion grid.
    pub occlusion_grid: usize,
    /// Points per object per frame in partial clouds.
    pub cloud_points: usize,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            fov_half_angle_deg: 35.0,
            max_range: 2.0,
            max_occlusion: 0.45,
            occlusion_grid: 16,
            cloud_points: 1500,
        }
    }
}

impl VisibilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_half_angle_deg > 0.0 && self.fov_half_angle_deg < 90.0) || !(self.max_range > 0.0) {
            return Err(invalid("field of view must lie in (0, 90) degrees and range be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_occlusion) || self.occlusion_grid == 0 {
            return Err(invalid("max_occlusion must lie in [0, 1] and occlusion_grid be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    /// Index into the scene's object list.
    pub index: usize,
    pub gt_id: u64,
    pub occlusion: f64,
    pub distance: f64,
}

/// Angular footprint of a body: azimuth and elevation intervals, radians.
#[derive(Debug, Clone, Copy)]
struct AngularRect {
    az: (f64, f64),
    el: (f64, f64),
}

impl AngularRect {
    fn contains(&self, az: f64, el: f64) -> bool {
        self.az.0 <= az && az <= self.az.1 && self.el.0 <= el && el <= self.el.1
    }
}

fn angles(q: &Point3) -> (f64, f64) {
    (q.x.atan2(q.z), (-q.y).atan2(q.x.hypot(q.z)))
}

fn angular_rect(world_to_cam: &RigidTransform, center: &Point3, radius: f64, half_height: f64) -> AngularRect {
    let q = world_to_cam.apply(center);
    let (az, _) = angles(&q);
    let rho = q.x.hypot(q.z).max(1e-9);
    let w = (radius / rho).min(1.0).asin();
    let cam = world_to_cam.inverse().apply(&Point3::origin());
    let horizontal = Vector3::new(center.x - cam.x, center.y - cam.y, 0.0)
        .try_normalize(1e-12)
        .unwrap_or_else(Vector3::x);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for dz in [-half_height, half_height] {
        for dr in [-radius, radius] {
            let p = center + Vector3::z() * dz + horizontal * dr;
            let (_, el) = angles(&world_to_cam.apply(&p));
            lo = lo.min(el);
            hi = hi.max(el);
        }
    }
    AngularRect { az: (az - w, az + w), el: (lo, hi) }
}

/// Objects inside the viewing cone and range of `camera`, ordered by ground
/// truth id, with the fraction of each body's angular footprint covered by
/// closer bodies.
pub fn visible_objects(
    scene: &Scene,
    lib: &SyntheticShapeLibrary,
    camera: &CameraPose,
    cfg: &VisibilityConfig,
) -> Result<Vec<Visibility>> {
    let world_to_cam = camera.pose.inverse();
    let eye = camera.position();
    let forward = camera.forward();
    let cos_fov = cfg.fov_half_angle_deg.to_radians().cos();

    let mut bodies = Vec::with_capacity(scene.objects.len());
    for (i, o) in scene.objects.iter().enumerate() {
        let prim = lib
            .get(o.shape_id)
            .ok_or_else(|| invalid(format!("shape {} is not in the library", o.shape_id)))?
            .primitive;
        let dist = (o.position - eye).norm();
        if dist > cfg.max_range + prim.footprint_radius() {
            continue;
        }
        let q = world_to_cam.apply(&o.position);
        let rect = (q.z > 0.0).then(|| angular_rect(&world_to_cam, &o.position, prim.footprint_radius(), prim.half_height()));
        bodies.push((i, dist, rect));
    }

    let g = cfg.occlusion_grid;
    let mut out = Vec::new();
    for &(i, dist, rect) in &bodies {
        let o = &scene.objects[i];
        let Some(rect) = rect else { continue };
        let dir = (o.position - eye) / dist.max(1e-12);
        if dist > cfg.max_range || dir.dot(&forward) < cos_fov {
            continue;
        }
        let occluders: Vec<AngularRect> = bodies
            .iter()
            .filter(|(j, d, _)| *j != i && *d < dist)
            .filter_map(|(_, _, r)| *r)
            .collect();
        let mut covered = 0usize;
        for a in 0..g {
            for b in 0..g {
                let az = rect.az.0 + (rect.az.1 - rect.az.0) * (a as f64 + 0.5) / g as f64;
                let el = rect.el.0 + (rect.el.1 - rect.el.0) * (b as f64 + 0.5) / g as f64;
                if occluders.iter().any(|r| r.contains(az, el)) {
                    covered += 1;
                }
            }
        }
        out.push(Visibility {
            index: i,
            gt_id: o.gt_id,
            occlusion: covered as f64 / (g * g) as f64,
            distance: dist,
        });
    }
    out.sort_by_key(|v| v.gt_id);
    Ok(out)
}

/// Accumulated pose error of each frame as a world-frame correction: the
/// session believes a point seen at `p` lies at `drift[k].apply(p)`.
pub fn drift_sequence(traj: &Trajectory, noise: &NoiseModel, session: Session, seed: u64) -> Vec<RigidTransform> {
    let mut rng = seeded_rng(derive_seed(seed, session_tag(session, "drift"), 0));
    let mut err = RigidTransform::identity();
    traj.poses
        .iter()
        .map(|cam| {
            let w = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let t = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let step = RigidTransform::from_scaled_axis(w * noise.sigma_rot, t * noise.sigma_trans);
            err = err.compose(&step);
            cam.pose.compose(&err).compose(&cam.pose.inverse())
        })
        .collect()
}

fn session_tag(session: Session, what: &str) -> &'static str {
    match (session, what) {
        (Session::Source, "drift") => "drift-source",
        (Session::Target, "drift") => "drift-target",
        (Session::Source, "obs") => "obs-source",
        (Session::Target, "obs") => "obs-target",
        (Session::Source, _) => "cloud-source",
        (Session::Target, _) => "cloud-target",
    }
}

fn item_index(frame: u64, gt_id: u64) -> u64 {
    (frame << 24) ^ gt_id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub measurement: Measurement,
    pub gt_id: u64,
    pub shape_id: u32,
    pub table: usize,
    pub occlusion: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub frame_index: u64,
    pub table: usize,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStream {
    pub session: Session,
    pub frames: Vec<StreamFrame>,
    /// Source-world to session-frame transform applied to every center.
    pub offset: RigidTransform,
}

impl SessionStream {
    pub fn measurements(&self) -> impl Iterator<Item = &Measurement> {
        self.frames.iter().flat_map(|f| f.observations.iter().map(|o| &o.measurement))
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.frames.iter().flat_map(|f| f.observations.iter())
    }

    pub fn len(&self) -> usize {
        self.frames.iter().map(|f| f.observations.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Noisy measurements of every sufficiently visible object in every frame.
/// Target-session centers are expressed in the offset target frame.
#[allow(clippy::too_many_arguments)]
pub fn stream_observations(
    scene: &Scene,
    lib: &SyntheticShapeLibrary,
    traj: &Trajectory,
    noise: &NoiseModel,
    vis: &VisibilityConfig,
    session: Session,
    seed: u64,
) -> Result<SessionStream> {
    noise.validate()?;
    vis.validate()?;
    let offset = match session {
        Session::Source => RigidTransform::identity(),
        Session::Target => noise.offset.resolve(seed),
    };
    let drift = drift_sequence(traj, noise, session, seed);
    let mut frames = Vec::with_capacity(traj.poses.len());
    for (cam, d) in traj.poses.iter().zip(&drift) {
        let to_session = offset.compose(d);
        let mut observations = Vec::new();
        for v in visible_objects(scene, lib, cam, vis)? {
            if v.occlusion > vis.max_occlusion {
                continue;
            }
            let o = &scene.objects[v.index];
            let view = ViewContext {
                camera_pose: cam.pose,
                occlusion_fraction: v.occlusion,
                distance: v.distance,
            };
            let obs_seed = derive_seed(seed, session_tag(session, "obs"), item_index(cam.frame_index, o.gt_id));
            let mut m = synth_observe(lib, o.shape_id, &o.position, &view, &noise.descriptor, obs_seed)?;
            m.center = to_session.apply(&m.center);
            m.frame_index = cam.frame_index;
            m.session = session;
            observations.push(Observation {
                measurement: m,
                gt_id: o.gt_id,
                shape_id: o.shape_id,
                table: o.table,
                occlusion: v.occlusion,
                distance: v.distance,
            });
        }
        frames.push(StreamFrame {
            frame_index: cam.frame_index,
            table: cam.table,
            observations,
        });
    }
    Ok(SessionStream { session, frames, offset })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCloud {
    pub frame_index: u64,
    pub gt_id: u64,
    pub cloud: PointCloud,
}

/// Partial clouds of the objects measured in `stream`, expressed in the
/// source world frame up to the session's accumulated pose drift.
pub fn session_clouds(
    scene: &Scene,
    lib: &SyntheticShapeLibrary,
    traj: &Trajectory,
    stream: &SessionStream,
    noise: &NoiseModel,
    vis: &VisibilityConfig,
    seed: u64,
) -> Result<Vec<Vec<ObjectCloud>>> {
    let drift = drift_sequence(traj, noise, stream.session, seed);
    let mut out = Vec::with_capacity(stream.frames.len());
    for ((cam, d), frame) in traj.poses.iter().zip(&drift).zip(&stream.frames) {
        let mut clouds = Vec::with_capacity(frame.observations.len());
        for obs in &frame.observations {
            let o = scene
                .object(obs.gt_id)
                .ok_or_else(|| invalid(format!("object {} is not in the scene", obs.gt_id)))?;
            let prim = lib
                .get(o.shape_id)
                .ok_or_else(|| invalid(format!("shape {} is not in the library", o.shape_id)))?
                .primitive;
            let mut rng = seeded_rng(derive_seed(
                seed,
                session_tag(stream.session, "cloud"),
                item_index(cam.frame_index, o.gt_id),
            ));
            let cloud = sample_partial_cloud(&prim, &o.pose(), &cam.position(), vis.cloud_points, noise.point_noise, &mut rng);
            clouds.push(ObjectCloud {
                frame_index: cam.frame_index,
                gt_id: o.gt_id,
                cloud: cloud.transformed(d, crate::geometry::Frame::World),
            });
        }
        out.push(clouds);
    }
    Ok(out)
}
