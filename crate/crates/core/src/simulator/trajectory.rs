//! Camera arcs around tables for the source and target sessions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{invalid, Result};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::rng::{derive_seed, seeded_rng};
use nalgebra::Matrix3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapProfile {
    SameSide,
    OppositeSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub poses_per_table: usize,
    /// Half-width of each viewing arc, degrees.
    pub arc_half_angle_deg: f64,
    /// Horizontal camera distance from the table center.
    pub ring_radius: f64,
    /// Camera height above the table surface.
    pub camera_height: f64,
    /// Camera height above the table surface for opposite-side arcs.
    pub opposite_height: f64,
    /// Azimuth offset of same-side target arcs, degrees.
    pub target_shift_deg: f64,
    /// Tables whose target arc faces the opposite side.
    pub opposite_tables: Vec<usize>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            poses_per_table: 5,
            arc_half_angle_deg: 30.0,
            ring_radius: 1.0,
            camera_height: 0.45,
            opposite_height: 0.2,
            target_shift_deg: 10.0,
            opposite_tables: vec![0, 1, 4],
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self, n_tables: usize) -> Result<()> {
        if self.poses_per_table == 0 {
            return Err(invalid("poses_per_table must be at least 1"));
        }
        if !(self.ring_radius > 0.0) || !(self.arc_half_angle_deg >= 0.0 && self.arc_half_angle_deg < 180.0) {
            return Err(invalid("ring radius must be positive and arc half-angle in [0, 180)"));
        }
        if !self.camera_height.is_finite() || !self.opposite_height.is_finite() || !self.target_shift_deg.is_finite() {
            return Err(invalid("trajectory heights and shift must be finite"));
        }
        if let Some(t) = self.opposite_tables.iter().find(|t| **t >= n_tables) {
            return Err(invalid(format!("opposite table {t} does not exist")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub frame_index: u64,
    pub table: usize,
    /// Camera-to-world; the camera looks along its +z axis with +y down.
    pub pose: RigidTransform,
}

impl CameraPose {
    pub fn position(&self) -> Point3 {
        Point3::from(*self.pose.translation())
    }

    pub fn forward(&self) -> Vector3 {
        self.pose.rotation().column(2).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<CameraPose>,
    /// Overlap profile of each table relative to the source session.
    pub profiles: Vec<OverlapProfile>,
}

/// Camera at `eye` looking at `target` with world +z up.
pub fn look_at(eye: &Point3, target: &Point3) -> Result<RigidTransform> {
    let f = (target - eye).try_normalize(1e-12).ok_or_else(|| invalid("eye and target coincide"))?;
    let r = f
        .cross(&Vector3::z())
        .try_normalize(1e-12)
        .ok_or_else(|| invalid("camera cannot look straight up or down"))?;
    let d = f.cross(&r);
    RigidTransform::new(Matrix3::from_columns(&[r, d, f]), eye.coords)
}

fn arc(
    scene: &Scene,
    table: usize,
    center_azimuth: f64,
    height: f64,
    cfg: &TrajectoryConfig,
    first_frame: u64,
) -> Result<Vec<CameraPose>> {
    let t = scene.tables[table].center;
    let half = cfg.arc_half_angle_deg.to_radians();
    let n = cfg.poses_per_table;
    (0..n)
        .map(|i| {
            let u = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let a = center_azimuth - half + 2.0 * half * u;
            let eye = Point3::new(t.x + cfg.ring_radius * a.cos(), t.y + cfg.ring_radius * a.sin(), t.z + height);
            Ok(CameraPose {
                frame_index: first_frame + i as u64,
                table,
                pose: look_at(&eye, &t)?,
            })
        })
        .collect()
}

/// Source and target trajectories visiting the tables in index order. The
/// source arc of each table is centered on a seeded azimuth; the target arc
/// is shifted by `target_shift_deg`, or turned to the far side at
/// `opposite_height` for tables listed in `opposite_tables`.
pub fn generate_trajectories(scene: &Scene, cfg: &TrajectoryConfig, seed: u64) -> Result<(Trajectory, Trajectory)> {
    cfg.validate(scene.tables.len())?;
    let mut rng = seeded_rng(derive_seed(seed, "trajectory", 0));
    let azimuths: Vec<f64> = scene.tables.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut profiles = Vec::new();
    for (t, &az) in azimuths.iter().enumerate() {
        let opposite = cfg.opposite_tables.contains(&t);
        profiles.push(if opposite { OverlapProfile::OppositeSide } else { OverlapProfile::SameSide });
        source.extend(arc(scene, t, az, cfg.camera_height, cfg, source.len() as u64)?);
        let (taz, th) = if opposite {
            (az + std::f64::consts::PI, cfg.opposite_height)
        } else {
            (az + cfg.target_shift_deg.to_radians(), cfg.camera_height)
        };
        target.extend(arc(scene, t, taz, th, cfg, target.len() as u64)?);
    }
    Ok((
        Trajectory {
            poses: source,
            profiles: vec![OverlapProfile::SameSide; scene.tables.len()],
        },
        Trajectory { poses: target, profiles },
    ))
}
