//! Shape descriptors: extraction of the rotation-invariant shape code from an
//! equivariant latent, cosine similarity, full-shape reconstruction by
//! occupancy thresholding, and center recovery.
//!
//! The learned occupancy decoder is abstracted behind [`OccupancyField`]; the
//! crate only ships analytic fields. [`library`] provides the seeded synthetic
//! descriptor source used by the simulator.

pub mod library;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, PointCloud, RigidTransform, Vector3};
use crate::types::{LatentMatrix, Measurement, Session, ShapeCode};

pub use library::{
    generate_shape_library, generate_shape_library_with, synth_observe, DescriptorNoise,
    LibraryConfig, Primitive, ShapeEntry, SyntheticShapeLibrary, ViewContext,
};

/// Occupancy predictor `x -> [0, 1]`.
pub trait OccupancyField {
    fn occupancy(&self, x: &Point3) -> f64;
}

impl<F> OccupancyField for F
where
    F: Fn(&Point3) -> f64,
{
    fn occupancy(&self, x: &Point3) -> f64 {
        self(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    /// Scale of the query box relative to the partial cloud's bounding box.
    pub box_scale: f64,
    pub samples_per_axis: usize,
    /// Occupancy threshold; a query point is occupied iff its value exceeds it.
    pub v0: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            box_scale: 1.5,
            samples_per_axis: 24,
            v0: 0.5,
        }
    }
}

/// `s_i = |z_i|_2` for every latent row.
pub fn shape_code_from_latent(z: &LatentMatrix) -> Result<ShapeCode> {
    let values: Vec<f64> = z.rows().iter().map(|r| r.norm()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("latent matrix has non-finite entries"));
    }
    ShapeCode::new(values)
}

pub fn cosine_similarity(a: &ShapeCode, b: &ShapeCode) -> Result<f64> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "shape codes differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("cosine similarity of a zero-norm code"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Regular `n^3` query grid spanning the partial cloud's bounding box scaled
/// by `box_scale` about its center.
pub fn query_grid(partial: &PointCloud, cfg: &ReconstructionConfig) -> Result<Vec<Point3>> {
    if cfg.samples_per_axis < 2 {
        return Err(invalid("samples_per_axis must be at least 2"));
    }
    if !(cfg.box_scale > 0.0 && cfg.box_scale.is_finite()) {
        return Err(invalid("box_scale must be positive"));
    }
    let (lo, hi) = partial
        .bounds()
        .ok_or_else(|| invalid("partial cloud is empty"))?;
    let center = nalgebra::center(&lo, &hi);
    let half = (hi - lo) * (0.5 * cfg.box_scale);
    let start = center - half;
    let n = cfg.samples_per_axis;
    let step = half * 2.0 / (n - 1) as f64;
    let mut grid = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                grid.push(start + Vector3::new(
                    step.x * i as f64,
                    step.y * j as f64,
                    step.z * k as f64,
                ));
            }
        }
    }
    Ok(grid)
}

/// Keeps the query-grid points whose predicted occupancy exceeds `v0`.
pub fn reconstruct_full_cloud<F: OccupancyField + ?Sized>(
    field: &F,
    partial: &PointCloud,
    cfg: &ReconstructionConfig,
) -> Result<PointCloud> {
    if !(cfg.v0 > 0.0 && cfg.v0 < 1.0) {
        return Err(invalid(format!("v0 = {} outside (0, 1)", cfg.v0)));
    }
    let occupied: Vec<Point3> = query_grid(partial, cfg)?
        .into_iter()
        .filter(|x| field.occupancy(x) > cfg.v0)
        .collect();
    if occupied.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    Ok(PointCloud::new(occupied, partial.frame))
}

/// Arithmetic mean of the cloud's points.
pub fn recover_center(cloud: &PointCloud) -> Result<Point3> {
    if cloud.is_empty() {
        return Err(invalid("cannot recover the center of an empty cloud"));
    }
    let sum = cloud
        .points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Ok(Point3::from(sum / cloud.len() as f64))
}

/// Mean predicted occupancy over a reconstructed cloud (the quality score).
pub fn mean_occupancy<F: OccupancyField + ?Sized>(field: &F, cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(invalid("cannot score an empty cloud"));
    }
    Ok(cloud.points.iter().map(|p| field.occupancy(p)).sum::<f64>() / cloud.len() as f64)
}

/// Turns one decoded observation into a world-frame measurement.
///
/// `partial` and `field` live in the camera frame; `camera_to_world` lifts the
/// recovered center into the world frame.
pub fn measurement_from_field<F: OccupancyField + ?Sized>(
    latent: &LatentMatrix,
    field: &F,
    partial: &PointCloud,
    camera_to_world: &RigidTransform,
    cfg: &ReconstructionConfig,
    frame_index: u64,
    session: Session,
) -> Result<Measurement> {
    let shape_code = shape_code_from_latent(latent)?;
    let full = reconstruct_full_cloud(field, partial, cfg)?;
    let center = camera_to_world.apply(&recover_center(&full)?);
    let quality = mean_occupancy(field, &full)?.clamp(f64::MIN_POSITIVE, 1.0);
    let m = Measurement {
        shape_code,
        center,
        quality,
        frame_index,
        session,
    };
    m.validate()?;
    Ok(m)
}
