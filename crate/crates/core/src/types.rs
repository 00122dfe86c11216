//! Shared domain records: shape codes, latent matrices, measurements and
//! persistent object instances.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Point3, Vector3};

pub type ObjectId = u64;

/// Default descriptor length.
pub const DEFAULT_CODE_LEN: usize = 256;

/// A `k x 3` latent matrix whose rows rotate with the observed object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMatrix {
    rows: Vec<Vector3>,
}

impl LatentMatrix {
    pub fn new(rows: Vec<Vector3>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("latent matrix needs at least one row"));
        }
        if rows.iter().any(|r| !r.iter().all(|v| v.is_finite())) {
            return Err(invalid("latent matrix has non-finite entries"));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vector3] {
        &self.rows
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// Right-multiplies every row by `m`, i.e. `z · m`.
    pub fn mul_right(&self, m: &nalgebra::Matrix3<f64>) -> Self {
        Self {
            rows: self.rows.iter().map(|r| (r.transpose() * m).transpose()).collect(),
        }
    }
}

/// Non-negative full-shape descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeCode(Vec<f64>);

impl ShapeCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("shape code is empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("shape code entry {v} is negative or non-finite")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True when at least one entry is strictly positive.
    pub fn is_nonzero(&self) -> bool {
        self.0.iter().any(|v| *v > 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Session {
    Source,
    Target,
}

/// One per-frame object observation: descriptor, world-frame center and
/// reconstruction quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub shape_code: ShapeCode,
    pub center: Point3,
    /// Mean occupancy of the reconstructed full shape, in `(0, 1]`.
    pub quality: f64,
    pub frame_index: u64,
    pub session: Session,
}

impl Measurement {
    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(invalid("measurement center is not finite"));
        }
        if !(self.quality > 0.0 && self.quality <= 1.0) {
            return Err(invalid(format!(
                "measurement quality {} outside (0, 1]",
                self.quality
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    pub shape_code: ShapeCode,
    pub center: Point3,
    pub quality: f64,
    pub marked_changed: bool,
    /// Source side: appeared in some queried neighborhood.
    pub observed: bool,
    /// Source side: cleared the similarity threshold against a target object.
    pub matched: bool,
}

impl ObjectInstance {
    pub fn from_measurement(id: ObjectId, m: &Measurement) -> Self {
        Self {
            id,
            shape_code: m.shape_code.clone(),
            center: m.center,
            quality: m.quality,
            marked_changed: false,
            observed: false,
            matched: false,
        }
    }
}
