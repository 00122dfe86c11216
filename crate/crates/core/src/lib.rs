//! Object-level scene change detection from streams of latent shape
//! descriptors, with a synthetic scenario generator, a nearest-neighbor
//! point-cloud baseline and an evaluation harness.

pub mod descriptor;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod baseline;
pub mod change;
pub mod losses;
pub mod registration;
pub mod rng;
pub mod simulator;
pub mod spatial_tree;
pub mod types;

pub use error::{Error, Result};
pub use geometry::{Frame, Point3, PointCloud, RigidTransform, Vector3};
pub use types::{LatentMatrix, Measurement, ObjectId, ObjectInstance, Session, ShapeCode};
