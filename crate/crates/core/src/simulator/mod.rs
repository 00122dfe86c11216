//! Seeded synthetic scenarios: table scenes, injected changes, camera
//! trajectories, noisy measurement streams and partial point clouds.

pub mod cloud;
pub mod scene;
pub mod stream;
pub mod trajectory;

pub use cloud::{sample_partial_cloud, sample_partial_surface};
pub use scene::{
    apply_changes, generate_scene, ChangeKind, ChangeOp, ChangeSpec, GtLabel, Scene, SceneConfig, SceneObject, Table, TableLayout,
};
pub use stream::{
    drift_sequence, session_clouds, stream_observations, visible_objects, NoiseModel, ObjectCloud, Observation,
    SessionOffset, SessionStream, StreamFrame, Visibility, VisibilityConfig,
};
pub use trajectory::{generate_trajectories, look_at, CameraPose, OverlapProfile, Trajectory, TrajectoryConfig};
