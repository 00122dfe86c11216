//! End-to-end scenario execution.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::scenario::Scenario;
use crate::baseline::NnBaseline;
use crate::change::{ChangeVerdict, DetectorState, RegistrationStatus, VerdictKind};
use crate::descriptor::{generate_shape_library_with, LibraryConfig, SyntheticShapeLibrary};
use crate::error::Result;
use crate::geometry::RigidTransform;
use crate::rng::derive_seed;
use crate::simulator::{
    apply_changes, generate_scene, generate_trajectories, session_clouds, stream_observations, GtLabel,
    ObjectCloud, Scene, SceneConfig, SessionStream, Trajectory,
};
use crate::spatial_tree::{AssociationOutcome, SpatialObjectTree};
use crate::types::{ObjectId, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub baseline: bool,
    /// Keep the partial clouds of both sessions in the output.
    pub keep_clouds: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            baseline: true,
            keep_clouds: false,
        }
    }
}

/// Everything generated from a scenario before detection runs.
#[derive(Debug, Clone)]
pub struct Generated {
    pub library: SyntheticShapeLibrary,
    pub source_scene: Scene,
    pub target_scene: Scene,
    pub labels: BTreeMap<u64, GtLabel>,
    pub source_trajectory: Trajectory,
    pub target_trajectory: Trajectory,
    pub source_stream: SessionStream,
    pub target_stream: SessionStream,
}

impl Generated {
    /// Ground-truth alignment from the target frame to the source frame.
    pub fn true_t_rel(&self) -> RigidTransform {
        self.target_stream.offset.inverse()
    }
}

pub fn generate(scenario: &Scenario, seed: u64) -> Result<Generated> {
    scenario.validate()?;
    let library = generate_shape_library_with(&LibraryConfig {
        seed: derive_seed(seed, "library", scenario.library.seed),
        ..scenario.library.clone()
    })?;
    let scene_cfg = SceneConfig {
        seed: derive_seed(seed, "scene", scenario.scene.seed),
        ..scenario.scene.clone()
    };
    let source_scene = generate_scene(&scene_cfg, &library)?;
    let (target_scene, labels) = apply_changes(
        &source_scene,
        &scenario.changes,
        &library,
        scene_cfg.min_spacing,
        scene_cfg.placement_radius,
        derive_seed(seed, "changes", 0),
    )?;
    let (source_trajectory, target_trajectory) =
        generate_trajectories(&source_scene, &scenario.trajectories, derive_seed(seed, "trajectories", 0))?;
    let stream_seed = derive_seed(seed, "streams", 0);
    let source_stream = stream_observations(
        &source_scene,
        &library,
        &source_trajectory,
        &scenario.noise,
        &scenario.visibility,
        Session::Source,
        stream_seed,
    )?;
    let target_stream = stream_observations(
        &target_scene,
        &library,
        &target_trajectory,
        &scenario.noise,
        &scenario.visibility,
        Session::Target,
        stream_seed,
    )?;
    Ok(Generated {
        library,
        source_scene,
        target_scene,
        labels,
        source_trajectory,
        target_trajectory,
        source_stream,
        target_stream,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    #[serde(flatten)]
    pub verdict: ChangeVerdict,
    pub gt_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRow {
    pub gt_id: u64,
    pub label: GtLabel,
    pub ours_changed: bool,
    /// Kinds of all verdicts on tree objects instantiated by this object.
    pub ours_verdicts: Vec<VerdictKind>,
    pub nn_changed: Option<bool>,
    pub nn_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    /// `registered` or `registration_failed`.
    pub status: String,
    pub correspondences: usize,
    pub t_rel: Option<RigidTransform>,
    pub translation_error: Option<f64>,
    pub rotation_error_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub source_objects: usize,
    pub target_objects: usize,
    pub changed_objects: usize,
    pub source_measurements: usize,
    pub target_measurements: usize,
    pub source_tree_objects: usize,
    pub target_tree_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Mean tree update plus classification time per target measurement.
    pub mean_ms_per_measurement: f64,
    pub detector_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub counts: Counts,
    pub registration: RegistrationReport,
    pub ours: Metrics,
    pub nn: Option<Metrics>,
    pub objects: Vec<ObjectRow>,
    pub config: Scenario,
    pub timing: Timing,
}

impl RunReport {
    /// Pretty JSON; the `timing` section is dropped when `timing` is false,
    /// which makes the output a pure function of scenario and seed.
    pub fn to_json(&self, timing: bool) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if !timing {
            if let Some(obj) = v.as_object_mut() {
                obj.remove("timing");
            }
        }
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub verdicts: Vec<VerdictRecord>,
    pub detector: DetectorState,
    pub generated: Generated,
    pub source_clouds: Option<Vec<Vec<ObjectCloud>>>,
    pub target_clouds: Option<Vec<Vec<ObjectCloud>>>,
}

/// Runs generation, the detector and optionally the baseline.
pub fn run_scenario(scenario: &Scenario, seed: u64, opts: &RunOptions) -> Result<RunOutput> {
    let wall = Instant::now();
    let generated = generate(scenario, seed)?;
    let cfg = scenario.detector;

    let mut source_tree = SpatialObjectTree::new(cfg.tree);
    let mut source_gt: BTreeMap<ObjectId, u64> = BTreeMap::new();
    for obs in generated.source_stream.observations() {
        if let AssociationOutcome::Instantiated { id } =
            source_tree.insert_or_associate(&obs.measurement, cfg.delta_d, cfg.delta_s)?
        {
            source_gt.insert(id, obs.gt_id);
        }
    }

    let mut det = DetectorState::new(source_tree, cfg)?;
    let mut target_gt: BTreeMap<ObjectId, u64> = BTreeMap::new();
    let mut verdicts: Vec<VerdictRecord> = Vec::new();
    let mut detector_time = std::time::Duration::ZERO;
    let mut last_frame = 0;
    for frame in &generated.target_stream.frames {
        let ms: Vec<_> = frame.observations.iter().map(|o| o.measurement.clone()).collect();
        let t0 = Instant::now();
        let out = det.process_frame(&ms)?;
        detector_time += t0.elapsed();
        last_frame = frame.frame_index;
        for (a, obs) in out.associations.iter().zip(&frame.observations) {
            if let AssociationOutcome::Instantiated { id } = a {
                target_gt.insert(*id, obs.gt_id);
            }
        }
        if let RegistrationStatus::Failed { pairs, reason } = &out.registration {
            log::debug!("frame {}: registration with {pairs} pairs failed: {reason}", frame.frame_index);
        }
        for v in out.verdicts {
            let gt_id = target_gt.get(&v.object_id).copied();
            verdicts.push(VerdictRecord { verdict: v, gt_id });
        }
    }
    for v in det.finalize_removed(last_frame) {
        let gt_id = source_gt.get(&v.object_id).copied();
        verdicts.push(VerdictRecord { verdict: v, gt_id });
    }

    let mut flagged: BTreeSet<u64> = BTreeSet::new();
    let mut kinds: BTreeMap<u64, Vec<VerdictKind>> = BTreeMap::new();
    for r in &verdicts {
        if let Some(g) = r.gt_id {
            kinds.entry(g).or_default().push(r.verdict.kind);
            if r.verdict.kind.is_changed() {
                flagged.insert(g);
            }
        }
    }
    let ours = compute_metrics(&flagged, &generated.labels);

    let keep = opts.baseline || opts.keep_clouds;
    let (source_clouds, target_clouds) = if keep {
        let stream_seed = derive_seed(seed, "streams", 0);
        let s = session_clouds(
            &generated.source_scene,
            &generated.library,
            &generated.source_trajectory,
            &generated.source_stream,
            &scenario.noise,
            &scenario.visibility,
            stream_seed,
        )?;
        let t = session_clouds(
            &generated.target_scene,
            &generated.library,
            &generated.target_trajectory,
            &generated.target_stream,
            &scenario.noise,
            &scenario.visibility,
            stream_seed,
        )?;
        (Some(s), Some(t))
    } else {
        (None, None)
    };

    let mut nn_flags: Option<BTreeMap<u64, f64>> = None;
    if opts.baseline {
        let (s, t) = (source_clouds.as_ref().expect("clouds kept"), target_clouds.as_ref().expect("clouds kept"));
        let mut nn = NnBaseline::new(scenario.baseline, s.iter().flatten().map(|c| (c.gt_id, &c.cloud)))?;
        for c in t.iter().flatten() {
            nn.observe(c.gt_id, &c.cloud)?;
        }
        nn.finalize()?;
        nn_flags = Some(nn.changed().clone());
    }
    let nn = nn_flags
        .as_ref()
        .map(|f| compute_metrics(&f.keys().copied().collect(), &generated.labels));

    let objects = generated
        .labels
        .iter()
        .map(|(g, label)| ObjectRow {
            gt_id: *g,
            label: *label,
            ours_changed: flagged.contains(g),
            ours_verdicts: kinds.get(g).cloned().unwrap_or_default(),
            nn_changed: nn_flags.as_ref().map(|f| f.contains_key(g)),
            nn_fraction: nn_flags.as_ref().and_then(|f| f.get(g).copied()),
        })
        .collect();

    let truth = generated.true_t_rel();
    let registration = match det.t_rel() {
        Some(t) => {
            let err = t.inverse().compose(&truth);
            RegistrationReport {
                status: "registered".into(),
                correspondences: det.correspondences().len(),
                t_rel: Some(*t),
                translation_error: Some(err.translation().norm()),
                rotation_error_deg: Some(err.rotation_angle().to_degrees()),
            }
        }
        None => RegistrationReport {
            status: "registration_failed".into(),
            correspondences: det.correspondences().len(),
            t_rel: None,
            translation_error: None,
            rotation_error_deg: None,
        },
    };

    let target_measurements = generated.target_stream.len();
    let counts = Counts {
        source_objects: generated.source_scene.objects.len(),
        target_objects: generated.target_scene.objects.len(),
        changed_objects: generated.labels.values().filter(|l| l.is_changed()).count(),
        source_measurements: generated.source_stream.len(),
        target_measurements,
        source_tree_objects: det.source_tree().len(),
        target_tree_objects: det.target_tree().len(),
    };
    let detector_ms = detector_time.as_secs_f64() * 1e3;
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed,
        counts,
        registration,
        ours,
        nn,
        objects,
        config: scenario.clone(),
        timing: Timing {
            mean_ms_per_measurement: detector_ms / target_measurements.max(1) as f64,
            detector_ms,
            total_ms: wall.elapsed().as_secs_f64() * 1e3,
        },
    };
    Ok(RunOutput {
        report,
        verdicts,
        detector: det,
        generated,
        source_clouds: if opts.keep_clouds { source_clouds } else { None },
        target_clouds: if opts.keep_clouds { target_clouds } else { None },
    })
}
