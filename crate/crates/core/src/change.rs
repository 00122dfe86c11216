//! Online change classification against a frozen source map.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::descriptor::cosine_similarity;
use crate::error::{invalid, Error, Result};
use crate::geometry::{RigidTransform, Vector3};
use crate::registration::{
    best_shape_match, ransac_register, Correspondence, CorrespondenceSet, RansacConfig,
    DEFAULT_CORRESPONDENCES,
};
use crate::spatial_tree::{AssociationOutcome, SpatialObjectTree, TreeConfig};
use crate::types::{Measurement, ObjectId, ObjectInstance, Session};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum shape similarity for association and matching.
    pub delta_s: f64,
    /// Maximum center distance for association, meters.
    pub delta_d: f64,
    /// Maximum edge difference for a consistent layout, meters.
    pub delta_e: f64,
    /// Correspondences collected before registration.
    pub correspondences: usize,
    pub tree: TreeConfig,
    pub ransac: RansacConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            delta_s: 0.9,
            delta_d: 0.02,
            delta_e: 0.03,
            correspondences: DEFAULT_CORRESPONDENCES,
            tree: TreeConfig::default(),
            ransac: RansacConfig::default(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_s > 0.0 && self.delta_s < 1.0) {
            return Err(invalid("delta_s must lie in (0, 1)"));
        }
        if !(self.delta_d > 0.0) || !(self.delta_e > 0.0) {
            return Err(invalid("delta_d and delta_e must be positive"));
        }
        if !(self.tree.interval_length > 0.0) || !(self.tree.neighbor_margin >= 0.0) {
            return Err(invalid("interval length must be positive and margin non-negative"));
        }
        if self.correspondences < self.ransac.min_sample {
            return Err(invalid("correspondences must be at least the ransac minimal sample"));
        }
        self.ransac.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Unchanged,
    ChangedNewLocation,
    ChangedNewShape,
    ChangedMoved,
    Removed,
}

impl VerdictKind {
    pub fn is_changed(self) -> bool {
        self != VerdictKind::Unchanged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    EmptySourceNeighborhood,
    NoShapeMatch,
    AllEdgesDiffer,
    LayoutConsistent,
    SingletonFallback,
    NeverMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeVerdict {
    pub object_id: ObjectId,
    /// `target` for classified target objects, `source` for removals.
    pub session: Session,
    pub kind: VerdictKind,
    pub evidence: Evidence,
    pub frame_index: u64,
    /// Source objects that cleared the shape threshold.
    pub matched_source: Vec<ObjectId>,
}

/// Directed star graph from a center object to the rest of its neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGraph {
    pub center_object: ObjectInstance,
    /// Neighbors other than the center object, in neighborhood order.
    pub vertices: Vec<ObjectInstance>,
    /// `edges[i] = vertices[i].center - center_object.center`.
    pub edges: Vec<Vector3>,
}

impl ObjectGraph {
    pub fn is_singleton(&self) -> bool {
        self.edges.is_empty()
    }
}

pub fn build_object_graph<'a, I>(o: &ObjectInstance, neighborhood: I) -> ObjectGraph
where
    I: IntoIterator<Item = &'a ObjectInstance>,
{
    let vertices: Vec<ObjectInstance> = neighborhood
        .into_iter()
        .filter(|v| v.id != o.id)
        .cloned()
        .collect();
    let edges = vertices.iter().map(|v| v.center - o.center).collect();
    ObjectGraph {
        center_object: o.clone(),
        vertices,
        edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutVerdict {
    Changed,
    Unchanged,
}

/// Index of the source vertex corresponding to a target vertex: highest
/// similarity above `delta_s`, lowest id on ties.
fn corresponding_vertex(v: &ObjectInstance, source: &ObjectGraph, delta_s: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in source.vertices.iter().enumerate() {
        let Ok(sim) = cosine_similarity(&v.shape_code, &s.shape_code) else {
            continue;
        };
        if sim <= delta_s {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bs)) => sim > bs || (sim == bs && s.id < source.vertices[b].id),
        };
        if better {
            best = Some((i, sim));
        }
    }
    best.map(|(i, _)| i)
}

/// Edge-wise layout comparison. Unchanged iff at least one corresponded edge
/// pair differs by at most `delta_e`.
pub fn compare_graphs(target: &ObjectGraph, source: &ObjectGraph, delta_s: f64, delta_e: f64) -> LayoutVerdict {
    for (v, e) in target.vertices.iter().zip(&target.edges) {
        if let Some(j) = corresponding_vertex(v, source, delta_s) {
            if (e - source.edges[j]).norm() <= delta_e {
                return LayoutVerdict::Unchanged;
            }
        }
    }
    LayoutVerdict::Changed
}

/// Object-wise rule: same place and same shape.
pub fn object_wise_unchanged(target: &ObjectInstance, source: &ObjectInstance, delta_d: f64, delta_s: f64) -> bool {
    let close = (source.center - target.center).norm() < delta_d;
    close && cosine_similarity(&target.shape_code, &source.shape_code).is_ok_and(|d| d > delta_s)
}

fn project(o: &ObjectInstance, t: &RigidTransform) -> ObjectInstance {
    ObjectInstance {
        center: t.apply(&o.center),
        ..o.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RegistrationStatus {
    /// Still collecting correspondences.
    Pending { pairs: usize },
    /// Registration was attempted this frame and failed.
    Failed { pairs: usize, reason: String },
    /// Registration succeeded this frame.
    Registered { inliers: usize, pairs: usize },
    /// Registered in an earlier frame.
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub associations: Vec<AssociationOutcome>,
    pub verdicts: Vec<ChangeVerdict>,
    pub registration: RegistrationStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorState {
    config: DetectorConfig,
    source_tree: SpatialObjectTree,
    target_tree: SpatialObjectTree,
    t_rel: Option<RigidTransform>,
    pending: BTreeSet<ObjectId>,
    correspondences: CorrespondenceSet,
    attempted_at: usize,
}

impl DetectorState {
    /// Starts a target session against a completed source map.
    pub fn new(source_tree: SpatialObjectTree, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            source_tree,
            target_tree: SpatialObjectTree::new(config.tree),
            t_rel: None,
            pending: BTreeSet::new(),
            correspondences: CorrespondenceSet::new(config.correspondences),
            attempted_at: 0,
        })
    }

    /// Builds the source map from a source-session stream.
    pub fn build_source_tree<'a, I>(measurements: I, config: &DetectorConfig) -> Result<SpatialObjectTree>
    where
        I: IntoIterator<Item = &'a Measurement>,
    {
        let mut tree = SpatialObjectTree::new(config.tree);
        for m in measurements {
            if m.session != Session::Source {
                return Err(invalid("source map accepts source-session measurements only"));
            }
            tree.insert_or_associate(m, config.delta_d, config.delta_s)?;
        }
        Ok(tree)
    }

    /// Uses a known alignment instead of estimating one.
    pub fn with_transform(mut self, t_rel: RigidTransform) -> Self {
        self.t_rel = Some(t_rel);
        self
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn source_tree(&self) -> &SpatialObjectTree {
        &self.source_tree
    }

    pub fn target_tree(&self) -> &SpatialObjectTree {
        &self.target_tree
    }

    pub fn t_rel(&self) -> Option<&RigidTransform> {
        self.t_rel.as_ref()
    }

    pub fn pending(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.pending.iter().copied()
    }

    pub fn correspondences(&self) -> &CorrespondenceSet {
        &self.correspondences
    }

    /// Single-measurement step. A registration failure is returned as an
    /// error after the tree update; the object stays pending.
    pub fn process_measurement(&mut self, m: &Measurement) -> Result<Vec<ChangeVerdict>> {
        let out = self.process_frame(std::slice::from_ref(m))?;
        match out.registration {
            RegistrationStatus::Failed { reason, .. } => Err(Error::RegistrationFailed(reason)),
            _ => Ok(out.verdicts),
        }
    }

    /// Applies all measurements of one frame to the target map, then
    /// classifies the objects they created or improved.
    pub fn process_frame(&mut self, frame: &[Measurement]) -> Result<FrameOutcome> {
        for m in frame {
            if m.session != Session::Target {
                return Err(invalid("detector accepts target-session measurements only"));
            }
            m.validate()?;
        }
        let mut associations = Vec::with_capacity(frame.len());
        let mut touched: Vec<ObjectId> = Vec::new();
        for m in frame {
            let out = self
                .target_tree
                .insert_or_associate(m, self.config.delta_d, self.config.delta_s)?;
            associations.push(out);
            let fresh = matches!(
                out,
                AssociationOutcome::Instantiated { .. } | AssociationOutcome::Associated { updated: true, .. }
            );
            if fresh && !touched.contains(&out.id()) {
                touched.push(out.id());
            }
        }
        let frame_index = frame.first().map_or(0, |m| m.frame_index);

        let mut verdicts = Vec::new();
        let registration = if self.t_rel.is_some() {
            RegistrationStatus::Ready
        } else {
            for id in &touched {
                self.pending.insert(*id);
                self.offer_correspondence(*id);
            }
            let status = self.try_register();
            if matches!(status, RegistrationStatus::Registered { .. }) {
                let queued: Vec<ObjectId> = std::mem::take(&mut self.pending).into_iter().collect();
                for id in queued {
                    verdicts.extend(self.classify_id(id, frame_index));
                }
            }
            touched.clear();
            status
        };
        for id in touched {
            verdicts.extend(self.classify_id(id, frame_index));
        }
        Ok(FrameOutcome {
            associations,
            verdicts,
            registration,
        })
    }

    fn offer_correspondence(&mut self, target_id: ObjectId) {
        let Some(target) = self.target_tree.get(target_id) else {
            return;
        };
        let Some((source, sim)) =
            best_shape_match(target, self.source_tree.all_objects(), self.config.delta_s)
        else {
            return;
        };
        let pair = Correspondence {
            source_id: source.id,
            target_id,
            source_center: source.center,
            target_center: target.center,
            similarity: sim,
        };
        // Similarity exceeds delta_s by construction.
        let _ = self.correspondences.push(pair, self.config.delta_s);
    }

    fn try_register(&mut self) -> RegistrationStatus {
        let pairs = self.correspondences.len();
        if !self.correspondences.is_full() || pairs == self.attempted_at {
            return RegistrationStatus::Pending { pairs };
        }
        self.attempted_at = pairs;
        match ransac_register(&self.correspondences.point_pairs(), &self.config.ransac) {
            Ok(res) => {
                for (pair, inlier) in self.correspondences.pairs().iter().zip(&res.inliers) {
                    if *inlier {
                        self.source_tree.set_matched(pair.source_id);
                    }
                }
                log::debug!(
                    "registered with {} of {} correspondences",
                    res.inlier_count(),
                    pairs
                );
                let inliers = res.inlier_count();
                self.t_rel = Some(res.transform);
                RegistrationStatus::Registered { inliers, pairs }
            }
            Err(e) => {
                log::debug!("registration with {pairs} correspondences failed: {e}");
                RegistrationStatus::Failed {
                    pairs,
                    reason: e.to_string(),
                }
            }
        }
    }

    fn classify_id(&mut self, id: ObjectId, frame_index: u64) -> Option<ChangeVerdict> {
        let o = self.target_tree.get(id)?.clone();
        if o.marked_changed {
            return None;
        }
        self.classify_object(&o, frame_index).ok()
    }

    /// Classifies one target object against the source map and records the
    /// resulting flags.
    pub fn classify_object(&mut self, o: &ObjectInstance, frame_index: u64) -> Result<ChangeVerdict> {
        let t_rel = self
            .t_rel
            .ok_or_else(|| Error::RegistrationFailed("classification requires an alignment".into()))?;
        if o.marked_changed {
            return Err(invalid(format!("object {} is already marked changed", o.id)));
        }
        let cfg = self.config;
        let projected = project(o, &t_rel);
        let neighborhood: Vec<ObjectInstance> = self
            .source_tree
            .query_neighborhood(&projected.center)
            .into_iter()
            .cloned()
            .collect();
        for s in &neighborhood {
            self.source_tree.set_observed(s.id);
        }

        let verdict = |kind, evidence, matched_source| ChangeVerdict {
            object_id: o.id,
            session: Session::Target,
            kind,
            evidence,
            frame_index,
            matched_source,
        };
        let result = if neighborhood.is_empty() {
            verdict(VerdictKind::ChangedNewLocation, Evidence::EmptySourceNeighborhood, Vec::new())
        } else {
            let mut matches: Vec<(f64, &ObjectInstance)> = neighborhood
                .iter()
                .filter_map(|s| {
                    cosine_similarity(&o.shape_code, &s.shape_code)
                        .ok()
                        .filter(|d| *d > cfg.delta_s)
                        .map(|d| (d, s))
                })
                .collect();
            matches.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
            let matched: Vec<ObjectId> = matches.iter().map(|(_, s)| s.id).collect();
            if matches.is_empty() {
                verdict(VerdictKind::ChangedNewShape, Evidence::NoShapeMatch, matched)
            } else {
                let target_graph = build_object_graph(
                    &projected,
                    self.target_tree
                        .query_neighborhood(&o.center)
                        .into_iter()
                        .map(|v| project(v, &t_rel))
                        .collect::<Vec<_>>()
                        .iter(),
                );
                let mut all_fallback = true;
                let mut outcome = None;
                for (_, s) in &matches {
                    let source_graph = build_object_graph(s, self.source_tree.query_neighborhood(&s.center));
                    let (same, evidence) = if target_graph.is_singleton() || source_graph.is_singleton() {
                        (
                            object_wise_unchanged(&projected, s, cfg.delta_d, cfg.delta_s),
                            Evidence::SingletonFallback,
                        )
                    } else {
                        all_fallback = false;
                        (
                            compare_graphs(&target_graph, &source_graph, cfg.delta_s, cfg.delta_e)
                                == LayoutVerdict::Unchanged,
                            Evidence::LayoutConsistent,
                        )
                    };
                    if same {
                        outcome = Some(evidence);
                        break;
                    }
                }
                match outcome {
                    Some(evidence) => verdict(VerdictKind::Unchanged, evidence, matched),
                    None => {
                        let evidence = if all_fallback {
                            Evidence::SingletonFallback
                        } else {
                            Evidence::AllEdgesDiffer
                        };
                        verdict(VerdictKind::ChangedMoved, evidence, matched)
                    }
                }
            }
        };
        for s in &result.matched_source {
            self.source_tree.set_matched(*s);
        }
        if result.kind.is_changed() {
            self.target_tree.mark_changed(o.id);
        }
        Ok(result)
    }

    /// Removal verdicts for source objects that were observed but never
    /// matched, ordered by id.
    pub fn finalize_removed(&self, frame_index: u64) -> Vec<ChangeVerdict> {
        self.source_tree
            .all_objects()
            .into_iter()
            .filter(|s| s.observed && !s.matched)
            .map(|s| ChangeVerdict {
                object_id: s.id,
                session: Session::Source,
                kind: VerdictKind::Removed,
                evidence: Evidence::NeverMatched,
                frame_index,
                matched_source: Vec::new(),
            })
            .collect()
    }
}
