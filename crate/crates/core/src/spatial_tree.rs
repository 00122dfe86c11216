//! Spatial object tree: a pair of binary-search trees over fixed-length
//! coordinate intervals in x and y. An object's neighborhood is the set of
//! objects sharing both its x-interval node and its y-interval node.
//!
//! Nodes are created lazily as `[c - l/2, c + l/2]` around the first
//! coordinate `c` that lands outside every existing node. When that interval
//! would overlap an existing node it is clipped to the free gap, so node
//! intervals stay pairwise disjoint and the BST order stays strict. Trees are
//! append-only: nodes are never deleted or rebalanced.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::descriptor::cosine_similarity;
use crate::error::{invalid, Result};
use crate::geometry::Point3;
use crate::types::{Measurement, ObjectId, ObjectInstance};

/// Interval length for table-top scenes.
pub const DEFAULT_INTERVAL_LENGTH: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn coord(self, p: &Point3) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalNode {
    pub lo: f64,
    pub hi: f64,
    /// Member object ids in insertion order.
    pub members: Vec<ObjectId>,
    left: Option<usize>,
    right: Option<usize>,
}

impl IntervalNode {
    pub fn contains(&self, c: f64) -> bool {
        self.lo <= c && c <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTree {
    axis: Axis,
    length: f64,
    nodes: Vec<IntervalNode>,
    root: Option<usize>,
}

impl IntervalTree {
    pub fn new(axis: Axis, length: f64) -> Self {
        Self {
            axis,
            length,
            nodes: Vec::new(),
            root: None,
        }
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn node(&self, idx: usize) -> &IntervalNode {
        &self.nodes[idx]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Index of the node whose interval contains `c`.
    pub fn locate(&self, c: f64) -> Option<usize> {
        let mut cur = self.root;
        while let Some(i) = cur {
            let n = &self.nodes[i];
            if c < n.lo {
                cur = n.left;
            } else if c > n.hi {
                cur = n.right;
            } else {
                return Some(i);
            }
        }
        None
    }

    /// Finds the node containing `c`, creating one if none does.
    fn locate_or_insert(&mut self, c: f64) -> usize {
        let mut cur = self.root;
        let mut pred_hi = f64::NEG_INFINITY;
        let mut succ_lo = f64::INFINITY;
        let mut parent: Option<(usize, bool)> = None;
        while let Some(i) = cur {
            let n = &self.nodes[i];
            if c < n.lo {
                succ_lo = n.lo;
                parent = Some((i, true));
                cur = n.left;
            } else if c > n.hi {
                pred_hi = n.hi;
                parent = Some((i, false));
                cur = n.right;
            } else {
                return i;
            }
        }
        let half = self.length / 2.0;
        let lo = (c - half).max(pred_hi.next_up());
        let hi = (c + half).min(succ_lo.next_down());
        let idx = self.nodes.len();
        self.nodes.push(IntervalNode {
            lo,
            hi,
            members: Vec::new(),
            left: None,
            right: None,
        });
        match parent {
            None => self.root = Some(idx),
            Some((p, true)) => self.nodes[p].left = Some(idx),
            Some((p, false)) => self.nodes[p].right = Some(idx),
        }
        idx
    }

    /// Nodes intersecting `[lo, hi]`, in increasing order.
    pub fn nodes_overlapping(&self, lo: f64, hi: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_overlapping(self.root, lo, hi, &mut out);
        out
    }

    fn collect_overlapping(&self, cur: Option<usize>, lo: f64, hi: f64, out: &mut Vec<usize>) {
        let Some(i) = cur else { return };
        let n = &self.nodes[i];
        if lo < n.lo {
            self.collect_overlapping(n.left, lo, hi, out);
        }
        if n.lo <= hi && lo <= n.hi {
            out.push(i);
        }
        if hi > n.hi {
            self.collect_overlapping(n.right, lo, hi, out);
        }
    }

    /// Node indices in in-order (increasing interval) order.
    pub fn in_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = Vec::new();
        let mut cur = self.root;
        while cur.is_some() || !stack.is_empty() {
            while let Some(i) = cur {
                stack.push(i);
                cur = self.nodes[i].left;
            }
            let i = stack.pop().expect("stack is non-empty");
            out.push(i);
            cur = self.nodes[i].right;
        }
        out
    }

    /// Checks the BST order and disjointness of all nodes.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.lo <= n.hi) {
                return Err(format!("node {i} has empty interval [{}, {}]", n.lo, n.hi));
            }
            if n.hi - n.lo > self.length * (1.0 + 1e-12) {
                return Err(format!("node {i} is longer than {}", self.length));
            }
            if let Some(l) = n.left {
                if !(self.nodes[l].hi < n.lo) {
                    return Err(format!("left child {l} of {i} violates order"));
                }
            }
            if let Some(r) = n.right {
                if !(self.nodes[r].lo > n.hi) {
                    return Err(format!("right child {r} of {i} violates order"));
                }
            }
        }
        let order = self.in_order();
        if order.len() != self.nodes.len() {
            return Err("tree is not connected".into());
        }
        for w in order.windows(2) {
            if !(self.nodes[w[0]].hi < self.nodes[w[1]].lo) {
                return Err(format!("nodes {} and {} overlap", w[0], w[1]));
            }
        }
        Ok(())
    }

    fn remove_member(&mut self, idx: usize, id: ObjectId) {
        self.nodes[idx].members.retain(|m| *m != id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Node interval length `l`, meters.
    pub interval_length: f64,
    /// Widening of neighborhood queries to adjacent nodes, meters. Zero keeps
    /// the strict same-node rule.
    pub neighbor_margin: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            interval_length: DEFAULT_INTERVAL_LENGTH,
            neighbor_margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssociationOutcome {
    Associated { id: ObjectId, updated: bool },
    Instantiated { id: ObjectId },
}

impl AssociationOutcome {
    pub fn id(&self) -> ObjectId {
        match *self {
            AssociationOutcome::Associated { id, .. } | AssociationOutcome::Instantiated { id } => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Placement {
    x: usize,
    y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialObjectTree {
    config: TreeConfig,
    tx: IntervalTree,
    ty: IntervalTree,
    objects: BTreeMap<ObjectId, ObjectInstance>,
    placement: BTreeMap<ObjectId, Placement>,
    next_id: ObjectId,
}

impl Default for SpatialObjectTree {
    fn default() -> Self {
        Self::new(TreeConfig::default())
    }
}

impl SpatialObjectTree {
    pub fn new(config: TreeConfig) -> Self {
        Self {
            config,
            tx: IntervalTree::new(Axis::X, config.interval_length),
            ty: IntervalTree::new(Axis::Y, config.interval_length),
            objects: BTreeMap::new(),
            placement: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn x_tree(&self) -> &IntervalTree {
        &self.tx
    }

    pub fn y_tree(&self) -> &IntervalTree {
        &self.ty
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: ObjectId) -> Option<&ObjectInstance> {
        self.objects.get(&id)
    }

    /// Every registered object exactly once, ordered by id.
    pub fn all_objects(&self) -> Vec<&ObjectInstance> {
        self.objects.values().collect()
    }

    /// Objects sharing both the x node and the y node that `p` falls in,
    /// ordered by id. With a positive `neighbor_margin`, every node within
    /// the margin of `p` on an axis counts.
    pub fn query_neighborhood(&self, p: &Point3) -> Vec<&ObjectInstance> {
        let margin = self.config.neighbor_margin;
        let (xs, ys): (BTreeSet<usize>, BTreeSet<usize>) = if margin > 0.0 {
            (
                self.tx.nodes_overlapping(p.x - margin, p.x + margin).into_iter().collect(),
                self.ty.nodes_overlapping(p.y - margin, p.y + margin).into_iter().collect(),
            )
        } else {
            match (self.tx.locate(p.x), self.ty.locate(p.y)) {
                (Some(x), Some(y)) => ([x].into(), [y].into()),
                _ => return Vec::new(),
            }
        };
        let mut ids: Vec<ObjectId> = xs
            .iter()
            .flat_map(|&x| self.tx.node(x).members.iter().copied())
            .filter(|id| ys.contains(&self.placement[id].y))
            .collect();
        ids.sort_unstable();
        ids.iter().map(|id| &self.objects[id]).collect()
    }

    /// Associates `m` with the best compatible object in its neighborhood or
    /// instantiates a new object.
    ///
    /// A candidate is compatible when its center is closer than `delta_d` and
    /// its code similarity exceeds `delta_s`. Among compatible candidates the
    /// highest similarity wins, then the smaller distance, then the lower id.
    /// The winner takes `m`'s code and center only if `m` has higher quality.
    pub fn insert_or_associate(
        &mut self,
        m: &Measurement,
        delta_d: f64,
        delta_s: f64,
    ) -> Result<AssociationOutcome> {
        m.validate()?;
        if !(delta_d > 0.0) {
            return Err(invalid("delta_d must be positive"));
        }
        let mut best: Option<(f64, f64, ObjectId)> = None;
        for o in self.query_neighborhood(&m.center) {
            let dist = (o.center - m.center).norm();
            if dist >= delta_d {
                continue;
            }
            let sim = cosine_similarity(&o.shape_code, &m.shape_code)?;
            if sim <= delta_s {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, bd, bid)) => {
                    sim > bs || (sim == bs && (dist < bd || (dist == bd && o.id < bid)))
                }
            };
            if better {
                best = Some((sim, dist, o.id));
            }
        }

        if let Some((_, _, id)) = best {
            let updated = m.quality > self.objects[&id].quality;
            if updated {
                let obj = self.objects.get_mut(&id).expect("candidate exists");
                obj.shape_code = m.shape_code.clone();
                obj.center = m.center;
                obj.quality = m.quality;
                self.relocate(id);
            }
            return Ok(AssociationOutcome::Associated { id, updated });
        }

        let id = self.next_id;
        self.next_id += 1;
        self.objects.insert(id, ObjectInstance::from_measurement(id, m));
        self.place(id);
        Ok(AssociationOutcome::Instantiated { id })
    }

    fn place(&mut self, id: ObjectId) {
        let c = self.objects[&id].center;
        let x = self.tx.locate_or_insert(c.x);
        let y = self.ty.locate_or_insert(c.y);
        self.tx.nodes[x].members.push(id);
        self.ty.nodes[y].members.push(id);
        self.placement.insert(id, Placement { x, y });
    }

    /// Moves an object whose center changed into the nodes covering it.
    fn relocate(&mut self, id: ObjectId) {
        let c = self.objects[&id].center;
        let old = self.placement[&id];
        if self.tx.node(old.x).contains(c.x) && self.ty.node(old.y).contains(c.y) {
            return;
        }
        self.tx.remove_member(old.x, id);
        self.ty.remove_member(old.y, id);
        self.place(id);
    }

    pub fn set_observed(&mut self, id: ObjectId) {
        if let Some(o) = self.objects.get_mut(&id) {
            o.observed = true;
        }
    }

    pub fn set_matched(&mut self, id: ObjectId) {
        if let Some(o) = self.objects.get_mut(&id) {
            o.matched = true;
        }
    }

    pub fn mark_changed(&mut self, id: ObjectId) {
        if let Some(o) = self.objects.get_mut(&id) {
            o.marked_changed = true;
        }
    }

    /// Verifies node order, disjointness and membership consistency.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.tx.check_invariants()?;
        self.ty.check_invariants()?;
        if self.placement.len() != self.objects.len() {
            return Err("placement and registry disagree".into());
        }
        for (id, o) in &self.objects {
            let pl = self.placement.get(id).ok_or(format!("object {id} is unplaced"))?;
            let (nx, ny) = (self.tx.node(pl.x), self.ty.node(pl.y));
            if !nx.contains(o.center.x) || !ny.contains(o.center.y) {
                return Err(format!("object {id} lies outside its nodes"));
            }
            if !nx.members.contains(id) || !ny.members.contains(id) {
                return Err(format!("object {id} missing from its node member lists"));
            }
        }
        for (tree, axis) in [(&self.tx, Axis::X), (&self.ty, Axis::Y)] {
            let total: usize = tree.nodes.iter().map(|n| n.members.len()).sum();
            if total != self.objects.len() {
                return Err(format!("{axis:?} tree holds {total} memberships for {} objects", self.objects.len()));
            }
            for (i, n) in tree.nodes.iter().enumerate() {
                for id in &n.members {
                    let pl = self.placement[id];
                    let expected = if axis == Axis::X { pl.x } else { pl.y };
                    if expected != i {
                        return Err(format!("object {id} listed in wrong {axis:?} node"));
                    }
                    if !n.contains(axis.coord(&self.objects[id].center)) {
                        return Err(format!("object {id} outside {axis:?} node {i}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Self =
            serde_json::from_str(text).map_err(|e| invalid(format!("tree JSON: {e}")))?;
        tree.check_invariants().map_err(invalid)?;
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Session, ShapeCode};

    fn meas(x: f64, y: f64, code: &[f64], quality: f64) -> Measurement {
        Measurement {
            shape_code: ShapeCode::new(code.to_vec()).unwrap(),
            center: Point3::new(x, y, 0.1),
            quality,
            frame_index: 0,
            session: Session::Source,
        }
    }

    #[test]
    fn empty_tree_has_empty_neighborhoods() {
        let t = SpatialObjectTree::default();
        assert!(t.query_neighborhood(&Point3::new(0.0, 0.0, 0.0)).is_empty());
        assert!(t.all_objects().is_empty());
    }

    #[test]
    fn first_measurement_creates_centered_nodes() {
        let mut t = SpatialObjectTree::default();
        let m = Measurement {
            center: Point3::new(0.3, 0.4, 0.1),
            ..meas(0.0, 0.0, &[1.0], 0.9)
        };
        let out = t.insert_or_associate(&m, 0.02, 0.9).unwrap();
        assert_eq!(out, AssociationOutcome::Instantiated { id: 0 });
        let nx = t.x_tree().node(t.x_tree().locate(0.3).unwrap());
        let ny = t.y_tree().node(t.y_tree().locate(0.4).unwrap());
        assert!((nx.lo + 0.3).abs() < 1e-12 && (nx.hi - 0.9).abs() < 1e-12);
        assert!((ny.lo + 0.2).abs() < 1e-12 && (ny.hi - 1.0).abs() < 1e-12);
        let n = t.query_neighborhood(&m.center);
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].id, 0);
    }

    #[test]
    fn lower_quality_repeat_associates_without_update() {
        let mut t = SpatialObjectTree::default();
        t.insert_or_associate(&meas(1.0, 1.0, &[1.0, 0.2], 0.9), 0.02, 0.9).unwrap();
        let out = t.insert_or_associate(&meas(1.0, 1.0, &[1.0, 0.2], 0.5), 0.02, 0.9).unwrap();
        assert_eq!(out, AssociationOutcome::Associated { id: 0, updated: false });
        assert_eq!(t.get(0).unwrap().quality, 0.9);

        let better = meas(1.01, 1.0, &[1.0, 0.21], 0.95);
        let out = t.insert_or_associate(&better, 0.02, 0.9).unwrap();
        assert_eq!(out, AssociationOutcome::Associated { id: 0, updated: true });
        assert_eq!(t.get(0).unwrap().center, better.center);
    }

    #[test]
    fn dissimilar_or_distant_measurements_instantiate() {
        let mut t = SpatialObjectTree::default();
        t.insert_or_associate(&meas(1.0, 1.0, &[1.0, 0.0], 0.9), 0.02, 0.9).unwrap();
        let other_shape = t.insert_or_associate(&meas(1.0, 1.0, &[0.0, 1.0], 0.9), 0.02, 0.9).unwrap();
        assert_eq!(other_shape, AssociationOutcome::Instantiated { id: 1 });
        let far = t.insert_or_associate(&meas(1.05, 1.0, &[1.0, 0.0], 0.9), 0.02, 0.9).unwrap();
        assert_eq!(far, AssociationOutcome::Instantiated { id: 2 });
        assert_eq!(t.all_objects().len(), 3);
        assert_eq!(t.query_neighborhood(&Point3::new(1.0, 1.0, 0.0)).len(), 3);
    }

    #[test]
    fn association_tie_breaks_by_distance_then_id() {
        let mut t = SpatialObjectTree::default();
        t.insert_or_associate(&meas(0.0, 0.0, &[1.0], 0.99), 0.05, 0.9).unwrap();
        // Same code, instantiated because distance exceeds 0.05 at insert time.
        t.insert_or_associate(&meas(0.06, 0.0, &[1.0], 0.99), 0.05, 0.9).unwrap();
        let out = t.insert_or_associate(&meas(0.035, 0.0, &[1.0], 0.1), 0.05, 0.9).unwrap();
        assert_eq!(out, AssociationOutcome::Associated { id: 1, updated: false });
        let out = t.insert_or_associate(&meas(0.03, 0.0, &[1.0], 0.1), 0.05, 0.9).unwrap();
        assert_eq!(out, AssociationOutcome::Associated { id: 0, updated: false });
    }

    #[test]
    fn gap_clipping_keeps_nodes_disjoint() {
        let mut t = SpatialObjectTree::new(TreeConfig { interval_length: 1.0, neighbor_margin: 0.0 });
        t.insert_or_associate(&meas(0.0, 0.0, &[1.0], 0.9), 0.02, 0.9).unwrap();
        t.insert_or_associate(&meas(1.4, 0.0, &[1.0], 0.9), 0.02, 0.9).unwrap();
        // 0.7 sits in the gap (0.5, 0.9); its node is clipped to that gap.
        t.insert_or_associate(&meas(0.7, 0.0, &[1.0], 0.9), 0.02, 0.9).unwrap();
        let node = t.x_tree().node(t.x_tree().locate(0.7).unwrap());
        assert!(node.lo > 0.5 && node.hi < 0.9);
        assert!(node.hi - node.lo < 1.0);
        t.check_invariants().unwrap();
        // A coordinate exactly on a node's upper bound belongs to that node.
        let first = t.x_tree().locate(0.0).unwrap();
        assert_eq!(t.x_tree().locate(0.5), Some(first));
    }

    #[test]
    fn update_relocates_object_across_nodes() {
        let mut t = SpatialObjectTree::new(TreeConfig { interval_length: 0.04, neighbor_margin: 0.05 });
        t.insert_or_associate(&meas(0.0, 0.0, &[1.0], 0.5), 0.05, 0.9).unwrap();
        let out = t.insert_or_associate(&meas(0.03, 0.0, &[1.0], 0.9), 0.05, 0.9).unwrap();
        assert_eq!(out, AssociationOutcome::Associated { id: 0, updated: true });
        t.check_invariants().unwrap();
        let strict = SpatialObjectTree::new(TreeConfig { interval_length: 0.04, neighbor_margin: 0.0 });
        let mut t2 = SpatialObjectTree { config: strict.config, ..t.clone() };
        assert_eq!(t2.query_neighborhood(&Point3::new(0.03, 0.0, 0.0)).len(), 1);
        assert!(t2.query_neighborhood(&Point3::new(0.0, 0.0, 0.0)).is_empty());
        t2.mark_changed(0);
    }

    #[test]
    fn margin_widens_queries_to_adjacent_nodes() {
        let cfg = TreeConfig { interval_length: 1.0, neighbor_margin: 0.3 };
        let mut t = SpatialObjectTree::new(cfg);
        t.insert_or_associate(&meas(0.0, 0.0, &[1.0], 0.9), 0.02, 0.9).unwrap();
        t.insert_or_associate(&meas(1.2, 0.0, &[1.0], 0.9), 0.02, 0.9).unwrap();
        assert_eq!(t.query_neighborhood(&Point3::new(0.45, 0.0, 0.0)).len(), 2);
        let restored = SpatialObjectTree::from_json(&t.to_json()).unwrap();
        assert_eq!(restored, t);
    }

    #[test]
    fn non_finite_measurement_is_rejected() {
        let mut t = SpatialObjectTree::default();
        let bad = meas(f64::NAN, 0.0, &[1.0], 0.9);
        assert!(t.insert_or_associate(&bad, 0.02, 0.9).is_err());
        assert!(t.is_empty());
    }

    #[test]
    fn corrupted_dump_is_rejected() {
        let mut t = SpatialObjectTree::default();
        t.insert_or_associate(&meas(0.0, 0.0, &[1.0], 0.9), 0.02, 0.9).unwrap();
        let json = t.to_json().replace("\"lo\": -0.6", "\"lo\": 0.5");
        assert!(SpatialObjectTree::from_json(&json).is_err());
    }
}
