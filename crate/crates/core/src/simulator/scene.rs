//! Multi-table scenes and injected changes with ground-truth labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::SyntheticShapeLibrary;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::rng::{derive_seed, seeded_rng};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// How default table centers are arranged.
///
/// `Diagonal` puts table `i` at `(i, i) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TableLayout {
    Diagonal,
    Grid { columns: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_tables: usize,
    pub layout: TableLayout,
    /// Step between neighbouring tables along each axis.
    pub table_spacing: f64,
    pub table_height: f64,
    /// Objects are placed inside this radius around the table center.
    pub placement_radius: f64,
    /// Inclusive range of objects per table.
    pub objects_per_table: [usize; 2],
    /// Optional inclusive range for the scene total.
    pub total_objects: Option<[usize; 2]>,
    /// Minimum distance between object centers on a table.
    pub min_spacing: f64,
    /// Explicit table surface centers; overrides the grid layout.
    pub table_positions: Option<Vec<Point3>>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_tables: 8,
            layout: TableLayout::Diagonal,
            table_spacing: 2.5,
            table_height: 0.75,
            placement_radius: 0.25,
            objects_per_table: [3, 5],
            total_objects: None,
            min_spacing: 0.15,
            table_positions: None,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = &self.table_positions {
            if pos.len() != self.n_tables {
                return Err(invalid("table_positions must list one position per table"));
            }
            if pos.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
                return Err(invalid("table positions must be finite"));
            }
        }
        if self.n_tables == 0 || self.layout == (TableLayout::Grid { columns: 0 }) {
            return Err(invalid("scene needs at least one table and one grid column"));
        }
        let [lo, hi] = self.objects_per_table;
        if lo > hi {
            return Err(invalid("objects_per_table range is empty"));
        }
        if let Some([a, b]) = self.total_objects {
            if a > b || b < lo * self.n_tables || a > hi * self.n_tables {
                return Err(invalid("total_objects range is unreachable"));
            }
        }
        if !(self.placement_radius >= 0.0) || !(self.min_spacing >= 0.08) {
            return Err(invalid("placement radius must be >= 0 and min_spacing >= 0.08"));
        }
        if !(self.table_spacing > 0.0) || !self.table_height.is_finite() {
            return Err(invalid("table spacing must be positive and height finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub index: usize,
    /// Center of the table surface.
    pub center: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub gt_id: u64,
    pub shape_id: u32,
    pub table: usize,
    /// Body center in the world frame.
    pub position: Point3,
    /// Rotation about the vertical axis, radians.
    pub yaw: f64,
}

impl SceneObject {
    /// Body-to-world transform.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::z(), self.yaw, self.position.coords)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub tables: Vec<Table>,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn object(&self, gt_id: u64) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.gt_id == gt_id)
    }

    /// Objects on `table`, ordered by ground-truth id.
    pub fn objects_on(&self, table: usize) -> Vec<&SceneObject> {
        let mut v: Vec<_> = self.objects.iter().filter(|o| o.table == table).collect();
        v.sort_by_key(|o| o.gt_id);
        v
    }

    fn next_gt_id(&self) -> u64 {
        self.objects.iter().map(|o| o.gt_id + 1).max().unwrap_or(0)
    }

    /// Smallest center distance between two objects on the same table.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.table == b.table {
                    let d = (a.position - b.position).norm();
                    best = Some(best.map_or(d, |x: f64| x.min(d)));
                }
            }
        }
        best
    }
}

fn table_centers(cfg: &SceneConfig) -> Vec<Point3> {
    if let Some(p) = &cfg.table_positions {
        return p.clone();
    }
    (0..cfg.n_tables)
        .map(|i| {
            let (row, col) = match cfg.layout {
                TableLayout::Diagonal => (i, i),
                TableLayout::Grid { columns } => (i / columns, i % columns),
            };
            Point3::new(col as f64 * cfg.table_spacing, row as f64 * cfg.table_spacing, cfg.table_height)
        })
        .collect()
}

fn body_center(lib: &SyntheticShapeLibrary, shape_id: u32, table: &Table, x: f64, y: f64) -> Result<Point3> {
    let entry = lib
        .get(shape_id)
        .ok_or_else(|| invalid(format!("shape {shape_id} is not in the library")))?;
    Ok(Point3::new(x, y, table.center.z + entry.primitive.half_height()))
}

/// Draws a free spot on `table` at least `min_spacing` from every other
/// object there and, when `away_from` is set, at least that far from a point.
fn free_spot(
    rng: &mut impl Rng,
    scene: &Scene,
    table: &Table,
    radius: f64,
    min_spacing: f64,
    skip: Option<u64>,
    away_from: Option<(Point3, f64)>,
) -> Option<(f64, f64)> {
    let others: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| o.table == table.index && Some(o.gt_id) != skip)
        .collect();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let r = radius * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (x, y) = (table.center.x + r * phi.cos(), table.center.y + r * phi.sin());
        let spaced = others
            .iter()
            .all(|o| (o.position.x - x).hypot(o.position.y - y) >= min_spacing);
        let far = away_from.is_none_or(|(p, d)| (p.x - x).hypot(p.y - y) >= d);
        if spaced && far {
            return Some((x, y));
        }
    }
    None
}

/// Places objects around each table. Shapes are distinct within a table.
pub fn generate_scene(cfg: &SceneConfig, lib: &SyntheticShapeLibrary) -> Result<Scene> {
    cfg.validate()?;
    let [lo, hi] = cfg.objects_per_table;
    if hi > lib.len() {
        return Err(invalid("a table cannot hold more distinct shapes than the library has"));
    }
    let tables: Vec<Table> = table_centers(cfg)
        .into_iter()
        .enumerate()
        .map(|(index, center)| Table { index, center })
        .collect();

    let mut rng = seeded_rng(derive_seed(cfg.seed, "scene-counts", 0));
    let counts = loop {
        let counts: Vec<usize> = (0..cfg.n_tables).map(|_| rng.random_range(lo..=hi)).collect();
        let total: usize = counts.iter().sum();
        if cfg.total_objects.is_none_or(|[a, b]| (a..=b).contains(&total)) {
            break counts;
        }
    };

    let mut scene = Scene { tables: tables.clone(), objects: Vec::new() };
    for (t, table) in tables.iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(cfg.seed, "scene-table", t as u64));
        let mut shapes: Vec<u32> = (0..lib.len() as u32).collect();
        shapes.shuffle(&mut rng);
        for &shape_id in &shapes[..counts[t]] {
            let (x, y) = free_spot(&mut rng, &scene, table, cfg.placement_radius, cfg.min_spacing, None, None)
                .ok_or_else(|| {
                    Error::Capacity(format!(
                        "table {t}: no free spot after {MAX_PLACEMENT_ATTEMPTS} attempts"
                    ))
                })?;
            let gt_id = scene.next_gt_id();
            scene.objects.push(SceneObject {
                gt_id,
                shape_id,
                table: t,
                position: body_center(lib, shape_id, table, x, y)?,
                yaw: rng.random_range(0.0..std::f64::consts::TAU),
            });
        }
    }
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtLabel {
    Unchanged,
    Added,
    Removed,
    Moved,
}

impl GtLabel {
    pub fn is_changed(self) -> bool {
        self != GtLabel::Unchanged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Add,
    Remove,
    Move,
    Swap,
}

/// One injected change. Object indices refer to the table's objects ordered
/// by ground-truth id; unset choices are drawn from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeOp {
    pub kind: ChangeKind,
    pub table: usize,
    #[serde(default)]
    pub object: Option<usize>,
    /// Second object of a swap.
    #[serde(default)]
    pub other: Option<usize>,
    /// Shape of an added object.
    #[serde(default)]
    pub shape_id: Option<u32>,
    /// Destination table of a move; defaults to the same table.
    #[serde(default)]
    pub to_table: Option<usize>,
    #[serde(default = "default_min_displacement")]
    pub min_displacement: f64,
}

fn default_min_displacement() -> f64 {
    0.1
}

impl ChangeOp {
    pub fn new(kind: ChangeKind, table: usize) -> Self {
        Self {
            kind,
            table,
            object: None,
            other: None,
            shape_id: None,
            to_table: None,
            min_displacement: default_min_displacement(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub changes: Vec<ChangeOp>,
}

impl ChangeSpec {
    /// Twelve changed objects over eight tables.
    pub fn twelve_changes() -> Self {
        use ChangeKind::*;
        let ops = [
            (Add, 0),
            (Remove, 1),
            (Move, 2),
            (Add, 2),
            (Remove, 3),
            (Move, 4),
            (Swap, 5),
            (Swap, 6),
            (Add, 7),
            (Remove, 7),
        ];
        Self {
            changes: ops.iter().map(|&(k, t)| ChangeOp::new(k, t)).collect(),
        }
    }

    /// Number of objects the spec changes.
    pub fn changed_objects(&self) -> usize {
        self.changes
            .iter()
            .map(|c| if c.kind == ChangeKind::Swap { 2 } else { 1 })
            .sum()
    }
}

fn body_template_key(lib: &SyntheticShapeLibrary, shape_id: u32) -> Option<String> {
    lib.get(shape_id).map(|e| format!("{:?}", e.primitive))
}

/// Applies `spec` in order and labels every object of the source and target
/// scenes. Swaps exchange the poses of two objects with identical bodies
/// when the table has such a pair.
pub fn apply_changes(
    scene: &Scene,
    spec: &ChangeSpec,
    lib: &SyntheticShapeLibrary,
    min_spacing: f64,
    placement_radius: f64,
    seed: u64,
) -> Result<(Scene, BTreeMap<u64, GtLabel>)> {
    let mut out = scene.clone();
    let mut labels: BTreeMap<u64, GtLabel> =
        scene.objects.iter().map(|o| (o.gt_id, GtLabel::Unchanged)).collect();

    for (n, op) in spec.changes.iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(seed, "changes", n as u64));
        let table = *out
            .tables
            .get(op.table)
            .ok_or_else(|| invalid(format!("change {n}: table {} does not exist", op.table)))?;
        let on_table: Vec<SceneObject> = out
            .objects_on(op.table)
            .into_iter()
            .filter(|o| labels.get(&o.gt_id).is_none_or(|l| *l == GtLabel::Unchanged))
            .copied()
            .collect();
        let pick = |idx: Option<usize>, rng: &mut rand_chacha::ChaCha8Rng| -> Result<SceneObject> {
            if on_table.is_empty() {
                return Err(Error::Placement(format!("change {n}: table {} has no unchanged object", op.table)));
            }
            let i = match idx {
                Some(i) => i,
                None => rng.random_range(0..on_table.len()),
            };
            on_table
                .get(i)
                .copied()
                .ok_or_else(|| invalid(format!("change {n}: object index {i} out of range")))
        };

        match op.kind {
            ChangeKind::Add => {
                let present: BTreeSet<u32> = out.objects_on(op.table).iter().map(|o| o.shape_id).collect();
                let shape_id = match op.shape_id {
                    Some(s) => s,
                    None => {
                        let free: Vec<u32> = (0..lib.len() as u32).filter(|s| !present.contains(s)).collect();
                        *free
                            .get(rng.random_range(0..free.len().max(1)))
                            .ok_or_else(|| Error::Placement(format!("change {n}: no unused shape")))?
                    }
                };
                let (x, y) = free_spot(&mut rng, &out, &table, placement_radius, min_spacing, None, None)
                    .ok_or_else(|| Error::Placement(format!("change {n}: no free spot for an added object")))?;
                let gt_id = out.next_gt_id().max(scene.next_gt_id());
                out.objects.push(SceneObject {
                    gt_id,
                    shape_id,
                    table: op.table,
                    position: body_center(lib, shape_id, &table, x, y)?,
                    yaw: rng.random_range(0.0..std::f64::consts::TAU),
                });
                labels.insert(gt_id, GtLabel::Added);
            }
            ChangeKind::Remove => {
                let victim = pick(op.object, &mut rng)?;
                out.objects.retain(|o| o.gt_id != victim.gt_id);
                labels.insert(victim.gt_id, GtLabel::Removed);
            }
            ChangeKind::Move => {
                let obj = pick(op.object, &mut rng)?;
                let dest_index = op.to_table.unwrap_or(op.table);
                let dest = *out
                    .tables
                    .get(dest_index)
                    .ok_or_else(|| invalid(format!("change {n}: table {dest_index} does not exist")))?;
                let (x, y) = free_spot(
                    &mut rng,
                    &out,
                    &dest,
                    placement_radius,
                    min_spacing,
                    Some(obj.gt_id),
                    Some((obj.position, op.min_displacement)),
                )
                .ok_or_else(|| Error::Placement(format!("change {n}: no valid destination for a move")))?;
                let position = body_center(lib, obj.shape_id, &dest, x, y)?;
                let target = out.objects.iter_mut().find(|o| o.gt_id == obj.gt_id).expect("picked object exists");
                target.position = position;
                target.table = dest_index;
                target.yaw = rng.random_range(0.0..std::f64::consts::TAU);
                labels.insert(obj.gt_id, GtLabel::Moved);
            }
            ChangeKind::Swap => {
                let (a, b) = match (op.object, op.other) {
                    (Some(i), Some(j)) => (pick(Some(i), &mut rng)?, pick(Some(j), &mut rng)?),
                    _ => {
                        let mut pairs = Vec::new();
                        let mut fallback = Vec::new();
                        for i in 0..on_table.len() {
                            for j in i + 1..on_table.len() {
                                let same = body_template_key(lib, on_table[i].shape_id)
                                    == body_template_key(lib, on_table[j].shape_id);
                                if same {
                                    pairs.push((i, j));
                                }
                                fallback.push((i, j));
                            }
                        }
                        let pool = if pairs.is_empty() { &fallback } else { &pairs };
                        if pool.is_empty() {
                            return Err(Error::Placement(format!("change {n}: swap needs two unchanged objects")));
                        }
                        let (i, j) = pool[rng.random_range(0..pool.len())];
                        (on_table[i], on_table[j])
                    }
                };
                if a.gt_id == b.gt_id {
                    return Err(invalid(format!("change {n}: swap needs two different objects")));
                }
                if (a.position - b.position).xy().norm() < op.min_displacement {
                    return Err(Error::Placement(format!("change {n}: swapped objects are too close")));
                }
                let pa = body_center(lib, a.shape_id, &table, b.position.x, b.position.y)?;
                let pb = body_center(lib, b.shape_id, &table, a.position.x, a.position.y)?;
                for o in out.objects.iter_mut() {
                    if o.gt_id == a.gt_id {
                        o.position = pa;
                        o.yaw = b.yaw;
                    } else if o.gt_id == b.gt_id {
                        o.position = pb;
                        o.yaw = a.yaw;
                    }
                }
                labels.insert(a.gt_id, GtLabel::Moved);
                labels.insert(b.gt_id, GtLabel::Moved);
            }
        }
    }

    let changed = labels.values().filter(|l| l.is_changed()).count();
    if 2 * changed >= labels.len() {
        return Err(invalid(format!(
            "{changed} of {} objects change; registration needs a static majority",
            labels.len()
        )));
    }
    Ok((out, labels))
}
