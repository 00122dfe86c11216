//! Object-level nearest-neighbor point differencing.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnParams {
    /// Neighbor radius, meters.
    pub d: f64,
    /// Fraction of unmatched points above which an object is changed.
    pub r: f64,
}

impl Default for NnParams {
    fn default() -> Self {
        Self { d: 0.002, r: 0.3 }
    }
}

impl NnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(invalid("nn radius d must be positive"));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(invalid("nn threshold r must lie in (0, 1)"));
        }
        Ok(())
    }
}

type Cell = (i64, i64, i64);

/// Uniform grid over points for fixed-radius neighbor tests.
#[derive(Debug, Clone)]
pub struct SpatialHash {
    cell: f64,
    cells: HashMap<Cell, Vec<Point3>>,
    len: usize,
}

impl SpatialHash {
    pub fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
            len: 0,
        }
    }

    pub fn from_points<'a, I: IntoIterator<Item = &'a Point3>>(cell: f64, points: I) -> Self {
        let mut h = Self::new(cell);
        h.extend(points);
        h
    }

    fn key(&self, p: &Point3) -> Cell {
        (
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        )
    }

    pub fn extend<'a, I: IntoIterator<Item = &'a Point3>>(&mut self, points: I) {
        for p in points {
            let k = self.key(p);
            self.cells.entry(k).or_default().push(*p);
            self.len += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// True when some stored point lies within `radius` of `p`. `radius`
    /// must not exceed the cell size.
    pub fn has_neighbor(&self, p: &Point3, radius: f64) -> bool {
        debug_assert!(radius <= self.cell);
        let (cx, cy, cz) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(pts) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        if pts.iter().any(|s| (p - s).norm() <= radius) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Fraction of `target` points without a reference point within `p.d`.
pub fn unmatched_fraction(target: &PointCloud, reference: &SpatialHash, p: &NnParams) -> Result<f64> {
    if target.is_empty() {
        return Err(invalid("nn comparison needs a non-empty target cloud"));
    }
    if reference.is_empty() {
        return Ok(1.0);
    }
    let missing = target.points.iter().filter(|q| !reference.has_neighbor(q, p.d)).count();
    Ok(missing as f64 / target.len() as f64)
}

/// `(changed, fraction)` for one target cloud against one source cloud.
pub fn nn_changed(target: &PointCloud, source: &PointCloud, p: &NnParams) -> Result<(bool, f64)> {
    p.validate()?;
    let hash = SpatialHash::from_points(p.d, &source.points);
    let fraction = unmatched_fraction(target, &hash, p)?;
    Ok((fraction > p.r, fraction))
}

/// Online baseline: every target object cloud is compared with the fused
/// source map, and every source object's fused cloud with the fused target
/// map once the stream ends. An object is marked changed the first time
/// its fraction exceeds `r`.
#[derive(Debug, Clone)]
pub struct NnBaseline {
    params: NnParams,
    source_map: SpatialHash,
    source_objects: BTreeMap<u64, Vec<Point3>>,
    target_map: SpatialHash,
    changed: BTreeMap<u64, f64>,
}

impl NnBaseline {
    /// `source` holds `(object key, cloud)` pairs from the whole source stream.
    pub fn new<'a, I>(params: NnParams, source: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, &'a PointCloud)>,
    {
        params.validate()?;
        let mut source_map = SpatialHash::new(params.d);
        let mut source_objects: BTreeMap<u64, Vec<Point3>> = BTreeMap::new();
        for (key, cloud) in source {
            source_map.extend(&cloud.points);
            source_objects.entry(key).or_default().extend_from_slice(&cloud.points);
        }
        Ok(Self {
            params,
            source_map,
            source_objects,
            target_map: SpatialHash::new(params.d),
            changed: BTreeMap::new(),
        })
    }

    /// Processes one target object cloud; returns its unmatched fraction.
    pub fn observe(&mut self, key: u64, cloud: &PointCloud) -> Result<f64> {
        self.target_map.extend(&cloud.points);
        if cloud.is_empty() {
            return Ok(0.0);
        }
        let f = unmatched_fraction(cloud, &self.source_map, &self.params)?;
        if f > self.params.r {
            self.changed.entry(key).or_insert(f);
        }
        Ok(f)
    }

    /// Checks source objects against everything the target stream saw.
    pub fn finalize(&mut self) -> Result<()> {
        for (key, pts) in &self.source_objects {
            if pts.is_empty() {
                continue;
            }
            let cloud = PointCloud::world(pts.clone());
            let f = unmatched_fraction(&cloud, &self.target_map, &self.params)?;
            if f > self.params.r {
                self.changed.entry(*key).or_insert(f);
            }
        }
        Ok(())
    }

    /// Keys marked changed with the fraction that first exceeded `r`.
    pub fn changed(&self) -> &BTreeMap<u64, f64> {
        &self.changed
    }
}
