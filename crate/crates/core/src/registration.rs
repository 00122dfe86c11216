//! Rough inter-session alignment from shape-matched object centers.

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};

use crate::descriptor::cosine_similarity;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::rng::{derive_seed, seeded_rng};
use crate::types::{ObjectId, ObjectInstance};
use rand::seq::index::sample;

/// Number of correspondences collected before the first registration attempt.
pub const DEFAULT_CORRESPONDENCES: usize = 6;

const SINGULAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source_id: ObjectId,
    pub target_id: ObjectId,
    pub source_center: Point3,
    pub target_center: Point3,
    pub similarity: f64,
}

/// Correspondences from distinct target objects, at most one per target id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
    capacity: usize,
}

impl Default for CorrespondenceSet {
    fn default() -> Self {
        Self::new(DEFAULT_CORRESPONDENCES)
    }
}

impl CorrespondenceSet {
    pub fn new(capacity: usize) -> Self {
        Self {
            pairs: Vec::new(),
            capacity: capacity.max(3),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.pairs.len() >= self.capacity
    }

    pub fn contains_target(&self, id: ObjectId) -> bool {
        self.pairs.iter().any(|p| p.target_id == id)
    }

    /// Adds a pair, or refreshes the centers of an existing pair for the same
    /// target object. Returns true when a new target was added.
    pub fn push(&mut self, c: Correspondence, delta_s: f64) -> Result<bool> {
        if !(c.similarity > delta_s) {
            return Err(invalid("correspondence similarity does not exceed delta_s"));
        }
        if let Some(existing) = self.pairs.iter_mut().find(|p| p.target_id == c.target_id) {
            *existing = c;
            return Ok(false);
        }
        self.pairs.push(c);
        Ok(true)
    }

    pub fn point_pairs(&self) -> Vec<(Point3, Point3)> {
        self.pairs.iter().map(|p| (p.source_center, p.target_center)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Post-transform residual below which a pair is an inlier, meters.
    pub inlier_threshold: f64,
    pub min_sample: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 0.01,
            min_sample: 3,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("ransac iterations must be at least 1"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(invalid("ransac inlier_threshold must be positive"));
        }
        if self.min_sample < 3 {
            return Err(invalid("ransac min_sample must be at least 3"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacResult {
    pub transform: RigidTransform,
    pub inliers: Vec<bool>,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

/// Source object with the highest similarity above `delta_s`; the lowest id
/// wins exact ties.
pub fn best_shape_match<'a, I>(target: &ObjectInstance, sources: I, delta_s: f64) -> Option<(&'a ObjectInstance, f64)>
where
    I: IntoIterator<Item = &'a ObjectInstance>,
{
    let mut best: Option<(&ObjectInstance, f64)> = None;
    for s in sources {
        let Ok(sim) = cosine_similarity(&target.shape_code, &s.shape_code) else {
            continue;
        };
        if sim <= delta_s {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, bs)) => sim > bs || (sim == bs && s.id < b.id),
        };
        if better {
            best = Some((s, sim));
        }
    }
    best
}

/// Least-squares rigid transform mapping each pair's target point onto its
/// source point. Pairs are `(source, target)`.
pub fn estimate_rigid_svd(pairs: &[(Point3, Point3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let mut cs = Vector3::zeros();
    let mut ct = Vector3::zeros();
    for (s, t) in pairs {
        cs += s.coords;
        ct += t.coords;
    }
    cs /= n;
    ct /= n;

    let mut h = Matrix3::zeros();
    for (s, t) in pairs {
        h += (t.coords - ct) * (s.coords - cs).transpose();
    }
    let svd = SVD::new(h, true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(f64::total_cmp);
    let scale = sv[2].max(1.0);
    if sv[0] < SINGULAR_TOL * scale && sv[1] < SINGULAR_TOL * scale {
        return Err(Error::DegenerateGeometry(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = v * correction * u.transpose();
    // Re-orthonormalize against accumulated rounding.
    let r = nearest_rotation(&r);
    let t = cs - r * ct;
    RigidTransform::new(r, t)
}

fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Residual of each pair under `t`, meters.
pub fn residuals(t: &RigidTransform, pairs: &[(Point3, Point3)]) -> Vec<f64> {
    pairs.iter().map(|(s, tp)| (t.apply(tp) - s).norm()).collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Consensus rigid fit. When every minimal subset fits in the iteration
/// budget they are enumerated in lexicographic order; otherwise subsets are
/// drawn from sub-seeds derived from `(seed, iteration)`. The max-inlier model
/// wins, earliest first on ties, and is refit on its inliers.
pub fn ransac_register(pairs: &[(Point3, Point3)], cfg: &RansacConfig) -> Result<RansacResult> {
    cfg.validate()?;
    if pairs.len() < cfg.min_sample {
        return Err(Error::InsufficientData {
            needed: cfg.min_sample,
            got: pairs.len(),
        });
    }
    let n = pairs.len();
    let samples: Vec<Vec<usize>> = if binomial(n, cfg.min_sample) <= cfg.iterations as u128 {
        combinations(n, cfg.min_sample)
    } else {
        (0..cfg.iterations as u64)
            .map(|it| {
                let mut rng = seeded_rng(derive_seed(cfg.seed, "ransac", it));
                let mut s = sample(&mut rng, n, cfg.min_sample).into_vec();
                s.sort_unstable();
                s
            })
            .collect()
    };

    let mut best: Option<(usize, Vec<bool>)> = None;
    for s in &samples {
        let subset: Vec<(Point3, Point3)> = s.iter().map(|&i| pairs[i]).collect();
        let Ok(model) = estimate_rigid_svd(&subset) else {
            continue;
        };
        let mask: Vec<bool> = residuals(&model, pairs)
            .into_iter()
            .map(|r| r < cfg.inlier_threshold)
            .collect();
        let count = mask.iter().filter(|b| **b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, mask));
        }
    }
    let Some((count, mask)) = best else {
        return Err(Error::RegistrationFailed("no non-degenerate minimal sample".into()));
    };
    if count < cfg.min_sample {
        return Err(Error::RegistrationFailed(format!(
            "best consensus has {count} inliers, need {}",
            cfg.min_sample
        )));
    }
    let inlier_pairs: Vec<(Point3, Point3)> = pairs
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect();
    let transform = estimate_rigid_svd(&inlier_pairs)
        .map_err(|e| Error::RegistrationFailed(format!("refit failed: {e}")))?;
    Ok(RansacResult {
        transform,
        inliers: mask,
    })
}
