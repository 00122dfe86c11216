//! Seeded synthetic stand-in for a trained category-level shape encoder.
//!
//! Each library shape has a canonical unit-norm, non-negative, sparse code and
//! a geometric body used for visibility and partial point clouds. Several
//! shapes share one body template, so equal bodies do not imply equal codes
//! (the descriptor captures more than the coarse body).

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cosine_slices;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, RigidTransform, Vector3};
use crate::rng::{derive_seed, seeded_rng};
use crate::types::{Measurement, Session, ShapeCode, DEFAULT_CODE_LEN};

const MAX_REJECTION_ATTEMPTS: u64 = 1_000_000;

/// Object body in its local frame: z up, origin at the body center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
    Superellipsoid { radii: [f64; 3], exponent: f64 },
}

impl Primitive {
    pub fn half_height(&self) -> f64 {
        match *self {
            Primitive::Box { half_extents } => half_extents[2],
            Primitive::Cylinder { half_height, .. } => half_height,
            Primitive::Superellipsoid { radii, .. } => radii[2],
        }
    }

    /// Radius of the smallest vertical cylinder around the body.
    pub fn footprint_radius(&self) -> f64 {
        match *self {
            Primitive::Box { half_extents } => half_extents[0].hypot(half_extents[1]),
            Primitive::Cylinder { radius, .. } => radius,
            Primitive::Superellipsoid { radii, .. } => radii[0].max(radii[1]),
        }
    }

    /// Indicator occupancy in the local frame.
    pub fn contains(&self, p: &Point3) -> bool {
        match *self {
            Primitive::Box { half_extents } => {
                (0..3).all(|i| p[i].abs() <= half_extents[i])
            }
            Primitive::Cylinder { radius, half_height } => {
                p.x.hypot(p.y) <= radius && p.z.abs() <= half_height
            }
            Primitive::Superellipsoid { radii, exponent } => {
                (0..3).map(|i| (p[i] / radii[i]).abs().powf(exponent)).sum::<f64>() <= 1.0
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match *self {
            Primitive::Box { half_extents } => half_extents.to_vec(),
            Primitive::Cylinder { radius, half_height } => vec![radius, half_height],
            Primitive::Superellipsoid { radii, exponent } => {
                if !(exponent >= 1.0 && exponent.is_finite()) {
                    return Err(invalid("superellipsoid exponent must be >= 1"));
                }
                radii.to_vec()
            }
        };
        if dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(invalid("primitive extents must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub shape_id: u32,
    pub code: ShapeCode,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShapeLibrary {
    pub shapes: Vec<ShapeEntry>,
    pub max_pairwise_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibraryConfig {
    pub n_shapes: usize,
    pub k: usize,
    pub max_pairwise_similarity: f64,
    /// Number of non-zero entries in each canonical code.
    pub active_entries: usize,
    /// Number of distinct body geometries shared among the shapes.
    pub body_templates: usize,
    pub seed: u64,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            n_shapes: 20,
            k: DEFAULT_CODE_LEN,
            max_pairwise_similarity: 0.8,
            active_entries: 16,
            body_templates: 4,
            seed: 0,
        }
    }
}

/// Viewing conditions for one synthetic observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewContext {
    pub camera_pose: RigidTransform,
    pub occlusion_fraction: f64,
    pub distance: f64,
}

/// Descriptor noise parameters of the synthetic observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptorNoise {
    pub sigma_code: f64,
    /// Growth of code variance with occlusion.
    pub beta: f64,
    /// Per-axis standard deviation of the recovered center, meters.
    pub sigma_center: f64,
    pub q_max: f64,
    /// Quality loss per unit occlusion.
    pub gamma: f64,
}

impl Default for DescriptorNoise {
    fn default() -> Self {
        Self {
            sigma_code: 0.02,
            beta: 3.0,
            sigma_center: 0.002,
            q_max: 0.95,
            gamma: 0.5,
        }
    }
}

impl DescriptorNoise {
    pub fn noiseless() -> Self {
        Self {
            sigma_code: 0.0,
            sigma_center: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_code, self.beta, self.sigma_center, self.gamma];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("descriptor noise parameters must be finite and >= 0"));
        }
        if !(self.q_max > 0.0 && self.q_max <= 1.0) {
            return Err(invalid("q_max must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl SyntheticShapeLibrary {
    pub fn get(&self, shape_id: u32) -> Option<&ShapeEntry> {
        self.shapes.iter().find(|s| s.shape_id == shape_id)
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn k(&self) -> usize {
        self.shapes.first().map_or(0, |s| s.code.len())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.shapes.iter().map(|s| s.shape_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.shapes.len() {
            return Err(invalid("duplicate shape ids in library"));
        }
        let k = self.k();
        for s in &self.shapes {
            s.primitive.validate()?;
            if s.code.len() != k {
                return Err(invalid("library codes differ in length"));
            }
            if (s.code.norm() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("code of shape {} is not unit-norm", s.shape_id)));
            }
        }
        for (i, a) in self.shapes.iter().enumerate() {
            for b in &self.shapes[i + 1..] {
                let sim = cosine_slices(a.code.values(), b.code.values())?;
                if sim > self.max_pairwise_similarity {
                    return Err(invalid(format!(
                        "shapes {} and {} have similarity {sim:.4} above {}",
                        a.shape_id, b.shape_id, self.max_pairwise_similarity
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lib: Self =
            serde_json::from_str(text).map_err(|e| invalid(format!("library JSON: {e}")))?;
        lib.validate()?;
        Ok(lib)
    }
}

/// Library with default sparsity and body-template settings.
pub fn generate_shape_library(
    n_shapes: usize,
    k: usize,
    max_pairwise_similarity: f64,
    seed: u64,
) -> Result<SyntheticShapeLibrary> {
    generate_shape_library_with(&LibraryConfig {
        n_shapes,
        k,
        max_pairwise_similarity,
        seed,
        ..LibraryConfig::default()
    })
}

fn random_body(rng: &mut impl Rng, template: usize) -> Primitive {
    let half_height = rng.random_range(0.04..0.06);
    match template % 3 {
        0 => Primitive::Cylinder {
            radius: rng.random_range(0.035..0.05),
            half_height,
        },
        1 => {
            let hx = rng.random_range(0.03..0.042);
            Primitive::Box {
                half_extents: [hx, rng.random_range(0.03..0.042), half_height],
            }
        }
        _ => Primitive::Superellipsoid {
            radii: [
                rng.random_range(0.035..0.05),
                rng.random_range(0.035..0.05),
                half_height,
            ],
            exponent: rng.random_range(2.5..4.0),
        },
    }
}

pub fn generate_shape_library_with(cfg: &LibraryConfig) -> Result<SyntheticShapeLibrary> {
    if cfg.n_shapes == 0 {
        return Err(invalid("library needs at least one shape"));
    }
    if cfg.k == 0 {
        return Err(invalid("code length k must be positive"));
    }
    if !(cfg.max_pairwise_similarity > 0.0 && cfg.max_pairwise_similarity < 1.0) {
        return Err(invalid("max_pairwise_similarity must lie in (0, 1)"));
    }
    let templates = cfg.body_templates.max(1);
    let active = cfg.active_entries.clamp(1, cfg.k);

    let mut body_rng = seeded_rng(derive_seed(cfg.seed, "library-bodies", 0));
    let bodies: Vec<Primitive> = (0..templates).map(|t| random_body(&mut body_rng, t)).collect();

    let mut rng = seeded_rng(derive_seed(cfg.seed, "library-codes", 0));
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_shapes);
    let mut attempts = 0u64;
    while codes.len() < cfg.n_shapes {
        attempts += 1;
        if attempts > MAX_REJECTION_ATTEMPTS {
            return Err(Error::Capacity(format!(
                "could not draw {} codes with pairwise similarity <= {} (k = {}, {} active entries)",
                cfg.n_shapes, cfg.max_pairwise_similarity, cfg.k, active
            )));
        }
        let mut v = vec![0.0; cfg.k];
        for i in sample(&mut rng, cfg.k, active) {
            v[i] = rng.sample::<f64, _>(StandardNormal).abs();
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let admissible = codes.iter().all(|c| {
            cosine_slices(c, &v).is_ok_and(|s| s <= cfg.max_pairwise_similarity)
        });
        if admissible {
            codes.push(v);
        }
    }

    let shapes = codes
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            Ok(ShapeEntry {
                shape_id: i as u32,
                code: ShapeCode::new(v)?,
                primitive: bodies[i % templates],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticShapeLibrary {
        shapes,
        max_pairwise_similarity: cfg.max_pairwise_similarity,
    })
}

/// Draws one noisy measurement of `shape_id` located at `true_center`.
///
/// The code is `renormalize(max(0, canonical + e))` with isotropic Gaussian
/// `e` whose variance grows linearly with occlusion; the center gets isotropic
/// Gaussian noise; quality drops linearly with occlusion. The result is a pure
/// function of the arguments. Frame index and session default to 0/source.
pub fn synth_observe(
    lib: &SyntheticShapeLibrary,
    shape_id: u32,
    true_center: &Point3,
    view: &ViewContext,
    noise: &DescriptorNoise,
    seed: u64,
) -> Result<Measurement> {
    let entry = lib
        .get(shape_id)
        .ok_or_else(|| invalid(format!("shape {shape_id} is not in the library")))?;
    let occlusion = view.occlusion_fraction.clamp(0.0, 1.0);
    let mut rng = seeded_rng(seed);

    let std = noise.sigma_code * (1.0 + noise.beta * occlusion).sqrt();
    let canonical = entry.code.values();
    let mut values: Vec<f64> = canonical
        .iter()
        .map(|c| (c + std * rng.sample::<f64, _>(StandardNormal)).max(0.0))
        .collect();
    let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|x| *x /= norm);
    } else {
        values = canonical.to_vec();
    }

    let offset = Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ) * noise.sigma_center;

    let quality = (noise.q_max - noise.gamma * occlusion).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(Measurement {
        shape_code: ShapeCode::new(values)?,
        center: true_center + offset,
        quality,
        frame_index: 0,
        session: Session::Source,
    })
}
