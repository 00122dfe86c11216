//! Training objectives of the shape-consistent descriptor, as pure functions
//! with analytic gradients for numerical verification. No training loop.

use crate::descriptor::cosine_slices;
use crate::error::{invalid, Result};
use crate::types::ShapeCode;

/// Clamp applied to occupancy predictions before taking logarithms.
pub const PREDICTION_EPS: f64 = 1e-7;

/// Weight of the shape term in the combined objective.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Batch of shape codes labeled by object; every object needs two samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    samples: Vec<(u64, ShapeCode)>,
}

impl LabeledBatch {
    pub fn new(samples: Vec<(u64, ShapeCode)>) -> Result<Self> {
        let mut ids: Vec<u64> = samples.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        let mut distinct = 0;
        for group in ids.chunk_by(|a, b| a == b) {
            if group.len() < 2 {
                return Err(invalid(format!(
                    "object {} has a single sample; batch-hard needs a positive",
                    group[0]
                )));
            }
            distinct += 1;
        }
        if distinct < 2 {
            return Err(invalid("batch needs at least two objects to form negatives"));
        }
        let k = samples[0].1.len();
        if samples.iter().any(|(_, c)| c.len() != k) {
            return Err(invalid("batch codes differ in length"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(u64, ShapeCode)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_predictions(predicted: &[f64], truth: &[f64]) -> Result<()> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(invalid(format!(
            "occupancy loss needs equal non-empty lengths (got {} and {})",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(invalid("occupancy labels must be 0 or 1"));
    }
    if predicted.iter().any(|p| !p.is_finite()) {
        return Err(invalid("occupancy predictions must be finite"));
    }
    Ok(())
}

/// Mean binary cross-entropy of clamped predictions.
pub fn occupancy_loss(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    check_predictions(predicted, truth)?;
    let sum: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, v)| {
            let p = p.clamp(PREDICTION_EPS, 1.0 - PREDICTION_EPS);
            -(v * p.ln() + (1.0 - v) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / predicted.len() as f64)
}

/// d(occupancy_loss)/d(prediction_i). Zero where the clamp is active.
pub fn occupancy_loss_grad(predicted: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_predictions(predicted, truth)?;
    let n = predicted.len() as f64;
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(&p, &v)| {
            if p <= PREDICTION_EPS || p >= 1.0 - PREDICTION_EPS {
                0.0
            } else {
                (-v / p + (1.0 - v) / (1.0 - p)) / n
            }
        })
        .collect())
}

/// `-D(anchor, positive) + D(anchor, negative)` with cosine similarity `D`.
pub fn triplet_shape_loss(anchor: &ShapeCode, positive: &ShapeCode, negative: &ShapeCode) -> Result<f64> {
    triplet_raw(anchor.values(), positive.values(), negative.values())
}

fn triplet_raw(a: &[f64], p: &[f64], n: &[f64]) -> Result<f64> {
    Ok(-cosine_slices(a, p)? + cosine_slices(a, n)?)
}

/// Gradient of the cosine similarity with respect to both arguments.
fn cosine_grad(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let inv = 1.0 / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y * inv - dot * x * inv / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x * inv - dot * y * inv / (nb * nb))
        .collect();
    (ga, gb)
}

/// Gradients of the triplet loss with respect to anchor, positive, negative.
pub fn triplet_shape_loss_grad(
    anchor: &ShapeCode,
    positive: &ShapeCode,
    negative: &ShapeCode,
) -> Result<[Vec<f64>; 3]> {
    triplet_raw(anchor.values(), positive.values(), negative.values())?;
    let (ga_p, gp) = cosine_grad(anchor.values(), positive.values());
    let (ga_n, gn) = cosine_grad(anchor.values(), negative.values());
    let ga = ga_p.iter().zip(&ga_n).map(|(x, y)| -x + y).collect();
    Ok([ga, gp.iter().map(|x| -x).collect(), gn])
}

/// Hardest positive and negative for each anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HardPair {
    positive: usize,
    negative: usize,
    pos_sim: f64,
    neg_sim: f64,
    /// Another candidate ties the selected extremum within `TIE_TOL`.
    tied: bool,
}

const TIE_TOL: f64 = 1e-9;

fn hard_pairs(codes: &[&[f64]], ids: &[u64]) -> Result<Vec<HardPair>> {
    let n = codes.len();
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = cosine_slices(codes[i], codes[j])?;
            sims[i * n + j] = s;
            sims[j * n + i] = s;
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        let (mut pos_tied, mut neg_tied) = (false, false);
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = sims[i * n + j];
            if ids[j] == ids[i] {
                match pos {
                    Some((_, best)) if (s - best).abs() <= TIE_TOL => pos_tied = true,
                    Some((_, best)) if s > best => {}
                    _ => {
                        pos = Some((j, s));
                        pos_tied = false;
                    }
                }
            } else {
                match neg {
                    Some((_, best)) if (s - best).abs() <= TIE_TOL => neg_tied = true,
                    Some((_, best)) if s < best => {}
                    _ => {
                        neg = Some((j, s));
                        neg_tied = false;
                    }
                }
            }
        }
        let tied = pos_tied || neg_tied;
        let ((positive, pos_sim), (negative, neg_sim)) = match (pos, neg) {
            (Some(p), Some(q)) => (p, q),
            _ => return Err(invalid("batch lacks a positive or a negative")),
        };
        out.push(HardPair { positive, negative, pos_sim, neg_sim, tied });
    }
    Ok(out)
}

/// Batch-hard loss: every sample is an anchor paired with its least similar
/// same-object sample (excluding itself) and its most similar other-object
/// sample; the terms are averaged over the batch.
pub fn batch_hard_loss(batch: &LabeledBatch) -> Result<f64> {
    let (codes, ids) = split(batch);
    let pairs = hard_pairs(&codes, &ids)?;
    Ok(pairs.iter().map(|p| -p.pos_sim + p.neg_sim).sum::<f64>() / batch.len() as f64)
}

fn split(batch: &LabeledBatch) -> (Vec<&[f64]>, Vec<u64>) {
    batch
        .samples()
        .iter()
        .map(|(id, c)| (c.values(), *id))
        .unzip()
}

/// Gradient of the batch-hard loss with respect to every sample code, or
/// `None` at a tie, where the loss is not differentiable.
pub fn batch_hard_loss_grad(batch: &LabeledBatch) -> Result<Option<Vec<Vec<f64>>>> {
    let (codes, ids) = split(batch);
    let pairs = hard_pairs(&codes, &ids)?;
    if pairs.iter().any(|p| p.tied) {
        return Ok(None);
    }
    let scale = 1.0 / batch.len() as f64;
    let k = codes[0].len();
    let mut grads = vec![vec![0.0; k]; codes.len()];
    for (i, p) in pairs.iter().enumerate() {
        let (ga, gp) = cosine_grad(codes[i], codes[p.positive]);
        let (gb, gn) = cosine_grad(codes[i], codes[p.negative]);
        for d in 0..k {
            grads[i][d] += scale * (-ga[d] + gb[d]);
            grads[p.positive][d] -= scale * gp[d];
            grads[p.negative][d] += scale * gn[d];
        }
    }
    Ok(Some(grads))
}

pub fn combined_loss(l_occ: f64, l_shape: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(invalid("alpha must be non-negative"));
    }
    Ok(l_occ + alpha * l_shape)
}

/// Inputs for [`loss_gradient_check`].
#[derive(Debug, Clone)]
pub enum LossInput {
    Occupancy { predicted: Vec<f64>, truth: Vec<f64> },
    Triplet { anchor: ShapeCode, positive: ShapeCode, negative: ShapeCode },
    BatchHard(LabeledBatch),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_relative_error: f64,
    /// Set when the loss is not differentiable at the point or a
    /// finite-difference step changes a batch-hard selection.
    pub skipped: bool,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central finite differences over a flat parameter vector.
fn numeric_grad<F>(params: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = params.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let down = f(&x)?;
        x[i] = orig;
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Compares analytic partial derivatives against central finite differences
/// with step `h`.
pub fn loss_gradient_check(input: &LossInput, h: f64) -> Result<GradientCheck> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(invalid("finite-difference step must lie in (0, 1e-3]"));
    }
    let max_relative_error = match input {
        LossInput::Occupancy { predicted, truth } => {
            let analytic = occupancy_loss_grad(predicted, truth)?;
            let numeric = numeric_grad(predicted, h, |p| occupancy_loss(p, truth))?;
            max_rel(&analytic, &numeric)
        }
        LossInput::Triplet { anchor, positive, negative } => {
            let k = anchor.len();
            let analytic: Vec<f64> = triplet_shape_loss_grad(anchor, positive, negative)?
                .concat();
            let flat = [anchor.values(), positive.values(), negative.values()].concat();
            let numeric = numeric_grad(&flat, h, |x| {
                triplet_raw(&x[..k], &x[k..2 * k], &x[2 * k..])
            })?;
            max_rel(&analytic, &numeric)
        }
        LossInput::BatchHard(batch) => {
            let Some(analytic) = batch_hard_loss_grad(batch)? else {
                return Ok(GradientCheck { max_relative_error: 0.0, skipped: true });
            };
            let ids: Vec<u64> = batch.samples().iter().map(|(id, _)| *id).collect();
            let k = batch.samples()[0].1.len();
            let (codes, _) = split(batch);
            let selection = |pairs: &[HardPair]| -> Vec<(usize, usize)> {
                pairs.iter().map(|p| (p.positive, p.negative)).collect()
            };
            let base = selection(&hard_pairs(&codes, &ids)?);
            let mut switched = false;
            let flat: Vec<f64> = batch.samples().iter().flat_map(|(_, c)| c.values().to_vec()).collect();
            let numeric = numeric_grad(&flat, h, |x| {
                let codes: Vec<&[f64]> = x.chunks(k).collect();
                let pairs = hard_pairs(&codes, &ids)?;
                switched |= selection(&pairs) != base;
                Ok(pairs.iter().map(|p| -p.pos_sim + p.neg_sim).sum::<f64>() / ids.len() as f64)
            })?;
            if switched {
                return Ok(GradientCheck { max_relative_error: 0.0, skipped: true });
            }
            max_rel(&analytic.concat(), &numeric)
        }
    };
    Ok(GradientCheck { max_relative_error, skipped: false })
}
