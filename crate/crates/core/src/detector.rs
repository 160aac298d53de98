//! Linear detector training with hard-negative mining, latent
//! re-localization, and localization/detection metrics.
//!
//! The detector is an L2-regularized linear hinge classifier over unit
//! feature vectors, trained by full-batch subgradient descent that accepts
//! only improving steps (backtracking halving), so the objective never goes
//! up and the result is deterministic. Negatives are mined from negatively
//! labeled images until no violators remain; positives can be mined as the
//! per-image argmax and refined over latent re-localization rounds.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureVector, ImageId, PatchId};
use crate::geom::{iou, BBox};

/// Linear scoring model `w · x̂ + bias` over unit-normalized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize, lambda: f64) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Score a raw feature vector (normalized internally; zero vectors score
    /// at the bias).
    pub fn score(&self, feature: &FeatureVector) -> f64 {
        match feature.normalized() {
            Some(unit) => dot(&self.weights, &unit) + self.bias,
            None => self.bias,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// On-disk model shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl From<&LinearModel> for ModelFile {
    fn from(m: &LinearModel) -> Self {
        ModelFile {
            dim: m.dim(),
            weights: m.weights.clone(),
            bias: m.bias,
            lambda: m.lambda,
        }
    }
}

impl TryFrom<ModelFile> for LinearModel {
    type Error = Error;
    fn try_from(f: ModelFile) -> Result<Self> {
        if f.weights.len() != f.dim {
            return Err(Error::DimensionMismatch {
                left: f.weights.len(),
                right: f.dim,
            });
        }
        Ok(LinearModel {
            weights: f.weights,
            bias: f.bias,
            lambda: f.lambda,
        })
    }
}

/// Where a training example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleSource {
    ForegroundEstimate,
    HardNegative,
    MinedNegative,
    MinedPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub image_id: ImageId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub feature: FeatureVector,
    pub source: ExampleSource,
    /// Present when the example is (or proxies through) a dataset patch.
    pub patch_id: Option<PatchId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub positives: Vec<TrainingExample>,
    pub negatives: Vec<TrainingExample>,
}

impl TrainingSet {
    /// Positive and negative patch ids must not overlap.
    pub fn validate(&self) -> Result<()> {
        let pos: BTreeSet<PatchId> = self.positives.iter().filter_map(|e| e.patch_id).collect();
        for e in &self.negatives {
            if let Some(id) = e.patch_id {
                if pos.contains(&id) {
                    return Err(Error::Malformed(format!(
                        "patch {} appears as both positive and negative",
                        id.0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Objective trace of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub epochs_run: usize,
    pub train_accuracy: f64,
}

/// Regularized mean hinge loss: `λ/2 · ‖w‖² + mean(max(0, 1 − y·score))`.
/// The bias is unregularized.
fn objective(w: &[f64], b: f64, lambda: f64, xs: &[(Vec<f64>, f64)]) -> f64 {
    let reg = 0.5 * lambda * dot(w, w);
    let hinge: f64 = xs
        .iter()
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum::<f64>()
        / xs.len() as f64;
    reg + hinge
}

/// Train by full-batch subgradient descent with backtracking halving: a step
/// is taken only if it lowers the objective, so the final objective never
/// exceeds the initial one. The zero initialization makes the run
/// deterministic; `seed` is accepted for interface stability and unused.
pub fn train_svm(
    ts: &TrainingSet,
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<(LinearModel, TrainReport)> {
    let _ = seed;
    ts.validate()?;
    if ts.positives.is_empty() {
        return Err(Error::EmptyClass("positive"));
    }
    if ts.negatives.is_empty() {
        return Err(Error::EmptyClass("negative"));
    }
    let dim = ts.positives[0].feature.dim();
    let unit = |f: &FeatureVector| f.normalized().unwrap_or_else(|| vec![0.0; dim]);
    let xs: Vec<(Vec<f64>, f64)> = ts
        .positives
        .iter()
        .map(|e| (unit(&e.feature), 1.0))
        .chain(ts.negatives.iter().map(|e| (unit(&e.feature), -1.0)))
        .collect();
    for (x, _) in &xs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                left: x.len(),
                right: dim,
            });
        }
    }

    let n = xs.len() as f64;
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut cur = objective(&w, b, lambda, &xs);
    let initial = cur;
    if !cur.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    let mut eta = 1.0f64;
    let mut epochs_run = 0;
    for _ in 0..epochs {
        // Subgradient at the current point.
        let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let mut gb = 0.0f64;
        for (x, y) in &xs {
            if 1.0 - y * (dot(&w, x) + b) > 0.0 {
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g -= y * xi / n;
                }
                gb -= y / n;
            }
        }
        let gnorm = dot(&gw, &gw) + gb * gb;
        if gnorm < 1e-24 {
            break;
        }
        // Backtrack until the step improves the objective.
        let mut step = eta;
        let accepted = loop {
            let w2: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let b2 = b - step * gb;
            let next = objective(&w2, b2, lambda, &xs);
            if !next.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            if next < cur - 1e-15 {
                w = w2;
                b = b2;
                cur = next;
                eta = step * 2.0;
                break true;
            }
            step *= 0.5;
            if step < 1e-14 {
                break false;
            }
        };
        epochs_run += 1;
        if !accepted {
            break;
        }
    }

    let correct = xs
        .iter()
        .filter(|(x, y)| {
            let s = dot(&w, x) + b;
            (*y > 0.0 && s > 0.0) || (*y < 0.0 && s <= 0.0)
        })
        .count();
    let report = TrainReport {
        initial_objective: initial,
        final_objective: cur,
        epochs_run,
        train_accuracy: correct as f64 / n,
    };
    debug_assert!(report.final_objective <= report.initial_objective);
    Ok((
        LinearModel {
            weights: w,
            bias: b,
            lambda,
        },
        report,
    ))
}

/// One mining sweep: every patch of a negatively labeled image scoring above
/// `−margin` comes back as an additional negative example.
pub fn mine_negatives(m: &LinearModel, d: &Dataset, margin: f64) -> Vec<TrainingExample> {
    d.patches()
        .iter()
        .filter(|p| !d.is_positive(p.image_id))
        .filter(|p| m.score(&p.feature) > -margin)
        .map(|p| TrainingExample {
            image_id: p.image_id,
            bbox: p.bbox.clone(),
            feature: p.feature.clone(),
            source: ExampleSource::MinedNegative,
            patch_id: Some(p.patch_id),
        })
        .collect()
}

/// A scored box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Per image in `remaining`, the argmax-scoring patch (ties to the lowest
/// patch id). Images without patches are skipped with a warning.
pub fn mine_positives(
    m: &LinearModel,
    d: &Dataset,
    remaining: &BTreeSet<ImageId>,
) -> BTreeMap<ImageId, (PatchId, Detection)> {
    let mut out = BTreeMap::new();
    for &image in remaining {
        let best = d
            .patches_of_image(image)
            .map(|p| (p.patch_id, m.score(&p.feature)))
            .max_by(|(ida, sa), (idb, sb)| {
                sa.partial_cmp(sb)
                    .expect("finite score")
                    .then(idb.cmp(ida))
            });
        match best {
            Some((pid, score)) => {
                let bbox = d.patch(pid).expect("scored patch").bbox.clone();
                out.insert(
                    image,
                    (
                        pid,
                        Detection {
                            image_id: image,
                            bbox,
                            score,
                        },
                    ),
                );
            }
            None => log::warn!("image {} has no patches; skipped in positive mining", image),
        }
    }
    out
}

/// Knobs shared by the training entry points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub lambda: f64,
    pub epochs: usize,
    pub margin: f64,
    pub mining_rounds_cap: usize,
    pub lsvm_rounds: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            lambda: 1e-4,
            epochs: 500,
            margin: 1.0,
            mining_rounds_cap: 10,
            lsvm_rounds: 5,
            seed: 0,
        }
    }
}

/// Train, then alternate mining violating negatives and retraining until a
/// sweep finds nothing new or the round cap is hit. The mined negatives
/// accumulate in `ts`.
pub fn train_with_mining(
    d: &Dataset,
    ts: &mut TrainingSet,
    params: &TrainParams,
) -> Result<(LinearModel, Vec<TrainReport>)> {
    let mut reports = Vec::new();
    let mut known: BTreeSet<PatchId> = ts
        .positives
        .iter()
        .chain(&ts.negatives)
        .filter_map(|e| e.patch_id)
        .collect();
    let mut model;
    let mut round = 0;
    loop {
        let (m, report) = train_svm(ts, params.lambda, params.epochs, params.seed)?;
        reports.push(report);
        model = m;
        if round >= params.mining_rounds_cap {
            break;
        }
        let fresh: Vec<TrainingExample> = mine_negatives(&model, d, params.margin)
            .into_iter()
            .filter(|e| e.patch_id.map_or(true, |id| !known.contains(&id)))
            .collect();
        if fresh.is_empty() {
            break;
        }
        known.extend(fresh.iter().filter_map(|e| e.patch_id));
        ts.negatives.extend(fresh);
        round += 1;
    }
    Ok((model, reports))
}

/// Replace each positive example by the best-scoring patch of its image
/// under `m`. Images without patches keep their current example.
pub fn relocalize_positives(m: &LinearModel, d: &Dataset, ts: &mut TrainingSet) {
    for e in &mut ts.positives {
        let best = d
            .patches_of_image(e.image_id)
            .map(|p| (p.patch_id, m.score(&p.feature)))
            .max_by(|(ida, sa), (idb, sb)| {
                sa.partial_cmp(sb)
                    .expect("finite score")
                    .then(idb.cmp(ida))
            });
        let Some((pid, _)) = best else {
            log::warn!(
                "image {} has no patches; latent box kept as-is",
                e.image_id
            );
            continue;
        };
        let p = d.patch(pid).expect("scored patch");
        e.bbox = p.bbox.clone();
        e.feature = p.feature.clone();
        e.patch_id = Some(pid);
    }
}

/// Result of the latent training loop.
#[derive(Debug, Clone)]
pub struct LsvmOutcome {
    pub model: LinearModel,
    /// Objective traces, one inner vector per round (mining retrains
    /// included).
    pub round_reports: Vec<Vec<TrainReport>>,
    /// Positive latent boxes per round; entry 0 is the starting assignment.
    pub latent_history: Vec<BTreeMap<ImageId, BBox>>,
}

fn latent_snapshot(ts: &TrainingSet) -> BTreeMap<ImageId, BBox> {
    ts.positives
        .iter()
        .map(|e| (e.image_id, e.bbox.clone()))
        .collect()
}

/// `rounds` trainings with latent re-localization between them. One round is
/// a plain mined-negative training with no re-localization.
pub fn lsvm_rounds(
    d: &Dataset,
    mut ts: TrainingSet,
    rounds: usize,
    params: &TrainParams,
) -> Result<LsvmOutcome> {
    debug_assert!(rounds >= 1);
    let mut round_reports = Vec::new();
    let mut latent_history = vec![latent_snapshot(&ts)];
    let mut model = None;
    for t in 0..rounds.max(1) {
        if t > 0 {
            relocalize_positives(model.as_ref().expect("trained"), d, &mut ts);
            latent_history.push(latent_snapshot(&ts));
            // A re-localized box may land on a patch currently held as a
            // negative; the stale negative loses.
            let pos: BTreeSet<PatchId> =
                ts.positives.iter().filter_map(|e| e.patch_id).collect();
            ts.negatives
                .retain(|e| e.patch_id.is_none_or(|id| !pos.contains(&id)));
        }
        let (m, reports) = train_with_mining(d, &mut ts, params)?;
        round_reports.push(reports);
        model = Some(m);
    }
    Ok(LsvmOutcome {
        model: model.expect("at least one round"),
        round_reports,
        latent_history,
    })
}

/// Score every patch of every image.
pub fn score_all(m: &LinearModel, d: &Dataset) -> Vec<Detection> {
    d.patches()
        .par_iter()
        .map(|p| Detection {
            image_id: p.image_id,
            bbox: p.bbox.clone(),
            score: m.score(&p.feature),
        })
        .collect()
}

/// Fraction of images (over the keys both maps share) whose estimate reaches
/// `iou_min` against the ground truth.
pub fn evaluate_corloc(
    estimates: &BTreeMap<ImageId, BBox>,
    gt: &BTreeMap<ImageId, BBox>,
    iou_min: f64,
) -> Result<f64> {
    let shared: Vec<ImageId> = estimates
        .keys()
        .filter(|k| gt.contains_key(k))
        .copied()
        .collect();
    if shared.is_empty() {
        return Err(Error::DisjointKeySets);
    }
    let hits = shared
        .iter()
        .filter(|k| iou(&estimates[k], &gt[k]) >= iou_min)
        .count();
    Ok(hits as f64 / shared.len() as f64)
}

/// Continuous interpolated average precision with greedy matching: walking
/// detections by descending score, each matches at most one still-unmatched
/// ground-truth box of its image at `iou_min`; the precision envelope is made
/// non-increasing and integrated over recall exactly (no 11-point sampling).
pub fn evaluate_ap(dets: &[Detection], gt: &[(ImageId, BBox)], iou_min: f64) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let mut by_image: BTreeMap<ImageId, Vec<(usize, &BBox)>> = BTreeMap::new();
    for (i, (im, b)) in gt.iter().enumerate() {
        by_image.entry(*im).or_default().push((i, b));
    }
    let mut matched = vec![false; gt.len()];

    // Rank by descending score; ties resolved by image then box so the
    // result does not depend on input order beyond score.
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .partial_cmp(&da.score)
            .expect("finite score")
            .then(da.image_id.cmp(&db.image_id))
            .then(
                (da.bbox.x_left, da.bbox.y_top, da.bbox.x_right, da.bbox.y_bottom)
                    .partial_cmp(&(db.bbox.x_left, db.bbox.y_top, db.bbox.x_right, db.bbox.y_bottom))
                    .expect("finite box"),
            )
    });

    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(dets.len()); // (recall, precision)
    for (rank, &i) in order.iter().enumerate() {
        let det = &dets[i];
        let best = by_image.get(&det.image_id).and_then(|cands| {
            cands
                .iter()
                .filter(|(gi, gb)| !matched[*gi] && iou(&det.bbox, gb) >= iou_min)
                .max_by(|(_, a), (_, b)| {
                    iou(&det.bbox, a)
                        .partial_cmp(&iou(&det.bbox, b))
                        .expect("finite iou")
                })
                .map(|&(gi, _)| gi)
        });
        if let Some(gi) = best {
            matched[gi] = true;
            tp += 1;
        }
        curve.push((
            tp as f64 / gt.len() as f64,
            tp as f64 / (rank + 1) as f64,
        ));
    }

    // Upper envelope from the right, integrated over recall increments.
    let mut ap = 0.0;
    let mut best_prec = 0.0f64;
    let mut prev_recall = 0.0;
    let mut increments: Vec<(f64, f64)> = Vec::new(); // (Δrecall at this point, envelope precision)
    for &(recall, precision) in curve.iter().rev() {
        best_prec = best_prec.max(precision);
        increments.push((recall, best_prec));
    }
    increments.reverse();
    for (recall, envelope) in increments {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    Ok(ap)
}

/// Per-image line of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageReport {
    pub image_id: ImageId,
    pub estimate: Option<BBox>,
    pub gt: Option<BBox>,
    pub iou: Option<f64>,
    pub hit: Option<bool>,
}

/// Metrics report written by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub corloc: Option<f64>,
    pub ap: Option<f64>,
    pub per_image: Vec<PerImageReport>,
}
