//! Deterministic synthetic datasets with planted two-part objects.
//!
//! Each positive image carries two diagonally overlapping part boxes at a
//! planted relative offset, plus a whole-object patch framing their union
//! with a seeded per-image margin; ground truth is the exact union. Part features are noisy copies of two
//! orthonormal prototypes; the whole-object feature is a noisy copy of a
//! prototype that blends the part mean with a direction orthogonal to both
//! parts, mirroring how a descriptor of the full window carries structure of
//! its own rather than being a pure sum of its parts. Distractor patches get
//! random unit features kept away from all three prototypes. Negative images
//! contain only distractors. Everything is a pure function of the spec
//! (seeded RNG), so equal specs give bit-identical datasets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureVector, ImageId, ImageInfo, ImageLabel, PatchId, PatchRecord};
use crate::geom::{union_bbox, BBox};

/// Generator knobs. `prototypes`, when omitted, are derived from the seed as
/// a random orthonormal pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Image width and height in pixels.
    pub image_size: [f64; 2],
    /// Feature dimension D (≥ 2).
    pub dim: usize,
    /// Optional explicit part prototypes (normalized on use).
    pub prototypes: Option<[Vec<f32>; 2]>,
    /// Feature noise standard deviation.
    pub sigma: f64,
    /// Width and height of each part box.
    pub part_size: [f64; 2],
    /// Planted offset of part 2 relative to part 1 (must keep the parts
    /// overlapping or abutting).
    pub part_offset: [f64; 2],
    /// Uniform ± pixel jitter added to the scaled offset.
    pub offset_jitter: f64,
    /// Uniform ± relative jitter of the whole object's scale.
    pub scale_jitter: f64,
    /// Distractor patches per image.
    pub distractors: usize,
    /// Width and height of distractor boxes.
    pub distractor_size: [f64; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            n_positive: 8,
            n_negative: 8,
            image_size: [640.0, 480.0],
            dim: 8,
            prototypes: None,
            sigma: 0.0,
            part_size: [40.0, 40.0],
            part_offset: [30.0, 30.0],
            offset_jitter: 0.0,
            scale_jitter: 0.0,
            distractors: 6,
            distractor_size: [35.0, 35.0],
        }
    }
}

/// Planted layout of one positive image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedImage {
    pub image_id: ImageId,
    pub part1: PatchId,
    pub part2: PatchId,
    pub whole: PatchId,
    pub gt: BBox,
}

/// Record of what was planted, for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub images: Vec<PlantedImage>,
}

pub struct SynthOutput {
    pub dataset: Dataset,
    pub gt: BTreeMap<ImageId, BBox>,
    pub planted: PlantedConfig,
}

fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Uniform draw that tolerates an empty range.
fn uni(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn to_f32(v: &[f64]) -> FeatureVector {
    FeatureVector(v.iter().map(|&x| x as f32).collect())
}

fn cosine_distance_unit(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        let [pw, ph] = self.part_size;
        let [ox, oy] = self.part_offset;
        let [dw, dh] = self.distractor_size;
        if self.dim < 2 {
            return Err(Error::InfeasibleGeometry(
                "feature dimension must be at least 2".into(),
            ));
        }
        if !(w > 0.0 && h > 0.0 && pw > 0.0 && ph > 0.0 && dw > 0.0 && dh > 0.0) {
            return Err(Error::InfeasibleGeometry(
                "image, part, and distractor sizes must be positive".into(),
            ));
        }
        if ox < 0.0 || oy < 0.0 {
            return Err(Error::InfeasibleGeometry(
                "part offset must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) || self.offset_jitter < 0.0 || self.sigma < 0.0
        {
            return Err(Error::InfeasibleGeometry(
                "jitters and noise must be non-negative (scale jitter < 1)".into(),
            ));
        }
        let f_min = 1.0 - self.scale_jitter;
        let f_max = 1.0 + self.scale_jitter;
        // Sizes are truncated to whole pixels, so the worst-case scale must
        // leave at least one pixel.
        if pw * f_min < 1.0 || ph * f_min < 1.0 {
            return Err(Error::InfeasibleGeometry(
                "parts must stay at least one pixel at minimum scale".into(),
            ));
        }
        // Parts must always overlap or abut so hard negatives exist.
        if ox * f_min + self.offset_jitter > pw * f_min
            || oy * f_min + self.offset_jitter > ph * f_min
        {
            return Err(Error::InfeasibleGeometry(
                "offset and jitter would separate the parts".into(),
            ));
        }
        // The whole object must fit the image at worst-case scale and jitter.
        let ext_w = (ox * f_max + self.offset_jitter) + pw * f_max;
        let ext_h = (oy * f_max + self.offset_jitter) + ph * f_max;
        if ext_w > w || ext_h > h {
            return Err(Error::InfeasibleGeometry(format!(
                "object extent {ext_w}×{ext_h} exceeds image {w}×{h}"
            )));
        }
        if dw > w || dh > h {
            return Err(Error::InfeasibleGeometry(
                "distractor larger than image".into(),
            ));
        }
        if let Some(protos) = &self.prototypes {
            for p in protos {
                if p.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        left: p.len(),
                        right: self.dim,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [img_w, img_h] = spec.image_size;
    let dim = spec.dim;

    // Part prototypes: given vectors normalized, or a seeded random
    // orthonormal pair.
    let (proto_a, proto_b) = match &spec.prototypes {
        Some([a, b]) => {
            let mut a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let mut b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
            if !l2_normalize(&mut a) || !l2_normalize(&mut b) {
                return Err(Error::InfeasibleGeometry(
                    "prototype vectors must be nonzero".into(),
                ));
            }
            (a, b)
        }
        None => loop {
            let mut a = gaussian_vec(&mut rng, dim);
            if !l2_normalize(&mut a) {
                continue;
            }
            let mut b = gaussian_vec(&mut rng, dim);
            let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            b.iter_mut().zip(&a).for_each(|(bi, ai)| *bi -= proj * ai);
            if l2_normalize(&mut b) {
                break (a, b);
            }
        },
    };
    // The whole-object prototype is the part mean plus a component
    // orthogonal to both parts. A pure part sum would leave whole scores
    // linearly pinned to part scores, so no linear model could rank wholes
    // above parts while pushing parts down; the orthogonal share (half the
    // mass for orthonormal parts, giving <whole, part> = 0.5) breaks that
    // tie the same way a full-window descriptor differs from its parts.
    let mut proto_whole: Vec<f64> = proto_a
        .iter()
        .zip(&proto_b)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let residual = 1.0 - proto_whole.iter().map(|x| x * x).sum::<f64>();
    if residual > 1e-12 {
        // Gram-Schmidt a fresh direction against the parts; in two
        // dimensions no such direction exists and the part mean stands.
        for _ in 0..32 {
            let mut e = gaussian_vec(&mut rng, dim);
            for basis in [&proto_a, &proto_b] {
                let proj: f64 = e.iter().zip(basis.iter()).map(|(x, y)| x * y).sum();
                e.iter_mut().zip(basis.iter()).for_each(|(ei, bi)| *ei -= proj * bi);
            }
            if l2_normalize(&mut e) {
                let c = residual.sqrt();
                proto_whole.iter_mut().zip(&e).for_each(|(w, ei)| *w += c * ei);
                break;
            }
        }
    }
    if !l2_normalize(&mut proto_whole) {
        return Err(Error::InfeasibleGeometry(
            "part prototypes must not be opposite".into(),
        ));
    }

    let noisy = |proto: &[f64], rng: &mut ChaCha8Rng| -> FeatureVector {
        if spec.sigma == 0.0 {
            return to_f32(proto);
        }
        let mut v: Vec<f64> = proto
            .iter()
            .map(|&x| {
                let g: f64 = StandardNormal.sample(rng);
                x + spec.sigma * g
            })
            .collect();
        if !l2_normalize(&mut v) {
            return to_f32(proto);
        }
        to_f32(&v)
    };

    // Random unit feature far from all prototypes (best of up to 1000 draws).
    let separation = (4.0 * spec.sigma).clamp(0.5, 1.0);
    let distractor_feature = |rng: &mut ChaCha8Rng| -> FeatureVector {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..1000 {
            let mut v = gaussian_vec(rng, dim);
            if !l2_normalize(&mut v) {
                continue;
            }
            let d = [&proto_a, &proto_b, &proto_whole]
                .iter()
                .map(|p| cosine_distance_unit(&v, p))
                .fold(f64::INFINITY, f64::min);
            if d >= separation {
                return to_f32(&v);
            }
            if best.as_ref().map_or(true, |(bd, _)| d > *bd) {
                best = Some((d, v));
            }
        }
        to_f32(&best.expect("at least one draw").1)
    };

    let mut images = Vec::new();
    let mut patches = Vec::new();
    let mut gt = BTreeMap::new();
    let mut planted = Vec::new();
    let mut next_patch: u64 = 0;
    let mut take_id = |patches: &mut Vec<PatchRecord>, image: ImageId, bbox: BBox, f: FeatureVector| {
        let id = PatchId(next_patch);
        next_patch += 1;
        patches.push(PatchRecord {
            patch_id: id,
            image_id: image,
            bbox,
            feature: f,
        });
        id
    };

    let n_total = spec.n_positive + spec.n_negative;
    for i in 0..n_total {
        let image_id = ImageId(i as u64);
        let positive = i < spec.n_positive;
        images.push(ImageInfo {
            image_id,
            width: img_w,
            height: img_h,
            label: if positive {
                ImageLabel::Positive
            } else {
                ImageLabel::Negative
            },
        });

        if positive {
            // All geometry is snapped to whole pixels (truncation keeps every
            // quantity within its sampled bound), so equal-size boxes have
            // exactly equal extents and zero-jitter runs bin identically.
            let f = 1.0 + uni(&mut rng, -spec.scale_jitter, spec.scale_jitter);
            let jx = uni(&mut rng, -spec.offset_jitter, spec.offset_jitter);
            let jy = uni(&mut rng, -spec.offset_jitter, spec.offset_jitter);
            let pw = (spec.part_size[0] * f).trunc();
            let ph = (spec.part_size[1] * f).trunc();
            let off_x = (spec.part_offset[0] * f + jx).max(0.0).trunc();
            let off_y = (spec.part_offset[1] * f + jy).max(0.0).trunc();
            let ext_w = off_x + pw;
            let ext_h = off_y + ph;
            let ux = uni(&mut rng, 0.0, img_w - ext_w).floor();
            let uy = uni(&mut rng, 0.0, img_h - ext_h).floor();

            let part1 = BBox::new(ux, uy, ux + pw, uy + ph);
            let part2 = BBox::new(ux + off_x, uy + off_y, ux + off_x + pw, uy + off_y + ph);
            let whole = union_bbox(&part1, &part2);
            debug_assert!(BBox::new(0.0, 0.0, img_w, img_h).contains(&whole));

            // Candidate pools never contain the exactly tight object box: the
            // whole-object candidate frames the union with a seeded margin
            // (up to 12 px per side at unit scale, clamped to the image),
            // which keeps its overlap with ground truth above one half while
            // varying its scale relative to the parts from image to image.
            let m = uni(&mut rng, 0.0, 12.0 * f).trunc();
            let frame = BBox::new(
                (whole.x_left - m).max(0.0),
                (whole.y_top - m).max(0.0),
                (whole.x_right + m).min(img_w),
                (whole.y_bottom + m).min(img_h),
            );

            let f1 = noisy(&proto_a, &mut rng);
            let f2 = noisy(&proto_b, &mut rng);
            let fw = noisy(&proto_whole, &mut rng);
            let id1 = take_id(&mut patches, image_id, part1.clone(), f1);
            let id2 = take_id(&mut patches, image_id, part2.clone(), f2);
            let idw = take_id(&mut patches, image_id, frame, fw);
            gt.insert(image_id, whole.clone());
            planted.push(PlantedImage {
                image_id,
                part1: id1,
                part2: id2,
                whole: idw,
                gt: whole,
            });
        }

        for _ in 0..spec.distractors {
            let [dw, dh] = spec.distractor_size;
            let dx = uni(&mut rng, 0.0, img_w - dw).floor();
            let dy = uni(&mut rng, 0.0, img_h - dh).floor();
            let bbox = BBox::new(dx, dy, dx + dw, dy + dh);
            let f = distractor_feature(&mut rng);
            take_id(&mut patches, image_id, bbox, f);
        }
    }

    let dataset = Dataset::new(images, patches, dim)?;
    Ok(SynthOutput {
        dataset,
        gt,
        planted: PlantedConfig { images: planted },
    })
}
