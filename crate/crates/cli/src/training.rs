//! Detector training orchestration on top of the core latent loop.
//!
//! Stages hand boxes around, but the trainer consumes candidate-patch
//! features. Any box that is not itself a patch — a foreground estimate, a
//! hard-negative strip — is stood in for by the candidate patch that overlaps
//! it most (`proxy_patch`).

use std::collections::{BTreeMap, BTreeSet};

use partconf::detector::{
    lsvm_rounds, mine_positives, train_with_mining, ExampleSource, LsvmOutcome, TrainParams,
    TrainingExample, TrainingSet,
};
use partconf::geom::iou;
use partconf::hardneg::HardNegativeSet;
use partconf::{BBox, Dataset, ImageId, PatchRecord};

use crate::config::{NegativeSource, PipelineConfig};
use crate::error::Result;

/// The candidate patch of `image` with the highest IoU against `target`;
/// ties break toward the lower patch id, and `None` means nothing overlaps.
pub fn proxy_patch<'d>(d: &'d Dataset, image: ImageId, target: &BBox) -> Option<&'d PatchRecord> {
    d.patches_of_image(image)
        .map(|p| (iou(&p.bbox, target), p))
        .filter(|(overlap, _)| *overlap > 0.0)
        .max_by(|(oa, pa), (ob, pb)| {
            oa.partial_cmp(ob)
                .expect("finite IoU")
                .then(pb.patch_id.cmp(&pa.patch_id))
        })
        .map(|(_, p)| p)
}

fn example_from(rec: &PatchRecord, source: ExampleSource) -> TrainingExample {
    TrainingExample {
        image_id: rec.image_id,
        bbox: rec.bbox.clone(),
        feature: rec.feature.clone(),
        source,
        patch_id: Some(rec.patch_id),
    }
}

/// Build the initial training set from per-image foreground estimates.
///
/// Positives: the proxy patch of each estimate. Negatives from positive
/// images according to `source`; if that leaves the negative class empty, the
/// lowest-id patch of each negative image seeds it so training can start.
pub fn assemble_training_set(
    d: &Dataset,
    estimates: &BTreeMap<ImageId, BBox>,
    hardnegs: Option<&BTreeMap<ImageId, HardNegativeSet>>,
    source: NegativeSource,
    neighboring_max_iou: f64,
) -> Result<TrainingSet> {
    let mut positives = Vec::new();
    let mut taken: BTreeSet<_> = BTreeSet::new();
    for (&image, est) in estimates {
        match proxy_patch(d, image, est) {
            Some(rec) => {
                taken.insert(rec.patch_id);
                positives.push(example_from(rec, ExampleSource::ForegroundEstimate));
            }
            None => log::warn!("image {image} has no patch overlapping its estimate; skipped"),
        }
    }

    let mut negatives = Vec::new();
    match source {
        NegativeSource::Discovered => {
            let empty = BTreeMap::new();
            for (&image, set) in hardnegs.unwrap_or(&empty) {
                for strip in &set.strips {
                    let Some(rec) = proxy_patch(d, image, &strip.bbox) else {
                        continue;
                    };
                    if taken.insert(rec.patch_id) {
                        negatives.push(example_from(rec, ExampleSource::HardNegative));
                    }
                }
            }
        }
        NegativeSource::Neighboring => {
            for (&image, est) in estimates {
                for rec in d.patches_of_image(image) {
                    if iou(&rec.bbox, est) < neighboring_max_iou && taken.insert(rec.patch_id) {
                        negatives.push(example_from(rec, ExampleSource::HardNegative));
                    }
                }
            }
        }
        NegativeSource::None => {}
    }
    if negatives.is_empty() {
        for image in d.images().iter().filter(|im| !d.is_positive(im.image_id)) {
            if let Some(rec) = d.patches_of_image(image.image_id).min_by_key(|p| p.patch_id) {
                negatives.push(example_from(rec, ExampleSource::MinedNegative));
            }
        }
    }

    let ts = TrainingSet {
        positives,
        negatives,
    };
    ts.validate()?;
    Ok(ts)
}

/// Full detector training: estimate-seeded set, positive mining for images
/// the estimates missed, then the latent rounds.
pub fn train_detector(
    d: &Dataset,
    cfg: &PipelineConfig,
    estimates: &BTreeMap<ImageId, BBox>,
    hardnegs: Option<&BTreeMap<ImageId, HardNegativeSet>>,
) -> Result<LsvmOutcome> {
    let t = &cfg.training;
    let mut ts = assemble_training_set(d, estimates, hardnegs, t.negatives, t.neighboring_max_iou)?;
    let params = TrainParams {
        lambda: t.lambda,
        epochs: t.epochs,
        margin: t.margin,
        mining_rounds_cap: t.mining_rounds_cap,
        lsvm_rounds: t.rounds,
        seed: cfg.seed,
    };

    let covered: BTreeSet<ImageId> = ts.positives.iter().map(|e| e.image_id).collect();
    let remaining: BTreeSet<ImageId> = d
        .positive_images()
        .into_iter()
        .filter(|im| !covered.contains(im))
        .collect();
    if !remaining.is_empty() {
        let (bootstrap, _) = train_with_mining(d, &mut ts, &params)?;
        for (image, (pid, _)) in mine_positives(&bootstrap, d, &remaining) {
            let rec = d.patch(pid).expect("mined patch exists");
            debug_assert_eq!(rec.image_id, image);
            ts.positives.push(example_from(rec, ExampleSource::MinedPositive));
        }
    }

    Ok(lsvm_rounds(d, ts, params.lsvm_rounds, &params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use partconf::hardneg::generate_hard_negatives;
    use partconf::synth::{generate, SynthSpec};

    fn planted() -> (partconf::synth::SynthOutput, BTreeMap<ImageId, BBox>) {
        let out = generate(&SynthSpec {
            sigma: 0.05,
            seed: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        // Estimates for the first five positive images only.
        let estimates: BTreeMap<ImageId, BBox> = out
            .planted
            .images
            .iter()
            .take(5)
            .map(|p| (p.image_id, p.gt.clone()))
            .collect();
        (out, estimates)
    }

    #[test]
    fn proxy_picks_highest_overlap() {
        let (out, _) = planted();
        let d = &out.dataset;
        let p = &out.planted.images[0];
        let rec = proxy_patch(d, p.image_id, &p.gt).unwrap();
        assert_eq!(rec.patch_id, p.whole);
        // A box overlapping nothing has no proxy.
        assert!(proxy_patch(d, p.image_id, &BBox::new(-50.0, -50.0, -1.0, -1.0)).is_none());
    }

    #[test]
    fn discovered_negatives_are_the_parts() {
        let (out, estimates) = planted();
        let d = &out.dataset;
        let mut hardnegs = BTreeMap::new();
        for p in out.planted.images.iter().take(5) {
            let b1 = &d.patch(p.part1).unwrap().bbox;
            let b2 = &d.patch(p.part2).unwrap().bbox;
            hardnegs.insert(p.image_id, generate_hard_negatives(b1, b2, &p.gt, 0.5).unwrap());
        }
        let ts = assemble_training_set(
            d,
            &estimates,
            Some(&hardnegs),
            NegativeSource::Discovered,
            0.3,
        )
        .unwrap();
        assert_eq!(ts.positives.len(), 5);
        let wholes: BTreeSet<_> = out.planted.images.iter().take(5).map(|p| p.whole).collect();
        assert!(ts
            .positives
            .iter()
            .all(|e| wholes.contains(&e.patch_id.unwrap())));
        // Strip proxies resolve to the two part patches per image.
        let parts: BTreeSet<_> = out
            .planted
            .images
            .iter()
            .take(5)
            .flat_map(|p| [p.part1, p.part2])
            .collect();
        let negs: BTreeSet<_> = ts.negatives.iter().map(|e| e.patch_id.unwrap()).collect();
        assert_eq!(negs, parts);
    }

    #[test]
    fn neighboring_excludes_parts_but_keeps_distractors() {
        let (out, estimates) = planted();
        let d = &out.dataset;
        let ts =
            assemble_training_set(d, &estimates, None, NegativeSource::Neighboring, 0.3).unwrap();
        let negs: BTreeSet<_> = ts.negatives.iter().map(|e| e.patch_id.unwrap()).collect();
        for p in out.planted.images.iter().take(5) {
            // Parts overlap the estimate at ≈ 0.33 ≥ 0.3, so they are spared.
            assert!(!negs.contains(&p.part1));
            assert!(!negs.contains(&p.part2));
            assert!(!negs.contains(&p.whole));
        }
        // Every distractor of those images lands in the negative pool.
        let spec = SynthSpec::default();
        assert_eq!(negs.len(), 5 * spec.distractors);
    }

    #[test]
    fn none_mode_bootstraps_from_negative_images() {
        let (out, estimates) = planted();
        let d = &out.dataset;
        let ts = assemble_training_set(d, &estimates, None, NegativeSource::None, 0.3).unwrap();
        let negative_images: BTreeSet<ImageId> = d
            .images()
            .iter()
            .filter(|im| !d.is_positive(im.image_id))
            .map(|im| im.image_id)
            .collect();
        assert_eq!(ts.negatives.len(), negative_images.len());
        assert!(ts
            .negatives
            .iter()
            .all(|e| negative_images.contains(&e.image_id)));
    }

    #[test]
    fn train_detector_fills_missing_images() {
        let (out, estimates) = planted();
        let d = &out.dataset;
        let cfg = PipelineConfig {
            training: crate::config::TrainingConfig {
                rounds: 2,
                negatives: NegativeSource::None,
                ..Default::default()
            },
            ..Default::default()
        };
        let outcome = train_detector(d, &cfg, &estimates, None).unwrap();
        // Every positive image ends up with a latent box.
        let latents = outcome.latent_history.last().unwrap();
        assert_eq!(latents.len(), d.positive_images().len());
        // The model localizes the planted object in the held-out images.
        for p in out.planted.images.iter().skip(5) {
            let whole = &d.patch(p.whole).unwrap().bbox;
            assert_eq!(&latents[&p.image_id], whole);
        }
    }
}
