//! End-to-end discovery and training on planted synthetic data.

use std::collections::{BTreeMap, BTreeSet};

use partconf::configs::{
    build_config_graph, clusters_from_file, mine_configurations, BinWidths, Cluster, LocationBin,
    MiningOutcome,
};
use partconf::cover::{build_constraint_graph, build_cover_graph, greedy_select, ClustersFile};
use partconf::detector::{
    evaluate_corloc, lsvm_rounds, ExampleSource, TrainParams, TrainingExample, TrainingSet,
};
use partconf::features::{build_neighborhoods, default_k};
use partconf::geom::{iou, BBox};
use partconf::synth::{generate, SynthOutput, SynthSpec};
use partconf::{Dataset, ImageId};

/// Run discovery and mining with the default knobs.
fn discover_and_mine(out: &SynthOutput) -> MiningOutcome {
    let d = &out.dataset;
    let p = d.positive_images().len();
    let k = default_k(p);
    let hoods = build_neighborhoods(d, k).unwrap();
    let cover = build_cover_graph(&hoods, d);
    let constraints = build_constraint_graph(&hoods, d, k / 20, 0.5);
    let sel = greedy_select(&cover, &constraints, None);
    let clusters = clusters_from_file(&ClustersFile::from_selection(&sel, &cover).unwrap());
    let graph = build_config_graph(&clusters, d, &BinWidths::default(), 0.5).unwrap();
    mine_configurations(&graph, d, 3, 0.5, &clusters).unwrap()
}

#[test]
fn zero_noise_recovers_planted_configuration() {
    let out = generate(&SynthSpec::default()).unwrap();
    let outcome = discover_and_mine(&out);
    let MiningOutcome::Configurations(configs) = outcome else {
        panic!("expected configurations, got fallback");
    };
    let top = &configs[0];

    // The two part clusters selected first carry ids 0 and 1.
    assert_eq!((top.label.ci, top.label.cj), (0, 1));
    // Planted offset (30, 30) on 40×40 parts → normalized offset 0.75 →
    // floor(0.75 / 0.5) = 1 on both axes.
    assert_eq!(top.label.loc_bin, LocationBin(1, 1));

    // Supported by K+1 images: the representative's plus its K covered ones.
    let k = default_k(out.dataset.positive_images().len());
    assert_eq!(top.images.len(), k + 1);

    let planted: BTreeMap<ImageId, _> = out
        .planted
        .images
        .iter()
        .map(|p| (p.image_id, p))
        .collect();
    let mut estimates: BTreeMap<ImageId, BBox> = BTreeMap::new();
    for im in &top.images {
        let p = planted[&im.image_id];
        assert_eq!(im.b1, p.part1);
        assert_eq!(im.b2, p.part2);
        assert_eq!(im.foreground, p.gt);
        estimates.insert(im.image_id, im.foreground.clone());
    }
    assert_eq!(evaluate_corloc(&estimates, &out.gt, 0.5).unwrap(), 1.0);
}

#[test]
fn four_positive_minimum_still_recovers() {
    let spec = SynthSpec {
        n_positive: 4,
        n_negative: 4,
        ..SynthSpec::default()
    };
    let out = generate(&spec).unwrap();
    let MiningOutcome::Configurations(configs) = discover_and_mine(&out) else {
        panic!("expected configurations, got fallback");
    };
    let top = &configs[0];
    assert_eq!((top.label.ci, top.label.cj), (0, 1));
    // K = 2 → component of 3 images, exactly the mining minimum.
    assert_eq!(top.images.len(), 3);
    for im in &top.images {
        assert_eq!(iou(&im.foreground, &out.gt[&im.image_id]), 1.0);
    }
}

/// Clusters handed over directly from the planted layout: with zero noise
/// every image pair agrees on bins, so the single label joins all images.
#[test]
fn planted_clusters_give_a_complete_component() {
    let spec = SynthSpec {
        n_positive: 4,
        n_negative: 0,
        ..SynthSpec::default()
    };
    let out = generate(&spec).unwrap();
    let part1: Vec<_> = out.planted.images.iter().map(|p| p.part1).collect();
    let part2: Vec<_> = out.planted.images.iter().map(|p| p.part2).collect();
    let clusters = vec![
        Cluster {
            cluster_id: 0,
            rep_patch_id: part1[0],
            coverage: part1.len() - 1,
            members: part1,
        },
        Cluster {
            cluster_id: 1,
            rep_patch_id: part2[0],
            coverage: part2.len() - 1,
            members: part2,
        },
    ];
    let graph = build_config_graph(&clusters, &out.dataset, &BinWidths::default(), 0.5).unwrap();
    // Complete: one edge per image pair, all with the same label.
    assert_eq!(graph.edges.len(), 4 * 3 / 2);
    let labels: BTreeSet<_> = graph.edges.iter().map(|e| e.label).collect();
    assert_eq!(labels.len(), 1);
    let touched: BTreeSet<ImageId> = graph
        .edges
        .iter()
        .flat_map(|e| [e.image_a, e.image_b])
        .collect();
    assert_eq!(touched.len(), 4);
}

#[test]
fn discovery_chain_is_deterministic() {
    let spec = SynthSpec {
        sigma: 0.2,
        offset_jitter: 3.0,
        scale_jitter: 0.1,
        seed: 21,
        ..SynthSpec::default()
    };
    let a = generate(&spec).unwrap();
    let b = generate(&spec).unwrap();
    assert_eq!(discover_and_mine(&a), discover_and_mine(&b));
}

/// Latent re-localization should walk poor initial boxes onto the object:
/// most images start from the true whole-object patch, two start from a lone
/// part. Part-featured hard negatives from the well-initialized images push
/// part scores down, so retraining moves the stragglers onto the whole.
#[test]
fn lsvm_latent_iou_improves_and_reproduces() {
    let spec = SynthSpec {
        sigma: 0.1,
        offset_jitter: 2.0,
        scale_jitter: 0.05,
        seed: 13,
        ..SynthSpec::default()
    };
    let out = generate(&spec).unwrap();
    let d = &out.dataset;

    let example = |pick, source| {
        let rec = d.patch(pick).unwrap();
        TrainingExample {
            image_id: rec.image_id,
            bbox: rec.bbox.clone(),
            feature: rec.feature.clone(),
            source,
            patch_id: Some(rec.patch_id),
        }
    };
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, p) in out.planted.images.iter().enumerate() {
        if i < 6 {
            positives.push(example(p.whole, ExampleSource::ForegroundEstimate));
            negatives.push(example(p.part1, ExampleSource::HardNegative));
            negatives.push(example(p.part2, ExampleSource::HardNegative));
        } else {
            positives.push(example(p.part1, ExampleSource::ForegroundEstimate));
        }
    }
    negatives.extend(
        d.patches()
            .iter()
            .filter(|p| !d.is_positive(p.image_id))
            .take(12)
            .map(|p| example(p.patch_id, ExampleSource::MinedNegative)),
    );
    let ts = TrainingSet {
        positives,
        negatives,
    };

    let params = TrainParams::default();
    let outcome = lsvm_rounds(d, ts, params.lsvm_rounds, &params).unwrap();
    let mean_iou = |latent: &BTreeMap<ImageId, BBox>| -> f64 {
        let total: f64 = latent.iter().map(|(im, b)| iou(b, &out.gt[im])).sum();
        total / latent.len() as f64
    };
    let series: Vec<f64> = outcome.latent_history.iter().map(mean_iou).collect();
    for w in series.windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "latent IoU regressed: {series:?}");
    }
    assert!(series.last().unwrap() > &series[0], "no improvement: {series:?}");
    // Frozen from a reference run of this exact setup. The ceiling is below
    // one because the whole-object candidate frames ground truth with a
    // seeded margin rather than matching it tightly.
    let frozen = 0.752;
    assert!(
        (series.last().unwrap() - frozen).abs() <= 0.01,
        "final latent IoU {} drifted from {frozen}",
        series.last().unwrap()
    );
}

/// Same-seed determinism must also hold for training.
#[test]
fn training_is_deterministic() {
    let spec = SynthSpec {
        sigma: 0.1,
        seed: 5,
        ..SynthSpec::default()
    };
    let out = generate(&spec).unwrap();
    let d = &out.dataset;
    let build = |d: &Dataset| -> TrainingSet {
        TrainingSet {
            positives: out
                .planted
                .images
                .iter()
                .map(|p| {
                    let rec = d.patch(p.whole).unwrap();
                    TrainingExample {
                        image_id: rec.image_id,
                        bbox: rec.bbox.clone(),
                        feature: rec.feature.clone(),
                        source: ExampleSource::ForegroundEstimate,
                        patch_id: Some(rec.patch_id),
                    }
                })
                .collect(),
            negatives: d
                .patches()
                .iter()
                .filter(|p| !d.is_positive(p.image_id))
                .take(8)
                .map(|p| TrainingExample {
                    image_id: p.image_id,
                    bbox: p.bbox.clone(),
                    feature: p.feature.clone(),
                    source: ExampleSource::MinedNegative,
                    patch_id: Some(p.patch_id),
                })
                .collect(),
        }
    };
    let params = TrainParams::default();
    let a = lsvm_rounds(d, build(d), 3, &params).unwrap();
    let b = lsvm_rounds(d, build(d), 3, &params).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.latent_history, b.latent_history);
}
