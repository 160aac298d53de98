//! Brute-force reference implementations.
//!
//! These recompute what the optimized paths produce — plain nested loops, no
//! hashing, no parallelism — so equivalence checks exercise the clever code
//! against the obvious code.

use std::collections::BTreeMap;

use crate::configs::{
    bin_transform, compute_transform, relative_location_bin, BinWidths, Cluster, ConfigEdge,
    ConfigGraph, ConfigLabel,
};
use crate::error::Result;
use crate::features::{distance, Dataset, ImageId, NeighborEntry, Neighborhood, PatchId};

/// Exhaustive per-image best-match neighborhoods: every positive-image patch
/// queried against every patch of every other image, one champion per image
/// (ties to the lower patch id), the K nearest champions kept (ordered by
/// distance, then image id, then patch id).
pub fn exhaustive_neighborhoods(
    d: &Dataset,
    k: usize,
) -> Result<BTreeMap<PatchId, Neighborhood>> {
    let mut out = BTreeMap::new();
    for q in d.patches() {
        if !d.is_positive(q.image_id) {
            continue;
        }
        let mut champions: Vec<NeighborEntry> = Vec::new();
        for im in d.images() {
            if im.image_id == q.image_id {
                continue;
            }
            let mut best: Option<NeighborEntry> = None;
            for p in d.patches_of_image(im.image_id) {
                let dist = distance(&q.feature, &p.feature)?;
                let candidate = NeighborEntry {
                    patch_id: p.patch_id,
                    image_id: p.image_id,
                    distance: dist,
                };
                let replace = match &best {
                    None => true,
                    Some(b) => {
                        dist < b.distance || (dist == b.distance && candidate.patch_id < b.patch_id)
                    }
                };
                if replace {
                    best = Some(candidate);
                }
            }
            if let Some(b) = best {
                champions.push(b);
            }
        }
        champions.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .expect("finite distance")
                .then(a.image_id.cmp(&b.image_id))
                .then(a.patch_id.cmp(&b.patch_id))
        });
        champions.truncate(k);
        out.insert(
            q.patch_id,
            Neighborhood {
                owner: q.patch_id,
                neighbors: champions,
            },
        );
    }
    Ok(out)
}

/// Nested-loop configuration-graph enumeration: every image pair, every
/// cluster pair, every correspondence pair, compared bin by bin.
pub fn config_graph_nested_loop(
    clusters: &[Cluster],
    d: &Dataset,
    widths: &BinWidths,
    cell: f64,
) -> Result<ConfigGraph> {
    // Members per cluster per image, zero-area and negative-image ones out.
    let mut membership: Vec<BTreeMap<ImageId, Vec<PatchId>>> = Vec::new();
    for c in clusters {
        let mut by_image: BTreeMap<ImageId, Vec<PatchId>> = BTreeMap::new();
        for &m in &c.members {
            let rec = d.try_patch(m)?;
            if rec.bbox.area() > 0.0 && d.is_positive(rec.image_id) {
                by_image.entry(rec.image_id).or_default().push(m);
            }
        }
        membership.push(by_image);
    }

    let nodes: Vec<ImageId> = d.positive_images();
    let mut edges = Vec::new();
    for (x, &i1) in nodes.iter().enumerate() {
        for &i2 in &nodes[x + 1..] {
            for ci in 0..clusters.len() {
                for cj in ci + 1..clusters.len() {
                    let (Some(ci1), Some(ci2)) =
                        (membership[ci].get(&i1), membership[ci].get(&i2))
                    else {
                        continue;
                    };
                    let (Some(cj1), Some(cj2)) =
                        (membership[cj].get(&i1), membership[cj].get(&i2))
                    else {
                        continue;
                    };
                    for &a1 in ci1 {
                        for &a2 in ci2 {
                            for &b1 in cj1 {
                                for &b2 in cj2 {
                                    if a1 == b1 || a2 == b2 {
                                        continue;
                                    }
                                    let ta = compute_transform(
                                        &d.try_patch(a1)?.bbox,
                                        &d.try_patch(a2)?.bbox,
                                    )?;
                                    let tb = compute_transform(
                                        &d.try_patch(b1)?.bbox,
                                        &d.try_patch(b2)?.bbox,
                                    )?;
                                    if bin_transform(&ta, widths) != bin_transform(&tb, widths) {
                                        continue;
                                    }
                                    let loc1 = relative_location_bin(
                                        &d.try_patch(a1)?.bbox,
                                        &d.try_patch(b1)?.bbox,
                                        cell,
                                    );
                                    let loc2 = relative_location_bin(
                                        &d.try_patch(a2)?.bbox,
                                        &d.try_patch(b2)?.bbox,
                                        cell,
                                    );
                                    if loc1 != loc2 {
                                        continue;
                                    }
                                    edges.push(ConfigEdge {
                                        image_a: i1,
                                        image_b: i2,
                                        label: ConfigLabel::new(ci as u32, cj as u32, loc1),
                                        pair_a: (a1, b1),
                                        pair_b: (a2, b2),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    edges.sort();
    Ok(ConfigGraph {
        nodes: nodes.into_iter().collect(),
        edges,
    })
}
