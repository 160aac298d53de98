//! Mining of frequently co-occurring cluster pairs into part configurations.
//!
//! Each selected candidate induces a cluster (the representative plus its
//! covered patches). For every pair of positive images sharing two clusters,
//! the cross-image transforms of both clusters are quantized into a 4D bin
//! grid; when the two transforms agree and the in-image relative placement of
//! the pair matches in both images, a labeled edge joins the images in the
//! multigraph over positive images. The largest connected component per label
//! yields a configuration; a foreground estimate per supporting image is the
//! tight box around its patch pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::cover::ClustersFile;
use crate::error::{Error, Result};
use crate::features::{Dataset, ImageId, PatchId};
use crate::geom::{self, BBox};

/// A representative patch together with everything it covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: u32,
    pub rep_patch_id: PatchId,
    /// Representative first, then covered patches.
    pub members: Vec<PatchId>,
    /// Number of covered patches (members minus the representative).
    pub coverage: usize,
}

/// Read clusters out of a selection export, numbering them in file order.
pub fn clusters_from_file(file: &ClustersFile) -> Vec<Cluster> {
    file.clusters
        .iter()
        .enumerate()
        .map(|(i, entry)| Cluster {
            cluster_id: i as u32,
            rep_patch_id: entry.rep_patch_id,
            members: entry.members.clone(),
            coverage: entry.members.len().saturating_sub(1),
        })
        .collect()
}

/// Cross-image box transform: center shift in pixels, scale as the square
/// root of the area ratio, and the aspect-ratio ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub dx: f64,
    pub dy: f64,
    pub s: f64,
    pub p: f64,
}

/// Quantization widths for the 4D transform space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinWidths {
    pub dx: f64,
    pub dy: f64,
    pub s: f64,
    pub p: f64,
}

impl Default for BinWidths {
    fn default() -> Self {
        BinWidths {
            dx: 30.0,
            dy: 30.0,
            s: 1.0,
            p: 1.0,
        }
    }
}

/// Floor-binned transform coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransformBin(pub i64, pub i64, pub i64, pub i64);

/// Floor-binned normalized center offset between the two patches of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationBin(pub i64, pub i64);

pub fn compute_transform(src: &BBox, dst: &BBox) -> Result<Transform> {
    if src.area() == 0.0 || dst.area() == 0.0 {
        return Err(Error::DegenerateBox(format!(
            "zero-area box in transform: src area {}, dst area {}",
            src.area(),
            dst.area()
        )));
    }
    let (sx, sy) = src.center();
    let (dx_c, dy_c) = dst.center();
    Ok(Transform {
        dx: dx_c - sx,
        dy: dy_c - sy,
        s: (dst.area() / src.area()).sqrt(),
        p: dst.aspect() / src.aspect(),
    })
}

fn floor_bin(value: f64, width: f64) -> i64 {
    debug_assert!(width > 0.0, "bin width must be positive");
    (value / width).floor() as i64
}

pub fn bin_transform(t: &Transform, widths: &BinWidths) -> TransformBin {
    TransformBin(
        floor_bin(t.dx, widths.dx),
        floor_bin(t.dy, widths.dy),
        floor_bin(t.s, widths.s),
        floor_bin(t.p, widths.p),
    )
}

/// Center offset of `b2` relative to `b1`, normalized by the square root of
/// the mean area, floor-binned at `cell`. Not symmetric under swapping.
pub fn relative_location_bin(b1: &BBox, b2: &BBox, cell: f64) -> LocationBin {
    debug_assert!(!b1.is_degenerate() && !b2.is_degenerate());
    let (c1x, c1y) = b1.center();
    let (c2x, c2y) = b2.center();
    let norm = ((b1.area() + b2.area()) / 2.0).sqrt();
    LocationBin(
        floor_bin((c2x - c1x) / norm, cell),
        floor_bin((c2y - c1y) / norm, cell),
    )
}

/// Canonical edge label: ordered cluster pair plus the shared placement bin.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ConfigLabel {
    pub ci: u32,
    pub cj: u32,
    pub loc_bin: LocationBin,
}

impl ConfigLabel {
    pub fn new(ci: u32, cj: u32, loc_bin: LocationBin) -> Self {
        debug_assert!(ci < cj, "label clusters must be ordered");
        ConfigLabel { ci, cj, loc_bin }
    }
}

/// One labeled multi-edge: the two images and, per image, the patch pair
/// (cluster `ci` member first).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigEdge {
    pub image_a: ImageId,
    pub image_b: ImageId,
    pub label: ConfigLabel,
    pub pair_a: (PatchId, PatchId),
    pub pair_b: (PatchId, PatchId),
}

/// Labeled multigraph over the positive images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigGraph {
    pub nodes: BTreeSet<ImageId>,
    pub edges: Vec<ConfigEdge>,
}

/// Group every cluster's members (and representative) by image, dropping
/// zero-area boxes for which no transform exists.
fn members_by_image(
    clusters: &[Cluster],
    d: &Dataset,
) -> Result<Vec<BTreeMap<ImageId, Vec<PatchId>>>> {
    clusters
        .iter()
        .map(|c| {
            let mut by_image: BTreeMap<ImageId, Vec<PatchId>> = BTreeMap::new();
            for &m in &c.members {
                let rec = d.try_patch(m)?;
                if rec.bbox.area() == 0.0 || !d.is_positive(rec.image_id) {
                    continue;
                }
                by_image.entry(rec.image_id).or_default().push(m);
            }
            Ok(by_image)
        })
        .collect()
}

/// Enumerate labeled edges between all positive image pairs. Correspondences
/// are hash-grouped by transform bin per image pair, so only same-bin cluster
/// pairs are examined; the pair is kept when both images agree on the
/// relative placement of the two in-image patches. Pairs sharing a patch in
/// either image are skipped.
pub fn build_config_graph(
    clusters: &[Cluster],
    d: &Dataset,
    widths: &BinWidths,
    cell: f64,
) -> Result<ConfigGraph> {
    let by_image = members_by_image(clusters, d)?;
    let nodes: BTreeSet<ImageId> = d.positive_images().into_iter().collect();
    let images: Vec<ImageId> = nodes.iter().copied().collect();

    let mut edges = Vec::new();
    for (i1_idx, &i1) in images.iter().enumerate() {
        for &i2 in &images[i1_idx + 1..] {
            // One correspondence per (cluster, patch-in-i1, patch-in-i2),
            // keyed by the forward transform bin.
            struct Corr {
                cluster: u32,
                a: PatchId,
                b: PatchId,
            }
            let mut by_bin: HashMap<TransformBin, Vec<Corr>> = HashMap::new();
            for (c_idx, members) in by_image.iter().enumerate() {
                let (Some(in_a), Some(in_b)) = (members.get(&i1), members.get(&i2)) else {
                    continue;
                };
                for &a in in_a {
                    for &b in in_b {
                        let t = compute_transform(&d.try_patch(a)?.bbox, &d.try_patch(b)?.bbox)?;
                        by_bin.entry(bin_transform(&t, widths)).or_default().push(
                            Corr {
                                cluster: c_idx as u32,
                                a,
                                b,
                            },
                        );
                    }
                }
            }
            for group in by_bin.values() {
                for (x, ca) in group.iter().enumerate() {
                    for cb in &group[x + 1..] {
                        if ca.cluster == cb.cluster {
                            continue;
                        }
                        // Order so the label's first cluster is the smaller id.
                        let (first, second) = if ca.cluster < cb.cluster {
                            (ca, cb)
                        } else {
                            (cb, ca)
                        };
                        if first.a == second.a || first.b == second.b {
                            continue;
                        }
                        let loc_a = relative_location_bin(
                            &d.try_patch(first.a)?.bbox,
                            &d.try_patch(second.a)?.bbox,
                            cell,
                        );
                        let loc_b = relative_location_bin(
                            &d.try_patch(first.b)?.bbox,
                            &d.try_patch(second.b)?.bbox,
                            cell,
                        );
                        if loc_a != loc_b {
                            continue;
                        }
                        edges.push(ConfigEdge {
                            image_a: i1,
                            image_b: i2,
                            label: ConfigLabel::new(first.cluster, second.cluster, loc_a),
                            pair_a: (first.a, second.a),
                            pair_b: (first.b, second.b),
                        });
                    }
                }
            }
        }
    }
    edges.sort();
    Ok(ConfigGraph { nodes, edges })
}

/// One supporting image of a configuration with its foreground estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationImage {
    pub image_id: ImageId,
    pub b1: PatchId,
    pub b2: PatchId,
    pub foreground: BBox,
}

/// A mined part configuration: the label, its supporting images with their
/// patch pairs, and the mining score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub label: ConfigLabel,
    pub images: Vec<ConfigurationImage>,
    pub score: f64,
}

/// Mining result: ranked configurations, or the single-cluster fallback when
/// no component is large enough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MiningOutcome {
    Configurations(Vec<Configuration>),
    Fallback { fallback_cluster: u32 },
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// For each label, take the largest connected component of its edge subgraph
/// and score it by `α · |component| / |P| + (1−α) · max coverage / |P|`.
/// Configurations are returned best first; if the best one is supported by
/// fewer than `min_component` images, the largest-coverage cluster is
/// returned as a fallback instead.
pub fn mine_configurations(
    g: &ConfigGraph,
    d: &Dataset,
    min_component: usize,
    alpha: f64,
    clusters: &[Cluster],
) -> Result<MiningOutcome> {
    debug_assert!((0.0..=1.0).contains(&alpha));
    if clusters.is_empty() {
        return Err(Error::NoClusters);
    }
    let fallback = || -> MiningOutcome {
        let best = clusters
            .iter()
            .max_by(|a, b| {
                a.coverage
                    .cmp(&b.coverage)
                    .then(b.cluster_id.cmp(&a.cluster_id))
            })
            .expect("nonempty clusters");
        MiningOutcome::Fallback {
            fallback_cluster: best.cluster_id,
        }
    };

    let node_index: BTreeMap<ImageId, usize> =
        g.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let p = g.nodes.len().max(1) as f64;

    let mut by_label: BTreeMap<ConfigLabel, Vec<&ConfigEdge>> = BTreeMap::new();
    for e in &g.edges {
        by_label.entry(e.label).or_default().push(e);
    }

    let mut configs: Vec<Configuration> = Vec::new();
    for (label, edges) in &by_label {
        let mut uf = UnionFind::new(g.nodes.len());
        for e in edges {
            uf.union(node_index[&e.image_a], node_index[&e.image_b]);
        }
        // Largest component among those actually touched by this label's
        // edges; ties prefer the one holding the smallest image id.
        let mut comp_nodes: BTreeMap<usize, BTreeSet<ImageId>> = BTreeMap::new();
        for e in edges {
            for im in [e.image_a, e.image_b] {
                let root = uf.find(node_index[&im]);
                comp_nodes.entry(root).or_default().insert(im);
            }
        }
        let Some((&root, component)) = comp_nodes
            .iter()
            .max_by(|(ra, a), (rb, b)| a.len().cmp(&b.len()).then(rb.cmp(ra)))
        else {
            continue;
        };
        let _ = root;
        // Per supporting image, the patch pair; lexicographically smallest
        // wins if several edges disagree.
        let mut pairs: BTreeMap<ImageId, (PatchId, PatchId)> = BTreeMap::new();
        for e in edges {
            for (im, pair) in [(e.image_a, e.pair_a), (e.image_b, e.pair_b)] {
                if !component.contains(&im) {
                    continue;
                }
                pairs
                    .entry(im)
                    .and_modify(|cur| {
                        if pair < *cur {
                            *cur = pair;
                        }
                    })
                    .or_insert(pair);
            }
        }
        let images = pairs
            .iter()
            .map(|(&image_id, &(b1, b2))| {
                let fg = foreground_box(&d.try_patch(b1)?.bbox, &d.try_patch(b2)?.bbox);
                Ok(ConfigurationImage {
                    image_id,
                    b1,
                    b2,
                    foreground: fg,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_cov = clusters[label.ci as usize]
            .coverage
            .max(clusters[label.cj as usize].coverage);
        let score = alpha * (component.len() as f64 / p) + (1.0 - alpha) * (max_cov as f64 / p);
        configs.push(Configuration {
            label: *label,
            images,
            score,
        });
    }

    configs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.label.cmp(&b.label))
    });
    match configs.first() {
        Some(best) if best.images.len() >= min_component => {
            Ok(MiningOutcome::Configurations(configs))
        }
        _ => Ok(fallback()),
    }
}

/// Tight box around a two-patch configuration.
pub fn foreground_box(b1: &BBox, b2: &BBox) -> BBox {
    geom::union_bbox(b1, b2)
}
