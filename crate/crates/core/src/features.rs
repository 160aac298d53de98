//! Feature storage, cosine distance, and the per-image best-match
//! neighborhood construction.
//!
//! A query patch first picks its single best match in every other image
//! (whatever that image's label), then keeps the K smallest-distance matches;
//! the rest are discarded. Ties break on (distance, image_id, patch_id) so the
//! result is independent of patch ordering.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BBox;

/// Dataset-unique candidate patch identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PatchId(pub u64);

/// Image identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ImageId(pub u64);

impl std::fmt::Display for PatchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for ImageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageLabel {
    Positive,
    Negative,
}

/// Fixed-length descriptor attached to a candidate patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// L2-normalized copy in f64; `None` for the all-zero vector.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let n = self.l2_norm();
        if n == 0.0 {
            None
        } else {
            Some(self.0.iter().map(|&v| v as f64 / n).collect())
        }
    }
}

/// Cosine distance `1 - <a, b>` on L2-normalized inputs.
///
/// Any all-zero operand yields 1. Dimension mismatch is an error.
pub fn distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    match (a.normalized(), b.normalized()) {
        (Some(na), Some(nb)) => Ok(1.0 - dot(&na, &nb)),
        _ => Ok(1.0),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: ImageId,
    pub width: f64,
    pub height: f64,
    pub label: ImageLabel,
}

/// A candidate box plus its feature vector and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: PatchId,
    pub image_id: ImageId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub feature: FeatureVector,
}

/// Immutable collection of images and candidate patches with a shared
/// feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<ImageInfo>,
    patches: Vec<PatchRecord>,
    dim: usize,
    patch_index: HashMap<PatchId, usize>,
    image_index: HashMap<ImageId, usize>,
    image_patches: HashMap<ImageId, Vec<usize>>,
}

impl Dataset {
    pub fn new(images: Vec<ImageInfo>, patches: Vec<PatchRecord>, dim: usize) -> Result<Self> {
        let mut image_index = HashMap::new();
        for (i, im) in images.iter().enumerate() {
            if image_index.insert(im.image_id, i).is_some() {
                return Err(Error::Malformed(format!("duplicate image id {}", im.image_id)));
            }
        }
        let mut patch_index = HashMap::new();
        let mut image_patches: HashMap<ImageId, Vec<usize>> = HashMap::new();
        for (i, p) in patches.iter().enumerate() {
            if patch_index.insert(p.patch_id, i).is_some() {
                return Err(Error::DuplicatePatch(p.patch_id.0));
            }
            let Some(&im_idx) = image_index.get(&p.image_id) else {
                return Err(Error::UnknownImage(p.image_id.0));
            };
            let im = &images[im_idx];
            let extent = BBox::new(0.0, 0.0, im.width, im.height);
            if !p.bbox.is_valid() || !extent.contains(&p.bbox) {
                return Err(Error::PatchOutsideImage {
                    patch: p.patch_id.0,
                    image: p.image_id.0,
                });
            }
            if p.feature.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: p.feature.dim(),
                    right: dim,
                });
            }
            image_patches.entry(p.image_id).or_default().push(i);
        }
        Ok(Dataset {
            images,
            patches,
            dim,
            patch_index,
            image_index,
            image_patches,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn patches(&self) -> &[PatchRecord] {
        &self.patches
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageInfo> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn patch(&self, id: PatchId) -> Option<&PatchRecord> {
        self.patch_index.get(&id).map(|&i| &self.patches[i])
    }

    pub fn try_patch(&self, id: PatchId) -> Result<&PatchRecord> {
        self.patch(id).ok_or(Error::UnknownPatch(id.0))
    }

    /// Patches of one image, in insertion order.
    pub fn patches_of_image(&self, id: ImageId) -> impl Iterator<Item = &PatchRecord> {
        self.image_patches
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.patches[i])
    }

    /// Image ids carrying a positive label, ascending.
    pub fn positive_images(&self) -> Vec<ImageId> {
        let mut ids: Vec<ImageId> = self
            .images
            .iter()
            .filter(|im| im.label == ImageLabel::Positive)
            .map(|im| im.image_id)
            .collect();
        ids.sort();
        ids
    }

    pub fn is_positive(&self, id: ImageId) -> bool {
        self.image(id).map_or(false, |im| im.label == ImageLabel::Positive)
    }
}

/// One kept match of a query patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub patch_id: PatchId,
    pub image_id: ImageId,
    pub distance: f64,
}

/// The K closest per-image best matches of one query patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub owner: PatchId,
    pub neighbors: Vec<NeighborEntry>,
}

/// Default neighborhood size: half the number of positive images, at least 1.
pub fn default_k(positive_count: usize) -> usize {
    (positive_count / 2).max(1)
}

/// Build neighborhoods for every patch of every positive image.
///
/// For each query patch the single best match in each other image (positive
/// and negative) is selected, then the K smallest-distance matches are kept.
/// Errors with `InsufficientImages` when the dataset has fewer than 2 images.
pub fn build_neighborhoods(
    d: &Dataset,
    k: usize,
) -> Result<BTreeMap<PatchId, Neighborhood>> {
    if d.images().len() < 2 {
        return Err(Error::InsufficientImages {
            found: d.images().len(),
        });
    }
    // Normalized features, indexed like d.patches().
    let normalized: Vec<Option<Vec<f64>>> =
        d.patches().iter().map(|p| p.feature.normalized()).collect();

    let queries: Vec<&PatchRecord> = d
        .patches()
        .iter()
        .filter(|p| d.is_positive(p.image_id))
        .collect();

    let entries: Vec<(PatchId, Neighborhood)> = queries
        .par_iter()
        .map(|query| {
            let qi = *d.patch_index.get(&query.patch_id).expect("query indexed");
            let qn = normalized[qi].as_deref();
            let mut best = best_match_per_image(d, &normalized, query, qn);
            // Keep the K closest per-image champions.
            best.sort_by(|a, b| {
                a.distance
                    .partial_cmp(&b.distance)
                    .unwrap()
                    .then(a.image_id.cmp(&b.image_id))
                    .then(a.patch_id.cmp(&b.patch_id))
            });
            best.truncate(k);
            (
                query.patch_id,
                Neighborhood {
                    owner: query.patch_id,
                    neighbors: best,
                },
            )
        })
        .collect();

    Ok(entries.into_iter().collect())
}

fn best_match_per_image(
    d: &Dataset,
    normalized: &[Option<Vec<f64>>],
    query: &PatchRecord,
    query_norm: Option<&[f64]>,
) -> Vec<NeighborEntry> {
    let mut champions = Vec::with_capacity(d.images().len() - 1);
    for im in d.images() {
        if im.image_id == query.image_id {
            continue;
        }
        let mut best: Option<(f64, PatchId)> = None;
        for (idx, p) in d
            .image_patches
            .get(&im.image_id)
            .into_iter()
            .flatten()
            .map(|&i| (i, &d.patches[i]))
        {
            let dist = match (query_norm, normalized[idx].as_deref()) {
                (Some(a), Some(b)) => 1.0 - dot(a, b),
                _ => 1.0,
            };
            let better = match best {
                None => true,
                Some((bd, bid)) => dist < bd || (dist == bd && p.patch_id < bid),
            };
            if better {
                best = Some((dist, p.patch_id));
            }
        }
        if let Some((dist, pid)) = best {
            champions.push(NeighborEntry {
                patch_id: pid,
                image_id: im.image_id,
                distance: dist,
            });
        }
    }
    champions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f32]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    #[test]
    fn distance_self_is_zero() {
        let v = fv(&[0.3, -0.7, 2.0]);
        assert!(distance(&v, &v).unwrap().abs() < 1e-12);
    }

    #[test]
    fn distance_orthogonal_unit() {
        let a = fv(&[1.0, 0.0]);
        let b = fv(&[0.0, 1.0]);
        assert_eq!(distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn distance_worked_example() {
        let a = fv(&[1.0, 0.0]);
        let b = fv(&[1.0, 1.0]);
        let expect = 1.0 - 1.0 / 2f64.sqrt();
        assert!((distance(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn distance_zero_vector_is_one() {
        let z = fv(&[0.0, 0.0]);
        let a = fv(&[1.0, 0.0]);
        assert_eq!(distance(&z, &a).unwrap(), 1.0);
        assert_eq!(distance(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let a = fv(&[1.0]);
        let b = fv(&[1.0, 0.0]);
        assert!(matches!(
            distance(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn default_k_floors_at_one() {
        assert_eq!(default_k(0), 1);
        assert_eq!(default_k(1), 1);
        assert_eq!(default_k(5), 2);
        assert_eq!(default_k(16), 8);
    }

    fn toy_dataset() -> Dataset {
        // 3 images, 1-2 patches each, dim 2.
        let images = vec![
            ImageInfo {
                image_id: ImageId(0),
                width: 100.0,
                height: 100.0,
                label: ImageLabel::Positive,
            },
            ImageInfo {
                image_id: ImageId(1),
                width: 100.0,
                height: 100.0,
                label: ImageLabel::Positive,
            },
            ImageInfo {
                image_id: ImageId(2),
                width: 100.0,
                height: 100.0,
                label: ImageLabel::Negative,
            },
        ];
        let bx = BBox::new(0.0, 0.0, 10.0, 10.0);
        let patches = vec![
            PatchRecord {
                patch_id: PatchId(0),
                image_id: ImageId(0),
                bbox: bx,
                feature: fv(&[1.0, 0.0]),
            },
            PatchRecord {
                patch_id: PatchId(1),
                image_id: ImageId(1),
                bbox: bx,
                feature: fv(&[1.0, 0.0]),
            },
            PatchRecord {
                patch_id: PatchId(2),
                image_id: ImageId(1),
                bbox: bx,
                feature: fv(&[0.0, 1.0]),
            },
            PatchRecord {
                patch_id: PatchId(3),
                image_id: ImageId(2),
                bbox: bx,
                feature: fv(&[0.7, 0.7]),
            },
        ];
        Dataset::new(images, patches, 2).unwrap()
    }

    #[test]
    fn exact_duplicate_is_rank_one() {
        let d = toy_dataset();
        let n = build_neighborhoods(&d, 3).unwrap();
        let hood = &n[&PatchId(0)];
        assert_eq!(hood.neighbors[0].patch_id, PatchId(1));
        assert!(hood.neighbors[0].distance.abs() < 1e-12);
        // one champion per foreign image
        assert_eq!(hood.neighbors.len(), 2);
    }

    #[test]
    fn truncates_to_k() {
        let d = toy_dataset();
        let n = build_neighborhoods(&d, 1).unwrap();
        assert_eq!(n[&PatchId(0)].neighbors.len(), 1);
    }

    #[test]
    fn queries_are_positive_image_patches_only() {
        let d = toy_dataset();
        let n = build_neighborhoods(&d, 2).unwrap();
        assert!(n.contains_key(&PatchId(0)));
        assert!(n.contains_key(&PatchId(2)));
        assert!(!n.contains_key(&PatchId(3)));
    }

    #[test]
    fn insufficient_images_error() {
        let images = vec![ImageInfo {
            image_id: ImageId(0),
            width: 10.0,
            height: 10.0,
            label: ImageLabel::Positive,
        }];
        let d = Dataset::new(images, vec![], 2).unwrap();
        assert!(matches!(
            build_neighborhoods(&d, 1),
            Err(Error::InsufficientImages { found: 1 })
        ));
    }

    #[test]
    fn dataset_rejects_out_of_extent_patch() {
        let images = vec![
            ImageInfo {
                image_id: ImageId(0),
                width: 10.0,
                height: 10.0,
                label: ImageLabel::Positive,
            },
            ImageInfo {
                image_id: ImageId(1),
                width: 10.0,
                height: 10.0,
                label: ImageLabel::Positive,
            },
        ];
        let patches = vec![PatchRecord {
            patch_id: PatchId(0),
            image_id: ImageId(0),
            bbox: BBox::new(0.0, 0.0, 11.0, 5.0),
            feature: fv(&[1.0]),
        }];
        assert!(matches!(
            Dataset::new(images, patches, 1),
            Err(Error::PatchOutsideImage { .. })
        ));
    }
}
