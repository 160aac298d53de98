//! Dataset file formats.
//!
//! A dataset on disk is a JSON-lines manifest plus a binary feature file.
//! The manifest's first line names the feature file; each following line is
//! one image with its candidate patches. The feature file is little-endian:
//! magic `PCFV`, u32 version, u32 dim, u64 count, then `count * dim` IEEE-754
//! f32 values row-major. Row i belongs to the i-th patch of the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    Dataset, FeatureVector, ImageId, ImageInfo, ImageLabel, PatchId, PatchRecord,
};
use crate::geom::BBox;

const FEATURE_MAGIC: &[u8; 4] = b"PCFV";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub feature_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestPatch {
    pub patch_id: PatchId,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestImage {
    pub image_id: ImageId,
    pub width: f64,
    pub height: f64,
    pub label: ImageLabel,
    pub patches: Vec<ManifestPatch>,
}

/// Write manifest + feature file. Feature rows follow manifest patch order.
pub fn save_dataset(d: &Dataset, manifest_path: &Path, feature_file_name: &str) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let feature_path = dir.join(feature_file_name);

    let mut manifest = BufWriter::new(File::create(manifest_path)?);
    let header = ManifestHeader {
        feature_file: feature_file_name.to_string(),
    };
    serde_json::to_writer(&mut manifest, &header)?;
    manifest.write_all(b"\n")?;

    let mut rows: Vec<&FeatureVector> = Vec::with_capacity(d.patches().len());
    for im in d.images() {
        let patches: Vec<ManifestPatch> = d
            .patches_of_image(im.image_id)
            .map(|p| {
                rows.push(&p.feature);
                ManifestPatch {
                    patch_id: p.patch_id,
                    bbox: p.bbox,
                }
            })
            .collect();
        let line = ManifestImage {
            image_id: im.image_id,
            width: im.width,
            height: im.height,
            label: im.label,
            patches,
        };
        serde_json::to_writer(&mut manifest, &line)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;

    write_feature_file(&feature_path, d.dim(), &rows)
}

fn write_feature_file(path: &Path, dim: usize, rows: &[&FeatureVector]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for row in rows {
        debug_assert_eq!(row.dim(), dim);
        for &v in row.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<(usize, Vec<FeatureVector>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Malformed(format!(
            "bad feature file magic {magic:?} in {}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::Malformed(format!("unsupported feature file version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    let mut data = vec![0u8; dim * 4];
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut data)?;
        let values: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        rows.push(FeatureVector(values));
    }
    Ok((dim, rows))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Load a dataset given its manifest path; the feature file is resolved
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let file = File::open(manifest_path)?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines
        .next()
        .ok_or_else(|| Error::Malformed("empty manifest".into()))??;
    let header: ManifestHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Malformed(format!("manifest header: {e}")))?;

    let mut images = Vec::new();
    let mut manifest_patches: Vec<(ImageId, ManifestPatch)> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let im: ManifestImage = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("manifest image line: {e}")))?;
        images.push(ImageInfo {
            image_id: im.image_id,
            width: im.width,
            height: im.height,
            label: im.label,
        });
        for p in im.patches {
            manifest_patches.push((im.image_id, p));
        }
    }

    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let feature_path: PathBuf = dir.join(&header.feature_file);
    let (dim, rows) = read_feature_file(&feature_path)?;
    if rows.len() != manifest_patches.len() {
        return Err(Error::Malformed(format!(
            "feature file has {} rows but manifest lists {} patches",
            rows.len(),
            manifest_patches.len()
        )));
    }

    let patches: Vec<PatchRecord> = manifest_patches
        .into_iter()
        .zip(rows)
        .map(|((image_id, mp), feature)| PatchRecord {
            patch_id: mp.patch_id,
            image_id,
            bbox: mp.bbox,
            feature,
        })
        .collect();

    Dataset::new(images, patches, dim)
}

/// Ground-truth (or estimate) box per image, serialized as a JSON object
/// keyed by image id.
pub fn save_box_map(map: &BTreeMap<ImageId, BBox>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, map)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_box_map(path: &Path) -> Result<BTreeMap<ImageId, BBox>> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_dataset() -> Dataset {
        let images = vec![
            ImageInfo {
                image_id: ImageId(0),
                width: 64.0,
                height: 48.0,
                label: ImageLabel::Positive,
            },
            ImageInfo {
                image_id: ImageId(1),
                width: 64.0,
                height: 48.0,
                label: ImageLabel::Negative,
            },
        ];
        let patches = vec![
            PatchRecord {
                patch_id: PatchId(10),
                image_id: ImageId(0),
                bbox: BBox::new(1.0, 2.0, 11.0, 12.0),
                feature: FeatureVector(vec![0.25, -1.5, 3.0]),
            },
            PatchRecord {
                patch_id: PatchId(11),
                image_id: ImageId(1),
                bbox: BBox::new(0.0, 0.0, 64.0, 48.0),
                feature: FeatureVector(vec![1.0, 0.0, -2.0]),
            },
        ];
        Dataset::new(images, patches, 3).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempdir().unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        let d = tiny_dataset();
        save_dataset(&d, &manifest, "features.pcfv").unwrap();

        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back.dim(), 3);
        assert_eq!(back.images(), d.images());
        assert_eq!(back.patches(), d.patches());
    }

    #[test]
    fn feature_file_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f.pcfv");
        let rows = vec![
            FeatureVector(vec![f32::MIN_POSITIVE, 1.5e-7, -0.0]),
            FeatureVector(vec![1.0, 2.0, 3.0]),
        ];
        let refs: Vec<&FeatureVector> = rows.iter().collect();
        write_feature_file(&path, 3, &refs).unwrap();
        let (dim, back) = read_feature_file(&path).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pcfv");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_feature_file(&path), Err(Error::Malformed(_))));
    }

    #[test]
    fn rejects_row_count_mismatch() {
        let dir = tempdir().unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        let d = tiny_dataset();
        save_dataset(&d, &manifest, "features.pcfv").unwrap();
        // Truncate the feature file to one row.
        let feature_path = dir.path().join("features.pcfv");
        let rows = vec![FeatureVector(vec![1.0, 2.0, 3.0])];
        let refs: Vec<&FeatureVector> = rows.iter().collect();
        write_feature_file(&feature_path, 3, &refs).unwrap();
        assert!(matches!(load_dataset(&manifest), Err(Error::Malformed(_))));
    }

    #[test]
    fn box_map_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("gt.json");
        let mut map = BTreeMap::new();
        map.insert(ImageId(0), BBox::new(0.0, 0.0, 10.0, 20.0));
        map.insert(ImageId(7), BBox::new(1.0, 2.0, 3.0, 4.0));
        save_box_map(&map, &path).unwrap();
        assert_eq!(load_box_map(&path).unwrap(), map);
    }
}
