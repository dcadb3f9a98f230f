use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{taxonomy, DatasetError};
use crate::geometry::{CameraIntrinsics, DepthImage, GeometryError, Mask2D};

pub const MANIFEST_FILE: &str = "dataset.json";

/// On-disk manifest: paths are relative to the manifest directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub object_class: String,
    pub instance_id: String,
    pub pose_id: String,
    pub rgb: String,
    pub depth: String,
    pub intrinsics: CameraIntrinsics,
    pub object_mask: String,
    /// Part name to mask path, ordered by name for stable serialization.
    #[serde(default)]
    pub parts: BTreeMap<String, String>,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        entry_id(&self.object_class, &self.instance_id, &self.pose_id)
    }
}

fn entry_id(class: &str, instance: &str, pose: &str) -> String {
    format!("{}/{}/{}", class, instance, pose)
}

/// A loaded observation with ground-truth part masks.
#[derive(Clone, Debug)]
pub struct DatasetEntry {
    pub object_class: String,
    pub instance_id: String,
    pub pose_id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub intrinsics: CameraIntrinsics,
    pub object_mask: Mask2D,
    /// Ground-truth masks clipped to the object mask; may overlap.
    pub gt_part_masks: BTreeMap<String, Mask2D>,
    /// Pixels claimed by two annotated parts, as `(first, second, count)` in taxonomy order.
    pub overlaps: Vec<(String, String, usize)>,
}

impl DatasetEntry {
    pub fn id(&self) -> String {
        entry_id(&self.object_class, &self.instance_id, &self.pose_id)
    }

    pub fn load_depth(&self) -> Result<DepthImage, DatasetError> {
        let depth = DepthImage::load_png(&self.depth).map_err(|e| self.err(e))?;
        if depth.dims() != self.intrinsics.dims() {
            return Err(self.err(GeometryError::DimensionMismatch {
                expected: self.intrinsics.dims(),
                found: depth.dims(),
            }));
        }
        Ok(depth)
    }

    fn err(&self, e: impl std::fmt::Display) -> DatasetError {
        DatasetError::Entry {
            entry: self.id(),
            message: e.to_string(),
        }
    }

    /// Part names in taxonomy order.
    pub fn part_names(&self) -> Vec<String> {
        ordered_parts(&self.object_class, self.gt_part_masks.keys())
    }

    /// Pairwise-disjoint view: a pixel claimed by several parts goes to the
    /// earliest one in taxonomy order.
    pub fn hard_labels(&self) -> BTreeMap<String, Mask2D> {
        hard_label_view(&self.object_class, &self.gt_part_masks)
    }
}

fn ordered_parts<'a>(class: &str, names: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut names: Vec<String> = names.cloned().collect();
    names.sort_by_key(|n| super::label_order_key(class, n));
    names
}

/// Resolves overlapping masks by taxonomy priority; inputs must share dimensions.
pub fn hard_label_view(class: &str, masks: &BTreeMap<String, Mask2D>) -> BTreeMap<String, Mask2D> {
    let mut claimed: Option<Mask2D> = None;
    let mut out = BTreeMap::new();
    for name in ordered_parts(class, masks.keys()) {
        let m = &masks[&name];
        let own = match &claimed {
            Some(c) => m.difference(c).expect("masks share dimensions"),
            None => m.clone(),
        };
        claimed = Some(match claimed {
            Some(c) => c.union(m).expect("masks share dimensions"),
            None => m.clone(),
        });
        out.insert(name, own);
    }
    out
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| DatasetError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads every manifest entry under `root`, in manifest order.
///
/// Depth is validated by header only and decoded on demand.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetEntry>, DatasetError> {
    let manifest = read_manifest(root)?;
    manifest.entries.iter().map(|e| load_entry(root, e)).collect()
}

fn load_entry(root: &Path, m: &ManifestEntry) -> Result<DatasetEntry, DatasetError> {
    let err = |message: String| DatasetError::Entry {
        entry: m.id(),
        message,
    };
    let tax = taxonomy();
    let Some(_) = tax.parts(&m.object_class) else {
        return Err(err(format!("unknown object class '{}'", m.object_class)));
    };
    for part in m.parts.keys() {
        if !tax.contains_part(&m.object_class, part) {
            return Err(err(format!(
                "part '{}' is not a part of class '{}'",
                part, m.object_class
            )));
        }
    }
    m.intrinsics.validate().map_err(|e| err(e.to_string()))?;
    let dims = m.intrinsics.dims();

    let check_dims = |rel: &str| -> Result<PathBuf, DatasetError> {
        let path = root.join(rel);
        let (w, h) = image::image_dimensions(&path)
            .map_err(|e| err(format!("{}: {}", path.display(), e)))?;
        if (w as usize, h as usize) != dims {
            return Err(err(format!(
                "{}: size {}x{} does not match intrinsics {}x{}",
                path.display(),
                w,
                h,
                dims.0,
                dims.1
            )));
        }
        Ok(path)
    };
    let rgb = check_dims(&m.rgb)?;
    let depth = check_dims(&m.depth)?;
    let load_mask = |rel: &str| -> Result<Mask2D, DatasetError> {
        let path = check_dims(rel)?;
        Mask2D::load_png(&path).map_err(|e| err(e.to_string()))
    };
    let object_mask = load_mask(&m.object_mask)?;

    let mut gt = BTreeMap::new();
    for (part, rel) in &m.parts {
        let mask = load_mask(rel)?
            .intersection(&object_mask)
            .map_err(|e| err(e.to_string()))?;
        gt.insert(part.clone(), mask);
    }

    let names = ordered_parts(&m.object_class, gt.keys());
    let mut overlaps = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let shared = gt[a].intersection_count(&gt[b]).map_err(|e| err(e.to_string()))?;
            if shared > 0 {
                overlaps.push((a.clone(), b.clone(), shared));
            }
        }
    }

    Ok(DatasetEntry {
        object_class: m.object_class.clone(),
        instance_id: m.instance_id.clone(),
        pose_id: m.pose_id.clone(),
        rgb,
        depth,
        intrinsics: m.intrinsics,
        object_mask,
        gt_part_masks: gt,
        overlaps,
    })
}
