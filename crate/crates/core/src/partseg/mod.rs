//! Refinement of candidate part masks into a consistent set of labeled 3D parts.

mod backend;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{label_components, label_order_key};
use crate::geometry::{
    crop_to_mask, summarize, unproject, CameraIntrinsics, DepthImage, GeomSummary, GeometryError, Mask2D, PointCloud,
};
use crate::reasoner::{GeomInfo, Reasoner, ReasonerError, SupportingInfo, StagePayload};

pub use backend::{BackendSpec, ExternalBackend, FixtureBackend, SegBackend, StaticBackend};
pub use stages::{detect_missing, fuse, label_unlabeled, refine_masks, Labeling};

#[derive(Debug, Error)]
pub enum PartsegError {
    #[error("segmentation backend: {0}")]
    Backend(String),
    #[error("{stage}: {source}")]
    Geometry {
        stage: &'static str,
        #[source]
        source: GeometryError,
    },
    #[error("{stage}: {source}")]
    Reasoner {
        stage: &'static str,
        #[source]
        source: ReasonerError,
    },
    #[error("invalid segmentation parameters: {0}")]
    Params(String),
}

impl PartsegError {
    pub(crate) fn geometry(stage: &'static str) -> impl FnOnce(GeometryError) -> Self {
        move |source| PartsegError::Geometry { stage, source }
    }

    pub(crate) fn reasoner(stage: &'static str) -> impl FnOnce(ReasonerError) -> Self {
        move |source| PartsegError::Reasoner { stage, source }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    /// Fraction of a mask allowed outside the object before it is discarded.
    pub tol: f64,
    /// Overlap above which two incompatible labels are a contradiction.
    pub overlap_thresh: f64,
    pub eps_floor_m: f64,
    /// Clustering radius as a fraction of the object's dominant length.
    pub eps_scale: f64,
    pub min_pts: usize,
    /// Smallest unlabeled cluster, as a fraction of object points, worth classifying.
    pub significance: f64,
    pub crop_padding: usize,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            tol: 0.05,
            overlap_thresh: 0.5,
            eps_floor_m: 0.005,
            eps_scale: 0.02,
            min_pts: 10,
            significance: 0.05,
            crop_padding: 10,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<(), PartsegError> {
        let frac = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(PartsegError::Params(format!("{name} = {x} is outside [0, 1]")))
            }
        };
        frac("tol", self.tol)?;
        frac("overlap_thresh", self.overlap_thresh)?;
        frac("significance", self.significance)?;
        frac("eps_scale", self.eps_scale)?;
        if !(self.eps_floor_m > 0.0 && self.eps_floor_m.is_finite()) {
            return Err(PartsegError::Params(format!("eps_floor_m = {} must be positive", self.eps_floor_m)));
        }
        if self.min_pts == 0 {
            return Err(PartsegError::Params("min_pts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn eps_for(&self, dominant_length: f64) -> f64 {
        self.eps_floor_m.max(self.eps_scale * dominant_length)
    }
}

/// A candidate part mask from a segmentation backend.
#[derive(Clone, Debug, PartialEq)]
pub struct PartHypothesis {
    pub label: String,
    pub mask: Mask2D,
    pub score: Option<f64>,
}

/// Everything about one observation that the stages share.
#[derive(Clone, Debug)]
pub struct SegContext {
    pub object_class: String,
    pub task: Option<String>,
    pub intrinsics: CameraIntrinsics,
    pub object_mask: Mask2D,
    pub object_cloud: PointCloud,
    pub object_summary: GeomSummary,
    pub params: SegParams,
    depth: DepthImage,
}

impl SegContext {
    pub fn new(
        object_class: &str,
        task: Option<&str>,
        depth: DepthImage,
        intrinsics: CameraIntrinsics,
        object_mask: Mask2D,
        params: SegParams,
    ) -> Result<Self, PartsegError> {
        params.validate()?;
        if object_mask.is_empty() {
            return Err(PartsegError::Geometry {
                stage: "input",
                source: GeometryError::EmptyMask("object"),
            });
        }
        let object_cloud = unproject(&depth, &intrinsics, Some(&object_mask)).map_err(PartsegError::geometry("input"))?;
        let object_summary = summarize(&object_cloud).map_err(PartsegError::geometry("input"))?;
        Ok(Self {
            object_class: object_class.into(),
            task: task.map(str::to_string),
            intrinsics,
            object_mask,
            object_cloud,
            object_summary,
            params,
            depth,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.intrinsics.dims()
    }

    /// Clustering radius for this object.
    pub fn eps(&self) -> f64 {
        self.params.eps_for(self.object_summary.dominant_length)
    }

    /// Geometry of the object points inside `mask`.
    pub(crate) fn region_info(&self, mask: &Mask2D) -> Option<GeomInfo> {
        let m = mask.intersection(&self.object_mask).ok()?;
        let cloud = unproject(&self.depth, &self.intrinsics, Some(&m)).ok()?;
        GeomInfo::from_cloud(&cloud)
    }

    /// Scene context shared by every reasoner query; parts get their current geometry.
    pub(crate) fn base_info(&self, labeling: &Labeling) -> SupportingInfo {
        let mut si = SupportingInfo::new(&self.object_class, StagePayload::Task);
        si.task = self.task.clone();
        si.object = Some(GeomInfo::from_summary(&self.object_summary));
        for (label, members) in &labeling.members {
            if let Some(g) = GeomInfo::from_cloud(&self.object_cloud.select(members)) {
                si.parts.insert(label.clone(), g);
            }
        }
        si
    }
}

/// One labeled part of the result.
#[derive(Clone, Debug, PartialEq)]
pub struct PartData {
    /// May overlap a compatible part's mask.
    pub mask: Mask2D,
    /// Indices into the object cloud, ascending.
    pub members: Vec<usize>,
    pub cloud: PointCloud,
    /// `None` when the part is too small or flat to summarize.
    pub summary: Option<GeomSummary>,
}

/// Snapshot after a pipeline stage, for the decision trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: String,
    /// Point count per label.
    pub parts: BTreeMap<String, usize>,
    pub unassigned_fraction: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SegmentationResult {
    pub object_class: String,
    pub parts: BTreeMap<String, PartData>,
    pub object_cloud: PointCloud,
    pub object_summary: GeomSummary,
    pub unassigned_fraction: f64,
    /// Expected parts no cluster could be found for.
    pub unidentified: Vec<String>,
    pub stages: Vec<StageRecord>,
}

impl SegmentationResult {
    /// Labels in taxonomy order.
    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.parts.keys().cloned().collect();
        l.sort_by_key(|n| label_order_key(&self.object_class, n));
        l
    }

    /// The part whose label is `name` or has `name` as a merged component.
    pub fn part_containing(&self, name: &str) -> Option<(&str, &PartData)> {
        if let Some((k, p)) = self.parts.get_key_value(name) {
            return Some((k, p));
        }
        self.labels().into_iter().find_map(|l| {
            label_components(&l)
                .contains(&name)
                .then(|| self.parts.get_key_value(&l).map(|(k, p)| (k.as_str(), p)))
                .flatten()
        })
    }

    /// Part masks as backend-style hypotheses, in taxonomy order.
    pub fn to_hypotheses(&self) -> Vec<PartHypothesis> {
        self.labels()
            .into_iter()
            .map(|l| PartHypothesis {
                mask: self.parts[&l].mask.clone(),
                label: l,
                score: None,
            })
            .collect()
    }

    pub fn labeling(&self) -> Labeling {
        Labeling {
            masks: self.parts.iter().map(|(k, p)| (k.clone(), p.mask.clone())).collect(),
            members: self.parts.iter().map(|(k, p)| (k.clone(), p.members.clone())).collect(),
        }
    }

    /// Checks containment, disjointness and point conservation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.object_cloud.len();
        let mut owner = vec![None::<&str>; n];
        for (label, p) in &self.parts {
            if p.members.is_empty() {
                return Err(format!("part '{label}' has no points"));
            }
            if p.cloud.len() != p.members.len() {
                return Err(format!("part '{label}' cloud and members differ in size"));
            }
            for (k, &i) in p.members.iter().enumerate() {
                if i >= n {
                    return Err(format!("part '{label}' member {i} outside object cloud"));
                }
                if let Some(other) = owner[i] {
                    return Err(format!("point {i} in both '{other}' and '{label}'"));
                }
                owner[i] = Some(label);
                if p.cloud.pixels().map(|px| px[k]) != self.object_cloud.pixels().map(|px| px[i]) {
                    return Err(format!("part '{label}' point {k} does not match object point {i}"));
                }
            }
        }
        let unassigned = owner.iter().filter(|o| o.is_none()).count();
        let assigned: usize = self.parts.values().map(|p| p.members.len()).sum();
        if assigned + unassigned != n {
            return Err(format!("{assigned} assigned + {unassigned} unassigned != {n}"));
        }
        let frac = if n == 0 { 0.0 } else { unassigned as f64 / n as f64 };
        if !(0.0..=1.0).contains(&self.unassigned_fraction) || (frac - self.unassigned_fraction).abs() > 1e-12 {
            return Err(format!(
                "unassigned_fraction {} but {unassigned}/{n} points are unassigned",
                self.unassigned_fraction
            ));
        }
        Ok(())
    }

    /// Writes one mask PNG and one ASCII PLY per part plus `segmentation.json`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut index = BTreeMap::new();
        for label in self.labels() {
            let p = &self.parts[&label];
            let stem = label.replace([' ', '+'], "_");
            let mask_file = format!("{stem}_mask.png");
            let cloud_file = format!("{stem}.ply");
            p.mask
                .save_png(&dir.join(&mask_file))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            std::fs::write(dir.join(&cloud_file), ply(&p.cloud))?;
            index.insert(
                label.clone(),
                serde_json::json!({
                    "mask": mask_file,
                    "cloud": cloud_file,
                    "pixels": p.mask.count(),
                    "points": p.members.len(),
                    "summary": p.summary,
                }),
            );
        }
        let doc = serde_json::json!({
            "object_class": self.object_class,
            "object_points": self.object_cloud.len(),
            "object_summary": self.object_summary,
            "unassigned_fraction": self.unassigned_fraction,
            "unidentified": self.unidentified,
            "parts": index,
            "stages": self.stages,
        });
        std::fs::write(
            dir.join("segmentation.json"),
            serde_json::to_string_pretty(&doc).expect("document serializes") + "\n",
        )
    }
}

fn ply(cloud: &PointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for p in cloud.points() {
        s.push_str(&format!("{:.6} {:.6} {:.6}\n", p.x, p.y, p.z));
    }
    s
}

/// One observation to segment.
#[derive(Clone, Debug)]
pub struct SegInput {
    pub object_class: String,
    pub rgb: PathBuf,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub object_mask: Mask2D,
    /// Parts the task needs, usually the plan's relevant parts.
    pub expected: Vec<String>,
    pub task: Option<String>,
}

/// crop, propose, refine, fuse, recover missing parts, label leftovers.
pub fn segment(
    input: &SegInput,
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
    params: &SegParams,
) -> Result<SegmentationResult, PartsegError> {
    let (w, h) = input.intrinsics.dims();
    let crop = crop_to_mask(w, h, &input.object_mask, params.crop_padding).map_err(PartsegError::geometry("crop"))?;
    let hypotheses = backend.propose(&input.rgb, crop, (w, h))?;
    let ctx = SegContext::new(
        &input.object_class,
        input.task.as_deref(),
        input.depth.clone(),
        input.intrinsics,
        input.object_mask.clone(),
        params.clone(),
    )?;
    run_stages(&ctx, hypotheses, &input.expected, reasoner)
}

/// Refine, fuse and recover starting from existing hypotheses.
pub fn run_stages(
    ctx: &SegContext,
    hypotheses: Vec<PartHypothesis>,
    expected: &[String],
    reasoner: &dyn Reasoner,
) -> Result<SegmentationResult, PartsegError> {
    let mut stages = Vec::new();
    let proposed = hypotheses.len();
    let (refined, mut notes) = refine_masks(ctx, hypotheses, reasoner)?;
    notes.insert(0, format!("{proposed} hypotheses proposed, {} kept", refined.len()));
    let mut labeling = fuse(ctx, &refined);
    stages.push(labeling.record(ctx, "refine", notes));

    let (unidentified, notes) = detect_missing(ctx, &mut labeling, expected, reasoner)?;
    stages.push(labeling.record(ctx, "detect_missing", notes));

    let notes = label_unlabeled(ctx, &mut labeling, reasoner)?;
    stages.push(labeling.record(ctx, "label_unlabeled", notes));

    Ok(labeling.finish(ctx, unidentified, stages))
}
