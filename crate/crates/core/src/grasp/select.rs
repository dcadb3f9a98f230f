use std::collections::BTreeMap;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraspCandidate, GraspError};
use crate::geometry::grid::SpatialGrid;
use crate::geometry::PointCloud;
use crate::partseg::SegmentationResult;
use crate::reasoner::{choose_grasp, CandidateInfo, GeomInfo, Reasoner, StagePayload, SupportingInfo};

/// Contact with no object point nearby.
pub const OFF_OBJECT: &str = "off-object";
/// Contact on the object when no point of it belongs to a part.
pub const UNLABELED: &str = "unlabeled";

/// Inputs to grasp selection besides the segmentation.
#[derive(Clone, Debug)]
pub struct SelectionContext {
    pub candidates: Vec<GraspCandidate>,
    pub task: Option<String>,
    pub human_grasp_part: Option<String>,
    /// Send object and part geometry to the reasoner.
    pub include_geometry: bool,
    /// Tell the reasoner which part the human will hold.
    pub include_human_part: bool,
    pub contact_radius: f64,
}

impl SelectionContext {
    pub fn new(candidates: Vec<GraspCandidate>, human_grasp_part: Option<String>) -> Self {
        Self {
            candidates,
            task: None,
            human_grasp_part,
            include_geometry: true,
            include_human_part: true,
            contact_radius: 0.005,
        }
    }
}

/// Point-to-part lookup over a segmentation.
pub struct PartIndex<'a> {
    seg: &'a SegmentationResult,
    grid: SpatialGrid<'a>,
    owner: Vec<Option<&'a str>>,
}

impl<'a> PartIndex<'a> {
    pub fn new(seg: &'a SegmentationResult) -> Self {
        let mut owner = vec![None; seg.object_cloud.len()];
        for label in seg.labels() {
            let (key, part) = seg.parts.get_key_value(&label).expect("label from parts");
            for &i in &part.members {
                owner[i].get_or_insert(key.as_str());
            }
        }
        Self {
            seg,
            grid: SpatialGrid::new(seg.object_cloud.points(), 0.01),
            owner,
        }
    }

    /// Owner of the labeled object point nearest to any of `contacts`.
    fn nearest_label(&self, contacts: &[Point3<f64>]) -> Option<&'a str> {
        let pts = self.seg.object_cloud.points();
        self.owner
            .iter()
            .enumerate()
            .filter_map(|(i, o)| o.map(|l| (i, l)))
            .map(|(i, l)| {
                let d = contacts.iter().map(|c| (pts[i] - c).norm()).fold(f64::INFINITY, f64::min);
                (d, l)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, l)| l)
    }

    /// Majority part among labeled object points within `radius` of any of
    /// `contacts`. Equal votes go to the part whose centroid is nearest to
    /// the contacts' mean. Contacts on unassigned object points take the
    /// part of the nearest labeled point.
    pub fn label_near(&self, contacts: &[Point3<f64>], radius: f64) -> String {
        let mut near = Vec::new();
        for c in contacts {
            near.extend(self.grid.within(c, radius));
        }
        near.sort_unstable();
        near.dedup();
        if near.is_empty() {
            return OFF_OBJECT.to_string();
        }
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for i in near {
            if let Some(l) = self.owner[i] {
                *votes.entry(l).or_default() += 1;
            }
        }
        let Some(&top) = votes.values().max() else {
            return self.nearest_label(contacts).unwrap_or(UNLABELED).to_string();
        };
        let centre = contacts.iter().fold(Point3::origin(), |a, c| a + c.coords / contacts.len() as f64);
        let dist = |l: &str| {
            self.seg.parts[l]
                .cloud
                .centroid()
                .map_or(f64::INFINITY, |c| (c - centre).norm())
        };
        votes
            .into_iter()
            .filter(|&(_, v)| v == top)
            .map(|(l, _)| (dist(l), l))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, l)| l.to_string())
            .expect("non-empty votes")
    }
}

/// Part under a single contact point.
pub fn contact_label(seg: &SegmentationResult, contact: &Point3<f64>, radius: f64) -> String {
    PartIndex::new(seg).label_near(std::slice::from_ref(contact), radius)
}

/// Part a grasp holds: the majority owner of object points within `radius`
/// of either contact.
pub fn grasp_part(candidate: &GraspCandidate, seg: &SegmentationResult, radius: f64) -> String {
    PartIndex::new(seg).label_near(&candidate.contacts, radius)
}

fn human_cloud<'a>(seg: &'a SegmentationResult, human: Option<&str>) -> Option<&'a PointCloud> {
    human
        .and_then(|h| seg.part_containing(h))
        .map(|(_, p)| &p.cloud)
        .filter(|c| !c.is_empty())
}

fn clearance(g: &GraspCandidate, cloud: &PointCloud) -> f64 {
    g.contacts
        .iter()
        .filter_map(|c| cloud.min_distance(c))
        .fold(f64::INFINITY, f64::min)
}

fn r6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn r6v(v: [f64; 3]) -> [f64; 3] {
    v.map(r6)
}

/// Per-candidate records for the reasoner. Human clearance is included only
/// when both geometry and the human part are shared.
pub fn candidate_infos(ctx: &SelectionContext, seg: &SegmentationResult) -> Vec<CandidateInfo> {
    let index = PartIndex::new(seg);
    let human = if ctx.include_geometry && ctx.include_human_part {
        human_cloud(seg, ctx.human_grasp_part.as_deref())
    } else {
        None
    };
    ctx.candidates
        .iter()
        .enumerate()
        .map(|(i, g)| CandidateInfo {
            index: i,
            position_m: r6v(g.translation.coords.into()),
            approach: r6v(g.approach.into()),
            width_m: r6(g.width),
            contacts_m: [r6v(g.contacts[0].coords.into()), r6v(g.contacts[1].coords.into())],
            contact_parts: [
                index.label_near(&g.contacts[..1], ctx.contact_radius),
                index.label_near(&g.contacts[1..], ctx.contact_radius),
            ],
            human_clearance_m: human.map(|h| r6(clearance(g, h))),
        })
        .collect()
}

/// Supporting information for the grasp choice, honoring the context flags.
pub fn selection_info(ctx: &SelectionContext, seg: &SegmentationResult) -> SupportingInfo {
    let mut si = SupportingInfo::new(&seg.object_class, StagePayload::Task);
    si.task = ctx.task.clone();
    if ctx.include_geometry {
        si.object = Some(GeomInfo::from_summary(&seg.object_summary));
        for (label, part) in &seg.parts {
            let g = match &part.summary {
                Some(s) => Some(GeomInfo::from_summary(s)),
                None => GeomInfo::from_cloud(&part.cloud),
            };
            if let Some(g) = g {
                si.parts.insert(label.clone(), g);
            }
        }
    }
    si
}

/// Index of the grasp the reasoner picks.
pub fn select(ctx: &SelectionContext, seg: &SegmentationResult, reasoner: &dyn Reasoner) -> Result<usize, GraspError> {
    if ctx.candidates.is_empty() {
        return Err(GraspError::Input("no grasp candidates to select from".into()));
    }
    if ctx.candidates.len() == 1 {
        return Ok(0);
    }
    let si = selection_info(ctx, seg);
    let human = ctx.human_grasp_part.clone().filter(|_| ctx.include_human_part);
    let i = choose_grasp(&si, candidate_infos(ctx, seg), human, reasoner)?;
    Ok(i)
}

/// Fallback when every candidate touches the human part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeuristicTie {
    /// Farthest grasp centre from the human part centroid.
    Farthest,
    /// Uniform choice with the given seed.
    Random(u64),
}

/// Grasp whose contacts stay farthest from the human part cloud, lowest index
/// on ties. When every candidate has a contact within `contact_radius` of the
/// human part, `tie` decides.
pub fn heuristic_select(
    candidates: &[GraspCandidate],
    human: &PointCloud,
    contact_radius: f64,
    tie: HeuristicTie,
) -> Result<usize, GraspError> {
    if candidates.is_empty() || human.is_empty() {
        return Err(GraspError::Input("heuristic selection needs candidates and a human part cloud".into()));
    }
    let clear: Vec<f64> = candidates.iter().map(|g| clearance(g, human)).collect();
    let argmax = |key: &dyn Fn(usize) -> f64| {
        (1..candidates.len()).fold(0, |best, i| if key(i) > key(best) { i } else { best })
    };
    if clear.iter().any(|&d| d >= contact_radius) {
        return Ok(argmax(&|i| clear[i]));
    }
    match tie {
        HeuristicTie::Farthest => {
            let c = human.centroid().expect("non-empty");
            Ok(argmax(&|i| (candidates[i].translation - c).norm()))
        }
        HeuristicTie::Random(seed) => Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0..candidates.len())),
    }
}
