use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Point3, Vector3};

use super::{PartData, PartHypothesis, PartsegError, SegContext, SegmentationResult, StageRecord};
use crate::dataset::{label_components, label_order_key, merge_label, taxonomy};
use crate::geometry::grid::SpatialGrid;
use crate::geometry::{containment_ratio, dbscan, summarize, GeomSummary, Mask2D, PointCloud};
use crate::reasoner::{
    assign_cluster_labels, classify_unlabeled, compatible, resolve_contradiction, round_si, ClusterInfo, GeomInfo,
    NeighborInfo, Reasoner, SupportingInfo,
};

/// Current label state: each label's mask and the object points it owns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Labeling {
    pub masks: BTreeMap<String, Mask2D>,
    /// Ascending indices into the object cloud; pairwise disjoint.
    pub members: BTreeMap<String, Vec<usize>>,
}

impl Labeling {
    pub fn residual(&self, n: usize) -> Vec<usize> {
        let mut owned = vec![false; n];
        for m in self.members.values() {
            for &i in m {
                owned[i] = true;
            }
        }
        (0..n).filter(|&i| !owned[i]).collect()
    }

    pub fn unassigned_fraction(&self, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.residual(n).len() as f64 / n as f64
    }

    /// Whether `part` is a label or a component of a merged label.
    fn covers(&self, part: &str) -> bool {
        self.members.keys().any(|l| label_components(l).contains(&part))
    }

    fn add(&mut self, ctx: &SegContext, label: &str, indices: &[usize]) {
        let (w, h) = ctx.dims();
        let cluster_mask = ctx.object_cloud.select(indices).to_mask(w, h).expect("object cloud has pixels");
        let mask = match self.masks.get(label) {
            Some(m) => m.union(&cluster_mask).expect("same dims"),
            None => cluster_mask,
        };
        self.masks.insert(label.to_string(), mask);
        let members = self.members.entry(label.to_string()).or_default();
        members.extend_from_slice(indices);
        members.sort_unstable();
        members.dedup();
    }

    pub(crate) fn record(&self, ctx: &SegContext, stage: &str, notes: Vec<String>) -> StageRecord {
        StageRecord {
            stage: stage.into(),
            parts: self.members.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            unassigned_fraction: self.unassigned_fraction(ctx.object_cloud.len()),
            notes,
        }
    }

    pub(crate) fn finish(self, ctx: &SegContext, unidentified: Vec<String>, stages: Vec<StageRecord>) -> SegmentationResult {
        let n = ctx.object_cloud.len();
        let unassigned_fraction = self.unassigned_fraction(n);
        let mut parts = BTreeMap::new();
        for (label, members) in self.members {
            let cloud = ctx.object_cloud.select(&members);
            let summary = summarize(&cloud).ok();
            parts.insert(
                label.clone(),
                PartData {
                    mask: self.masks[&label].clone(),
                    members,
                    cloud,
                    summary,
                },
            );
        }
        SegmentationResult {
            object_class: ctx.object_class.clone(),
            parts,
            object_cloud: ctx.object_cloud.clone(),
            object_summary: ctx.object_summary,
            unassigned_fraction,
            unidentified,
            stages,
        }
    }
}

/// Drops hypotheses that stray outside the object, clips the rest, merges
/// equal labels, and settles strongly overlapping incompatible pairs.
pub fn refine_masks(
    ctx: &SegContext,
    hypotheses: Vec<PartHypothesis>,
    reasoner: &dyn Reasoner,
) -> Result<(Vec<PartHypothesis>, Vec<String>), PartsegError> {
    let stage = "refine";
    let p = &ctx.params;
    let mut notes = Vec::new();
    let mut kept: Vec<PartHypothesis> = Vec::new();
    for h in hypotheses {
        if h.mask.is_empty() {
            continue;
        }
        let inside = containment_ratio(&h.mask, &ctx.object_mask).map_err(PartsegError::geometry(stage))?;
        if inside < 1.0 - p.tol {
            notes.push(format!("discarded '{}': {:.1}% outside the object", h.label, 100.0 * (1.0 - inside)));
            continue;
        }
        let clipped = h.mask.intersection(&ctx.object_mask).map_err(PartsegError::geometry(stage))?;
        if clipped.count() < h.mask.count() {
            notes.push(format!("clipped '{}' by {} px", h.label, h.mask.count() - clipped.count()));
        }
        match kept.iter_mut().find(|k| k.label == h.label) {
            Some(k) => {
                k.mask = k.mask.union(&clipped).expect("same dims");
                k.score = match (k.score, h.score) {
                    (Some(a), Some(b)) => Some(a.max(b)),
                    (a, b) => a.or(b),
                };
            }
            None => kept.push(PartHypothesis { mask: clipped, ..h }),
        }
    }

    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            let (a, b) = (&kept[i], &kept[j]);
            if a.mask.is_empty() || b.mask.is_empty() {
                continue;
            }
            let shared = a.mask.intersection(&b.mask).expect("same dims");
            if shared.is_empty() {
                continue;
            }
            let overlap = shared.count() as f64 / a.mask.count().min(b.mask.count()) as f64;
            if overlap < p.overlap_thresh || compatible(&ctx.object_class, &a.label, &b.label) {
                continue;
            }
            let winner = match ctx.region_info(&shared) {
                Some(overlap_info) => {
                    let base = masks_info(ctx, &kept);
                    let only_a = ctx.region_info(&a.mask.difference(&b.mask).expect("same dims"));
                    let only_b = ctx.region_info(&b.mask.difference(&a.mask).expect("same dims"));
                    resolve_contradiction(&base, &a.label, &b.label, only_a, only_b, overlap_info, reasoner)
                        .map_err(PartsegError::reasoner(stage))?
                }
                // no depth under the overlap: nothing to reason about
                None => std::cmp::min_by_key(a.label.clone(), b.label.clone(), |l| {
                    label_order_key(&ctx.object_class, l)
                }),
            };
            let loser = if winner == kept[i].label { j } else { i };
            notes.push(format!(
                "'{}' and '{}' overlap {:.0}%; shared region goes to '{}'",
                kept[i].label,
                kept[j].label,
                100.0 * overlap,
                winner
            ));
            kept[loser].mask = kept[loser].mask.difference(&shared).expect("same dims");
        }
    }
    kept.retain(|h| {
        if h.mask.is_empty() {
            notes.push(format!("'{}' lost all pixels", h.label));
        }
        !h.mask.is_empty()
    });
    Ok((kept, notes))
}

fn masks_info(ctx: &SegContext, hyps: &[PartHypothesis]) -> SupportingInfo {
    let mut si = ctx.base_info(&Labeling::default());
    for h in hyps {
        if let Some(g) = ctx.region_info(&h.mask) {
            si.parts.insert(h.label.clone(), g);
        }
    }
    si
}

/// Assigns each object point to one label whose mask covers it, by taxonomy
/// order, except that within a compatible pair the smaller mask goes first so
/// a nested part (a rim on a mug body) keeps its points. Labels that end up
/// with no points are dropped.
pub fn fuse(ctx: &SegContext, hypotheses: &[PartHypothesis]) -> Labeling {
    let class = ctx.object_class.as_str();
    let mut order: Vec<&PartHypothesis> = hypotheses.iter().collect();
    order.sort_by_key(|h| label_order_key(class, &h.label));
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if order[j].mask.count() < order[i].mask.count() && compatible(class, &order[i].label, &order[j].label) {
                let h = order.remove(j);
                order.insert(i, h);
            }
        }
    }
    let mut labeling = Labeling::default();
    let pixels = ctx.object_cloud.pixels().expect("object cloud has pixels");
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    for (i, px) in pixels.iter().enumerate() {
        if let Some(k) = order.iter().position(|h| h.mask.get(px.u as usize, px.v as usize)) {
            members[k].push(i);
        }
    }
    for (h, m) in order.into_iter().zip(members) {
        if m.is_empty() {
            continue;
        }
        match labeling.masks.get_mut(&h.label) {
            Some(mask) => *mask = mask.union(&h.mask).expect("same dims"),
            None => {
                labeling.masks.insert(h.label.clone(), h.mask.clone());
            }
        }
        let mem = labeling.members.entry(h.label.clone()).or_default();
        mem.extend(m);
        mem.sort_unstable();
    }
    labeling
}

struct ResidualCluster {
    /// Indices into the object cloud.
    indices: Vec<usize>,
    cloud: PointCloud,
    summary: Option<GeomSummary>,
}

fn residual_clusters(ctx: &SegContext, labeling: &Labeling) -> Vec<ResidualCluster> {
    let residual = labeling.residual(ctx.object_cloud.len());
    if residual.is_empty() {
        return Vec::new();
    }
    let cloud = ctx.object_cloud.select(&residual);
    dbscan(&cloud, ctx.eps(), ctx.params.min_pts)
        .into_iter()
        .filter(|c| !c.is_noise)
        .map(|c| {
            let indices: Vec<usize> = c.member_indices.iter().map(|&i| residual[i]).collect();
            let cloud = ctx.object_cloud.select(&indices);
            let summary = summarize(&cloud).ok();
            ResidualCluster {
                indices,
                cloud,
                summary,
            }
        })
        .collect()
}

fn axis_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).abs().min(1.0).acos().to_degrees()
}

fn cluster_info(ctx: &SegContext, labeling: &Labeling, id: String, c: &ResidualCluster) -> ClusterInfo {
    let geometry = GeomInfo::from_cloud(&c.cloud).expect("clusters are non-empty");
    let centroid = c.cloud.centroid().expect("clusters are non-empty");
    let obj = &ctx.object_summary;
    let axis_position_m = Some(round_si((centroid - obj.centroid).dot(&obj.dominant_axis)));
    let axis = obj.dominant_axis;
    let (mut lo, mut hi, mut radius) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for p in c.cloud.points() {
        let d = p - centroid;
        let t = d.dot(&axis);
        lo = lo.min(t);
        hi = hi.max(t);
        radius = radius.max((d - axis * t).norm());
    }
    let mut neighbors = Vec::new();
    for (label, members) in &labeling.members {
        let part = ctx.object_cloud.select(members);
        let grid = SpatialGrid::new(part.points(), ctx.eps());
        let gap = c
            .cloud
            .points()
            .iter()
            .map(|q| {
                let nearest = grid.knn(q, 1)[0];
                (part.points()[nearest] - q).norm()
            })
            .fold(f64::INFINITY, f64::min);
        let part_summary = summarize(&part).ok();
        let axis_angle_deg = match (&c.summary, &part_summary) {
            (Some(cs), Some(ps)) => Some(round_si(axis_angle_deg(&cs.dominant_axis, &ps.dominant_axis))),
            _ => None,
        };
        let axis_offset_m = part_summary.map(|ps| {
            let d = centroid - ps.centroid;
            round_si((d - ps.dominant_axis * d.dot(&ps.dominant_axis)).norm())
        });
        neighbors.push(NeighborInfo {
            part: label.clone(),
            gap_m: round_si(gap),
            axis_angle_deg,
            axis_offset_m,
        });
    }
    ClusterInfo {
        id,
        geometry,
        axis_position_m,
        axis_extent_m: Some(round_si(hi - lo)),
        cross_extent_m: Some(round_si(2.0 * radius)),
        neighbors,
    }
}

/// True when the cluster has no gap of at least `eps` along `axis`.
fn inseparable(points: &[Point3<f64>], origin: &Point3<f64>, axis: &Vector3<f64>, eps: f64) -> bool {
    let mut t: Vec<f64> = points.iter().map(|p| (p - origin).dot(axis)).collect();
    t.sort_by(f64::total_cmp);
    t.windows(2).all(|w| w[1] - w[0] < eps)
}

fn consecutive_in_taxonomy(class: &str, parts: &[String]) -> bool {
    let mut idx: Vec<usize> = match parts
        .iter()
        .map(|p| taxonomy().part_index(class, p))
        .collect::<Option<Vec<_>>>()
    {
        Some(v) => v,
        None => return false,
    };
    idx.sort_unstable();
    idx.windows(2).all(|w| w[1] == w[0] + 1)
}

/// Recovers expected parts that no label covers from the unlabeled points.
/// Returns the parts that stay unidentified and trace notes.
pub fn detect_missing(
    ctx: &SegContext,
    labeling: &mut Labeling,
    expected: &[String],
    reasoner: &dyn Reasoner,
) -> Result<(Vec<String>, Vec<String>), PartsegError> {
    let class = ctx.object_class.as_str();
    let mut notes = Vec::new();
    let mut missing: Vec<String> = expected
        .iter()
        .filter(|p| !labeling.covers(p))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    missing.sort_by_key(|m| label_order_key(class, m));
    if missing.is_empty() {
        return Ok((Vec::new(), notes));
    }
    notes.push(format!("missing: {}", missing.join(", ")));
    let clusters = residual_clusters(ctx, labeling);
    if clusters.is_empty() {
        notes.push("no residual clusters; missing parts left unidentified".into());
        return Ok((missing, notes));
    }

    let obj = &ctx.object_summary;
    let assignment: Vec<String> = if clusters.len() == 1
        && missing.len() >= 2
        && consecutive_in_taxonomy(class, &missing)
        && inseparable(clusters[0].cloud.points(), &obj.centroid, &obj.dominant_axis, ctx.eps())
    {
        let label = merge_label(class, &missing);
        notes.push(format!("single inseparable cluster takes merged label '{label}'"));
        vec![label]
    } else {
        let infos: Vec<ClusterInfo> = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| cluster_info(ctx, labeling, format!("c{i}"), c))
            .collect();
        let base = ctx.base_info(labeling);
        let map = assign_cluster_labels(&base, &missing, infos, reasoner).map_err(PartsegError::reasoner("detect_missing"))?;
        (0..clusters.len()).map(|i| map[&format!("c{i}")].clone()).collect()
    };
    for (c, label) in clusters.iter().zip(&assignment) {
        notes.push(format!("{} residual points -> '{label}'", c.indices.len()));
        labeling.add(ctx, label, &c.indices);
    }
    let unidentified: Vec<String> = missing.into_iter().filter(|m| !labeling.covers(m)).collect();
    if !unidentified.is_empty() {
        notes.push(format!("still unidentified: {}", unidentified.join(", ")));
    }
    Ok((unidentified, notes))
}

/// Classifies every significant unlabeled cluster as an existing or new part.
pub fn label_unlabeled(
    ctx: &SegContext,
    labeling: &mut Labeling,
    reasoner: &dyn Reasoner,
) -> Result<Vec<String>, PartsegError> {
    let n = ctx.object_cloud.len();
    let mut notes = Vec::new();
    let clusters = residual_clusters(ctx, labeling);
    for (i, c) in clusters.iter().enumerate() {
        if (c.indices.len() as f64) < ctx.params.significance * n as f64 {
            continue;
        }
        let info = cluster_info(ctx, labeling, format!("c{i}"), c);
        let absent: Vec<String> = taxonomy()
            .parts(&ctx.object_class)
            .unwrap_or(&[])
            .iter()
            .filter(|p| !labeling.covers(p))
            .cloned()
            .collect();
        let base = ctx.base_info(labeling);
        let label = classify_unlabeled(&base, info, round_si(ctx.eps()), absent, reasoner)
            .map_err(PartsegError::reasoner("label_unlabeled"))?;
        notes.push(format!(
            "unlabeled cluster of {} points ({:.1}%) -> '{label}'",
            c.indices.len(),
            100.0 * c.indices.len() as f64 / n as f64
        ));
        labeling.add(ctx, &label, &c.indices);
    }
    Ok(notes)
}
