//! Deterministic reasoner that answers from the supporting information alone.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::knowledge::{self, ShapeTrait};
use super::query::{
    CandidateInfo, ClusterInfo, GeomInfo, OutputSchema, ReasonerQuery, ReasonerResponse, RobotGraspRegion,
    StagePayload, SupportingInfo, TaskPlan,
};
use super::{Reasoner, ReasonerError};
use crate::dataset::{label_components, merge_label, taxonomy};

/// Largest angle between dominant axes for two point sets to count as collinear.
pub const COLLINEAR_DEG: f64 = 15.0;

/// Rule-based stand-in for the language model; a pure function of the query.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleReasoner;

impl Reasoner for RuleReasoner {
    fn name(&self) -> &str {
        "rule"
    }

    fn answer(&self, query: &ReasonerQuery) -> Result<ReasonerResponse, ReasonerError> {
        let si = &query.supporting_info;
        let response = match (&si.payload, &query.output_schema) {
            (StagePayload::Task, OutputSchema::TaskPlan { .. }) => ReasonerResponse::TaskPlan(plan_task(si)),
            (
                StagePayload::Contradiction {
                    label_a,
                    label_b,
                    only_a,
                    only_b,
                    overlap,
                },
                OutputSchema::PartChoice { .. },
            ) => ReasonerResponse::PartChoice {
                label: pick_contradiction(label_a, label_b, only_a.as_ref(), only_b.as_ref(), overlap),
            },
            (
                StagePayload::MissingParts {
                    missing, clusters, ..
                },
                OutputSchema::PartAssignment { .. },
            ) => ReasonerResponse::PartAssignment {
                assignments: assign_by_axis(si, missing, clusters),
            },
            (
                StagePayload::Unlabeled {
                    cluster,
                    adjacency_eps_m,
                    absent_parts,
                },
                OutputSchema::PartLabel,
            ) => ReasonerResponse::PartLabel {
                label: classify(si, cluster, *adjacency_eps_m, absent_parts),
            },
            (StagePayload::GraspChoice { candidates, human_part }, OutputSchema::GraspChoice { .. }) => {
                ReasonerResponse::GraspChoice {
                    grasp_index: choose(si, candidates, human_part.as_deref())?,
                }
            }
            _ => {
                return Err(ReasonerError::Precondition(format!(
                    "payload does not match output structure '{}'",
                    query.output_schema.name()
                )))
            }
        };
        query
            .output_schema
            .accepts(&response)
            .map_err(ReasonerError::SchemaInvalid)?;
        Ok(response)
    }
}

fn plan_task(si: &SupportingInfo) -> TaskPlan {
    let class = si.object_class.as_str();
    let task = si.task.as_deref().unwrap_or("");
    let parts: Vec<String> = taxonomy().parts(class).map(|p| p.to_vec()).unwrap_or_default();
    let (human, robot, description) = match knowledge::lookup(class, task) {
        Some(e) => (e.human.clone(), e.robot.clone(), e.description.clone()),
        None => {
            let human = parts
                .iter()
                .find(|p| p.starts_with("handle"))
                .or(parts.first())
                .cloned()
                .unwrap_or_else(|| "handle".to_string());
            let robot = parts
                .iter()
                .find(|p| **p != human)
                .cloned()
                .unwrap_or_else(|| "body".to_string());
            let description = format!("The human holds the {class} by the {human} to {task}.");
            (human, robot, description)
        }
    };
    let relevant_parts = if parts.is_empty() {
        vec![human.clone(), robot.clone()]
    } else {
        parts
    };
    TaskPlan {
        post_task_description: description,
        relevant_parts,
        robot_grasp_region: RobotGraspRegion {
            description: format!("grasp the {robot}, away from the {human}"),
            part: Some(robot),
        },
        human_grasp_part: human,
    }
}

fn pick_contradiction(a: &str, b: &str, only_a: Option<&GeomInfo>, only_b: Option<&GeomInfo>, overlap: &GeomInfo) -> String {
    if a == b {
        return a.to_string();
    }
    match (only_a, only_b) {
        // a mask fully inside the other names the shared region specifically
        (None, _) => a.to_string(),
        (Some(_), None) => b.to_string(),
        (Some(ga), Some(gb)) => {
            let c = overlap.centroid();
            if (ga.centroid() - c).norm() <= (gb.centroid() - c).norm() {
                a.to_string()
            } else {
                b.to_string()
            }
        }
    }
}

fn axis_frame(si: &SupportingInfo) -> Option<(Point3<f64>, Vector3<f64>)> {
    let obj = si.object.as_ref()?;
    Some((obj.centroid(), Vector3::from(obj.dominant_axis?)))
}

fn inversions(seq: &[usize]) -> usize {
    let mut n = 0;
    for i in 0..seq.len() {
        for j in i + 1..seq.len() {
            if seq[i] > seq[j] {
                n += 1;
            }
        }
    }
    n
}

/// Maps clusters onto missing parts in expected order along the object's
/// dominant axis. The direction is the one that best agrees with the known
/// parts; with no known parts the ascending direction is used.
/// Extent of `g` along and across `axis`.
fn extents(g: &GeomInfo, axis: &Vector3<f64>) -> Option<(f64, f64)> {
    let d = Vector3::from(g.aabb_max_m?) - Vector3::from(g.aabb_min_m?);
    let along = d.dot(axis).abs();
    Some((along, (d - axis * d.dot(axis)).norm()))
}

/// Whether the cluster given the class's shape-cue part stands out the way
/// that part should. Vacuously true when nothing can be checked.
fn shape_cue_holds(
    class: &str,
    axis: Option<Vector3<f64>>,
    clusters: &[ClusterInfo],
    assignment: &BTreeMap<String, String>,
) -> bool {
    let (Some((part, shape)), Some(axis)) = (knowledge::shape_cue(class), axis) else {
        return true;
    };
    let measure = |cl: &ClusterInfo| {
        let (along, across) = match (cl.axis_extent_m, cl.cross_extent_m) {
            (Some(a), Some(c)) => (a, c),
            _ => extents(&cl.geometry, &axis)?,
        };
        Some(match shape {
            ShapeTrait::Longest => along,
            ShapeTrait::Widest => across,
        })
    };
    let Some(holder) = clusters
        .iter()
        .find(|cl| assignment.get(&cl.id).is_some_and(|l| label_components(l).contains(&part)))
    else {
        return true;
    };
    let Some(v) = measure(holder) else {
        return true;
    };
    clusters
        .iter()
        .filter(|cl| cl.id != holder.id)
        .all(|cl| measure(cl).is_none_or(|w| w <= v))
}

fn assign_by_axis(si: &SupportingInfo, missing: &[String], clusters: &[ClusterInfo]) -> BTreeMap<String, String> {
    let class = si.object_class.as_str();
    let frame = axis_frame(si);
    let pos = |g: &GeomInfo, fallback: Option<f64>| -> f64 {
        match frame {
            Some((c, a)) => (g.centroid() - c).dot(&a),
            None => fallback.unwrap_or(0.0),
        }
    };
    let rank = |label: &str| {
        taxonomy()
            .part_index(class, label_components(label)[0])
            .unwrap_or(usize::MAX)
    };
    let mut missing: Vec<String> = missing.to_vec();
    missing.sort_by_key(|m| rank(m));
    let m = missing.len();
    let c = clusters.len();

    let known: Vec<(f64, usize)> = si
        .parts
        .iter()
        .map(|(name, g)| (pos(g, None), rank(name)))
        .collect();

    let mut best: Option<((usize, bool), BTreeMap<String, String>)> = None;
    for dir in [1.0, -1.0] {
        let mut order: Vec<(f64, usize)> = clusters
            .iter()
            .enumerate()
            .map(|(i, cl)| (dir * pos(&cl.geometry, cl.axis_position_m.or(Some(i as f64))), i))
            .collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut assignment = BTreeMap::new();
        let mut placed: Vec<(f64, usize)> = known.clone();
        for (slot, &(_, ci)) in order.iter().enumerate() {
            let lo = slot * m / c;
            let hi = ((slot + 1) * m / c).max(lo + 1).min(m);
            let label = merge_label(class, &missing[lo..hi]);
            placed.push((
                pos(&clusters[ci].geometry, clusters[ci].axis_position_m.or(Some(ci as f64))),
                rank(&label),
            ));
            assignment.insert(clusters[ci].id.clone(), label);
        }
        placed.sort_by(|x, y| x.0.total_cmp(&y.0));
        // taxonomy order may run either way along the axis
        let seq: Vec<usize> = placed.iter().map(|p| p.1).collect();
        let rev: Vec<usize> = seq.iter().rev().copied().collect();
        let score = (
            inversions(&seq).min(inversions(&rev)),
            !shape_cue_holds(class, frame.map(|f| f.1), clusters, &assignment),
        );
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, assignment));
        }
    }
    best.map(|(_, a)| a).unwrap_or_default()
}

fn classify(si: &SupportingInfo, cluster: &ClusterInfo, eps: f64, absent: &[String]) -> String {
    let mut best: Option<(&str, f64, f64)> = None;
    for n in &cluster.neighbors {
        let (Some(angle), Some(offset)) = (n.axis_angle_deg, n.axis_offset_m) else {
            continue;
        };
        let part_len = si
            .parts
            .get(&n.part)
            .and_then(|g| g.dominant_length_m)
            .unwrap_or(0.0);
        let offset_tol = (2.0 * eps).max(0.1 * part_len);
        if n.gap_m <= eps && angle <= COLLINEAR_DEG && offset <= offset_tol {
            let better = match best {
                None => true,
                Some((_, g, o)) => n.gap_m < g || (n.gap_m == g && offset < o),
            };
            if better {
                best = Some((&n.part, n.gap_m, offset));
            }
        }
    }
    if let Some((part, _, _)) = best {
        return part.to_string();
    }
    if let Some(first) = absent.first() {
        return first.clone();
    }
    let mut k = si.parts.len() + 1;
    loop {
        let name = format!("new_part_{k}");
        if !si.parts.contains_key(&name) {
            return name;
        }
        k += 1;
    }
}

fn touches(c: &CandidateInfo, human: &str) -> bool {
    c.contact_parts
        .iter()
        .any(|p| label_components(p).contains(&human))
}

fn choose(si: &SupportingInfo, candidates: &[CandidateInfo], human: Option<&str>) -> Result<usize, ReasonerError> {
    if candidates.is_empty() {
        return Err(ReasonerError::Precondition("no grasp candidates".into()));
    }
    let dist = |c: &CandidateInfo, p: &Point3<f64>| (Point3::from(c.position_m) - p).norm();
    // max by key, lowest index on ties
    let argmax = |items: &[&CandidateInfo], key: &dyn Fn(&CandidateInfo) -> f64| -> usize {
        let mut best = items[0];
        for c in &items[1..] {
            if key(c) > key(best) {
                best = c;
            }
        }
        best.index
    };

    let Some(human) = human else {
        let all: Vec<&CandidateInfo> = candidates.iter().collect();
        return Ok(match &si.object {
            Some(obj) => argmax(&all, &|c| -dist(c, &obj.centroid())),
            None => candidates[0].index,
        });
    };
    let human_centroid = si.parts.get(human).map(|g| g.centroid()).or_else(|| {
        si.parts
            .iter()
            .find(|(k, _)| label_components(k).contains(&human))
            .map(|(_, g)| g.centroid())
    });

    let free: Vec<&CandidateInfo> = candidates.iter().filter(|c| !touches(c, human)).collect();
    if !free.is_empty() {
        if free.iter().all(|c| c.human_clearance_m.is_some()) {
            return Ok(argmax(&free, &|c| c.human_clearance_m.unwrap_or(0.0)));
        }
        return Ok(match human_centroid {
            Some(h) => argmax(&free, &|c| dist(c, &h)),
            None => free[0].index,
        });
    }
    let all: Vec<&CandidateInfo> = candidates.iter().collect();
    Ok(match human_centroid {
        Some(h) => argmax(&all, &|c| dist(c, &h)),
        None => candidates[0].index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reasoner::query::{NeighborInfo, Stage};

    fn geom(c: [f64; 3]) -> GeomInfo {
        GeomInfo {
            centroid_m: c,
            aabb_min_m: None,
            aabb_max_m: None,
            dominant_axis: None,
            dominant_length_m: None,
            point_count: 10,
        }
    }

    fn ask(si: SupportingInfo, os: OutputSchema, stage: Stage) -> ReasonerResponse {
        RuleReasoner
            .answer(&ReasonerQuery {
                stage,
                task_description: String::new(),
                supporting_info: si,
                output_schema: os,
            })
            .unwrap()
    }

    fn task(class: &str, text: &str) -> TaskPlan {
        let mut si = SupportingInfo::new(class, StagePayload::Task);
        si.task = Some(text.into());
        match ask(si, OutputSchema::TaskPlan { parts: vec![] }, Stage::TaskReasoning) {
            ReasonerResponse::TaskPlan(p) => p,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn task_plans_from_table() {
        let p = task("pan", "cook");
        assert_eq!(p.human_grasp_part, "handle");
        assert_eq!(p.robot_grasp_region.part.as_deref(), Some("body"));
        let p = task("hammer", "hammer");
        assert_eq!((p.human_grasp_part.as_str(), p.robot_grasp_region.part.as_deref()), ("handle", Some("head")));
        assert_eq!(task("mug", "drink").human_grasp_part, "handle");
        let p = task("knife", "juggle");
        assert_eq!(p.human_grasp_part, "handle");
        assert_eq!(p.relevant_parts, ["handle", "blade"]);
        let p = task("laptop", "type");
        assert!(p.relevant_parts.contains(&p.human_grasp_part));
    }

    #[test]
    fn contradiction_goes_to_nearer_exclusive_region() {
        let payload = StagePayload::Contradiction {
            label_a: "handle".into(),
            label_b: "body".into(),
            only_a: Some(geom([0.0, 0.0, 0.5])),
            only_b: Some(geom([0.2, 0.0, 0.5])),
            overlap: geom([0.05, 0.0, 0.5]),
        };
        let os = OutputSchema::PartChoice {
            options: vec!["handle".into(), "body".into()],
        };
        let r = ask(SupportingInfo::new("pan", payload), os, Stage::ResolveContradiction);
        assert_eq!(r, ReasonerResponse::PartChoice { label: "handle".into() });
    }

    #[test]
    fn identical_labels_short_circuit() {
        let g = geom([0.0, 0.0, 0.5]);
        assert_eq!(pick_contradiction("handle", "handle", None, None, &g), "handle");
    }

    fn cluster(id: &str, c: [f64; 3]) -> ClusterInfo {
        ClusterInfo {
            id: id.into(),
            geometry: geom(c),
            axis_position_m: None,
            axis_extent_m: None,
            cross_extent_m: None,
            neighbors: vec![],
        }
    }

    fn hammer_si(payload: StagePayload) -> SupportingInfo {
        let mut si = SupportingInfo::new("screwdriver", payload);
        let mut obj = geom([0.0, 0.0, 0.5]);
        obj.dominant_axis = Some([1.0, 0.0, 0.0]);
        si.object = Some(obj);
        si.parts.insert("handle".into(), geom([-0.1, 0.0, 0.5]));
        si
    }

    #[test]
    fn clusters_follow_axis_order_from_handle() {
        let payload = StagePayload::MissingParts {
            missing: vec!["tip".into(), "shaft".into()],
            expected_order: vec![],
            clusters: vec![cluster("c0", [0.12, 0.0, 0.5]), cluster("c1", [0.04, 0.0, 0.5])],
        };
        let os = OutputSchema::PartAssignment {
            cluster_ids: vec!["c0".into(), "c1".into()],
        };
        let r = ask(hammer_si(payload.clone()), os.clone(), Stage::AssignClusters);
        let ReasonerResponse::PartAssignment { assignments } = r else { panic!() };
        assert_eq!(assignments["c1"], "shaft");
        assert_eq!(assignments["c0"], "tip");

        // handle on the other side flips the direction
        let mut si = hammer_si(payload);
        si.parts.insert("handle".into(), geom([0.3, 0.0, 0.5]));
        let ReasonerResponse::PartAssignment { assignments } = ask(si, os, Stage::AssignClusters) else {
            panic!()
        };
        assert_eq!(assignments["c0"], "shaft");
        assert_eq!(assignments["c1"], "tip");
    }

    #[test]
    fn shape_cue_orients_unanchored_object() {
        let sized = |id: &str, x: f64, along: f64, across: f64| ClusterInfo {
            axis_extent_m: Some(along),
            cross_extent_m: Some(across),
            ..cluster(id, [x, 0.0, 0.5])
        };
        let os = OutputSchema::PartAssignment {
            cluster_ids: vec!["c0".into(), "c1".into()],
        };
        for (body_x, handle_x) in [(0.1, -0.1), (-0.1, 0.1)] {
            let payload = StagePayload::MissingParts {
                missing: vec!["handle".into(), "body".into()],
                expected_order: vec![],
                clusters: vec![sized("c0", body_x, 0.2, 0.2), sized("c1", handle_x, 0.14, 0.025)],
            };
            let mut si = SupportingInfo::new("pan", payload);
            let mut obj = geom([0.0, 0.0, 0.5]);
            obj.dominant_axis = Some([1.0, 0.0, 0.0]);
            si.object = Some(obj);
            let ReasonerResponse::PartAssignment { assignments } = ask(si, os.clone(), Stage::AssignClusters) else {
                panic!()
            };
            assert_eq!(assignments["c0"], "body");
            assert_eq!(assignments["c1"], "handle");
        }
    }

    #[test]
    fn single_cluster_takes_merged_label() {
        let payload = StagePayload::MissingParts {
            missing: vec!["shaft".into(), "tip".into()],
            expected_order: vec![],
            clusters: vec![cluster("c0", [0.1, 0.0, 0.5])],
        };
        let os = OutputSchema::PartAssignment {
            cluster_ids: vec!["c0".into()],
        };
        let ReasonerResponse::PartAssignment { assignments } = ask(hammer_si(payload), os, Stage::AssignClusters) else {
            panic!()
        };
        assert_eq!(assignments["c0"], "shaft+tip");
    }

    #[test]
    fn unlabeled_adjacent_collinear_joins_part() {
        let mut c = cluster("u0", [-0.2, 0.0, 0.5]);
        c.neighbors = vec![NeighborInfo {
            part: "handle".into(),
            gap_m: 0.003,
            axis_angle_deg: Some(4.0),
            axis_offset_m: Some(0.002),
        }];
        let mut si = SupportingInfo::new(
            "knife",
            StagePayload::Unlabeled {
                cluster: c.clone(),
                adjacency_eps_m: 0.006,
                absent_parts: vec![],
            },
        );
        si.parts.insert("handle".into(), geom([-0.1, 0.0, 0.5]));
        si.parts.insert("blade".into(), geom([0.1, 0.0, 0.5]));
        let r = ask(si.clone(), OutputSchema::PartLabel, Stage::ClassifyUnlabeled);
        assert_eq!(r, ReasonerResponse::PartLabel { label: "handle".into() });

        c.neighbors[0].gap_m = 0.05;
        si.payload = StagePayload::Unlabeled {
            cluster: c,
            adjacency_eps_m: 0.006,
            absent_parts: vec![],
        };
        let r = ask(si, OutputSchema::PartLabel, Stage::ClassifyUnlabeled);
        assert_eq!(r, ReasonerResponse::PartLabel { label: "new_part_3".into() });
    }

    fn cand(index: usize, pos: [f64; 3], parts: [&str; 2], clearance: Option<f64>) -> CandidateInfo {
        CandidateInfo {
            index,
            position_m: pos,
            approach: [0.0, 0.0, 1.0],
            width_m: 0.03,
            contacts_m: [pos, pos],
            contact_parts: parts.map(String::from),
            human_clearance_m: clearance,
        }
    }

    fn grasp_si(cands: Vec<CandidateInfo>, human: Option<&str>) -> (SupportingInfo, OutputSchema) {
        let n = cands.len();
        let mut si = SupportingInfo::new(
            "hammer",
            StagePayload::GraspChoice {
                candidates: cands,
                human_part: human.map(String::from),
            },
        );
        si.parts.insert("handle".into(), geom([0.0, 0.0, 0.5]));
        si.parts.insert("head".into(), geom([0.15, 0.0, 0.5]));
        si.object = Some(geom([0.05, 0.0, 0.5]));
        (si, OutputSchema::GraspChoice { candidates: n })
    }

    #[test]
    fn grasp_prefers_non_human_part() {
        let (si, os) = grasp_si(
            vec![
                cand(0, [0.0, 0.0, 0.5], ["handle", "handle"], Some(0.0)),
                cand(1, [0.15, 0.0, 0.5], ["head", "head"], Some(0.05)),
                cand(2, [0.08, 0.0, 0.5], ["handle", "handle"], Some(0.0)),
            ],
            Some("handle"),
        );
        assert_eq!(ask(si, os, Stage::ChooseGrasp), ReasonerResponse::GraspChoice { grasp_index: 1 });
    }

    #[test]
    fn all_on_human_part_picks_farthest() {
        let (si, os) = grasp_si(
            vec![
                cand(0, [0.01, 0.0, 0.5], ["handle", "handle"], Some(0.0)),
                cand(1, [-0.1, 0.0, 0.5], ["handle", "handle"], Some(0.0)),
                cand(2, [0.03, 0.0, 0.5], ["handle", "handle"], Some(0.0)),
            ],
            Some("handle"),
        );
        assert_eq!(ask(si, os, Stage::ChooseGrasp), ReasonerResponse::GraspChoice { grasp_index: 1 });
        let (si, os) = grasp_si(vec![cand(0, [0.0, 0.0, 0.5], ["head", "head"], None)], Some("handle"));
        assert_eq!(ask(si, os, Stage::ChooseGrasp), ReasonerResponse::GraspChoice { grasp_index: 0 });
    }

    #[test]
    fn merged_contact_label_counts_as_touching() {
        let (si, os) = grasp_si(
            vec![
                cand(0, [0.0, 0.0, 0.5], ["shaft+tip", "shaft+tip"], None),
                cand(1, [0.0, 0.0, 0.5], ["handle", "handle"], None),
            ],
            Some("shaft"),
        );
        assert_eq!(ask(si, os, Stage::ChooseGrasp), ReasonerResponse::GraspChoice { grasp_index: 1 });
    }
}
