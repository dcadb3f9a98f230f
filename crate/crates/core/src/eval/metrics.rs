use std::collections::BTreeMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::label_components;
use crate::geometry::{Mask2D, PointCloud};
use crate::grasp::GraspCandidate;
use crate::reasoner::TaskPlan;

fn same_dims(a: &Mask2D, b: &Mask2D) -> Result<(), EvalError> {
    if a.dims() != b.dims() {
        return Err(EvalError::DimensionMismatch {
            pred: a.dims(),
            gt: b.dims(),
        });
    }
    Ok(())
}

/// Intersection over union; two empty masks score 1.
pub fn iou(pred: &Mask2D, gt: &Mask2D) -> Result<f64, EvalError> {
    same_dims(pred, gt)?;
    let inter = pred.intersection_count(gt).expect("dims checked");
    let union = pred.union_count(gt).expect("dims checked");
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Dice / F1 overlap; two empty masks score 1.
pub fn f1(pred: &Mask2D, gt: &Mask2D) -> Result<f64, EvalError> {
    same_dims(pred, gt)?;
    let inter = pred.intersection_count(gt).expect("dims checked");
    let total = pred.count() + gt.count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// Scores of one ground-truth part against the prediction carrying its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartScore {
    /// Predicted label matched against this part, if any.
    pub matched: Option<String>,
    pub iou: f64,
    pub f1: f64,
    pub detected: bool,
}

/// Segmentation quality of one observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    /// Percent of ground-truth parts detected.
    pub detection_rate: f64,
    /// Mean F1 over ground-truth parts, in [0, 1].
    pub f1: f64,
    /// Mean IoU over ground-truth parts, in percent.
    pub iou: f64,
    pub per_part: BTreeMap<String, PartScore>,
}

/// Scores each ground-truth part against the best predicted mask whose label
/// names it. A merged prediction such as `shaft+tip` is compared with the
/// union of its components' ground truth and credits each component.
fn part_scores(
    pred: &BTreeMap<String, Mask2D>,
    gt: &BTreeMap<String, Mask2D>,
    det_iou: f64,
) -> Result<BTreeMap<String, PartScore>, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::Input("no ground-truth parts".into()));
    }
    let mut out = BTreeMap::new();
    for (name, g) in gt {
        let mut best: Option<PartScore> = None;
        for (label, p) in pred {
            let comps = label_components(label);
            if !comps.contains(&name.as_str()) {
                continue;
            }
            let target = if comps.len() > 1 {
                let mut u = g.clone();
                for c in comps.iter().filter(|c| **c != name) {
                    if let Some(m) = gt.get(*c) {
                        same_dims(&u, m)?;
                        u = u.union(m).expect("dims checked");
                    }
                }
                u
            } else {
                g.clone()
            };
            let (i, f) = (iou(p, &target)?, f1(p, &target)?);
            if best.as_ref().is_none_or(|b| i > b.iou) {
                best = Some(PartScore {
                    matched: Some(label.clone()),
                    iou: i,
                    f1: f,
                    detected: i >= det_iou,
                });
            }
        }
        let score = match best {
            Some(s) => s,
            None => {
                let empty = Mask2D::new(g.width(), g.height());
                PartScore {
                    matched: None,
                    iou: iou(&empty, g)?,
                    f1: f1(&empty, g)?,
                    detected: false,
                }
            }
        };
        out.insert(name.clone(), score);
    }
    Ok(out)
}

/// Percent of ground-truth parts with a same-label prediction at IoU of at
/// least `det_iou`.
pub fn detection_rate(
    pred: &BTreeMap<String, Mask2D>,
    gt: &BTreeMap<String, Mask2D>,
    det_iou: f64,
) -> Result<f64, EvalError> {
    let scores = part_scores(pred, gt, det_iou)?;
    Ok(100.0 * scores.values().filter(|s| s.detected).count() as f64 / scores.len() as f64)
}

pub fn seg_metrics(
    pred: &BTreeMap<String, Mask2D>,
    gt: &BTreeMap<String, Mask2D>,
    det_iou: f64,
) -> Result<SegMetrics, EvalError> {
    let per_part = part_scores(pred, gt, det_iou)?;
    let n = per_part.len() as f64;
    Ok(SegMetrics {
        detection_rate: 100.0 * per_part.values().filter(|s| s.detected).count() as f64 / n,
        f1: per_part.values().map(|s| s.f1).sum::<f64>() / n,
        iou: 100.0 * per_part.values().map(|s| s.iou).sum::<f64>() / n,
        per_part,
    })
}

/// Unions masks that share a label, as a backend may report one part twice.
pub fn masks_by_label<'a>(items: impl IntoIterator<Item = (&'a str, &'a Mask2D)>) -> BTreeMap<String, Mask2D> {
    let mut out: BTreeMap<String, Mask2D> = BTreeMap::new();
    for (label, m) in items {
        match out.get_mut(label) {
            Some(acc) => {
                if let Ok(u) = acc.union(m) {
                    *acc = u;
                }
            }
            None => {
                out.insert(label.to_string(), m.clone());
            }
        }
    }
    out
}

/// True when both contacts stay at least `margin` from the human part.
pub fn grasp_success(grasp: &GraspCandidate, human_part: &PointCloud, margin: f64) -> Result<bool, EvalError> {
    if human_part.is_empty() {
        return Err(EvalError::Input("human part cloud is empty".into()));
    }
    Ok(grasp
        .contacts
        .iter()
        .all(|c: &Point3<f64>| human_part.min_distance(c).expect("non-empty") >= margin))
}

/// Percent of plans naming the reference human and robot parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrAccuracy {
    pub human: f64,
    pub robot: f64,
}

/// `gt` holds `(human part, robot part)` per plan.
pub fn hr_accuracy(plans: &[TaskPlan], gt: &[(String, String)]) -> Result<HrAccuracy, EvalError> {
    if plans.is_empty() {
        return Err(EvalError::Input("no task plans to score".into()));
    }
    if plans.len() != gt.len() {
        return Err(EvalError::Input(format!(
            "{} plans but {} reference entries",
            plans.len(),
            gt.len()
        )));
    }
    let n = plans.len() as f64;
    let h = plans.iter().zip(gt).filter(|(p, g)| p.human_grasp_part == g.0).count();
    let r = plans
        .iter()
        .zip(gt)
        .filter(|(p, g)| p.robot_grasp_region.part.as_deref() == Some(g.1.as_str()))
        .count();
    Ok(HrAccuracy {
        human: 100.0 * h as f64 / n,
        robot: 100.0 * r as f64 / n,
    })
}
