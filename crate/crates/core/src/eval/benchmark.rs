use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{grasp_success, masks_by_label, seg_metrics, SegMetrics};
use super::report::BenchmarkReport;
use super::EvalError;
use crate::config::PipelineConfig;
use crate::dataset::{reference_tasks, taxonomy, Conventionality, DatasetEntry, ReferenceTask};
use crate::geometry::{Mask2D, PointCloud};
use crate::grasp::GraspCandidate;
use crate::partseg::{SegBackend, SegmentationResult};
use crate::pipeline::{
    choose, derive_seed, entry_context, plan_entry_grasps, plan_task, segment_entry, EntrySegmentation, Method,
    PipelineError, Prepared,
};
use crate::reasoner::Reasoner;

/// Outcome of one method on one object-task pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspEvalRecord {
    pub entry: String,
    pub object_class: String,
    pub task: String,
    pub conventionality: Conventionality,
    pub method: Method,
    pub candidate_index: usize,
    pub grasp: GraspCandidate,
    /// Predicted part under the grasp.
    pub grasp_part: String,
    /// Reference part the human holds.
    pub human_part: String,
    pub success: bool,
}

/// Task reasoning output next to the reference parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub entry: String,
    pub object_class: String,
    pub task: String,
    pub conventionality: Conventionality,
    pub human_part: String,
    pub robot_part: Option<String>,
    pub reference_human: String,
    pub reference_robot: String,
}

/// A step that failed; the rest of the benchmark continues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub entry: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySegmentationScore {
    pub entry: String,
    pub object_class: String,
    /// Raw backend masks.
    pub baseline: SegMetrics,
    /// After reasoning.
    pub ours: SegMetrics,
}

#[derive(Default)]
pub(super) struct EntryOutcome {
    pub segmentation: Option<EntrySegmentationScore>,
    pub plans: Vec<PlanRecord>,
    pub records: Vec<GraspEvalRecord>,
    pub failures: Vec<Failure>,
}

/// Object points whose source pixel lies in `mask`.
pub fn gt_part_cloud(object_cloud: &PointCloud, mask: &Mask2D) -> PointCloud {
    let Some(pixels) = object_cloud.pixels() else {
        return PointCloud::empty();
    };
    let idx: Vec<usize> = pixels
        .iter()
        .enumerate()
        .filter(|(_, px)| mask.get(px.u as usize, px.v as usize))
        .map(|(i, _)| i)
        .collect();
    object_cloud.select(&idx)
}

fn score_segmentation(
    entry: &DatasetEntry,
    seg: &EntrySegmentation,
    cfg: &PipelineConfig,
) -> Result<EntrySegmentationScore, EvalError> {
    let thresh = cfg.eval.det_iou_thresh;
    let baseline = masks_by_label(seg.hypotheses.iter().map(|h| (h.label.as_str(), &h.mask)));
    let ours = masks_by_label(seg.result.parts.iter().map(|(k, p)| (k.as_str(), &p.mask)));
    Ok(EntrySegmentationScore {
        entry: entry.id(),
        object_class: entry.object_class.clone(),
        baseline: seg_metrics(&baseline, &entry.gt_part_masks, thresh)?,
        ours: seg_metrics(&ours, &entry.gt_part_masks, thresh)?,
    })
}

fn grasp_records(
    entry: &DatasetEntry,
    reference: &ReferenceTask,
    prepared: &Prepared,
    methods: &[Method],
    cfg: &PipelineConfig,
    reasoner: &dyn Reasoner,
    out: &mut EntryOutcome,
) {
    let seg: &SegmentationResult = &prepared.segmentation.result;
    let fail = |method: Option<Method>, code: i32, message: String| Failure {
        entry: entry.id(),
        task: Some(reference.spec.task_text.clone()),
        method,
        exit_code: code,
        message,
    };
    let human = match entry.gt_part_masks.get(&reference.human_part) {
        Some(m) => gt_part_cloud(&seg.object_cloud, m),
        None => PointCloud::empty(),
    };
    if human.is_empty() {
        out.failures.push(fail(
            None,
            2,
            format!("no ground-truth points for human part '{}'", reference.human_part),
        ));
        return;
    }
    for &method in methods {
        match choose(prepared, method, cfg, reasoner) {
            Ok(choice) => out.records.push(GraspEvalRecord {
                entry: entry.id(),
                object_class: entry.object_class.clone(),
                task: reference.spec.task_text.clone(),
                conventionality: reference.spec.conventionality,
                method,
                candidate_index: choice.candidate_index,
                success: grasp_success(&choice.grasp, &human, cfg.eval.margin_m).expect("non-empty human cloud"),
                grasp: choice.grasp,
                grasp_part: choice.grasp_part,
                human_part: reference.human_part.clone(),
            }),
            Err(e) => out.failures.push(fail(Some(method), e.exit_code(), e.to_string())),
        }
    }
}

fn eval_entry(
    entry: &DatasetEntry,
    cfg: &PipelineConfig,
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
    methods: &[Method],
) -> EntryOutcome {
    let mut out = EntryOutcome::default();
    let entry_fail = |task: Option<&str>, e: &PipelineError| Failure {
        entry: entry.id(),
        task: task.map(str::to_string),
        method: None,
        exit_code: e.exit_code(),
        message: e.to_string(),
    };
    let tasks: Vec<ReferenceTask> = reference_tasks()
        .into_iter()
        .filter(|r| r.spec.object_class == entry.object_class)
        .collect();

    if tasks.is_empty() {
        let expected = taxonomy().parts(&entry.object_class).map(|p| p.to_vec()).unwrap_or_default();
        let seg = entry_context(entry, None, cfg).and_then(|ctx| segment_entry(&ctx, entry, &expected, backend, reasoner));
        match seg {
            Ok(seg) => match score_segmentation(entry, &seg, cfg) {
                Ok(s) => out.segmentation = Some(s),
                Err(e) => out.failures.push(entry_fail(None, &PipelineError::Input(e.to_string()))),
            },
            Err(e) => out.failures.push(entry_fail(None, &e)),
        }
        return out;
    }

    for reference in &tasks {
        let task = &reference.spec;
        let segmented = entry_context(entry, Some(&task.task_text), cfg).and_then(|ctx| {
            let plan = plan_task(&ctx, task, reasoner)?;
            let seg = segment_entry(&ctx, entry, &plan.relevant_parts, backend, reasoner)?;
            Ok((plan, seg))
        });
        let (plan, segmentation) = match segmented {
            Ok(p) => p,
            Err(e) => {
                out.failures.push(entry_fail(Some(&task.task_text), &e));
                continue;
            }
        };
        out.plans.push(PlanRecord {
            entry: entry.id(),
            object_class: entry.object_class.clone(),
            task: task.task_text.clone(),
            conventionality: task.conventionality,
            human_part: plan.human_grasp_part.clone(),
            robot_part: plan.robot_grasp_region.part.clone(),
            reference_human: reference.human_part.clone(),
            reference_robot: reference.robot_part.clone(),
        });
        if out.segmentation.is_none() {
            match score_segmentation(entry, &segmentation, cfg) {
                Ok(s) => out.segmentation = Some(s),
                Err(e) => out.failures.push(entry_fail(None, &PipelineError::Input(e.to_string()))),
            }
        }
        if methods.is_empty() {
            continue;
        }
        let seed = derive_seed(cfg.seed, &format!("{}:{}", entry.id(), task.task_text));
        let grasps = match plan_entry_grasps(&segmentation.result, cfg, seed, None) {
            Ok(g) => g,
            Err(e) => {
                out.failures.push(entry_fail(Some(&task.task_text), &e));
                continue;
            }
        };
        let prepared = Prepared {
            task: task.clone(),
            plan,
            segmentation,
            grasps,
        };
        grasp_records(entry, reference, &prepared, methods, cfg, reasoner, &mut out);
    }
    out
}

/// Runs segmentation and every method in `methods` over `entries`, `jobs`
/// entries at a time. Failures are recorded in the report, not returned.
pub fn run_benchmark(
    entries: &[DatasetEntry],
    cfg: &PipelineConfig,
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
    methods: &[Method],
    jobs: usize,
) -> Result<BenchmarkReport, EvalError> {
    cfg.validate().map_err(|e| EvalError::Input(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Input(format!("worker pool: {e}")))?;
    let outcomes: Vec<EntryOutcome> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| eval_entry(e, cfg, backend, reasoner, methods))
            .collect()
    });
    Ok(BenchmarkReport::assemble(cfg, methods, entries.len(), outcomes))
}
