//! End-to-end run for one observation and task: task reasoning, part
//! segmentation, grasp planning, selection and the handover pose, with a
//! decision trace.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{DatasetEntry, DatasetError, TaskSpec};
use crate::geometry::crop_to_mask;
use crate::grasp::{
    generate_grasps, grasp_part, handover_orientation, heuristic_select, plan_grasps, select, GenerationRound,
    GraspCandidate, GraspError, GraspPlan, HandoverPose, SelectionContext,
};
use crate::partseg::{run_stages, PartHypothesis, PartsegError, SegBackend, SegContext, SegmentationResult, StageRecord};
use crate::reasoner::{task_reasoning, Exchange, GeomInfo, Reasoner, ReasonerError, RecordingReasoner, TaskPlan};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("segmentation: {0}")]
    Segmentation(#[from] PartsegError),
    #[error("grasp: {0}")]
    Grasp(#[from] GraspError),
    #[error("task reasoning: {0}")]
    Reasoner(#[from] ReasonerError),
}

impl PipelineError {
    /// Process exit code: 2 bad input, 3 pipeline failure, 4 reasoner failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Input(_) | PipelineError::Dataset(_) | PipelineError::Config(_) => 2,
            PipelineError::Segmentation(PartsegError::Params(_)) => 2,
            PipelineError::Segmentation(PartsegError::Reasoner { .. }) => 4,
            PipelineError::Grasp(GraspError::Reasoner(_)) => 4,
            PipelineError::Reasoner(_) => 4,
            PipelineError::Segmentation(_) | PipelineError::Grasp(_) => 3,
        }
    }
}

/// How the final grasp is picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Reasoner choice with geometry and the human part.
    #[serde(rename = "ours")]
    Ours,
    /// Keep contacts away from the predicted human part.
    #[serde(rename = "heuristic")]
    Heuristic,
    /// The generator's first candidate.
    #[serde(rename = "planner-first")]
    PlannerFirst,
    /// Reasoner choice without object or part geometry.
    #[serde(rename = "nG")]
    NoGeometry,
    /// Reasoner choice without the human grasp part.
    #[serde(rename = "nH")]
    NoHuman,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ours,
        Method::Heuristic,
        Method::PlannerFirst,
        Method::NoGeometry,
        Method::NoHuman,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Heuristic => "heuristic",
            Method::PlannerFirst => "planner-first",
            Method::NoGeometry => "nG",
            Method::NoHuman => "nH",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method '{s}' (expected ours, heuristic, planner-first, nG or nH)"))
    }
}

/// Segmentation plus the raw backend output it started from.
pub struct EntrySegmentation {
    pub hypotheses: Vec<PartHypothesis>,
    pub result: SegmentationResult,
}

/// Everything up to grasp selection.
pub struct Prepared {
    pub task: TaskSpec,
    pub plan: TaskPlan,
    pub segmentation: EntrySegmentation,
    pub grasps: GraspPlan,
}

/// Loads the entry and builds the segmentation context.
pub fn entry_context(entry: &DatasetEntry, task: Option<&str>, cfg: &PipelineConfig) -> Result<SegContext, PipelineError> {
    let depth = entry.load_depth()?;
    Ok(SegContext::new(
        &entry.object_class,
        task,
        depth,
        entry.intrinsics,
        entry.object_mask.clone(),
        cfg.segmentation.clone(),
    )?)
}

pub fn plan_task(ctx: &SegContext, task: &TaskSpec, reasoner: &dyn Reasoner) -> Result<TaskPlan, PipelineError> {
    Ok(task_reasoning(task, Some(GeomInfo::from_summary(&ctx.object_summary)), reasoner)?)
}

/// Crop, propose and refine, expecting `expected` parts.
pub fn segment_entry(
    ctx: &SegContext,
    entry: &DatasetEntry,
    expected: &[String],
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
) -> Result<EntrySegmentation, PipelineError> {
    let (w, h) = ctx.dims();
    let crop = crop_to_mask(w, h, &entry.object_mask, ctx.params.crop_padding)
        .map_err(PartsegError::geometry("crop"))?;
    let hypotheses = backend.propose(&entry.rgb, crop, (w, h))?;
    let result = run_stages(ctx, hypotheses.clone(), expected, reasoner)?;
    Ok(EntrySegmentation { hypotheses, result })
}

/// Stable per-run seed for `key` under the configured seed.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{key}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Candidate generation with diversity gating; `supplied` replaces the generator.
pub fn plan_entry_grasps(
    seg: &SegmentationResult,
    cfg: &PipelineConfig,
    seed: u64,
    supplied: Option<&[GraspCandidate]>,
) -> Result<GraspPlan, PipelineError> {
    let dominant = seg.object_summary.dominant_length;
    let plan = match supplied {
        Some(g) => plan_grasps(dominant, &cfg.grasp, seed, |_| g.to_vec())?,
        None => plan_grasps(dominant, &cfg.grasp, seed, |s| {
            generate_grasps(&seg.object_cloud, &cfg.gripper, &cfg.grasp, s)
        })?,
    };
    Ok(plan)
}

/// The grasp a method picks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Choice {
    pub method: Method,
    /// Index into the final round's candidates.
    pub candidate_index: usize,
    pub grasp: GraspCandidate,
    pub grasp_part: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn choose(
    prepared: &Prepared,
    method: Method,
    cfg: &PipelineConfig,
    reasoner: &dyn Reasoner,
) -> Result<Choice, PipelineError> {
    let grasps = &prepared.grasps;
    let seg = &prepared.segmentation.result;
    let subset = grasps.subset_candidates();
    let human = prepared.plan.human_grasp_part.clone();
    let mut note = None;
    let candidate_index = match method {
        Method::Ours | Method::NoGeometry | Method::NoHuman => {
            let mut ctx = SelectionContext::new(subset, Some(human));
            ctx.task = Some(prepared.task.task_text.clone());
            ctx.include_geometry = method != Method::NoGeometry;
            ctx.include_human_part = method != Method::NoHuman;
            ctx.contact_radius = cfg.grasp.contact_radius;
            grasps.subset[select(&ctx, seg, reasoner)?]
        }
        Method::Heuristic => match seg.part_containing(&human).filter(|(_, p)| !p.cloud.is_empty()) {
            Some((_, part)) => {
                grasps.subset[heuristic_select(&subset, &part.cloud, cfg.grasp.contact_radius, cfg.heuristic_tie)?]
            }
            None => {
                note = Some(format!("human part '{human}' not segmented; kept the first sampled grasp"));
                grasps.subset[0]
            }
        },
        Method::PlannerFirst => 0,
    };
    let grasp = grasps.candidates[candidate_index].clone();
    Ok(Choice {
        method,
        candidate_index,
        grasp_part: grasp_part(&grasp, seg, cfg.grasp.contact_radius),
        grasp,
        note,
    })
}

/// Human grasp point: the human part centroid, else the object point
/// farthest from the robot grasp.
pub fn human_grasp_point(seg: &SegmentationResult, human: &str, grasp: &GraspCandidate) -> Option<Point3<f64>> {
    if let Some(c) = seg.part_containing(human).and_then(|(_, p)| p.cloud.centroid()) {
        return Some(c);
    }
    seg.object_cloud
        .points()
        .iter()
        .copied()
        .max_by(|a, b| (a - grasp.translation).norm().total_cmp(&(b - grasp.translation).norm()))
}

pub fn handover_for(seg: &SegmentationResult, human: &str, grasp: &GraspCandidate, cfg: &PipelineConfig) -> Result<HandoverPose, PipelineError> {
    let point = human_grasp_point(seg, human, grasp)
        .ok_or_else(|| PipelineError::Grasp(GraspError::Degenerate("empty object cloud".into())))?;
    Ok(handover_orientation(
        grasp,
        &point,
        &Vector3::from(cfg.base_to_human),
        &Point3::from(cfg.handover_position),
    )?)
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentationTrace {
    /// Point count per part.
    pub parts: BTreeMap<String, usize>,
    pub unassigned_fraction: f64,
    pub unidentified: Vec<String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceError {
    pub exit_code: i32,
    pub message: String,
}

/// Everything the run decided, in order.
#[derive(Clone, Debug, Serialize)]
pub struct Trace {
    pub config_fingerprint: String,
    pub seed: u64,
    pub entry: String,
    pub task: TaskSpec,
    pub method: Method,
    pub reasoner: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<TaskPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationTrace>,
    pub grasp_rounds: Vec<GenerationRound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<Choice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub handover: Option<HandoverPose>,
    pub exchanges: Vec<Exchange>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<TraceError>,
}

pub struct PipelineRun {
    pub trace: Trace,
    pub segmentation: Option<SegmentationResult>,
    pub outcome: Result<(), PipelineError>,
}

impl PipelineRun {
    pub fn exit_code(&self) -> i32 {
        self.outcome.as_ref().map_or_else(PipelineError::exit_code, |_| 0)
    }
}

/// Runs the whole pipeline on `entry`. The trace covers every completed step
/// even when a later one fails.
pub fn run_pipeline(
    entry: &DatasetEntry,
    task: &TaskSpec,
    cfg: &PipelineConfig,
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
    method: Method,
    supplied: Option<&[GraspCandidate]>,
) -> PipelineRun {
    let recorder = RecordingReasoner::new(reasoner);
    let mut trace = Trace {
        config_fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        entry: entry.id(),
        task: task.clone(),
        method,
        reasoner: reasoner.name().to_string(),
        plan: None,
        segmentation: None,
        grasp_rounds: Vec::new(),
        selection: None,
        handover: None,
        exchanges: Vec::new(),
        error: None,
    };
    let mut segmentation = None;
    let outcome = run_steps(entry, task, cfg, backend, &recorder, method, supplied, &mut trace, &mut segmentation);
    trace.exchanges = recorder.into_exchanges();
    if let Err(e) = &outcome {
        if let PipelineError::Grasp(GraspError::GateExhausted { history, .. }) = e {
            trace.grasp_rounds = history.clone();
        }
        trace.error = Some(TraceError {
            exit_code: e.exit_code(),
            message: e.to_string(),
        });
    }
    PipelineRun {
        trace,
        segmentation,
        outcome,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_steps(
    entry: &DatasetEntry,
    task: &TaskSpec,
    cfg: &PipelineConfig,
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
    method: Method,
    supplied: Option<&[GraspCandidate]>,
    trace: &mut Trace,
    segmentation: &mut Option<SegmentationResult>,
) -> Result<(), PipelineError> {
    cfg.validate()?;
    if task.object_class != entry.object_class {
        return Err(PipelineError::Input(format!(
            "task is for '{}' but the entry shows a '{}'",
            task.object_class, entry.object_class
        )));
    }
    let ctx = entry_context(entry, Some(&task.task_text), cfg)?;
    let plan = plan_task(&ctx, task, reasoner)?;
    trace.plan = Some(plan.clone());
    let seg = segment_entry(&ctx, entry, &plan.relevant_parts, backend, reasoner)?;
    trace.segmentation = Some(SegmentationTrace {
        parts: seg.result.parts.iter().map(|(k, p)| (k.clone(), p.members.len())).collect(),
        unassigned_fraction: seg.result.unassigned_fraction,
        unidentified: seg.result.unidentified.clone(),
        stages: seg.result.stages.clone(),
    });
    *segmentation = Some(seg.result.clone());
    let seed = derive_seed(cfg.seed, &format!("{}:{}", entry.id(), task.task_text));
    let grasps = plan_entry_grasps(&seg.result, cfg, seed, supplied)?;
    trace.grasp_rounds = grasps.rounds.clone();
    let prepared = Prepared {
        task: task.clone(),
        plan,
        segmentation: seg,
        grasps,
    };
    let choice = choose(&prepared, method, cfg, reasoner)?;
    let pose = handover_for(
        &prepared.segmentation.result,
        &prepared.plan.human_grasp_part,
        &choice.grasp,
        cfg,
    )?;
    trace.selection = Some(choice);
    trace.handover = Some(pose);
    Ok(())
}

/// Plan, segment and sample grasps without choosing, for the benchmark.
pub fn prepare(
    entry: &DatasetEntry,
    task: &TaskSpec,
    cfg: &PipelineConfig,
    backend: &dyn SegBackend,
    reasoner: &dyn Reasoner,
) -> Result<Prepared, PipelineError> {
    let ctx = entry_context(entry, Some(&task.task_text), cfg)?;
    let plan = plan_task(&ctx, task, reasoner)?;
    let segmentation = segment_entry(&ctx, entry, &plan.relevant_parts, backend, reasoner)?;
    let seed = derive_seed(cfg.seed, &format!("{}:{}", entry.id(), task.task_text));
    let grasps = plan_entry_grasps(&segmentation.result, cfg, seed, None)?;
    Ok(Prepared {
        task: task.clone(),
        plan,
        segmentation,
        grasps,
    })
}
