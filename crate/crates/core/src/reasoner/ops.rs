//! One builder per reasoning stage: fills the TD template, attaches the
//! stage payload to the caller's scene context and unwraps the answer.

use std::collections::BTreeMap;

use super::query::{
    CandidateInfo, ClusterInfo, GeomInfo, OutputSchema, ReasonerQuery, ReasonerResponse, Stage, StagePayload,
    SupportingInfo, TaskPlan,
};
use super::{Reasoner, ReasonerError};
use crate::dataset::{taxonomy, TaskSpec};

const TASK_TD: &str = include_str!("../../data/prompts/task_reasoning.txt");
const CONTRADICTION_TD: &str = include_str!("../../data/prompts/resolve_contradiction.txt");
const CLUSTERS_TD: &str = include_str!("../../data/prompts/assign_clusters.txt");
const UNLABELED_TD: &str = include_str!("../../data/prompts/classify_unlabeled.txt");
const GRASP_TD: &str = include_str!("../../data/prompts/choose_grasp.txt");

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.trim_end().to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn with_payload(base: &SupportingInfo, payload: StagePayload) -> SupportingInfo {
    SupportingInfo {
        payload,
        ..base.clone()
    }
}

fn unexpected(stage: Stage, got: &ReasonerResponse) -> ReasonerError {
    ReasonerError::SchemaInvalid(format!("{} received {got:?}", stage.as_str()))
}

pub fn task_reasoning(
    spec: &TaskSpec,
    object: Option<GeomInfo>,
    reasoner: &dyn Reasoner,
) -> Result<TaskPlan, ReasonerError> {
    let task = spec.task_text.trim();
    if task.is_empty() {
        return Err(ReasonerError::Precondition("task text is empty".into()));
    }
    let mut si = SupportingInfo::new(&spec.object_class, StagePayload::Task);
    si.task = Some(task.to_string());
    si.object = object;
    let parts = taxonomy()
        .parts(&spec.object_class)
        .map(|p| p.to_vec())
        .unwrap_or_default();
    let query = ReasonerQuery {
        stage: Stage::TaskReasoning,
        task_description: fill(TASK_TD, &[("object_class", &spec.object_class), ("task", task)]),
        supporting_info: si,
        output_schema: OutputSchema::TaskPlan { parts },
    };
    match reasoner.answer(&query)? {
        ReasonerResponse::TaskPlan(plan) => Ok(plan),
        other => Err(unexpected(query.stage, &other)),
    }
}

/// Label for the shared region of two overlapping masks.
pub fn resolve_contradiction(
    base: &SupportingInfo,
    label_a: &str,
    label_b: &str,
    only_a: Option<GeomInfo>,
    only_b: Option<GeomInfo>,
    overlap: GeomInfo,
    reasoner: &dyn Reasoner,
) -> Result<String, ReasonerError> {
    if label_a == label_b {
        return Ok(label_a.to_string());
    }
    let query = ReasonerQuery {
        stage: Stage::ResolveContradiction,
        task_description: fill(
            CONTRADICTION_TD,
            &[
                ("object_class", &base.object_class),
                ("label_a", label_a),
                ("label_b", label_b),
            ],
        ),
        supporting_info: with_payload(
            base,
            StagePayload::Contradiction {
                label_a: label_a.into(),
                label_b: label_b.into(),
                only_a,
                only_b,
                overlap,
            },
        ),
        output_schema: OutputSchema::PartChoice {
            options: vec![label_a.into(), label_b.into()],
        },
    };
    match reasoner.answer(&query)? {
        ReasonerResponse::PartChoice { label } => Ok(label),
        other => Err(unexpected(query.stage, &other)),
    }
}

/// Cluster id to part label. No clusters gives an empty map without a query.
pub fn assign_cluster_labels(
    base: &SupportingInfo,
    missing: &[String],
    clusters: Vec<ClusterInfo>,
    reasoner: &dyn Reasoner,
) -> Result<BTreeMap<String, String>, ReasonerError> {
    if clusters.is_empty() {
        return Ok(BTreeMap::new());
    }
    if missing.is_empty() {
        return Err(ReasonerError::Precondition("no missing parts to assign".into()));
    }
    let expected_order = taxonomy()
        .parts(&base.object_class)
        .map(|p| p.to_vec())
        .unwrap_or_default();
    let cluster_ids = clusters.iter().map(|c| c.id.clone()).collect();
    let query = ReasonerQuery {
        stage: Stage::AssignClusters,
        task_description: fill(
            CLUSTERS_TD,
            &[("object_class", &base.object_class), ("missing", &missing.join(", "))],
        ),
        supporting_info: with_payload(
            base,
            StagePayload::MissingParts {
                missing: missing.to_vec(),
                expected_order,
                clusters,
            },
        ),
        output_schema: OutputSchema::PartAssignment { cluster_ids },
    };
    match reasoner.answer(&query)? {
        ReasonerResponse::PartAssignment { assignments } => Ok(assignments),
        other => Err(unexpected(query.stage, &other)),
    }
}

/// Existing or new part label for a significant unlabeled cluster.
pub fn classify_unlabeled(
    base: &SupportingInfo,
    cluster: ClusterInfo,
    adjacency_eps_m: f64,
    absent_parts: Vec<String>,
    reasoner: &dyn Reasoner,
) -> Result<String, ReasonerError> {
    if cluster.geometry.point_count == 0 {
        return Err(ReasonerError::Precondition("cluster is empty".into()));
    }
    let query = ReasonerQuery {
        stage: Stage::ClassifyUnlabeled,
        task_description: fill(UNLABELED_TD, &[("object_class", &base.object_class)]),
        supporting_info: with_payload(
            base,
            StagePayload::Unlabeled {
                cluster,
                adjacency_eps_m,
                absent_parts,
            },
        ),
        output_schema: OutputSchema::PartLabel,
    };
    match reasoner.answer(&query)? {
        ReasonerResponse::PartLabel { label } => Ok(label),
        other => Err(unexpected(query.stage, &other)),
    }
}

/// Index into `candidates` of the grasp to execute.
pub fn choose_grasp(
    base: &SupportingInfo,
    candidates: Vec<CandidateInfo>,
    human_part: Option<String>,
    reasoner: &dyn Reasoner,
) -> Result<usize, ReasonerError> {
    if candidates.is_empty() {
        return Err(ReasonerError::Precondition("no grasp candidates".into()));
    }
    let n = candidates.len();
    let task = base.task.clone().unwrap_or_default();
    let query = ReasonerQuery {
        stage: Stage::ChooseGrasp,
        task_description: fill(GRASP_TD, &[("object_class", &base.object_class), ("task", &task)]),
        supporting_info: with_payload(base, StagePayload::GraspChoice { candidates, human_part }),
        output_schema: OutputSchema::GraspChoice { candidates: n },
    };
    match reasoner.answer(&query)? {
        ReasonerResponse::GraspChoice { grasp_index } => Ok(grasp_index),
        other => Err(unexpected(query.stage, &other)),
    }
}
