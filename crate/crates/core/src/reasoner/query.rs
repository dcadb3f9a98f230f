use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geometry::{GeomSummary, PointCloud};

/// Decimal places used for every number in the supporting information.
pub const SI_DECIMALS: usize = 4;

pub fn round_si(x: f64) -> f64 {
    let scale = 10f64.powi(SI_DECIMALS as i32);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round3(v: [f64; 3]) -> [f64; 3] {
    v.map(round_si)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TaskReasoning,
    ResolveContradiction,
    AssignClusters,
    ClassifyUnlabeled,
    ChooseGrasp,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::TaskReasoning => "task_reasoning",
            Stage::ResolveContradiction => "resolve_contradiction",
            Stage::AssignClusters => "assign_clusters",
            Stage::ClassifyUnlabeled => "classify_unlabeled",
            Stage::ChooseGrasp => "choose_grasp",
        }
    }
}

/// Geometric description of a point set, rounded to the SI precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomInfo {
    pub centroid_m: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aabb_min_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aabb_max_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_axis: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_length_m: Option<f64>,
    pub point_count: usize,
}

impl GeomInfo {
    pub fn from_summary(s: &GeomSummary) -> Self {
        Self {
            centroid_m: round3(s.centroid.coords.into()),
            aabb_min_m: Some(round3(s.aabb_min.coords.into())),
            aabb_max_m: Some(round3(s.aabb_max.coords.into())),
            dominant_axis: Some(round3(s.dominant_axis.into())),
            dominant_length_m: Some(round_si(s.dominant_length)),
            point_count: s.point_count,
        }
    }

    /// Full summary when one exists, otherwise centroid and count only.
    pub fn from_cloud(cloud: &PointCloud) -> Option<Self> {
        match crate::geometry::summarize(cloud) {
            Ok(s) => Some(Self::from_summary(&s)),
            Err(_) => cloud.centroid().map(|c| Self {
                centroid_m: round3(c.coords.into()),
                aabb_min_m: None,
                aabb_max_m: None,
                dominant_axis: None,
                dominant_length_m: None,
                point_count: cloud.len(),
            }),
        }
    }

    pub fn centroid(&self) -> Point3<f64> {
        Point3::from(self.centroid_m)
    }
}

/// Relation of a query cluster to one known part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborInfo {
    pub part: String,
    /// Smallest point-to-point distance between cluster and part.
    pub gap_m: f64,
    /// Angle between the two dominant axes, when both exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_angle_deg: Option<f64>,
    /// Distance from the cluster centroid to the part's axis line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_offset_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterInfo {
    pub id: String,
    pub geometry: GeomInfo,
    /// Position of the centroid along the object's dominant axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_position_m: Option<f64>,
    /// Length of the cluster along the object's dominant axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_extent_m: Option<f64>,
    /// Width of the cluster across the object's dominant axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_extent_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighbors: Vec<NeighborInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub index: usize,
    pub position_m: [f64; 3],
    pub approach: [f64; 3],
    pub width_m: f64,
    pub contacts_m: [[f64; 3]; 2],
    /// Part label under each contact ("off-object" when none).
    pub contact_parts: [String; 2],
    /// Smallest distance from either contact to the human grasp part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_clearance_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StagePayload {
    Task,
    Contradiction {
        label_a: String,
        label_b: String,
        /// Pixels of each mask not shared with the other.
        only_a: Option<GeomInfo>,
        only_b: Option<GeomInfo>,
        overlap: GeomInfo,
    },
    MissingParts {
        missing: Vec<String>,
        expected_order: Vec<String>,
        clusters: Vec<ClusterInfo>,
    },
    Unlabeled {
        cluster: ClusterInfo,
        adjacency_eps_m: f64,
        absent_parts: Vec<String>,
    },
    GraspChoice {
        candidates: Vec<CandidateInfo>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        human_part: Option<String>,
    },
}

/// Structured context sent alongside the task description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportingInfo {
    pub object_class: String,
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<GeomInfo>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parts: BTreeMap<String, GeomInfo>,
    pub payload: StagePayload,
}

impl SupportingInfo {
    pub fn new(object_class: &str, payload: StagePayload) -> Self {
        Self {
            object_class: object_class.into(),
            scene: "tabletop".into(),
            task: None,
            object: None,
            parts: BTreeMap::new(),
            payload,
        }
    }
}

/// Declared response shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutputSchema {
    /// `parts` restricts part names; empty means unrestricted.
    TaskPlan { parts: Vec<String> },
    PartChoice { options: Vec<String> },
    PartLabel,
    PartAssignment { cluster_ids: Vec<String> },
    GraspChoice { candidates: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotGraspRegion {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
}

/// Task reasoning output; field order puts the free-text description first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub post_task_description: String,
    pub relevant_parts: Vec<String>,
    pub human_grasp_part: String,
    pub robot_grasp_region: RobotGraspRegion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReasonerResponse {
    TaskPlan(TaskPlan),
    PartChoice { label: String },
    PartLabel { label: String },
    PartAssignment { assignments: BTreeMap<String, String> },
    GraspChoice { grasp_index: usize },
}

impl OutputSchema {
    pub fn name(&self) -> &'static str {
        match self {
            OutputSchema::TaskPlan { .. } => "task_plan",
            OutputSchema::PartChoice { .. } => "part_choice",
            OutputSchema::PartLabel => "part_label",
            OutputSchema::PartAssignment { .. } => "part_assignment",
            OutputSchema::GraspChoice { .. } => "grasp_choice",
        }
    }

    /// JSON Schema handed to the model.
    pub fn json_schema(&self) -> Value {
        match self {
            OutputSchema::TaskPlan { parts } => {
                let part = if parts.is_empty() {
                    json!({"type": "string"})
                } else {
                    json!({"type": "string", "enum": parts})
                };
                json!({
                "type": "object",
                "properties": {
                    "post_task_description": {"type": "string"},
                    "relevant_parts": {"type": "array", "items": part},
                    "human_grasp_part": part,
                    "robot_grasp_region": {
                        "type": "object",
                        "properties": {
                            "description": {"type": "string"},
                            "part": {"type": "string"}
                        },
                        "required": ["description"]
                    }
                },
                "required": ["post_task_description", "relevant_parts", "human_grasp_part", "robot_grasp_region"]
                })
            }
            OutputSchema::PartChoice { options } => json!({
                "type": "object",
                "properties": {"label": {"type": "string", "enum": options}},
                "required": ["label"]
            }),
            OutputSchema::PartLabel => json!({
                "type": "object",
                "properties": {"label": {"type": "string"}},
                "required": ["label"]
            }),
            OutputSchema::PartAssignment { cluster_ids } => {
                let props: serde_json::Map<String, Value> = cluster_ids
                    .iter()
                    .map(|id| (id.clone(), json!({"type": "string"})))
                    .collect();
                json!({
                    "type": "object",
                    "properties": {"assignments": {
                        "type": "object",
                        "properties": props,
                        "required": cluster_ids
                    }},
                    "required": ["assignments"]
                })
            }
            OutputSchema::GraspChoice { candidates } => json!({
                "type": "object",
                "properties": {"grasp_index": {
                    "type": "integer",
                    "minimum": 0,
                    "maximum": candidates.saturating_sub(1)
                }},
                "required": ["grasp_index"]
            }),
        }
    }

    /// Parses a JSON answer, reporting the first violation as text.
    pub fn parse(&self, value: &Value) -> Result<ReasonerResponse, String> {
        let obj = value.as_object().ok_or("response is not a JSON object")?;
        let text = |key: &str| -> Result<String, String> {
            match obj.get(key) {
                Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
                Some(_) => Err(format!("field '{key}' must be a non-empty string")),
                None => Err(format!("missing required field '{key}'")),
            }
        };
        match self {
            OutputSchema::TaskPlan { parts } => {
                let plan: TaskPlan = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
                check_plan(&plan, parts)?;
                Ok(ReasonerResponse::TaskPlan(plan))
            }
            OutputSchema::PartChoice { options } => {
                let label = text("label")?;
                if !options.contains(&label) {
                    return Err(format!("label '{label}' is not one of {options:?}"));
                }
                Ok(ReasonerResponse::PartChoice { label })
            }
            OutputSchema::PartLabel => Ok(ReasonerResponse::PartLabel { label: text("label")? }),
            OutputSchema::PartAssignment { cluster_ids } => {
                let map = obj
                    .get("assignments")
                    .and_then(Value::as_object)
                    .ok_or("missing required object 'assignments'")?;
                let mut out = BTreeMap::new();
                for id in cluster_ids {
                    match map.get(id) {
                        Some(Value::String(s)) if !s.trim().is_empty() => {
                            out.insert(id.clone(), s.trim().to_string());
                        }
                        _ => return Err(format!("cluster '{id}' has no label")),
                    }
                }
                if let Some(extra) = map.keys().find(|k| !cluster_ids.contains(k)) {
                    return Err(format!("unknown cluster id '{extra}'"));
                }
                Ok(ReasonerResponse::PartAssignment { assignments: out })
            }
            OutputSchema::GraspChoice { candidates } => {
                let idx = obj
                    .get("grasp_index")
                    .ok_or("missing required field 'grasp_index'")?
                    .as_u64()
                    .ok_or("'grasp_index' must be a non-negative integer")?;
                if idx as usize >= *candidates {
                    return Err(format!(
                        "grasp_index {idx} out of range: {candidates} candidates (valid 0..={})",
                        candidates.saturating_sub(1)
                    ));
                }
                Ok(ReasonerResponse::GraspChoice {
                    grasp_index: idx as usize,
                })
            }
        }
    }

    /// Checks that a typed response has this shape.
    pub fn accepts(&self, response: &ReasonerResponse) -> Result<(), String> {
        let value = match response {
            ReasonerResponse::TaskPlan(p) => serde_json::to_value(p).expect("plan serializes"),
            ReasonerResponse::PartChoice { label } | ReasonerResponse::PartLabel { label } => json!({ "label": label }),
            ReasonerResponse::PartAssignment { assignments } => json!({ "assignments": assignments }),
            ReasonerResponse::GraspChoice { grasp_index } => json!({ "grasp_index": grasp_index }),
        };
        let parsed = self.parse(&value)?;
        if std::mem::discriminant(&parsed) != std::mem::discriminant(response) {
            return Err(format!("expected a {} response", self.name()));
        }
        Ok(())
    }
}

fn check_plan(plan: &TaskPlan, parts: &[String]) -> Result<(), String> {
    if plan.post_task_description.trim().is_empty() {
        return Err("post_task_description is empty".into());
    }
    if plan.relevant_parts.is_empty() {
        return Err("relevant_parts is empty".into());
    }
    if !plan.relevant_parts.contains(&plan.human_grasp_part) {
        return Err(format!(
            "human_grasp_part '{}' is not among relevant_parts",
            plan.human_grasp_part
        ));
    }
    if !parts.is_empty() {
        if let Some(p) = plan.relevant_parts.iter().find(|p| !parts.contains(p)) {
            return Err(format!("relevant part '{p}' is not one of {parts:?}"));
        }
    }
    Ok(())
}

/// A TD/SI/OS query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonerQuery {
    pub stage: Stage,
    pub task_description: String,
    pub supporting_info: SupportingInfo,
    pub output_schema: OutputSchema,
}

pub const TD_HEADER: &str = "### Task Description (TD)";
pub const SI_HEADER: &str = "### Supporting Information (SI)";
pub const OS_HEADER: &str = "### Output Structure (OS)";

impl ReasonerQuery {
    /// User prompt with the three sections in TD, SI, OS order.
    pub fn render(&self) -> String {
        let si = serde_json::to_value(&self.supporting_info).expect("SI serializes");
        format!(
            "{TD_HEADER}\n{}\n\n{SI_HEADER}\n{}\n\n{OS_HEADER}\nRespond with one JSON object that matches this schema:\n{}\n",
            self.task_description.trim_end(),
            to_fixed_json(&si),
            to_fixed_json(&self.output_schema.json_schema()),
        )
    }
}

/// Pretty JSON in which every non-integer number carries exactly `SI_DECIMALS` decimals.
pub fn to_fixed_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value, 0);
    out
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => {
            if n.is_f64() {
                let _ = write!(out, "{:.*}", SI_DECIMALS, n.as_f64().unwrap_or(0.0));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::Array(items) => {
            if items.iter().all(|x| x.is_number()) {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, x, indent);
                }
                out.push(']');
                return;
            }
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, x) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, x, indent + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, x)) in map.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, x, indent + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}
