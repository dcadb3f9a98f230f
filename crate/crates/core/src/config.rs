//! Run configuration shared by the pipeline and the benchmark.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grasp::{GraspParams, GripperSpec, HeuristicTie};
use crate::partseg::{BackendSpec, SegParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerKind {
    Rule,
    /// Chat-completions endpoint configured through `LLM_*` variables.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    /// IoU at which a predicted part counts as detected.
    pub det_iou_thresh: f64,
    /// Smallest contact distance to the human part that counts as no interference.
    pub margin_m: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            det_iou_thresh: 0.5,
            margin_m: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub reasoner: ReasonerKind,
    /// A relative fixture directory is resolved against the dataset root.
    pub backend: BackendSpec,
    pub segmentation: SegParams,
    pub grasp: GraspParams,
    pub gripper: GripperSpec,
    pub eval: EvalParams,
    pub heuristic_tie: HeuristicTie,
    pub seed: u64,
    pub handover_position: [f64; 3],
    pub base_to_human: [f64; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reasoner: ReasonerKind::Rule,
            backend: BackendSpec::Fixture {
                dir: PathBuf::from("backend/degraded"),
            },
            segmentation: SegParams::default(),
            grasp: GraspParams::default(),
            gripper: GripperSpec::default(),
            eval: EvalParams::default(),
            heuristic_tie: HeuristicTie::Farthest,
            seed: 0,
            handover_position: [0.6, 0.0, 0.3],
            base_to_human: [1.0, 0.0, 0.0],
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |message: String| ConfigError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.segmentation.validate().map_err(|e| invalid(&e))?;
        self.grasp.validate().map_err(|e| invalid(&e))?;
        self.gripper.validate().map_err(|e| invalid(&e))?;
        if !(0.0..=1.0).contains(&self.eval.det_iou_thresh) {
            return Err(ConfigError::Invalid(format!(
                "det_iou_thresh {} is outside [0, 1]",
                self.eval.det_iou_thresh
            )));
        }
        if !(self.eval.margin_m >= 0.0 && self.eval.margin_m.is_finite()) {
            return Err(ConfigError::Invalid(format!("margin_m {} must be >= 0", self.eval.margin_m)));
        }
        let n = self.base_to_human.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(ConfigError::Invalid(format!("base_to_human must be a unit vector, norm is {n}")));
        }
        if self.handover_position.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::Invalid("handover_position must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Backend with a relative fixture directory anchored at `root`.
    pub fn backend_for(&self, root: &Path) -> BackendSpec {
        match &self.backend {
            BackendSpec::Fixture { dir } if dir.is_relative() => BackendSpec::Fixture { dir: root.join(dir) },
            other => other.clone(),
        }
    }
}
