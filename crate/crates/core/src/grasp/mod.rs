//! Grasp candidates: generation, spatial downselection, selection and the
//! handover pose.

mod fps;
mod handover;
mod normals;
mod sampler;
mod select;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoner::ReasonerError;

pub use fps::{
    diversity_gate, fps_points, fps_select, min_pairwise_distance, plan_grasps, GenerationRound, GraspPlan,
    EXACT_FPS_LIMIT,
};
pub use handover::{handover_orientation, HandoverPose, WORLD_UP};
pub use normals::estimate_normals;
pub use sampler::{generate_grasps, MIN_CLOUD_POINTS};
pub use select::{
    candidate_infos, contact_label, grasp_part, heuristic_select, select, selection_info, HeuristicTie, PartIndex,
    SelectionContext, OFF_OBJECT, UNLABELED,
};

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("diversity gate still failing after {rounds} regeneration rounds")]
    GateExhausted {
        rounds: usize,
        history: Vec<GenerationRound>,
    },
    #[error("grasp choice: {0}")]
    Reasoner(#[from] ReasonerError),
}

/// Two-finger parallel-jaw gripper.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    pub max_width: f64,
    pub finger_depth: f64,
    pub min_width: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            max_width: 0.08,
            finger_depth: 0.05,
            min_width: 0.0,
        }
    }
}

impl GripperSpec {
    pub fn validate(&self) -> Result<(), GraspError> {
        if !(0.0 <= self.min_width && self.min_width < self.max_width && self.max_width.is_finite()) {
            return Err(GraspError::Input(format!(
                "gripper widths must satisfy 0 <= min ({}) < max ({})",
                self.min_width, self.max_width
            )));
        }
        if !(self.finger_depth > 0.0 && self.finger_depth.is_finite()) {
            return Err(GraspError::Input(format!("finger depth {} must be positive", self.finger_depth)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspParams {
    /// Size of the spatially diverse subset shown to the selector.
    pub k: usize,
    /// Regeneration rounds after the first when the diversity gate fails.
    pub regen_rounds: usize,
    /// Candidates requested per generation round.
    pub candidates: usize,
    pub normal_neighbors: usize,
    /// Largest deviation from anti-parallel normals, and from the contact axis.
    pub antipodal_deg: f64,
    /// Contacts whose neighbourhood surface variation exceeds this are skipped.
    pub max_surface_variation: f64,
    /// Radius around a contact used to decide which part it touches.
    pub contact_radius: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            k: 5,
            regen_rounds: 3,
            candidates: 64,
            normal_neighbors: 15,
            antipodal_deg: 30.0,
            max_surface_variation: 0.02,
            contact_radius: 0.005,
        }
    }
}

impl GraspParams {
    pub fn validate(&self) -> Result<(), GraspError> {
        if self.k == 0 || self.candidates == 0 || self.normal_neighbors < 3 {
            return Err(GraspError::Input("k and candidates must be >= 1, normal_neighbors >= 3".into()));
        }
        if !(0.0..90.0).contains(&self.antipodal_deg) || !(self.contact_radius > 0.0) {
            return Err(GraspError::Input("antipodal_deg in [0, 90) and contact_radius > 0 required".into()));
        }
        if !(self.max_surface_variation >= 0.0) {
            return Err(GraspError::Input("max_surface_variation must be >= 0".into()));
        }
        Ok(())
    }
}

/// A 6-DOF parallel-jaw grasp in the camera frame.
///
/// The rotation's columns are the gripper frame: x = y × approach,
/// y = closing axis (first contact to second), z = approach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "GraspWire", try_from = "GraspWire")]
pub struct GraspCandidate {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Point3<f64>,
    pub width: f64,
    pub contacts: [Point3<f64>; 2],
    pub approach: Vector3<f64>,
}

/// On-disk form: quaternion as (w, x, y, z), lengths in meters.
#[derive(Serialize, Deserialize)]
struct GraspWire {
    quaternion_wxyz: [f64; 4],
    translation: [f64; 3],
    width: f64,
    contacts: [[f64; 3]; 2],
    approach: [f64; 3],
}

impl From<GraspCandidate> for GraspWire {
    fn from(g: GraspCandidate) -> Self {
        let q = g.rotation.quaternion();
        Self {
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            translation: g.translation.coords.into(),
            width: g.width,
            contacts: [g.contacts[0].coords.into(), g.contacts[1].coords.into()],
            approach: g.approach.into(),
        }
    }
}

impl TryFrom<GraspWire> for GraspCandidate {
    type Error = String;

    fn try_from(w: GraspWire) -> Result<Self, String> {
        let [qw, qx, qy, qz] = w.quaternion_wxyz;
        let q = nalgebra::Quaternion::new(qw, qx, qy, qz);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {} is not 1", q.norm()));
        }
        // renormalizing an already-unit quaternion would perturb the last bits
        let rotation = if (q.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(Self {
            rotation,
            translation: Point3::from(w.translation),
            width: w.width,
            contacts: [Point3::from(w.contacts[0]), Point3::from(w.contacts[1])],
            approach: Vector3::from(w.approach),
        })
    }
}

impl GraspCandidate {
    /// Checks the pose, width and contact invariants against `gripper`.
    pub fn validate(&self, gripper: &GripperSpec) -> Result<(), String> {
        let qn = self.rotation.quaternion().norm();
        if (qn - 1.0).abs() > 1e-9 {
            return Err(format!("quaternion norm {qn}"));
        }
        if self.width < gripper.min_width || self.width > gripper.max_width {
            return Err(format!(
                "width {} outside [{}, {}]",
                self.width, gripper.min_width, gripper.max_width
            ));
        }
        let span = (self.contacts[1] - self.contacts[0]).norm();
        if (span - self.width).abs() > 0.002 {
            return Err(format!("contacts {span} m apart, width {}", self.width));
        }
        if (self.approach.norm() - 1.0).abs() > 1e-6 {
            return Err("approach is not a unit vector".into());
        }
        if span > 0.0 {
            let axis = (self.contacts[1] - self.contacts[0]) / span;
            let off = axis.dot(&self.approach).abs().min(1.0).asin().to_degrees();
            if off > 5.0 {
                return Err(format!("approach {off:.2} degrees off perpendicular to the contact axis"));
            }
        }
        Ok(())
    }

    /// Closing axis from the first contact to the second.
    pub fn closing_axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::y()
    }
}

/// Reads a JSON array of grasps, for externally planned candidates.
pub fn read_grasps(path: &std::path::Path) -> Result<Vec<GraspCandidate>, GraspError> {
    let text = std::fs::read_to_string(path).map_err(|e| GraspError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| GraspError::Input(format!("{}: {e}", path.display())))
}
