use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{GraspCandidate, GraspError};

/// Reference direction for the anti-parallel fallback axis.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Where and how the object is presented to the human.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseWire", from = "PoseWire")]
pub struct HandoverPose {
    pub position: Point3<f64>,
    /// Object rotation relative to its observed pose.
    pub rotation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseWire {
    position: [f64; 3],
    quaternion_wxyz: [f64; 4],
}

impl From<HandoverPose> for PoseWire {
    fn from(p: HandoverPose) -> Self {
        let q = p.rotation.quaternion();
        Self {
            position: p.position.coords.into(),
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
        }
    }
}

impl From<PoseWire> for HandoverPose {
    fn from(w: PoseWire) -> Self {
        let [qw, qx, qy, qz] = w.quaternion_wxyz;
        Self {
            position: Point3::from(w.position),
            rotation: UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(qw, qx, qy, qz)),
        }
    }
}

/// Axis for a half turn away from `u`: `WORLD_UP × u`, or `x × u` when `u`
/// is vertical.
fn fallback_axis(u: &Vector3<f64>) -> Unit<Vector3<f64>> {
    Unit::try_new(WORLD_UP.cross(u), 1e-6).unwrap_or_else(|| Unit::new_normalize(Vector3::x().cross(u)))
}

/// Smallest rotation taking unit `u` onto unit `b`.
pub(crate) fn minimal_rotation(u: &Vector3<f64>, b: &Vector3<f64>) -> UnitQuaternion<f64> {
    let cross = u.cross(b);
    let s = cross.norm();
    let c = u.dot(b);
    if s < 1e-6 {
        if c > 0.0 {
            // near parallel: small, well-conditioned correction
            return Unit::try_new(cross, 0.0)
                .map_or_else(UnitQuaternion::identity, |axis| UnitQuaternion::from_axis_angle(&axis, s.atan2(c)));
        }
        let flip = UnitQuaternion::from_axis_angle(&fallback_axis(u), std::f64::consts::PI);
        let flipped = flip * u;
        return minimal_rotation(&flipped, b) * flip;
    }
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(cross), s.atan2(c))
}

/// Rotates the object so that the direction from the robot grasp to the
/// human grasp point lines up with `base_to_human`, presented at `position`.
///
/// When the two directions are opposite the rotation is a half turn about
/// `WORLD_UP × offset` (or `x × offset` for a vertical offset).
pub fn handover_orientation(
    robot_grasp: &GraspCandidate,
    human_grasp_point: &Point3<f64>,
    base_to_human: &Vector3<f64>,
    position: &Point3<f64>,
) -> Result<HandoverPose, GraspError> {
    if ((base_to_human.norm()) - 1.0).abs() > 1e-6 {
        return Err(GraspError::Input(format!(
            "base_to_human must be a unit vector, norm is {}",
            base_to_human.norm()
        )));
    }
    let offset = human_grasp_point - robot_grasp.translation;
    let u = offset
        .try_normalize(1e-9)
        .ok_or_else(|| GraspError::Degenerate("human grasp point coincides with the robot grasp".into()))?;
    Ok(HandoverPose {
        position: *position,
        rotation: minimal_rotation(&u, &base_to_human.normalize()),
    })
}
