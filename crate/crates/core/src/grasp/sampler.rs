use std::collections::HashSet;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::normals::{estimate_normals, surface_variation};
use super::{GraspCandidate, GraspParams, GripperSpec};
use crate::geometry::grid::SpatialGrid;
use crate::geometry::PointCloud;

/// Smaller clouds produce no candidates.
pub const MIN_CLOUD_POINTS: usize = 50;

/// Approach along the viewing ray to the grasp centre, made perpendicular to
/// the closing axis. The camera sits at the origin, so this comes from the
/// side the sensor sees and away from the supporting surface.
fn approach_for(center: &Point3<f64>, closing: &Vector3<f64>) -> Vector3<f64> {
    let view = center.coords;
    let a = view - closing * view.dot(closing);
    if let Some(a) = a.try_normalize(1e-9) {
        return a;
    }
    let helper = if closing.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
    closing.cross(&helper).normalize()
}

fn pose(c0: Point3<f64>, c1: Point3<f64>) -> Option<GraspCandidate> {
    let d = c1 - c0;
    let width = d.norm();
    let y = d.try_normalize(1e-12)?;
    let translation = Point3::from((c0.coords + c1.coords) / 2.0);
    let a = approach_for(&translation, &y);
    let x = y.cross(&a);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, a]));
    Some(GraspCandidate {
        rotation: UnitQuaternion::from_rotation_matrix(&rot),
        translation,
        width,
        contacts: [c0, c1],
        approach: a,
    })
}

/// Antipodal two-finger grasps on `cloud`.
///
/// A contact pair qualifies when the estimated normals are within
/// `antipodal_deg` of anti-parallel, each normal is within the same angle of
/// the line joining the contacts, and the separation fits the gripper.
/// Contacts on edges and corners, where the neighbourhood is not close to
/// planar, are skipped.
/// Anchors are drawn with a seeded generator; for each anchor the best
/// partner is kept. Deterministic for a given seed.
pub fn generate_grasps(
    cloud: &PointCloud,
    gripper: &GripperSpec,
    params: &GraspParams,
    seed: u64,
) -> Vec<GraspCandidate> {
    let pts = cloud.points();
    let n = pts.len();
    if n < MIN_CLOUD_POINTS || params.candidates == 0 {
        return Vec::new();
    }
    let normals = estimate_normals(cloud, params.normal_neighbors);
    let flat: Vec<bool> = surface_variation(cloud, params.normal_neighbors)
        .into_iter()
        .map(|v| v <= params.max_surface_variation)
        .collect();
    let cos_tol = params.antipodal_deg.to_radians().cos();
    let grid = SpatialGrid::new(pts, gripper.max_width / 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let attempts = params.candidates * 40;
    for _ in 0..attempts {
        if out.len() >= params.candidates {
            break;
        }
        let i = rng.random_range(0..n);
        if !flat[i] {
            continue;
        }
        let (pi, ni) = (pts[i], normals[i]);
        let mut best: Option<(f64, usize)> = None;
        for j in grid.within(&pi, gripper.max_width) {
            if j == i || !flat[j] {
                continue;
            }
            let d = pts[j] - pi;
            let w = d.norm();
            if w < gripper.min_width || w > gripper.max_width || w < 1e-9 {
                continue;
            }
            let dir = d / w;
            let nj = normals[j];
            let score = (-ni.dot(&nj)).min(-ni.dot(&dir)).min(nj.dot(&dir));
            if score >= cos_tol && best.is_none_or(|(s, _)| score > s) {
                best = Some((score, j));
            }
        }
        let Some((_, j)) = best else { continue };
        if !seen.insert((i.min(j), i.max(j))) {
            continue;
        }
        let (c0, c1) = if i < j { (pi, pts[j]) } else { (pts[j], pi) };
        if let Some(g) = pose(c0, c1) {
            out.push(g);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::{sample_box_surface, sample_plane_patch, sample_sphere_surface};

    fn audit(cloud: &PointCloud, grasps: &[GraspCandidate], gripper: &GripperSpec) {
        let normals = estimate_normals(cloud, 15);
        let index = |p: &Point3<f64>| cloud.points().iter().position(|q| q == p).unwrap();
        for g in grasps {
            g.validate(gripper).unwrap();
            let (a, b) = (normals[index(&g.contacts[0])], normals[index(&g.contacts[1])]);
            let angle = a.dot(&b).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(angle >= 150.0, "{angle}");
        }
    }

    #[test]
    fn narrow_box_yields_valid_grasps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = sample_box_surface(
            Point3::new(0.0, 0.0, 0.5),
            Rotation3::from_euler_angles(0.2, -0.1, 0.7),
            Vector3::new(0.02, 0.05, 0.1),
            3000,
            &mut rng,
        );
        let gripper = GripperSpec::default();
        let grasps = generate_grasps(&cloud, &gripper, &GraspParams::default(), 1);
        assert!(grasps.len() > 10);
        audit(&cloud, &grasps, &gripper);
        assert_eq!(grasps, generate_grasps(&cloud, &gripper, &GraspParams::default(), 1));
    }

    #[test]
    fn contacts_avoid_box_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let half = Vector3::new(0.0275, 0.06, 0.06);
        let cloud = sample_box_surface(Point3::new(0.0, 0.0, 0.5), Rotation3::identity(), half, 3000, &mut rng);
        let grasps = generate_grasps(&cloud, &GripperSpec::default(), &GraspParams::default(), 3);
        assert!(!grasps.is_empty());
        // every contact lies on one face, away from the others
        for g in &grasps {
            for c in &g.contacts {
                let l = c - Point3::new(0.0, 0.0, 0.5);
                let on_face = (0..3).filter(|&a| half[a] - l[a].abs() < 1e-3).count();
                assert_eq!(on_face, 1, "{l:?}");
            }
        }
    }

    #[test]
    fn wide_sphere_and_plane_yield_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gripper = GripperSpec::default();
        let sphere = sample_sphere_surface(Point3::new(0.0, 0.0, 0.5), 0.06, 3000, &mut rng);
        assert!(generate_grasps(&sphere, &gripper, &GraspParams::default(), 0).is_empty());
        let plane = sample_plane_patch(Point3::new(0.0, 0.0, 0.5), Vector3::x() * 0.05, Vector3::y() * 0.05, 2000, &mut rng);
        assert!(generate_grasps(&plane, &gripper, &GraspParams::default(), 0).is_empty());
        let tiny = sample_sphere_surface(Point3::new(0.0, 0.0, 0.5), 0.01, 49, &mut rng);
        assert!(generate_grasps(&tiny, &gripper, &GraspParams::default(), 0).is_empty());
    }

    #[test]
    fn frame_is_right_handed_with_camera_facing_approach() {
        let g = pose(Point3::new(-0.02, 0.0, 0.6), Point3::new(0.02, 0.0, 0.6)).unwrap();
        let m = g.rotation.to_rotation_matrix();
        assert!((m.matrix().determinant() - 1.0).abs() < 1e-12);
        assert!((g.approach - Vector3::z()).norm() < 1e-12);
        assert!((g.closing_axis() - Vector3::x()).norm() < 1e-12);
        // closing axis along the view ray still gets a perpendicular approach
        let g = pose(Point3::new(0.0, 0.0, 0.5), Point3::new(0.0, 0.0, 0.54)).unwrap();
        assert!(g.approach.dot(&g.closing_axis()).abs() < 1e-12);
    }
}
