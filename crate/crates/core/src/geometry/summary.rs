use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud};

/// Relative gap below which the two largest covariance eigenvalues count as equal.
pub const EIGEN_TIE_TOLERANCE: f64 = 1e-9;

/// Compact geometric description of a point cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomSummary {
    pub centroid: Point3<f64>,
    pub aabb_min: Point3<f64>,
    pub aabb_max: Point3<f64>,
    /// Unit principal direction with the largest variance.
    pub dominant_axis: Vector3<f64>,
    /// Extent of the cloud along `dominant_axis`.
    pub dominant_length: f64,
    pub point_count: usize,
}

/// Centroid, bounds and principal axis of `cloud`.
///
/// The axis is the top eigenvector of the population covariance, signed so
/// that its largest-magnitude component is positive (earliest coordinate wins
/// a tie).
pub fn summarize(cloud: &PointCloud) -> Result<GeomSummary, GeometryError> {
    let pts = cloud.points();
    if pts.len() < 3 {
        return Err(GeometryError::Degenerate(format!(
            "need at least 3 points, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let centroid = Point3::from(pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n);

    let mut cov = Matrix3::zeros();
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]];
    let l2 = eig.eigenvalues[order[1]];
    if l1 <= 0.0 {
        return Err(GeometryError::Degenerate("all points coincide".into()));
    }
    if l1 - l2 <= EIGEN_TIE_TOLERANCE * l1 {
        return Err(GeometryError::Degenerate(
            "no unique dominant axis (top covariance eigenvalues tie)".into(),
        ));
    }

    let axis = canonical_sign(eig.eigenvectors.column(order[0]).normalize());
    let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        let t = (p - centroid).dot(&axis);
        pmin = pmin.min(t);
        pmax = pmax.max(t);
    }

    Ok(GeomSummary {
        centroid,
        aabb_min: lo,
        aabb_max: hi,
        dominant_axis: axis,
        dominant_length: pmax - pmin,
        point_count: pts.len(),
    })
}

/// Flips `v` so its largest-magnitude component is positive.
pub fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let max = v.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let lead = v
        .iter()
        .position(|c| c.abs() >= max - 1e-12)
        .unwrap_or(0);
    if v[lead] < 0.0 {
        -v
    } else {
        v
    }
}
