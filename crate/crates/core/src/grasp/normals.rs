use std::collections::HashSet;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};

use crate::geometry::grid::SpatialGrid;
use crate::geometry::{canonical_sign, Pixel, PointCloud};

fn pca_normal(points: &[Point3<f64>], idx: &[usize]) -> Option<Vector3<f64>> {
    pca(points, idx).map(|(n, _)| n)
}

/// Normal and surface variation (smallest eigenvalue over their sum).
fn pca(points: &[Point3<f64>], idx: &[usize]) -> Option<(Vector3<f64>, f64)> {
    if idx.len() < 3 {
        return None;
    }
    let c = idx.iter().fold(Vector3::zeros(), |a, &i| a + points[i].coords) / idx.len() as f64;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let d = points[i].coords - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let n = eig.eigenvectors.column(k).into_owned();
    let total: f64 = eig.eigenvalues.iter().map(|e| e.max(0.0)).sum();
    let variation = if total > 0.0 { eig.eigenvalues[k].max(0.0) / total } else { 0.0 };
    (n.norm() > 0.0).then(|| (n.normalize(), variation))
}

/// Surface variation over the `k` nearest neighbours of each point: 0 on a
/// plane, up to 1/3 for an isotropic blob. High on edges and corners, where
/// a single normal does not describe the surface.
pub fn surface_variation(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let pts = cloud.points();
    let Some(centroid) = cloud.centroid() else { return Vec::new() };
    let spread = pts.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let grid = SpatialGrid::new(pts, (spread / 20.0).max(1e-4));
    pts.iter()
        .map(|p| pca(pts, &grid.knn(p, k)).map_or(1.0, |(_, v)| v))
        .collect()
}

const NEIGHBORS_8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Outward image-plane direction at a silhouette pixel, if it is one.
fn silhouette_direction(px: Pixel, present: &HashSet<Pixel>) -> Option<(f64, f64)> {
    let (mut gu, mut gv) = (0.0, 0.0);
    let mut open = false;
    for (du, dv) in NEIGHBORS_8 {
        let (u, v) = (px.u as i64 + du, px.v as i64 + dv);
        let inside = u >= 0
            && v >= 0
            && present.contains(&Pixel {
                u: u as u32,
                v: v as u32,
            });
        if !inside {
            open = true;
            gu += du as f64;
            gv += dv as f64;
        }
    }
    (open && (gu * gu + gv * gv).sqrt() > 1e-9).then_some((gu, gv))
}

/// Unit surface normals, one per point, pointing out of the object.
///
/// Normals come from PCA over the `k` nearest neighbours. A cloud without
/// source pixels is treated as a closed surface and normals point away from
/// its centroid. A single-view cloud with pixels only shows surfaces facing
/// the camera, so normals point towards the camera, except on the silhouette:
/// there the surface is tangent to the viewing ray and the normal is the
/// outward image direction made perpendicular to that ray.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Vec<Vector3<f64>> {
    let pts = cloud.points();
    if pts.is_empty() {
        return Vec::new();
    }
    let centroid = cloud.centroid().expect("non-empty");
    let spread = pts.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    let cell = (spread / 20.0).max(1e-4);
    let grid = SpatialGrid::new(pts, cell);
    let present: Option<HashSet<Pixel>> = cloud.pixels().map(|px| px.iter().copied().collect());

    (0..pts.len())
        .map(|i| {
            let p = pts[i];
            if let (Some(present), Some(px)) = (&present, cloud.pixels()) {
                if let Some((gu, gv)) = silhouette_direction(px[i], present) {
                    let ray = p.coords.normalize();
                    let g = Vector3::new(gu, gv, 0.0);
                    let n = g - ray * g.dot(&ray);
                    if n.norm() > 1e-9 {
                        return n.normalize();
                    }
                }
            }
            let nb = grid.knn(&p, k);
            let n = pca_normal(pts, &nb).unwrap_or_else(|| (p - centroid).try_normalize(1e-12).unwrap_or(Vector3::z()));
            let outward = if present.is_some() { -p.coords } else { p - centroid };
            let s = n.dot(&outward);
            if s.abs() > 1e-12 {
                n * s.signum()
            } else {
                canonical_sign(n)
            }
        })
        .collect()
}
